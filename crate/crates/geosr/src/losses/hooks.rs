//! Pluggable auxiliary losses (semantic-alignment and map-supervision
//! hooks). A hook returns its scalar value and, optionally, the gradient
//! with respect to the super-resolved batch; the training loop injects both
//! into the graph. The builtin `zero` hook stands in when no external model
//! is wired up, keeping the total-objective weighting intact.

use crate::error::{Error, Result};
use ndarray::ArrayD;
use std::collections::BTreeMap;

pub trait AuxLoss: Send + Sync {
    fn name(&self) -> &'static str;
    /// Evaluate on an NCHW batch pair; `None` gradient means zero.
    fn eval(&self, sr: &ArrayD<f64>, hr: &ArrayD<f64>) -> Result<(f64, Option<ArrayD<f64>>)>;
}

/// Stub hook: always 0 with no gradient.
pub struct ZeroLoss;

impl AuxLoss for ZeroLoss {
    fn name(&self) -> &'static str {
        "zero"
    }

    fn eval(&self, _sr: &ArrayD<f64>, _hr: &ArrayD<f64>) -> Result<(f64, Option<ArrayD<f64>>)> {
        Ok((0.0, None))
    }
}

type AuxFactory = fn() -> Box<dyn AuxLoss>;

/// Name -> constructor registry for auxiliary losses.
pub struct AuxRegistry {
    factories: BTreeMap<&'static str, AuxFactory>,
}

impl Default for AuxRegistry {
    fn default() -> Self {
        let mut factories: BTreeMap<&'static str, AuxFactory> = BTreeMap::new();
        factories.insert("zero", || Box::new(ZeroLoss));
        AuxRegistry { factories }
    }
}

impl AuxRegistry {
    pub fn register(&mut self, name: &'static str, factory: AuxFactory) {
        self.factories.insert(name, factory);
    }

    pub fn build(&self, name: &str) -> Result<Box<dyn AuxLoss>> {
        match self.factories.get(name) {
            Some(f) => Ok(f()),
            None => Err(Error::config(format!(
                "unknown aux loss `{name}` (available: {})",
                self.factories.keys().copied().collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn zero_hook_is_zero() {
        let hook = ZeroLoss;
        let x = ArrayD::from_elem(IxDyn(&[1, 3, 4, 4]), 0.5);
        let (v, g) = hook.eval(&x, &x).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.is_none());
    }

    #[test]
    fn registry_builds_known_and_rejects_unknown() {
        let reg = AuxRegistry::default();
        assert!(reg.build("zero").is_ok());
        assert!(reg.build("clip").is_err());
    }
}
