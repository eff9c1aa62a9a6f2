//! Training objectives: pixel, perceptual, adversarial, location matching,
//! auxiliary hooks, and their weighted combination.
//!
//! All log-probabilities are computed in softplus form on raw logits:
//! −log σ(x) = softplus(−x) and −log(1 − σ(x)) = softplus(x).

mod hooks;
mod perceptual;

pub use hooks::{AuxLoss, AuxRegistry, ZeroLoss};
pub use perceptual::{extractor_from_spec, perceptual_loss, FeatureExtractor, RandomPyramid};

use crate::autodiff::{Graph, Var};
use crate::discriminators::LocationDiscriminator;
use crate::error::{Error, Result};
use crate::location::LocationEmbedding;
use crate::nn::Session;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Weights of the total objective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub pix: f64,
    pub perceptual: f64,
    pub gan: f64,
    pub clip: f64,
    pub osm: f64,
    pub loc_match: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            pix: 1.0,
            perceptual: 1.0,
            gan: 0.1,
            clip: 1.0,
            osm: 0.3,
            loc_match: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.pix,
            self.perceptual,
            self.gan,
            self.clip,
            self.osm,
            self.loc_match,
        ];
        if all.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::config("loss weights must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Mean absolute error over all pixels and channels.
pub fn pixel_loss(g: &Graph, sr: Var, hr: Var) -> Result<Var> {
    let (ss, hs) = (g.shape(sr), g.shape(hr));
    if ss != hs {
        return Err(Error::invalid_input(format!(
            "pixel_loss shape mismatch: {ss:?} vs {hs:?}"
        )));
    }
    Ok(g.l1_diff(sr, hr))
}

/// Non-saturating BCE-on-logits GAN losses:
/// d = mean softplus(−real) + mean softplus(fake); g = mean softplus(−fake).
pub fn gan_losses(g: &Graph, real_logits: Var, fake_logits: Var) -> (Var, Var) {
    let d_real = g.mean_all(g.softplus(g.neg(real_logits)));
    let d_fake = g.mean_all(g.softplus(fake_logits));
    let d_loss = g.add(d_real, d_fake);
    let g_loss = g.mean_all(g.softplus(g.neg(fake_logits)));
    (d_loss, g_loss)
}

/// The critic's location-matching objective from its three logit vectors:
/// mean[softplus(−D(hr,c)) + softplus(D(hr,ĉ)) + softplus(D(sr,ĉ))].
pub fn loc_match_objective_from_logits(
    g: &Graph,
    real_true: Var,
    real_false: Var,
    fake_false: Var,
) -> Var {
    let t1 = g.mean_all(g.softplus(g.neg(real_true)));
    let t2 = g.mean_all(g.softplus(real_false));
    let t3 = g.mean_all(g.softplus(fake_false));
    g.add(g.add(t1, t2), t3)
}

/// Generator-side matching pressure: mean softplus(−D(sr, c_true)).
pub fn loc_match_generator_term(g: &Graph, fake_true: Var) -> Var {
    g.mean_all(g.softplus(g.neg(fake_true)))
}

pub struct LocMatchLoss {
    pub d_objective: Var,
    pub g_term: Var,
}

/// Location-matching loss on a batch.
///
/// `x_hr`/`x_sr` are NCHW batch nodes; embeddings supply both the vectors
/// and the coordinates used to enforce the true/false separation
/// precondition.
pub fn loc_match_loss(
    s: &Session,
    d_loc: &LocationDiscriminator,
    x_hr: Var,
    x_sr: Var,
    c_true: &[LocationEmbedding],
    c_false: &[LocationEmbedding],
    min_separation_deg: f64,
) -> Result<LocMatchLoss> {
    let g = s.graph;
    let batch = g.shape(x_hr)[0];
    if c_true.len() != batch || c_false.len() != batch {
        return Err(Error::invalid_input(format!(
            "embedding count ({}, {}) does not match batch {batch}",
            c_true.len(),
            c_false.len()
        )));
    }
    for (t, f) in c_true.iter().zip(c_false.iter()) {
        let sep = (t.lon - f.lon).abs().max((t.lat - f.lat).abs());
        if sep < min_separation_deg {
            return Err(Error::invalid_input(format!(
                "false location ({}, {}) within min_separation {min_separation_deg} of true ({}, {})",
                f.lon, f.lat, t.lon, t.lat
            )));
        }
    }
    let stack = |es: &[LocationEmbedding]| -> Result<Var> {
        let dim = es[0].dim();
        if es.iter().any(|e| e.dim() != dim) {
            return Err(Error::invalid_input("inconsistent embedding dimensions"));
        }
        let mut arr = ndarray::Array2::<f64>::zeros((es.len(), dim));
        for (i, e) in es.iter().enumerate() {
            arr.row_mut(i).assign(&e.vector);
        }
        Ok(g.constant(arr.into_dyn()))
    };
    let ct = stack(c_true)?;
    let cf = stack(c_false)?;
    let real_true = d_loc.forward(s, x_hr, ct)?;
    let real_false = d_loc.forward(s, x_hr, cf)?;
    let fake_false = d_loc.forward(s, x_sr, cf)?;
    let fake_true = d_loc.forward(s, x_sr, ct)?;
    Ok(LocMatchLoss {
        d_objective: loc_match_objective_from_logits(g, real_true, real_false, fake_false),
        g_term: loc_match_generator_term(g, fake_true),
    })
}

pub const COMPONENT_KEYS: [&str; 6] = ["pix", "perceptual", "gan_g", "clip", "osm", "loc_match_g"];
const REQUIRED_KEYS: [&str; 4] = ["pix", "perceptual", "gan_g", "loc_match_g"];

/// Weighted total of named scalar components. Optional hooks (`clip`, `osm`)
/// default to zero; unknown keys are rejected so typos cannot silently drop
/// a term.
pub fn total_loss(components: &BTreeMap<String, f64>, weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    for key in components.keys() {
        if !COMPONENT_KEYS.contains(&key.as_str()) {
            return Err(Error::config(format!(
                "unknown loss component `{key}` (expected one of {COMPONENT_KEYS:?})"
            )));
        }
    }
    for key in REQUIRED_KEYS {
        if !components.contains_key(key) {
            return Err(Error::config(format!("missing loss component `{key}`")));
        }
    }
    let get = |k: &str| components.get(k).copied().unwrap_or(0.0);
    Ok(weights.pix * get("pix")
        + weights.perceptual * get("perceptual")
        + weights.gan * get("gan_g")
        + weights.clip * get("clip")
        + weights.osm * get("osm")
        + weights.loc_match * get("loc_match_g"))
}
