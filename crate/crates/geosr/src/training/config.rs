//! Training configuration, loadable from a TOML file whose tables mirror the
//! struct fields one-to-one (see the README for the schema).

use crate::discriminators::{LocDiscriminatorConfig, PatchDiscriminatorConfig};
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::losses::LossWeights;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct HookConfig {
    pub clip: String,
    pub osm: String,
}

impl Default for HookConfig {
    fn default() -> Self {
        HookConfig {
            clip: "zero".into(),
            osm: "zero".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub generator: GeneratorConfig,
    pub img_disc: PatchDiscriminatorConfig,
    pub loc_disc: LocDiscriminatorConfig,
    pub weights: LossWeights,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub adam_betas: (f64, f64),
    pub checkpoint_every: u64,
    pub false_loc_min_sep: f64,
    /// Location encoder spec: `sinusoidal` or `table:<path>`.
    pub location_encoder: String,
    /// Perceptual extractor spec plus the seed fixing its weights.
    pub perceptual_extractor: String,
    pub perceptual_seed: u64,
    /// Collapse LR inputs to replicated luminance at batch time, making the
    /// input hue-ambiguous so color must come from the conditioning path.
    pub grayscale_lr: bool,
    /// Apply generator-side matching pressure −log σ(D(sr, c)).
    pub loc_match_generator_term: bool,
    pub hooks: HookConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::toy()
    }
}

impl TrainConfig {
    /// Desk-scale defaults used by tests and examples.
    pub fn toy() -> Self {
        TrainConfig {
            generator: GeneratorConfig::toy(),
            img_disc: PatchDiscriminatorConfig {
                base_features: 16,
                num_downsamples: 3,
            },
            loc_disc: LocDiscriminatorConfig {
                base_features: 16,
                num_downsamples: 3,
                embed_proj_dim: 32,
            },
            weights: LossWeights::default(),
            lr: 1e-4,
            batch_size: 16,
            steps: 500,
            seed: 0,
            adam_betas: (0.9, 0.99),
            checkpoint_every: 100,
            false_loc_min_sep: 5.0,
            location_encoder: "sinusoidal".into(),
            perceptual_extractor: "random-pyramid".into(),
            perceptual_seed: 7777,
            grayscale_lr: false,
            loc_match_generator_term: true,
            hooks: HookConfig::default(),
        }
    }

    /// Full-scale defaults mirroring the published training setup.
    pub fn paper() -> Self {
        TrainConfig {
            generator: GeneratorConfig::paper(),
            img_disc: PatchDiscriminatorConfig::default(),
            loc_disc: LocDiscriminatorConfig::default(),
            batch_size: 16,
            ..TrainConfig::toy()
        }
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(TrainConfig::toy()),
            "paper" => Ok(TrainConfig::paper()),
            other => Err(Error::config(format!(
                "unknown preset `{other}` (expected `toy` or `paper`)"
            ))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: TrainConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("serialize config: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.weights.validate()?;
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::config("lr must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || b1 <= 0.0 || b2 <= 0.0 {
            return Err(Error::config("adam betas must lie in (0, 1)"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every must be >= 1"));
        }
        if self.false_loc_min_sep <= 0.0 || self.false_loc_min_sep >= 180.0 {
            return Err(Error::config("false_loc_min_sep must lie in (0, 180)"));
        }
        if self.location_encoder == "sinusoidal"
            && (self.generator.embed_dim < 4 || self.generator.embed_dim % 4 != 0)
        {
            return Err(Error::config(
                "sinusoidal encoder requires generator.embed_dim to be a multiple of 4",
            ));
        }
        Ok(())
    }

    /// Config identity modulo the step budget, used to validate resumes.
    pub fn matches_except_steps(&self, other: &TrainConfig) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.steps = 0;
        b.steps = 0;
        a == b
    }
}
