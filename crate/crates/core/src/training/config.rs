use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FcnrError, Result};
use crate::networks::ModelConfig;

/// How the rate term enters the optimized loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateObjective {
    /// Bits per coded pixel.
    Bpp,
    /// Total bits of the pair.
    Bits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_rd: f64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Pairs per update.
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many updates even if epochs remain.
    pub max_steps: Option<u64>,
    pub seed: u64,
    /// Write a resumable checkpoint every this many steps; 0 disables.
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub rate_objective: RateObjective,
    /// Multiplier on the mean squared error, 255² puts it on the 8-bit scale.
    pub distortion_scale: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_rd: 0.01,
            lr: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 1,
            epochs: 30,
            max_steps: None,
            seed: 0,
            checkpoint_every: 500,
            log_every: 1,
            rate_objective: RateObjective::Bpp,
            distortion_scale: 255.0 * 255.0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Small configuration for CPU runs on the toy corpus.
    pub fn desk() -> Self {
        TrainConfig {
            lr: 1e-3,
            model: ModelConfig::desk(),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FcnrError::Config(m.to_string()));
        // Zero is allowed and means rate-only training.
        if !(self.lambda_rd >= 0.0 && self.lambda_rd.is_finite()) {
            return bad("lambda_rd must be finite and non-negative");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        for b in [self.adam_beta1, self.adam_beta2] {
            if !(0.0..1.0).contains(&b) {
                return bad("adam betas must lie in [0, 1)");
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1");
        }
        if !(self.distortion_scale > 0.0 && self.distortion_scale.is_finite()) {
            return bad("distortion_scale must be positive");
        }
        self.model.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| FcnrError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FcnrError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }
}
