//! Analysis/synthesis transforms, context modules and the visualization
//! parameter path.

pub mod layers;
pub mod model;
pub mod ops;
pub mod params;
pub mod pe;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::error::{FcnrError, Result};

pub use layers::ParamTensors;
pub use model::{FcnrModel, ForwardMode, TrainForward};
pub use params::{Checkpoint, ParamStore};
pub use pe::{pe_scalar, pe_vis, PeConfig, VisParams};

/// Which of the two conditioning features are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Cross-view attention only; the hyper-latent priors are learned
    /// constants instead of functions of the visualization parameters.
    JctOnly,
    /// Visualization-parameter priors only; attention replaced by identity.
    PeOnly,
    Neither,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::JctOnly, Ablation::PeOnly, Ablation::Neither];

    pub fn uses_jctm(self) -> bool {
        matches!(self, Ablation::Full | Ablation::JctOnly)
    }

    pub fn uses_pe(self) -> bool {
        matches!(self, Ablation::Full | Ablation::PeOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::JctOnly => "jct_only",
            Ablation::PeOnly => "pe_only",
            Ablation::Neither => "neither",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = FcnrError;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| FcnrError::Config(format!("unknown ablation {s:?}")))
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

/// Architecture hyperparameters. Stored in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of the transform trunks.
    pub channels: usize,
    pub latent_channels: usize,
    pub hyper_channels: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub pe: PeConfig,
    pub ablation: Ablation,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 192,
            latent_channels: 48,
            hyper_channels: 48,
            heads: 2,
            mlp_hidden: 128,
            pe: PeConfig::default(),
            ablation: Ablation::Full,
            precision: Precision::F32,
        }
    }
}

impl ModelConfig {
    /// Reduced widths that train in minutes on a CPU.
    pub fn desk() -> Self {
        ModelConfig {
            channels: 32,
            latent_channels: 16,
            hyper_channels: 16,
            mlp_hidden: 64,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pe.validate()?;
        for (name, v) in [
            ("channels", self.channels),
            ("latent_channels", self.latent_channels),
            ("hyper_channels", self.hyper_channels),
            ("heads", self.heads),
            ("mlp_hidden", self.mlp_hidden),
        ] {
            if v == 0 {
                return Err(FcnrError::Config(format!("{name} must be positive")));
            }
        }
        if self.channels % self.heads != 0 {
            return Err(FcnrError::Config(format!(
                "channels ({}) must be divisible by heads ({})",
                self.channels, self.heads
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model config serializes")
    }
}

/// Total spatial downsampling from image to hyper-latent.
pub const PAD_MULTIPLE: usize = 64;
/// Downsampling from image to main latent.
pub const LATENT_STRIDE: usize = 16;
