//! Probability model, quantizers and the reference arithmetic coder.

pub mod cdf;
pub mod coderjob;
pub mod laplace;
pub mod quantize;
pub mod rangecoder;

use serde::{Deserialize, Serialize};

use crate::error::{FcnrError, Result};

pub use cdf::{build_cdf, CdfProvider, CdfTable, LaplaceCdf, TABLE_TOTAL};
pub use laplace::{bounded_rate_bits, laplace_bin_prob, rate_bits, relaxed_rate_bits, PROB_FLOOR, SCALE_FLOOR};
pub use quantize::{quantize_noise, quantize_ste, round_half_away};
pub use rangecoder::{ac_decode, ac_encode};

/// Symbols outside `[-SYMBOL_LIMIT, SYMBOL_LIMIT - 1]` are clamped before
/// coding. Keeps every alphabet within 4096 entries so each symbol can hold at
/// least 16 of the 2^16 table counts.
pub const SYMBOL_LIMIT: i32 = 2048;

/// Flattened Laplace parameters for one latent plane.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyParams {
    pub mu: Vec<f64>,
    pub scale: Vec<f64>,
}

impl EntropyParams {
    pub fn new(mu: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if mu.len() != scale.len() {
            return Err(FcnrError::Shape(format!(
                "mu has {} entries, scale has {}",
                mu.len(),
                scale.len()
            )));
        }
        if let Some(i) = scale.iter().position(|b| !(*b >= SCALE_FLOOR) || !b.is_finite()) {
            return Err(FcnrError::InvalidArgument(format!(
                "scale[{i}] = {} below floor {SCALE_FLOOR}",
                scale[i]
            )));
        }
        if let Some(i) = mu.iter().position(|m| !m.is_finite()) {
            return Err(FcnrError::InvalidArgument(format!("mu[{i}] is not finite")));
        }
        Ok(EntropyParams { mu, scale })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Same scales, zero location: the model of mean-offset residuals.
    pub fn centred(&self) -> EntropyParams {
        EntropyParams {
            mu: vec![0.0; self.len()],
            scale: self.scale.clone(),
        }
    }
}

/// Inclusive symbol range of one plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolBounds {
    pub min: i32,
    pub max: i32,
}

impl SymbolBounds {
    pub fn new(min: i32, max: i32) -> Result<Self> {
        if min > max || min < -SYMBOL_LIMIT || max > SYMBOL_LIMIT - 1 {
            return Err(FcnrError::InvalidArgument(format!(
                "symbol bounds [{min}, {max}] invalid or beyond ±{SYMBOL_LIMIT}"
            )));
        }
        Ok(SymbolBounds { min, max })
    }

    /// Tightest bounds covering `symbols`, clamped to the codable range.
    /// An empty plane gets `[0, 0]`.
    pub fn from_symbols(symbols: &[i32]) -> Self {
        let (lo, hi) = symbols
            .iter()
            .fold((i32::MAX, i32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if lo > hi {
            return SymbolBounds { min: 0, max: 0 };
        }
        let min = lo.clamp(-SYMBOL_LIMIT, SYMBOL_LIMIT - 1);
        let max = hi.clamp(-SYMBOL_LIMIT, SYMBOL_LIMIT - 1);
        SymbolBounds { min, max }
    }

    pub fn alphabet_size(&self) -> usize {
        (self.max - self.min) as usize + 1
    }

    pub fn contains(&self, v: i32) -> bool {
        (self.min..=self.max).contains(&v)
    }

    pub fn clamp(&self, v: i32) -> i32 {
        v.clamp(self.min, self.max)
    }
}

/// Integer residuals of one plane together with their bounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolPlane {
    pub symbols: Vec<i32>,
    pub bounds: SymbolBounds,
}

impl SymbolPlane {
    pub fn new(symbols: Vec<i32>, bounds: SymbolBounds) -> Result<Self> {
        if let Some(v) = symbols.iter().find(|v| !bounds.contains(**v)) {
            return Err(FcnrError::InvalidArgument(format!(
                "symbol {v} outside [{}, {}]",
                bounds.min, bounds.max
            )));
        }
        Ok(SymbolPlane { symbols, bounds })
    }

    /// Clamp into bounds derived from the data itself.
    pub fn from_unbounded(symbols: Vec<i32>) -> Self {
        let bounds = SymbolBounds::from_symbols(&symbols);
        let symbols = symbols.into_iter().map(|v| bounds.clamp(v)).collect();
        SymbolPlane { symbols, bounds }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}
