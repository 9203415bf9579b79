//! Sinusoidal positional encoding of visualization parameters.

use serde::{Deserialize, Serialize};

use crate::error::{FcnrError, Result};

/// Frequency base and number of octaves of the encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeConfig {
    pub base: f64,
    pub levels: usize,
}

impl Default for PeConfig {
    fn default() -> Self {
        PeConfig {
            base: 1.25,
            levels: 8,
        }
    }
}

impl PeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base > 1.0) || self.levels == 0 {
            return Err(FcnrError::Config(format!(
                "positional encoding needs base > 1 and levels >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Width of the encoding of one scalar.
    pub fn scalar_width(&self) -> usize {
        2 * self.levels
    }

    /// Width of the encoding of a full `(t, theta, phi)` triple.
    pub fn vis_width(&self) -> usize {
        3 * self.scalar_width()
    }
}

/// Timestep and view angles, each normalized to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisParams {
    pub t: f64,
    pub theta: f64,
    pub phi_view: f64,
}

impl VisParams {
    pub fn new(t: f64, theta: f64, phi_view: f64) -> Result<Self> {
        let vp = VisParams { t, theta, phi_view };
        vp.validate()?;
        Ok(vp)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("t", self.t), ("theta", self.theta), ("phi_view", self.phi_view)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(FcnrError::InvalidArgument(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// `(sin(b^0 pi u), cos(b^0 pi u), ..., sin(b^{L-1} pi u), cos(b^{L-1} pi u))`.
pub fn pe_scalar(u: f64, cfg: &PeConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.scalar_width());
    pe_scalar_into(u, cfg, &mut out);
    out
}

fn pe_scalar_into(u: f64, cfg: &PeConfig, out: &mut Vec<f64>) {
    for k in 0..cfg.levels {
        let angle = cfg.base.powi(k as i32) * std::f64::consts::PI * u;
        let (s, c) = angle.sin_cos();
        out.push(s);
        out.push(c);
    }
}

/// Encodings of `t`, `theta` and `phi_view`, concatenated in that order.
pub fn pe_vis(vp: &VisParams, cfg: &PeConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.vis_width());
    for u in [vp.t, vp.theta, vp.phi_view] {
        pe_scalar_into(u, cfg, &mut out);
    }
    out
}
