//! Discretized Laplace probability model.
//!
//! Every latent element is modelled as a Laplace variable with location `mu`
//! and scale `b`, integrated over unit-width bins centred on the integers.

use crate::entropy::{EntropyParams, SymbolPlane};

/// Lowest probability any bin may be assigned (2^-16).
pub const PROB_FLOOR: f64 = 1.0 / 65536.0;

/// Lowest admissible scale parameter.
pub const SCALE_FLOOR: f64 = 1e-6;

/// CDF of a zero-centred Laplace distribution with scale `b`.
pub fn laplace_cdf(x: f64, b: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / b).exp()
    } else {
        1.0 - 0.5 * (-x / b).exp()
    }
}

/// Probability mass of a zero-centred Laplace variable in `[lo, hi]`.
///
/// Either bound may be infinite. The computation avoids subtracting two
/// numbers close to one, so far-tail bins keep their relative precision.
pub fn laplace_mass(lo: f64, hi: f64, b: f64) -> f64 {
    debug_assert!(lo <= hi);
    if lo >= 0.0 {
        // Both edges on the right-hand side: 0.5 * (e^{-lo/b} - e^{-hi/b}).
        let tail_lo = if lo.is_finite() { (-lo / b).exp() } else { 0.0 };
        let tail_hi = if hi.is_finite() { (-hi / b).exp() } else { 0.0 };
        0.5 * (tail_lo - tail_hi)
    } else if hi <= 0.0 {
        let tail_lo = if lo.is_finite() { (lo / b).exp() } else { 0.0 };
        let tail_hi = if hi.is_finite() { (hi / b).exp() } else { 0.0 };
        0.5 * (tail_hi - tail_lo)
    } else {
        let tail_lo = if lo.is_finite() { (lo / b).exp() } else { 0.0 };
        let tail_hi = if hi.is_finite() { (-hi / b).exp() } else { 0.0 };
        1.0 - 0.5 * tail_lo - 0.5 * tail_hi
    }
}

/// Unfloored probability of the unit bin centred on `v` for a Laplace
/// variable located at `mu_frac`.
pub fn laplace_bin_mass(v: f64, mu_frac: f64, b: f64) -> f64 {
    let centre = v - mu_frac;
    laplace_mass(centre - 0.5, centre + 0.5, b)
}

/// Probability of integer symbol `v` when the residual location is
/// `mu_frac`, floored at [`PROB_FLOOR`].
pub fn laplace_bin_prob(v: i64, mu_frac: f64, b: f64) -> f64 {
    laplace_bin_mass(v as f64, mu_frac, b).max(PROB_FLOOR)
}

/// Information content, in bits, of the integer symbols under `params`.
pub fn rate_bits(plane: &SymbolPlane, params: &EntropyParams) -> f64 {
    assert_eq!(
        plane.symbols.len(),
        params.len(),
        "symbol plane and entropy parameters differ in length"
    );
    plane
        .symbols
        .iter()
        .zip(params.mu.iter().zip(&params.scale))
        .map(|(&v, (&mu, &b))| -laplace_bin_prob(v as i64, mu, b).log2())
        .sum()
}

/// Information content under the truncated model the coder actually uses:
/// the two edge bins of the plane's bounds absorb the tails.
pub fn bounded_rate_bits(plane: &SymbolPlane, params: &EntropyParams) -> f64 {
    assert_eq!(plane.symbols.len(), params.len());
    let bounds = plane.bounds;
    plane
        .symbols
        .iter()
        .zip(params.mu.iter().zip(&params.scale))
        .map(|(&v, (&mu, &b))| {
            let lo = if v == bounds.min { f64::NEG_INFINITY } else { v as f64 - 0.5 - mu };
            let hi = if v == bounds.max { f64::INFINITY } else { v as f64 + 0.5 - mu };
            -laplace_mass(lo, hi, b).max(PROB_FLOOR).log2()
        })
        .sum()
}

/// Information content of noise-relaxed (real valued) latents: the density
/// integrated over `[value - 0.5, value + 0.5]`.
pub fn relaxed_rate_bits(values: &[f64], params: &EntropyParams) -> f64 {
    assert_eq!(values.len(), params.len());
    values
        .iter()
        .zip(params.mu.iter().zip(&params.scale))
        .map(|(&y, (&mu, &b))| -laplace_bin_mass(y, mu, b).max(PROB_FLOOR).log2())
        .sum()
}
