//! Value-level quantizers.
//!
//! The differentiable versions used during training live in
//! [`crate::networks::ops`]; they share the rounding rule and noise sampler
//! defined here.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Round half away from zero. Encoder and decoder must agree on this rule.
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Mean-offset quantization: `round(y - mu) + mu`.
pub fn quantize_ste(y: &[f64], mu: &[f64]) -> Vec<f64> {
    assert_eq!(y.len(), mu.len(), "latent and mean lengths differ");
    y.iter()
        .zip(mu)
        .map(|(&y, &mu)| round_half_away(y - mu) + mu)
        .collect()
}

/// Integer residuals `round(y - mu)`.
pub fn residual_symbols(y: &[f64], mu: &[f64]) -> Vec<i32> {
    assert_eq!(y.len(), mu.len());
    y.iter()
        .zip(mu)
        .map(|(&y, &mu)| round_half_away(y - mu) as i32)
        .collect()
}

/// `len` i.i.d. draws from U(-0.5, 0.5), reproducible from `seed`.
pub fn uniform_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random::<f64>() - 0.5).collect()
}

/// Independent child seed for stream `stream` of a run seeded with `base`
/// (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Additive-noise relaxation of quantization.
pub fn quantize_noise(y: &[f64], seed: u64) -> Vec<f64> {
    y.iter()
        .zip(uniform_noise(y.len(), seed))
        .map(|(&y, e)| y + e)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_offset_examples() {
        assert_eq!(quantize_ste(&[2.7], &[0.5]), vec![2.5]);
        assert_eq!(quantize_ste(&[0.8125], &[0.8125]), vec![0.8125]);
        let tie = quantize_ste(&[-1.3], &[0.2])[0];
        assert!((tie - (-1.8)).abs() < 1e-12, "{tie}");
    }

    #[test]
    fn ties_round_away_from_zero() {
        assert_eq!(round_half_away(0.5), 1.0);
        assert_eq!(round_half_away(-0.5), -1.0);
        assert_eq!(round_half_away(2.5), 3.0);
        assert_eq!(round_half_away(-2.5), -3.0);
    }

    #[test]
    fn noise_is_bounded_and_seeded() {
        let y: Vec<f64> = (0..1000).map(|i| i as f64 * 0.37).collect();
        let a = quantize_noise(&y, 11);
        let b = quantize_noise(&y, 11);
        let c = quantize_noise(&y, 12);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().zip(&y).all(|(a, y)| (a - y).abs() < 0.5));
    }

    #[test]
    fn noise_mean_within_three_sigma() {
        let n = 1_000_000;
        let noise = uniform_noise(n, 2024);
        let mean = noise.iter().sum::<f64>() / n as f64;
        let sigma = 1.0 / (12.0 * n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} sigma {sigma}");
    }
}
