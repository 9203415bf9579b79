use crate::codec::FcnrBitstream;
use crate::data::Raster;
use crate::error::{FcnrError, Result};

/// Reported for identical images, and the ceiling for everything else.
pub const PSNR_CAP_DB: f64 = 100.0;

/// PSNR for images in `[0, 1]` given their mean squared error.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (-10.0 * mse.log10()).min(PSNR_CAP_DB)
}

pub fn mse(x: &Raster, y: &Raster) -> Result<f64> {
    if (x.height, x.width) != (y.height, y.width) {
        return Err(FcnrError::Shape(format!(
            "{}x{} vs {}x{}",
            x.height, x.width, y.height, y.width
        )));
    }
    let sum: f64 = x
        .data
        .iter()
        .zip(&y.data)
        .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
        .sum();
    Ok(sum / x.data.len() as f64)
}

pub fn psnr(x: &Raster, y: &Raster) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, y)?))
}

/// Payload bits over coded pixels, both images of every pair at full size.
pub fn bpp(streams: &[FcnrBitstream]) -> Result<f64> {
    if streams.is_empty() {
        return Err(FcnrError::InvalidArgument("bpp of no bitstreams".into()));
    }
    let bits: u64 = streams.iter().map(|s| s.payload_bits()).sum();
    let pixels: u64 = streams
        .iter()
        .map(|s| 2 * s.header.height as u64 * s.header.width as u64)
        .sum();
    Ok(bits as f64 / pixels as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raster(seed: u64, h: usize, w: usize) -> Raster {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Raster::new(h, w, (0..3 * h * w).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn identical_images_hit_the_cap() {
        let x = raster(1, 8, 8);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn one_level_error_everywhere() {
        let x = Raster::filled(16, 16, 0.5);
        let y = Raster::filled(16, 16, 0.5 + 1.0 / 255.0);
        let expected = 20.0 * 255f64.log10();
        // f32 storage of 0.5 + 1/255 limits agreement to ~1e-6 dB.
        assert!((psnr(&x, &y).unwrap() - expected).abs() < 1e-5);
        assert!((expected - 48.13).abs() < 0.01);
    }

    #[test]
    fn mse_of_a_hundredth_is_twenty_db() {
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_errors() {
        assert!(psnr(&raster(1, 4, 4), &raster(1, 4, 5)).is_err());
    }

    proptest! {
        #[test]
        fn agrees_with_brute_force(seed in any::<u64>(), h in 1usize..12, w in 1usize..12) {
            let x = raster(seed, h, w);
            let y = raster(seed ^ 0x5555, h, w);
            let mut acc = 0.0f64;
            for c in 0..3 {
                for i in 0..h {
                    for j in 0..w {
                        let d = x.get(c, i, j) as f64 - y.get(c, i, j) as f64;
                        acc += d * d;
                    }
                }
            }
            let oracle = 10.0 * (1.0 / (acc / (3 * h * w) as f64)).log10();
            prop_assert!((psnr(&x, &y).unwrap() - oracle).abs() < 1e-9);
        }
    }
}
