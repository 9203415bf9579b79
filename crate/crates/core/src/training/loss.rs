use candle_core::Tensor;

use crate::data::Raster;
use crate::error::{FcnrError, Result};
use crate::networks::TrainForward;
use crate::training::{RateObjective, TrainConfig};

/// Per-image mean squared error, summed over the images of the batch.
pub fn distortion_loss(images: &Tensor, recon: &Tensor) -> Result<Tensor> {
    if images.dims() != recon.dims() {
        return Err(FcnrError::Shape(format!(
            "images {:?} vs reconstructions {:?}",
            images.dims(),
            recon.dims()
        )));
    }
    let err = images.sub(recon)?.sqr()?.flatten_from(1)?;
    Ok(err.mean(1)?.sum_all()?)
}

/// [`distortion_loss`] on rasters, in `f64`.
pub fn distortion_loss_rasters(images: &[Raster; 2], recon: &[Raster; 2]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in images.iter().zip(recon) {
        if (x.height, x.width) != (y.height, y.width) {
            return Err(FcnrError::Shape(format!(
                "{}x{} image vs {}x{} reconstruction",
                x.height, x.width, y.height, y.width
            )));
        }
        let sum: f64 = x
            .data
            .iter()
            .zip(&y.data)
            .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
            .sum();
        total += sum / x.data.len() as f64;
    }
    Ok(total)
}

/// Sum of the four cross-entropy terms, in bits.
pub fn rate_loss(forward: &TrainForward) -> Result<Tensor> {
    forward.total_bits()
}

/// The differentiable loss and its parts.
#[derive(Debug, Clone)]
pub struct Objective {
    pub total: Tensor,
    pub rate_bits: Tensor,
    pub distortion: Tensor,
}

/// `rate + lambda * scale * distortion`, with the rate in bits or bits per
/// pixel as configured. `pixels` counts both images of the pair.
pub fn objective(forward: &TrainForward, images: &Tensor, recon: &Tensor, pixels: usize, cfg: &TrainConfig) -> Result<Objective> {
    let rate_bits = rate_loss(forward)?;
    let distortion = distortion_loss(images, recon)?;
    let rate = match cfg.rate_objective {
        RateObjective::Bits => rate_bits.clone(),
        RateObjective::Bpp => (&rate_bits / pixels as f64)?,
    };
    let total = (rate + (&distortion * (cfg.lambda_rd * cfg.distortion_scale))?)?;
    Ok(Objective {
        total,
        rate_bits,
        distortion,
    })
}
