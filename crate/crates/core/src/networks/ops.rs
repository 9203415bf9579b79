//! Differentiable building blocks shared by the networks and the losses.

use candle_core::{DType, Device, Tensor, D};

use crate::entropy::{PROB_FLOOR, SCALE_FLOOR};
use crate::error::Result;

/// `log(1 + e^x)`, written to stay finite for large `|x|`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

/// Inverse of softplus for scalars; used to place initial scales.
pub fn softplus_inverse(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

/// Strictly positive scale from an unconstrained activation.
pub fn positive_scale(raw: &Tensor) -> Result<Tensor> {
    Ok((softplus(raw)? + SCALE_FLOOR)?)
}

/// Mean-offset rounding with a straight-through gradient:
/// the forward value is `round(y - mu) + mu`, `d/dy = 1`, `d/dmu = 0`.
pub fn quantize_ste(y: &Tensor, mu: &Tensor) -> Result<Tensor> {
    let hard = (y.sub(mu)?.round()? + mu)?;
    Ok((y + hard.sub(y)?.detach())?)
}

/// Additive uniform noise drawn from the shared seeded sampler.
pub fn add_uniform_noise(y: &Tensor, seed: u64) -> Result<Tensor> {
    let noise = crate::entropy::quantize::uniform_noise(y.elem_count(), seed);
    let noise = Tensor::from_vec(noise, y.shape(), y.device())?.to_dtype(y.dtype())?;
    Ok((y + noise)?)
}

/// Laplace CDF with per-element scale, via ReLU so it differentiates cleanly.
fn laplace_cdf(s: &Tensor, scale: &Tensor) -> Result<Tensor> {
    let left = (s.neg()?.relu()?.neg()?.div(scale)?.exp()? * 0.5)?;
    let right = (s.relu()?.neg()?.div(scale)?.exp()? * 0.5)?;
    Ok(((left + 0.5)? - right)?)
}

/// Probability of the unit bin around each value, floored at 2^-16.
///
/// Uses the symmetry of the Laplace density: the bin around `|v - mu|` is
/// evaluated on the left tail, where the CDF is small and accurate.
pub fn laplace_likelihood(values: &Tensor, mu: &Tensor, scale: &Tensor) -> Result<Tensor> {
    let dist = values.sub(mu)?.abs()?;
    let upper = laplace_cdf(&dist.neg()?.affine(1.0, 0.5)?, scale)?;
    let lower = laplace_cdf(&dist.neg()?.affine(1.0, -0.5)?, scale)?;
    let p = upper.sub(&lower)?;
    Ok(p.maximum(PROB_FLOOR)?)
}

/// Total information content `sum(-log2 p)` as a scalar tensor.
pub fn laplace_bits(values: &Tensor, mu: &Tensor, scale: &Tensor) -> Result<Tensor> {
    let p = laplace_likelihood(values, mu, scale)?;
    Ok((p.log()?.sum_all()? * (-1.0 / std::f64::consts::LN_2))?)
}

/// Softmax over the last dimension.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let sum = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&sum)?)
}

/// Flatten any tensor to `f64` values.
pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

/// Build a tensor of `dtype` from `f64` values.
pub fn from_f64(values: Vec<f64>, shape: &[usize], dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(dtype)?)
}
