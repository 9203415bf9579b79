//! Compression and decompression of image pairs.
//!
//! Both directions run the same conditioning chain
//! `z_l -> z_r -> (h_D) -> y_l -> y_r`; only the source of each quantized
//! plane differs. The encoder rounds the analysis outputs against the
//! predicted means, the decoder reads the residuals back from the substreams,
//! and both rebuild the quantized tensor as `residual + mean` with identical
//! tensor arithmetic. That shared path is what makes decoding bit-exact.

use candle_core::Tensor;

use crate::codec::backend::CoderBackend;
use crate::codec::bitstream::{FcnrBitstream, Header, Plane};
use crate::data::raster::Raster;
use crate::entropy::quantize::{derive_seed, residual_symbols, uniform_noise};
use crate::entropy::{bounded_rate_bits, rate_bits, relaxed_rate_bits, EntropyParams, SymbolBounds, SymbolPlane, SCALE_FLOOR};
use crate::error::{FcnrError, Result};
use crate::networks::ops::{from_f64, to_f64_vec};
use crate::networks::{FcnrModel, ParamTensors, VisParams, PAD_MULTIPLE};

/// Two co-timestep renderings and their visualization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub left: Raster,
    pub right: Raster,
    pub vis: [VisParams; 2],
    pub pair_id: u64,
}

impl ImagePair {
    fn validate(&self) -> Result<()> {
        if (self.left.height, self.left.width) != (self.right.height, self.right.width) {
            return Err(FcnrError::Shape(format!(
                "left image is {}x{}, right is {}x{}",
                self.left.height, self.left.width, self.right.height, self.right.width
            )));
        }
        if self.left.height == 0 || self.left.width == 0 {
            return Err(FcnrError::Shape("empty image".into()));
        }
        for vp in &self.vis {
            vp.validate()?;
        }
        Ok(())
    }

    /// Reflect-padded `[2, 3, H', W']` batch and the padding amounts.
    fn padded_batch(&self) -> Result<(Tensor, usize, usize)> {
        let (l, ph, pw) = self.left.pad_reflect(PAD_MULTIPLE);
        let (r, _, _) = self.right.pad_reflect(PAD_MULTIPLE);
        Ok((Tensor::cat(&[l.to_tensor()?, r.to_tensor()?], 0)?, ph, pw))
    }
}

/// Result of [`Codec::compress`].
#[derive(Debug, Clone)]
pub struct Encoded {
    pub bitstream: FcnrBitstream,
    /// What the decoder will reconstruct.
    pub reconstruction: [Raster; 2],
    /// Model cross-entropy of the coded residuals, per plane.
    pub estimated_bits: [f64; 4],
}

/// Quantized latents as seen by the decoder.
#[derive(Debug, Clone)]
pub struct DecodedLatents {
    pub z_hat: Tensor,
    pub y_hat: Tensor,
    pub symbols: Vec<SymbolPlane>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimulationMode {
    /// Additive uniform noise instead of rounding.
    Noise { seed: u64 },
    /// Exactly the rounding that `compress` performs. The rate accounts for
    /// the per-plane symbol bounds the coder sends in the header.
    Ste,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub reconstruction: [Raster; 2],
    pub rate_bits: f64,
}

/// Where the quantized version of each plane comes from.
trait PlaneSource {
    fn quantize(&mut self, plane: Plane, params: &ParamTensors) -> Result<Tensor>;
}

fn flat_params(params: &ParamTensors) -> Result<(Vec<f64>, Vec<f64>)> {
    let mu = to_f64_vec(&params.mu)?;
    let scale = to_f64_vec(&params.scale)?
        .into_iter()
        .map(|b| b.max(SCALE_FLOOR))
        .collect();
    Ok((mu, scale))
}

/// Distribution of the integer residuals: the Laplace shifted to zero.
fn residual_model(scale: Vec<f64>) -> EntropyParams {
    EntropyParams {
        mu: vec![0.0; scale.len()],
        scale,
    }
}

fn dequantize(symbols: &[i32], params: &ParamTensors) -> Result<Tensor> {
    let values = symbols.iter().map(|&v| v as f64).collect();
    let t = from_f64(values, params.mu.dims(), params.mu.dtype())?;
    Ok((t + &params.mu)?)
}

/// Member `plane` of the continuous `z` or `y` batch.
fn member(z: &Tensor, y: &Tensor, plane: Plane) -> Result<Tensor> {
    Ok(match plane {
        Plane::HyperLeft => z.narrow(0, 0, 1)?,
        Plane::HyperRight => z.narrow(0, 1, 1)?,
        Plane::LatentLeft => y.narrow(0, 0, 1)?,
        Plane::LatentRight => y.narrow(0, 1, 1)?,
    })
}

struct RoundingSource {
    z: Tensor,
    y: Tensor,
    planes: Vec<(SymbolPlane, EntropyParams)>,
}

impl PlaneSource for RoundingSource {
    fn quantize(&mut self, plane: Plane, params: &ParamTensors) -> Result<Tensor> {
        let values = to_f64_vec(&member(&self.z, &self.y, plane)?)?;
        let (mu, scale) = flat_params(params)?;
        let symbols = SymbolPlane::from_unbounded(residual_symbols(&values, &mu));
        let hat = dequantize(&symbols.symbols, params)?;
        self.planes.push((symbols, residual_model(scale)));
        Ok(hat)
    }
}

struct StreamSource<'a> {
    bitstream: &'a FcnrBitstream,
    coder: &'a CoderBackend,
    symbols: Vec<SymbolPlane>,
}

impl PlaneSource for StreamSource<'_> {
    fn quantize(&mut self, plane: Plane, params: &ParamTensors) -> Result<Tensor> {
        let (_, scale) = flat_params(params)?;
        let bounds: SymbolBounds = self.bitstream.header.bounds[plane.index()];
        let decoded = self
            .coder
            .decode(&self.bitstream.streams[plane.index()], &residual_model(scale), bounds)?;
        let hat = dequantize(&decoded.symbols, params)?;
        self.symbols.push(decoded);
        Ok(hat)
    }
}

struct NoiseSource {
    z: Tensor,
    y: Tensor,
    seed: u64,
    bits: f64,
}

impl PlaneSource for NoiseSource {
    fn quantize(&mut self, plane: Plane, params: &ParamTensors) -> Result<Tensor> {
        let values = to_f64_vec(&member(&self.z, &self.y, plane)?)?;
        let noise = uniform_noise(values.len(), derive_seed(self.seed, plane.index() as u64));
        let noisy: Vec<f64> = values.iter().zip(noise).map(|(v, e)| v + e).collect();
        let (mu, scale) = flat_params(params)?;
        self.bits += relaxed_rate_bits(&noisy, &EntropyParams { mu, scale });
        from_f64(noisy, params.mu.dims(), params.mu.dtype())
    }
}

/// Runs the conditioning chain and returns `(z_hat, y_hat)` pair batches.
fn run_chain(
    model: &FcnrModel,
    vis: &[VisParams; 2],
    hyper_grid: (usize, usize),
    source: &mut dyn PlaneSource,
) -> Result<(Tensor, Tensor)> {
    let (zh, zw) = hyper_grid;
    let psi_zl = model.hyper_prior_left(&vis[0])?.broadcast_spatial(zh, zw)?;
    let zl_hat = source.quantize(Plane::HyperLeft, &psi_zl)?;

    let phi_zr = model.hyper_condition_right(&vis[1])?.broadcast_spatial(zh, zw)?;
    let psi_zr = model.context_hyper(&zl_hat, &phi_zr)?;
    let zr_hat = source.quantize(Plane::HyperRight, &psi_zr)?;

    let z_hat = Tensor::cat(&[&zl_hat, &zr_hat], 0)?;
    let phi_y = model.hyper_decode(&z_hat)?;
    let yl_hat = source.quantize(Plane::LatentLeft, &phi_y.member(0)?)?;

    let psi_yr = model.context_latent(&yl_hat, &phi_y.member(1)?)?;
    let yr_hat = source.quantize(Plane::LatentRight, &psi_yr)?;
    Ok((z_hat, Tensor::cat(&[&yl_hat, &yr_hat], 0)?))
}

fn split_reconstruction(model: &FcnrModel, y_hat: &Tensor, height: usize, width: usize) -> Result<[Raster; 2]> {
    let x = model.reconstruct(y_hat)?;
    let left = Raster::from_tensor(&x.narrow(0, 0, 1)?)?.crop(height, width)?;
    let right = Raster::from_tensor(&x.narrow(0, 1, 1)?)?.crop(height, width)?;
    Ok([left, right])
}

/// A model bound to a coder.
#[derive(Debug, Clone)]
pub struct Codec<'m> {
    model: &'m FcnrModel,
    coder: CoderBackend,
    fingerprint: u64,
}

impl<'m> Codec<'m> {
    pub fn new(model: &'m FcnrModel, coder: CoderBackend) -> Result<Self> {
        Ok(Codec {
            model,
            coder,
            fingerprint: model.fingerprint()?,
        })
    }

    pub fn model(&self) -> &FcnrModel {
        self.model
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    fn analyse(&self, pair: &ImagePair) -> Result<(Tensor, Tensor, usize, usize)> {
        pair.validate()?;
        let (batch, ph, pw) = pair.padded_batch()?;
        let y = self.model.encode(&batch)?;
        let z = self.model.hyper_encode(&y)?;
        Ok((z, y, ph, pw))
    }

    pub fn compress(&self, pair: &ImagePair) -> Result<Encoded> {
        let (z, y, ph, pw) = self.analyse(pair)?;
        let (_, _, zh, zw) = z.dims4()?;
        let mut source = RoundingSource {
            z,
            y,
            planes: Vec::with_capacity(4),
        };
        let (_, y_hat) = run_chain(self.model, &pair.vis, (zh, zw), &mut source)?;
        let streams = self.coder.encode(&source.planes)?;
        let mut estimated_bits = [0.0; 4];
        for (slot, (symbols, params)) in estimated_bits.iter_mut().zip(&source.planes) {
            *slot = rate_bits(symbols, params);
        }
        let bounds = [0, 1, 2, 3].map(|i| source.planes[i].0.bounds);
        let streams: [Vec<u8>; 4] = streams
            .try_into()
            .map_err(|_| FcnrError::ExternalCoder("wrong number of substreams".into()))?;
        let header = Header {
            height: pair.left.height as u32,
            width: pair.left.width as u32,
            pad_h: ph as u32,
            pad_w: pw as u32,
            vis: pair.vis,
            fingerprint: self.fingerprint,
            bounds,
        };
        Ok(Encoded {
            bitstream: FcnrBitstream { header, streams },
            reconstruction: split_reconstruction(self.model, &y_hat, pair.left.height, pair.left.width)?,
            estimated_bits,
        })
    }

    /// Entropy-decode the latents without running the synthesis transform.
    pub fn decode_latents(&self, bitstream: &FcnrBitstream) -> Result<DecodedLatents> {
        let header = &bitstream.header;
        if header.fingerprint != self.fingerprint {
            return Err(FcnrError::WrongModel {
                expected: header.fingerprint,
                actual: self.fingerprint,
            });
        }
        let (hp, wp) = header.padded_dims();
        if hp % PAD_MULTIPLE != 0 || wp % PAD_MULTIPLE != 0 {
            return Err(FcnrError::Corrupt(format!("padded size {hp}x{wp} is not codable")));
        }
        let mut source = StreamSource {
            bitstream,
            coder: &self.coder,
            symbols: Vec::with_capacity(4),
        };
        let grid = (hp / PAD_MULTIPLE, wp / PAD_MULTIPLE);
        let (z_hat, y_hat) = run_chain(self.model, &header.vis, grid, &mut source)?;
        Ok(DecodedLatents {
            z_hat,
            y_hat,
            symbols: source.symbols,
        })
    }

    pub fn decompress(&self, bitstream: &FcnrBitstream) -> Result<[Raster; 2]> {
        let latents = self.decode_latents(bitstream)?;
        let h = &bitstream.header;
        split_reconstruction(self.model, &latents.y_hat, h.height as usize, h.width as usize)
    }

    /// Reconstructions and estimated rate without producing bytes.
    pub fn simulate(&self, pair: &ImagePair, mode: SimulationMode) -> Result<Simulation> {
        let (z, y, _, _) = self.analyse(pair)?;
        let (_, _, zh, zw) = z.dims4()?;
        let (y_hat, rate) = match mode {
            SimulationMode::Ste => {
                let mut source = RoundingSource {
                    z,
                    y,
                    planes: Vec::with_capacity(4),
                };
                let (_, y_hat) = run_chain(self.model, &pair.vis, (zh, zw), &mut source)?;
                let bits = source.planes.iter().map(|(s, p)| bounded_rate_bits(s, p)).sum();
                (y_hat, bits)
            }
            SimulationMode::Noise { seed } => {
                let mut source = NoiseSource { z, y, seed, bits: 0.0 };
                let (_, y_hat) = run_chain(self.model, &pair.vis, (zh, zw), &mut source)?;
                (y_hat, source.bits)
            }
        };
        Ok(Simulation {
            reconstruction: split_reconstruction(self.model, &y_hat, pair.left.height, pair.left.width)?,
            rate_bits: rate,
        })
    }
}
