//! The complete paired codec network.
//!
//! Images travel as a `[2, 3, H, W]` batch (left, right); every transform is
//! applied to both members with the same weights and the attention blocks are
//! the only place where the two members interact. The right view's entropy
//! parameters are additionally refined from already decoded left-view tensors.

use std::collections::HashMap;
use std::path::Path;

use candle_core::Tensor;

use crate::entropy::quantize::derive_seed;
use crate::error::{FcnrError, Result};
use crate::networks::layers::{Conv2d, ConvTranspose2d, Jctm, Mlp, PRelu, ParamTensors, Scm};
use crate::networks::ops::{add_uniform_noise, from_f64, laplace_bits, quantize_ste, softplus_inverse};
use crate::networks::params::{Checkpoint, Init, ParamStore, FORMAT_TAG, META_FORMAT, META_MODEL};
use crate::networks::pe::{pe_vis, VisParams};
use crate::networks::{ModelConfig, PAD_MULTIPLE};

#[derive(Debug, Clone)]
struct Encoder {
    convs: [Conv2d; 4],
    acts: [PRelu; 4],
    jctm: Option<Jctm>,
    proj: Conv2d,
}

impl Encoder {
    fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let mut init = init.push("encoder");
        let n = cfg.channels;
        let convs = [
            Conv2d::new(&mut init, "conv1", 3, n, 5, 2)?,
            Conv2d::new(&mut init, "conv2", n, n, 5, 2)?,
            Conv2d::new(&mut init, "conv3", n, n, 5, 2)?,
            Conv2d::new(&mut init, "conv4", n, n, 5, 2)?,
        ];
        let acts = [
            PRelu::new(&mut init, "act1", n)?,
            PRelu::new(&mut init, "act2", n)?,
            PRelu::new(&mut init, "act3", n)?,
            PRelu::new(&mut init, "act4", n)?,
        ];
        let jctm = jctm_if(&mut init, cfg)?;
        let proj = Conv2d::new(&mut init, "proj", n, cfg.latent_channels, 1, 1)?;
        Ok(Encoder { convs, acts, jctm, proj })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, (conv, act)) in self.convs.iter().zip(&self.acts).enumerate() {
            h = act.forward(&conv.forward(&h)?)?;
            if i == 1 {
                h = apply_jctm(&self.jctm, h)?;
            }
        }
        self.proj.forward(&h)
    }
}

#[derive(Debug, Clone)]
struct HyperEncoder {
    conv1: Conv2d,
    act: PRelu,
    jctm: Option<Jctm>,
    conv2: Conv2d,
}

impl HyperEncoder {
    fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let mut init = init.push("hyper_encoder");
        let n = cfg.channels;
        Ok(HyperEncoder {
            conv1: Conv2d::new(&mut init, "conv1", cfg.latent_channels, n, 3, 2)?,
            act: PRelu::new(&mut init, "act1", n)?,
            jctm: jctm_if(&mut init, cfg)?,
            conv2: Conv2d::new(&mut init, "conv2", n, cfg.hyper_channels, 3, 2)?,
        })
    }

    fn forward(&self, y: &Tensor) -> Result<Tensor> {
        let h = self.act.forward(&self.conv1.forward(y)?)?;
        let h = apply_jctm(&self.jctm, h)?;
        self.conv2.forward(&h)
    }
}

#[derive(Debug, Clone)]
struct HyperDecoder {
    up1: ConvTranspose2d,
    act: PRelu,
    jctm: Option<Jctm>,
    up2: ConvTranspose2d,
}

impl HyperDecoder {
    fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let mut init = init.push("hyper_decoder");
        let n = cfg.channels;
        Ok(HyperDecoder {
            up1: ConvTranspose2d::new(&mut init, "up1", cfg.hyper_channels, n, 3)?,
            act: PRelu::new(&mut init, "act1", n)?,
            jctm: jctm_if(&mut init, cfg)?,
            up2: ConvTranspose2d::new(&mut init, "up2", n, 2 * cfg.latent_channels, 3)?,
        })
    }

    fn forward(&self, z: &Tensor) -> Result<ParamTensors> {
        let h = self.act.forward(&self.up1.forward(z)?)?;
        let h = apply_jctm(&self.jctm, h)?;
        ParamTensors::from_raw(&self.up2.forward(&h)?)
    }
}

#[derive(Debug, Clone)]
struct Decoder {
    proj: Conv2d,
    proj_act: PRelu,
    ups: [ConvTranspose2d; 4],
    acts: [PRelu; 3],
    jctm: Option<Jctm>,
}

impl Decoder {
    fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let mut init = init.push("decoder");
        let n = cfg.channels;
        Ok(Decoder {
            proj: Conv2d::new(&mut init, "proj", cfg.latent_channels, n, 1, 1)?,
            proj_act: PRelu::new(&mut init, "proj_act", n)?,
            ups: [
                ConvTranspose2d::new(&mut init, "up1", n, n, 5)?,
                ConvTranspose2d::new(&mut init, "up2", n, n, 5)?,
                ConvTranspose2d::new(&mut init, "up3", n, n, 5)?,
                ConvTranspose2d::new(&mut init, "up4", n, 3, 5)?,
            ],
            acts: [
                PRelu::new(&mut init, "act1", n)?,
                PRelu::new(&mut init, "act2", n)?,
                PRelu::new(&mut init, "act3", n)?,
            ],
            jctm: jctm_if(&mut init, cfg)?,
        })
    }

    fn forward(&self, y: &Tensor) -> Result<Tensor> {
        let mut h = self.proj_act.forward(&self.proj.forward(y)?)?;
        for (i, up) in self.ups.iter().enumerate() {
            h = up.forward(&h)?;
            if let Some(act) = self.acts.get(i) {
                h = act.forward(&h)?;
            }
            if i == 1 {
                h = apply_jctm(&self.jctm, h)?;
            }
        }
        Ok(h)
    }
}

fn jctm_if(init: &mut Init, cfg: &ModelConfig) -> Result<Option<Jctm>> {
    if cfg.ablation.uses_jctm() {
        Ok(Some(Jctm::new(init, "jctm", cfg.channels, cfg.heads)?))
    } else {
        Ok(None)
    }
}

fn apply_jctm(jctm: &Option<Jctm>, h: Tensor) -> Result<Tensor> {
    match jctm {
        Some(j) => j.forward(&h),
        None => Ok(h),
    }
}

/// Channel-wise hyper-latent parameters, either predicted from the encoded
/// visualization parameters or learned as free constants.
#[derive(Debug, Clone)]
enum VisPrior {
    Mlp(Mlp),
    Learned(Tensor),
}

impl VisPrior {
    fn new(init: &mut Init, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.hyper_channels;
        if cfg.ablation.uses_pe() {
            Ok(VisPrior::Mlp(Mlp::new(init, name, cfg.pe.vis_width(), cfg.mlp_hidden, c)?))
        } else {
            let mut init = init.push(name);
            let mut raw = vec![0.0; c];
            raw.extend(std::iter::repeat_n(softplus_inverse(1.0), c));
            Ok(VisPrior::Learned(init.from_values("raw", &[1, 2 * c], raw)?))
        }
    }
}

/// Parameters that see the training losses through different paths in
/// [`FcnrModel::forward`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Noise-relaxed rate, straight-through values everywhere else.
    Mixed,
    /// Noise-relaxed values everywhere; smooth in the parameters.
    Relaxed,
}

/// Outputs of a training forward pass over one pair.
#[derive(Debug, Clone)]
pub struct TrainForward {
    /// Unclamped `[2, 3, H, W]` reconstructions.
    pub recon: Tensor,
    /// Scalar rate terms for `z_l`, `z_r`, `y_l`, `y_r` in bits.
    pub bits: [Tensor; 4],
    /// Quantized main latents that were fed to the decoder.
    pub y_hat: Tensor,
}

impl TrainForward {
    pub fn total_bits(&self) -> Result<Tensor> {
        let [a, b, c, d] = &self.bits;
        Ok((((a + b)? + c)? + d)?)
    }
}

/// Which stereo context module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextModule {
    HyperLatent,
    Latent,
}

#[derive(Debug, Clone)]
pub struct FcnrModel {
    config: ModelConfig,
    store: ParamStore,
    encoder: Encoder,
    hyper_encoder: HyperEncoder,
    hyper_decoder: HyperDecoder,
    decoder: Decoder,
    cont_z: Scm,
    cont_y: Scm,
    prior_left: VisPrior,
    prior_right: VisPrior,
}

impl FcnrModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(config.precision.dtype());
        let mut init = store.init(seed);
        let encoder = Encoder::new(&mut init, &config)?;
        let hyper_encoder = HyperEncoder::new(&mut init, &config)?;
        let hyper_decoder = HyperDecoder::new(&mut init, &config)?;
        let decoder = Decoder::new(&mut init, &config)?;
        let cont_z = Scm::new(&mut init, "cont_z", config.hyper_channels, config.channels)?;
        let cont_y = Scm::new(&mut init, "cont_y", config.latent_channels, config.channels)?;
        let prior_left = VisPrior::new(&mut init, "prior_left", &config)?;
        let prior_right = VisPrior::new(&mut init, "prior_right", &config)?;
        drop(init);
        Ok(FcnrModel {
            config,
            store,
            encoder,
            hyper_encoder,
            hyper_decoder,
            decoder,
            cont_z,
            cont_y,
            prior_left,
            prior_right,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> candle_core::DType {
        self.store.dtype()
    }

    pub fn fingerprint(&self) -> Result<u64> {
        self.store.fingerprint(&self.config.to_json())
    }

    fn check_pair(&self, x: &Tensor, channels: usize, what: &str) -> Result<()> {
        let (b, c, _, _) = x
            .dims4()
            .map_err(|_| FcnrError::Shape(format!("{what} must be rank 4, got {:?}", x.dims())))?;
        if b != 2 || c != channels {
            return Err(FcnrError::Shape(format!(
                "{what} must be [2, {channels}, h, w], got {:?}",
                x.dims()
            )));
        }
        Ok(())
    }

    /// `[2, 3, H, W]` images to `[2, M, H/16, W/16]` latents.
    pub fn encode(&self, pair: &Tensor) -> Result<Tensor> {
        self.check_pair(pair, 3, "image pair")?;
        let (_, _, h, w) = pair.dims4()?;
        if h % PAD_MULTIPLE != 0 || w % PAD_MULTIPLE != 0 {
            return Err(FcnrError::PaddingRequired {
                height: h,
                width: w,
                multiple: PAD_MULTIPLE,
            });
        }
        self.encoder.forward(&pair.to_dtype(self.dtype())?)
    }

    pub fn hyper_encode(&self, y: &Tensor) -> Result<Tensor> {
        self.check_pair(y, self.config.latent_channels, "latent pair")?;
        self.hyper_encoder.forward(y)
    }

    /// Parameters of the main latents predicted from both quantized
    /// hyper-latents, `[2, M, h, w]` each.
    pub fn hyper_decode(&self, z_hat: &Tensor) -> Result<ParamTensors> {
        self.check_pair(z_hat, self.config.hyper_channels, "hyper-latent pair")?;
        self.hyper_decoder.forward(z_hat)
    }

    /// Unclamped reconstructions.
    pub fn decode(&self, y_hat: &Tensor) -> Result<Tensor> {
        self.check_pair(y_hat, self.config.latent_channels, "latent pair")?;
        self.decoder.forward(y_hat)
    }

    /// Reconstructions clamped to the image range.
    pub fn reconstruct(&self, y_hat: &Tensor) -> Result<Tensor> {
        Ok(self.decode(y_hat)?.clamp(0.0, 1.0)?)
    }

    fn vis_prior(&self, prior: &VisPrior, vp: &VisParams) -> Result<ParamTensors> {
        match prior {
            VisPrior::Mlp(mlp) => {
                vp.validate()?;
                let code = pe_vis(vp, &self.config.pe);
                let width = code.len();
                mlp.forward(&from_f64(code, &[1, width], self.dtype())?)
            }
            VisPrior::Learned(raw) => ParamTensors::from_raw(raw),
        }
    }

    /// Channel-wise `[1, C]` parameters of the left hyper-latent.
    pub fn hyper_prior_left(&self, vp: &VisParams) -> Result<ParamTensors> {
        self.vis_prior(&self.prior_left, vp)
    }

    /// Channel-wise `[1, C]` conditioning input for the right hyper-latent's
    /// context module.
    pub fn hyper_condition_right(&self, vp: &VisParams) -> Result<ParamTensors> {
        self.vis_prior(&self.prior_right, vp)
    }

    /// Right hyper-latent parameters from the decoded left hyper-latent
    /// (`[1, C, h, w]`) and the broadcast right-side condition.
    pub fn context_hyper(&self, z_hat_left: &Tensor, condition: &ParamTensors) -> Result<ParamTensors> {
        self.cont_z.forward(z_hat_left, condition)
    }

    /// Right latent parameters from the decoded left latent and the
    /// hyper-decoder's prediction for the right view.
    pub fn context_latent(&self, y_hat_left: &Tensor, prior: &ParamTensors) -> Result<ParamTensors> {
        self.cont_y.forward(y_hat_left, prior)
    }

    /// Training forward pass. `noise_seed` fixes the uniform noise of all four
    /// planes.
    pub fn forward(
        &self,
        pair: &Tensor,
        vp: [&VisParams; 2],
        mode: ForwardMode,
        noise_seed: u64,
    ) -> Result<TrainForward> {
        let y = self.encode(pair)?;
        let z = self.hyper_encode(&y)?;
        let (_, _, zh, zw) = z.dims4()?;
        let quant = |v: &Tensor, mu: &Tensor, stream: u64| -> Result<(Tensor, Tensor)> {
            let noisy = add_uniform_noise(v, derive_seed(noise_seed, stream))?;
            let fed = match mode {
                ForwardMode::Mixed => quantize_ste(v, mu)?,
                ForwardMode::Relaxed => noisy.clone(),
            };
            Ok((noisy, fed))
        };

        let z_l = z.narrow(0, 0, 1)?;
        let z_r = z.narrow(0, 1, 1)?;
        let psi_zl = self.hyper_prior_left(vp[0])?.broadcast_spatial(zh, zw)?;
        let (zl_noisy, zl_hat) = quant(&z_l, &psi_zl.mu, 0)?;
        let bits_zl = laplace_bits(&zl_noisy, &psi_zl.mu, &psi_zl.scale)?;

        let phi_zr = self.hyper_condition_right(vp[1])?.broadcast_spatial(zh, zw)?;
        let psi_zr = self.context_hyper(&zl_hat, &phi_zr)?;
        let (zr_noisy, zr_hat) = quant(&z_r, &psi_zr.mu, 1)?;
        let bits_zr = laplace_bits(&zr_noisy, &psi_zr.mu, &psi_zr.scale)?;

        let phi_y = self.hyper_decode(&Tensor::cat(&[&zl_hat, &zr_hat], 0)?)?;
        let y_l = y.narrow(0, 0, 1)?;
        let y_r = y.narrow(0, 1, 1)?;
        let psi_yl = phi_y.member(0)?;
        let (yl_noisy, yl_hat) = quant(&y_l, &psi_yl.mu, 2)?;
        let bits_yl = laplace_bits(&yl_noisy, &psi_yl.mu, &psi_yl.scale)?;

        let psi_yr = self.context_latent(&yl_hat, &phi_y.member(1)?)?;
        let (yr_noisy, yr_hat) = quant(&y_r, &psi_yr.mu, 3)?;
        let bits_yr = laplace_bits(&yr_noisy, &psi_yr.mu, &psi_yr.scale)?;

        let y_hat = Tensor::cat(&[&yl_hat, &yr_hat], 0)?;
        let recon = self.decode(&y_hat)?;
        Ok(TrainForward {
            recon,
            bits: [bits_zl, bits_zr, bits_yl, bits_yr],
            y_hat,
        })
    }

    /// Zero the weights of a context module's context branch, leaving its
    /// output a function of the prior parameters alone.
    pub fn zero_context_branch(&self, which: ContextModule) -> Result<()> {
        let prefix = match which {
            ContextModule::HyperLatent => "cont_z.ctx",
            ContextModule::Latent => "cont_y.ctx",
        };
        for (name, var) in self.store.iter() {
            if name.starts_with(prefix) {
                var.set(&var.as_tensor().zeros_like()?)?;
            }
        }
        Ok(())
    }

    /// Metadata identifying this model inside a checkpoint.
    pub fn checkpoint_metadata(&self) -> HashMap<String, String> {
        HashMap::from([
            (META_FORMAT.to_string(), FORMAT_TAG.to_string()),
            (META_MODEL.to_string(), self.config.to_json()),
        ])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::save(path, &self.store.tensors(), self.checkpoint_metadata())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let json = ckpt
            .metadata
            .get(META_MODEL)
            .ok_or_else(|| FcnrError::Checkpoint("missing model config".into()))?;
        let config: ModelConfig = serde_json::from_str(json)?;
        let model = FcnrModel::new(config, 0)?;
        model.store.assign(&ckpt.tensors)?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{Ablation, Precision};
    use candle_core::{DType, Device, Var};

    fn tiny(ablation: Ablation) -> ModelConfig {
        ModelConfig {
            channels: 8,
            latent_channels: 4,
            hyper_channels: 4,
            heads: 2,
            mlp_hidden: 16,
            ablation,
            precision: Precision::F64,
            ..ModelConfig::default()
        }
    }

    fn image(seed: u64, h: usize, w: usize) -> Tensor {
        let v = crate::entropy::quantize::uniform_noise(3 * h * w, seed)
            .into_iter()
            .map(|e| e + 0.5)
            .collect();
        Tensor::from_vec(v, (1, 3, h, w), &Device::Cpu).unwrap()
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a - b)
            .unwrap()
            .abs()
            .unwrap()
            .flatten_all()
            .unwrap()
            .max(0)
            .unwrap()
            .to_dtype(DType::F64)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap()
    }

    fn min_value(t: &Tensor) -> f64 {
        t.flatten_all().unwrap().min(0).unwrap().to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn shape_algebra() {
        let model = FcnrModel::new(tiny(Ablation::Full), 1).unwrap();
        let pair = Tensor::cat(&[image(1, 128, 128), image(2, 128, 128)], 0).unwrap();
        let y = model.encode(&pair).unwrap();
        assert_eq!(y.dims(), &[2, 4, 8, 8]);
        let z = model.hyper_encode(&y).unwrap();
        assert_eq!(z.dims(), &[2, 4, 2, 2]);
        let phi = model.hyper_decode(&z).unwrap();
        assert_eq!(phi.mu.dims(), &[2, 4, 8, 8]);
        assert!(min_value(&phi.scale) > 0.0);
        let x = model.reconstruct(&y).unwrap();
        assert_eq!(x.dims(), &[2, 3, 128, 128]);
        assert!(min_value(&x) >= 0.0 && min_value(&x.neg().unwrap()) >= -1.0);
    }

    #[test]
    fn rejects_unpadded_input() {
        let model = FcnrModel::new(tiny(Ablation::Full), 1).unwrap();
        let pair = Tensor::cat(&[image(1, 96, 64), image(2, 96, 64)], 0).unwrap();
        assert!(matches!(model.encode(&pair), Err(FcnrError::PaddingRequired { .. })));
    }

    #[test]
    fn identical_views_give_identical_outputs() {
        let model = FcnrModel::new(tiny(Ablation::Full), 2).unwrap();
        let x = image(5, 64, 64);
        let pair = Tensor::cat(&[&x, &x], 0).unwrap();
        let y = model.encode(&pair).unwrap();
        assert!(max_diff(&y.narrow(0, 0, 1).unwrap(), &y.narrow(0, 1, 1).unwrap()) < 1e-5);
        let z = model.hyper_encode(&y).unwrap();
        assert!(max_diff(&z.narrow(0, 0, 1).unwrap(), &z.narrow(0, 1, 1).unwrap()) < 1e-5);
        let phi = model.hyper_decode(&z).unwrap();
        assert!(max_diff(&phi.mu.narrow(0, 0, 1).unwrap(), &phi.mu.narrow(0, 1, 1).unwrap()) < 1e-5);
        let xr = model.decode(&y).unwrap();
        assert!(max_diff(&xr.narrow(0, 0, 1).unwrap(), &xr.narrow(0, 1, 1).unwrap()) < 1e-5);
    }

    #[test]
    fn jctm_swap_equivariance_and_shape() {
        let mut store = ParamStore::new(DType::F64);
        let jctm = {
            let mut init = store.init(3);
            Jctm::new(&mut init, "j", 8, 2).unwrap()
        };
        let a = image(1, 4, 4).repeat((1, 3, 1, 1)).unwrap().narrow(1, 0, 8).unwrap();
        let b = image(2, 4, 4).repeat((1, 3, 1, 1)).unwrap().narrow(1, 0, 8).unwrap();
        let ab = jctm.forward(&Tensor::cat(&[&a, &b], 0).unwrap()).unwrap();
        let ba = jctm.forward(&Tensor::cat(&[&b, &a], 0).unwrap()).unwrap();
        assert_eq!(ab.dims(), &[2, 8, 4, 4]);
        assert!(max_diff(&ab.narrow(0, 0, 1).unwrap(), &ba.narrow(0, 1, 1).unwrap()) < 1e-12);
        assert!(max_diff(&ab.narrow(0, 1, 1).unwrap(), &ba.narrow(0, 0, 1).unwrap()) < 1e-12);
    }

    #[test]
    fn jctm_gradient_matches_finite_differences() {
        let mut store = ParamStore::new(DType::F64);
        let jctm = {
            let mut init = store.init(4);
            Jctm::new(&mut init, "j", 4, 2).unwrap()
        };
        let base: Vec<f64> = crate::entropy::quantize::uniform_noise(2 * 4 * 3 * 3, 8);
        let probe = Tensor::from_vec(
            crate::entropy::quantize::uniform_noise(2 * 4 * 3 * 3, 9),
            (2, 4, 3, 3),
            &Device::Cpu,
        )
        .unwrap();
        let objective = |x: &Tensor| -> Tensor {
            jctm.forward(x).unwrap().mul(&probe).unwrap().sum_all().unwrap()
        };
        let input = Var::from_tensor(&Tensor::from_vec(base.clone(), (2, 4, 3, 3), &Device::Cpu).unwrap()).unwrap();
        let grads = objective(input.as_tensor()).backward().unwrap();
        let analytic = grads.get(&input).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let eps = 1e-6;
        for i in 0..base.len() {
            let eval = |delta: f64| {
                let mut v = base.clone();
                v[i] += delta;
                objective(&Tensor::from_vec(v, (2, 4, 3, 3), &Device::Cpu).unwrap())
                    .to_scalar::<f64>()
                    .unwrap()
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let rel = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-6);
            assert!(rel < 1e-3, "element {i}: {numeric} vs {}", analytic[i]);
        }
    }

    #[test]
    fn zeroed_context_branch_ignores_context() {
        let model = FcnrModel::new(tiny(Ablation::Full), 6).unwrap();
        model.zero_context_branch(ContextModule::HyperLatent).unwrap();
        let vp = VisParams::new(0.2, 0.4, 0.6).unwrap();
        let cond = model.hyper_condition_right(&vp).unwrap().broadcast_spatial(2, 2).unwrap();
        let ctx_a = image(1, 2, 2).repeat((1, 2, 1, 1)).unwrap().narrow(1, 0, 4).unwrap();
        let ctx_b = (ctx_a.clone() * 7.0).unwrap();
        let out_a = model.context_hyper(&ctx_a, &cond).unwrap();
        let out_b = model.context_hyper(&ctx_b, &cond).unwrap();
        assert_eq!(max_diff(&out_a.mu, &out_b.mu), 0.0);
        assert_eq!(max_diff(&out_a.scale, &out_b.scale), 0.0);
        assert!(min_value(&out_a.scale) > 0.0);
    }

    #[test]
    fn vis_prior_width_positivity_and_determinism() {
        let cfg = ModelConfig {
            channels: 8,
            mlp_hidden: 16,
            ..ModelConfig::default()
        };
        let model = FcnrModel::new(cfg, 7).unwrap();
        let vp = VisParams::new(0.3, 0.5, 0.9).unwrap();
        let a = model.hyper_prior_left(&vp).unwrap();
        let b = model.hyper_prior_left(&vp).unwrap();
        assert_eq!(a.mu.dims()[1] + a.scale.dims()[1], 96);
        assert!(min_value(&a.scale) > 0.0);
        assert_eq!(max_diff(&a.mu, &b.mu), 0.0);
        // Initial scales sit near 1.
        let s = crate::networks::ops::to_f64_vec(&a.scale).unwrap();
        assert!(s.iter().all(|v| (v - 1.0).abs() < 0.5), "{s:?}");
    }

    #[test]
    fn every_ablation_runs() {
        let pair = Tensor::cat(&[image(1, 64, 64), image(2, 64, 64)], 0).unwrap();
        let vp = VisParams::new(0.0, 0.5, 0.25).unwrap();
        let mut counts = Vec::new();
        for ablation in Ablation::ALL {
            let model = FcnrModel::new(tiny(ablation), 1).unwrap();
            let out = model.forward(&pair, [&vp, &vp], ForwardMode::Mixed, 3).unwrap();
            let bits = out.total_bits().unwrap().to_scalar::<f64>().unwrap();
            assert!(bits.is_finite() && bits > 0.0);
            assert_eq!(out.recon.dims(), &[2, 3, 64, 64]);
            counts.push(model.store().parameter_count());
        }
        // Removing a feature removes parameters.
        assert!(counts[0] > counts[1] && counts[0] > counts[2] && counts[3] < counts[1]);
    }

    #[test]
    fn checkpoint_reload_reproduces_outputs() {
        let model = FcnrModel::new(tiny(Ablation::Full), 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        model.save(&path).unwrap();
        let loaded = FcnrModel::load(&path).unwrap();
        assert_eq!(model.fingerprint().unwrap(), loaded.fingerprint().unwrap());
        let pair = Tensor::cat(&[image(1, 64, 64), image(2, 64, 64)], 0).unwrap();
        assert_eq!(max_diff(&model.encode(&pair).unwrap(), &loaded.encode(&pair).unwrap()), 0.0);
    }
}
