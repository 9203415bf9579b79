#![allow(dead_code)]

use candle_core::{DType, Tensor};
use fcnr_core::codec::ImagePair;
use fcnr_core::data::Raster;
use fcnr_core::networks::ops::to_f64_vec;
use fcnr_core::networks::{FcnrModel, ForwardMode, ModelConfig, Precision, VisParams};
use fcnr_core::training::{objective, prepare_sample, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn blobs(h: usize, w: usize, shift: f32) -> Raster {
    let mut img = Raster::filled(h, w, 1.0);
    for y in 0..h {
        for x in 0..w {
            let u = x as f32 / w as f32 - 0.5 - shift;
            let v = y as f32 / h as f32 - 0.5;
            let s = (-(u * u + v * v) * 18.0).exp();
            img.set_rgb(y, x, [1.0 - 0.8 * s, 1.0 - 0.3 * s, 1.0 - 0.6 * s * (6.0 * u).cos().abs()]);
        }
    }
    img
}

pub fn pair(h: usize, w: usize, id: u64) -> ImagePair {
    let shift = id as f32 * 0.03;
    ImagePair {
        left: blobs(h, w, shift),
        right: blobs(h, w, shift + 0.05),
        vis: [
            VisParams::new(0.4, 0.5, 0.1 + 0.01 * id as f64).unwrap(),
            VisParams::new(0.4, 0.5, 0.15 + 0.01 * id as f64).unwrap(),
        ],
        pair_id: id,
    }
}

pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        channels: 8,
        latent_channels: 4,
        hyper_channels: 4,
        mlp_hidden: 8,
        ..ModelConfig::default()
    }
}

pub fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        model: tiny_model_config(),
        lr: 1e-3,
        epochs: 10,
        seed: 5,
        checkpoint_every: 0,
        ..TrainConfig::default()
    }
}

/// Analytic and central-difference directional derivatives of the training
/// objective along a random unit direction over every parameter, in f64 with
/// the noise relaxation on both paths.
pub fn full_model_directional_derivative(cfg: &TrainConfig, seed: u64) -> (f64, f64) {
    let mut model_cfg = cfg.model.clone();
    model_cfg.precision = Precision::F64;
    let model = FcnrModel::new(model_cfg, seed).unwrap();
    let sample = prepare_sample(&pair(64, 64, 1), DType::F64).unwrap();
    let noise_seed = 99;
    let loss = |m: &FcnrModel| -> Tensor {
        let fwd = m
            .forward(&sample.images, [&sample.vis[0], &sample.vis[1]], ForwardMode::Relaxed, noise_seed)
            .unwrap();
        let recon = fwd.recon.clone();
        objective(&fwd, &sample.images, &recon, sample.pixels(), cfg).unwrap().total
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let mut direction = Vec::new();
    let mut norm2 = 0.0;
    for (_, var) in model.store().iter() {
        let d: Vec<f64> = (0..var.elem_count()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        norm2 += d.iter().map(|x| x * x).sum::<f64>();
        direction.push(Tensor::from_vec(d, var.shape(), var.device()).unwrap());
    }
    let norm = norm2.sqrt();
    let direction: Vec<Tensor> = direction.into_iter().map(|d| (d / norm).unwrap()).collect();

    let grads = loss(&model).backward().unwrap();
    let mut analytic = 0.0;
    for ((_, var), d) in model.store().iter().zip(&direction) {
        if let Some(g) = grads.get(var.as_tensor()) {
            analytic += to_f64_vec(&(g * d).unwrap().sum_all().unwrap()).unwrap()[0];
        }
    }

    let originals: Vec<Tensor> = model.store().iter().map(|(_, v)| v.as_tensor().copy().unwrap()).collect();
    let eps = 1e-5;
    let shifted = |sign: f64| -> f64 {
        for (((_, var), d), orig) in model.store().iter().zip(&direction).zip(&originals) {
            var.set(&(orig + (d * (sign * eps)).unwrap()).unwrap()).unwrap();
        }
        to_f64_vec(&loss(&model)).unwrap()[0]
    };
    let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
    for ((_, var), orig) in model.store().iter().zip(&originals) {
        var.set(orig).unwrap();
    }
    (analytic, fd)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}
