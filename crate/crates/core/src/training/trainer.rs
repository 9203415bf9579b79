//! The optimization loop, its resumable state and its on-disk outputs.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::ImagePair;
use crate::entropy::quantize::derive_seed;
use crate::error::{FcnrError, Result};
use crate::eval::{line_chart, psnr_from_mse, Series};
use crate::networks::ops::to_f64_vec;
use crate::networks::params::META_TRAIN;
use crate::networks::{Checkpoint, FcnrModel, ForwardMode, VisParams, PAD_MULTIPLE};
use crate::training::loss::objective;
use crate::training::{Adam, TrainConfig};

const SHUFFLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const META_TRAIN_CONFIG: &str = "train_config";
/// Smoothing factor of the running averages, roughly a 50-step window.
const RUNNING_RATE: f64 = 0.02;

/// A pair ready for the network: padded `[2, 3, H', W']` images.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub images: Tensor,
    pub vis: [VisParams; 2],
    pub height: usize,
    pub width: usize,
    pub pair_id: u64,
}

impl TrainSample {
    /// Pixels of both images at their original size.
    pub fn pixels(&self) -> usize {
        2 * self.height * self.width
    }
}

pub fn prepare_sample(pair: &ImagePair, dtype: candle_core::DType) -> Result<TrainSample> {
    let (l, _, _) = pair.left.pad_reflect(PAD_MULTIPLE);
    let (r, _, _) = pair.right.pad_reflect(PAD_MULTIPLE);
    let images = Tensor::cat(&[l.to_tensor()?, r.to_tensor()?], 0)?.to_dtype(dtype)?;
    Ok(TrainSample {
        images,
        vis: pair.vis,
        height: pair.left.height,
        width: pair.left.width,
        pair_id: pair.pair_id,
    })
}

/// Losses of one update, averaged over the pairs of the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub rate_bits: f64,
    pub bpp: f64,
    pub distortion: f64,
    pub total: f64,
    /// Mean PSNR of the clamped training reconstructions.
    pub psnr: f64,
    /// Cumulative training wall time in seconds.
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    /// Steps that contributed; fewer than an epoch's worth for a partial
    /// epoch at the end of a run.
    pub steps: u64,
    pub rate_bits: f64,
    pub bpp: f64,
    pub distortion: f64,
    pub total: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct EpochAccumulator {
    steps: u64,
    rate_bits: f64,
    bpp: f64,
    distortion: f64,
    total: f64,
    psnr: f64,
}

impl EpochAccumulator {
    fn add(&mut self, r: &StepRecord) {
        self.steps += 1;
        self.rate_bits += r.rate_bits;
        self.bpp += r.bpp;
        self.distortion += r.distortion;
        self.total += r.total;
        self.psnr += r.psnr;
    }

    fn record(&self, epoch: u64) -> EpochRecord {
        let n = self.steps.max(1) as f64;
        EpochRecord {
            epoch,
            steps: self.steps,
            rate_bits: self.rate_bits / n,
            bpp: self.bpp / n,
            distortion: self.distortion / n,
            total: self.total / n,
            psnr: self.psnr / n,
        }
    }
}

/// Everything besides weights and optimizer moments needed to resume.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Updates applied so far.
    pub step: u64,
    pub wall_secs: f64,
    pub running_rate_bits: Option<f64>,
    pub running_distortion: Option<f64>,
    pub running_total: Option<f64>,
    epoch: EpochAccumulator,
}

impl TrainState {
    fn observe(&mut self, r: &StepRecord) {
        let mix = |avg: &mut Option<f64>, x: f64| {
            *avg = Some(match *avg {
                Some(a) => a + RUNNING_RATE * (x - a),
                None => x,
            })
        };
        mix(&mut self.running_rate_bits, r.rate_bits);
        mix(&mut self.running_distortion, r.distortion);
        mix(&mut self.running_total, r.total);
        self.epoch.add(r);
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(to_f64_vec(t)?[0])
}

/// One Adam update on the mean loss of `batch`. `step` is the index of this
/// update and fixes the quantization noise.
pub fn train_step(
    model: &FcnrModel,
    adam: &mut Adam,
    batch: &[&TrainSample],
    cfg: &TrainConfig,
    step: u64,
) -> Result<StepRecord> {
    if batch.is_empty() {
        return Err(FcnrError::InvalidArgument("empty training batch".into()));
    }
    let started = Instant::now();
    let noise_base = derive_seed(derive_seed(cfg.seed, NOISE_STREAM), step);
    let mut total: Option<Tensor> = None;
    let (mut bits, mut bpp, mut dist, mut psnr) = (0.0, 0.0, 0.0, 0.0);
    for (i, sample) in batch.iter().enumerate() {
        let fwd = model.forward(
            &sample.images,
            [&sample.vis[0], &sample.vis[1]],
            ForwardMode::Mixed,
            derive_seed(noise_base, i as u64),
        )?;
        let crop = |t: &Tensor| -> Result<Tensor> { Ok(t.narrow(2, 0, sample.height)?.narrow(3, 0, sample.width)?) };
        let images = crop(&sample.images)?;
        let recon = crop(&fwd.recon)?;
        let obj = objective(&fwd, &images, &recon, sample.pixels(), cfg)?;
        let b = scalar(&obj.rate_bits)?;
        bits += b;
        bpp += b / sample.pixels() as f64;
        dist += scalar(&obj.distortion)?;
        let mse = images.sub(&recon.detach().clamp(0.0, 1.0)?)?.sqr()?.flatten_from(1)?.mean(1)?;
        psnr += to_f64_vec(&mse)?.into_iter().map(psnr_from_mse).sum::<f64>() / 2.0;
        total = Some(match total {
            Some(t) => (t + obj.total)?,
            None => obj.total,
        });
    }
    let n = batch.len() as f64;
    let total = (total.expect("nonempty batch") / n)?;
    let record_total = scalar(&total)?;
    for (term, value) in [("rate", bits), ("distortion", dist), ("total", record_total)] {
        if !value.is_finite() {
            return Err(FcnrError::Diverged { term, step });
        }
    }
    let grads = total.backward()?;
    adam.step(model.store(), &grads)?;
    Ok(StepRecord {
        step,
        rate_bits: bits / n,
        bpp: bpp / n,
        distortion: dist / n,
        total: record_total,
        psnr: psnr / n,
        wall_secs: started.elapsed().as_secs_f64(),
    })
}

/// Files written by [`Trainer::run`] under one directory.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub dir: PathBuf,
}

impl TrainOutputs {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TrainOutputs { dir: dir.into() }
    }
    pub fn log(&self) -> PathBuf {
        self.dir.join("train.log")
    }
    pub fn epochs_csv(&self) -> PathBuf {
        self.dir.join("epochs.csv")
    }
    pub fn psnr_chart(&self) -> PathBuf {
        self.dir.join("psnr_per_epoch.svg")
    }
    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.dir.join("checkpoints").join(format!("step_{step:07}.safetensors"))
    }
    /// Final weights, loadable by every other command.
    pub fn weights(&self) -> PathBuf {
        self.dir.join("model.safetensors")
    }
    pub fn config(&self) -> PathBuf {
        self.dir.join("train.toml")
    }
}

pub struct Trainer {
    cfg: TrainConfig,
    model: FcnrModel,
    adam: Adam,
    state: TrainState,
    samples: Vec<TrainSample>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, pairs: &[ImagePair]) -> Result<Self> {
        cfg.validate()?;
        let model = FcnrModel::new(cfg.model.clone(), cfg.seed)?;
        Self::assemble(cfg, model, TrainState::default(), pairs)
    }

    /// Continue from a checkpoint written by [`Trainer::save_checkpoint`].
    pub fn resume(cfg: TrainConfig, pairs: &[ImagePair], checkpoint: &Path) -> Result<Self> {
        cfg.validate()?;
        let ckpt = Checkpoint::load(checkpoint)?;
        let model = FcnrModel::from_checkpoint(&ckpt)?;
        if model.config() != &cfg.model {
            return Err(FcnrError::Config(
                "checkpoint was trained with a different model configuration".into(),
            ));
        }
        let state: TrainState = serde_json::from_str(
            ckpt.metadata
                .get(META_TRAIN)
                .ok_or_else(|| FcnrError::Checkpoint("not a training checkpoint".into()))?,
        )?;
        let mut trainer = Self::assemble(cfg, model, state, pairs)?;
        trainer.adam.load_state(&ckpt.tensors, trainer.state.step)?;
        Ok(trainer)
    }

    fn assemble(cfg: TrainConfig, model: FcnrModel, state: TrainState, pairs: &[ImagePair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(FcnrError::InvalidArgument("no training pairs".into()));
        }
        let samples = pairs
            .iter()
            .map(|p| prepare_sample(p, model.dtype()))
            .collect::<Result<Vec<_>>>()?;
        let adam = Adam::new(model.store(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)?;
        Ok(Trainer {
            cfg,
            model,
            adam,
            state,
            samples,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &FcnrModel {
        &self.model
    }

    pub fn into_model(self) -> FcnrModel {
        self.model
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.samples.len().div_ceil(self.cfg.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        let full = self.steps_per_epoch() * self.cfg.epochs as u64;
        self.cfg.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.total_steps()
    }

    fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(self.cfg.seed, SHUFFLE_STREAM), epoch));
        order.shuffle(&mut rng);
        order
    }

    /// Apply the next update. Returns the epoch summary when this step
    /// completes an epoch.
    pub fn step(&mut self) -> Result<(StepRecord, Option<EpochRecord>)> {
        let spe = self.steps_per_epoch();
        let step = self.state.step;
        let (epoch, pos) = (step / spe, (step % spe) as usize);
        let order = self.epoch_order(epoch);
        let bs = self.cfg.batch_size;
        let batch: Vec<&TrainSample> = order[pos * bs..((pos + 1) * bs).min(order.len())]
            .iter()
            .map(|&i| &self.samples[i])
            .collect();
        let mut record = train_step(&self.model, &mut self.adam, &batch, &self.cfg, step)?;
        self.state.wall_secs += record.wall_secs;
        record.wall_secs = self.state.wall_secs;
        self.state.step += 1;
        self.state.observe(&record);
        let finished = if self.state.step % spe == 0 {
            let r = self.state.epoch.record(epoch);
            self.state.epoch = EpochAccumulator::default();
            Some(r)
        } else {
            None
        };
        Ok((record, finished))
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut tensors = self.model.store().tensors();
        tensors.extend(self.adam.state_tensors());
        let mut meta: HashMap<String, String> = self.model.checkpoint_metadata();
        meta.insert(META_TRAIN.to_string(), serde_json::to_string(&self.state)?);
        meta.insert(META_TRAIN_CONFIG.to_string(), serde_json::to_string(&self.cfg)?);
        Checkpoint::save(path, &tensors, meta)
    }

    /// Train to completion, writing the log, per-epoch table, chart,
    /// periodic checkpoints and final weights when `outputs` is given.
    pub fn run(&mut self, outputs: Option<&TrainOutputs>) -> Result<Vec<StepRecord>> {
        let mut log = match outputs {
            Some(o) => Some(RunFiles::open(o, &self.cfg)?),
            None => None,
        };
        let mut records = Vec::new();
        let mut epochs = Vec::new();
        while !self.is_done() {
            let (record, epoch) = self.step()?;
            if let Some(files) = log.as_mut() {
                if record.step % self.cfg.log_every == 0 || self.is_done() {
                    files.step(&record)?;
                }
                if let Some(e) = &epoch {
                    files.epoch(e)?;
                }
                let every = self.cfg.checkpoint_every;
                if every > 0 && self.state.step % every == 0 {
                    self.save_checkpoint(&files.outputs.checkpoint(self.state.step))?;
                }
            }
            if let Some(e) = epoch {
                log::info!(
                    "epoch {} done: {:.1} bits, L_D {:.5}, PSNR {:.2} dB",
                    e.epoch,
                    e.rate_bits,
                    e.distortion,
                    e.psnr
                );
                epochs.push(e);
            }
            records.push(record);
        }
        if let Some(mut files) = log {
            if self.state.epoch.steps > 0 {
                let partial = self.state.epoch.record(self.state.step / self.steps_per_epoch());
                files.epoch(&partial)?;
            }
            self.save_checkpoint(&files.outputs.checkpoint(self.state.step))?;
            self.save_checkpoint(&files.outputs.weights())?;
            files.chart()?;
        }
        Ok(records)
    }
}

struct RunFiles {
    outputs: TrainOutputs,
    log: std::fs::File,
}

impl RunFiles {
    fn open(outputs: &TrainOutputs, cfg: &TrainConfig) -> Result<Self> {
        let dir = &outputs.dir;
        std::fs::create_dir_all(dir).map_err(|e| FcnrError::io(dir, e))?;
        let cfg_path = outputs.config();
        std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| FcnrError::io(&cfg_path, e))?;
        let path = outputs.log();
        let fresh = !path.exists();
        let mut log = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| FcnrError::io(&path, e))?;
        if fresh {
            writeln!(log, "# step rate_bits bpp distortion total psnr_db wall_s").map_err(|e| FcnrError::io(&path, e))?;
        }
        Ok(RunFiles {
            outputs: outputs.clone(),
            log,
        })
    }

    fn step(&mut self, r: &StepRecord) -> Result<()> {
        writeln!(
            self.log,
            "{} {:.3} {:.6} {:.8} {:.6} {:.4} {:.3}",
            r.step, r.rate_bits, r.bpp, r.distortion, r.total, r.psnr, r.wall_secs
        )
        .map_err(|e| FcnrError::io(self.outputs.log(), e))
    }

    fn epoch(&mut self, e: &EpochRecord) -> Result<()> {
        let path = self.outputs.epochs_csv();
        let fresh = !path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| FcnrError::io(&path, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        w.serialize(e)?;
        w.flush().map_err(|e| FcnrError::io(&path, e))
    }

    fn chart(&self) -> Result<()> {
        let path = self.outputs.epochs_csv();
        if !path.exists() {
            return Ok(());
        }
        let mut rows: Vec<EpochRecord> = Vec::new();
        for row in csv::Reader::from_path(&path)?.deserialize() {
            rows.push(row?);
        }
        let points = rows.iter().map(|r| (r.epoch as f64, r.psnr)).collect();
        line_chart(
            &self.outputs.psnr_chart(),
            "training PSNR",
            "epoch",
            "PSNR (dB)",
            &[Series::new("train", points)],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Raster;
    use crate::networks::ModelConfig;

    fn tiny_pairs(n: usize) -> Vec<ImagePair> {
        (0..n)
            .map(|i| {
                let mut l = Raster::filled(64, 64, 0.2 + 0.1 * i as f32);
                let mut r = Raster::filled(64, 64, 0.8);
                for y in 0..64 {
                    l.set_rgb(y, (y + i) % 64, [1.0, 0.0, 0.5]);
                    r.set_rgb(y, 63 - y, [0.0, 1.0, 0.5]);
                }
                ImagePair {
                    left: l,
                    right: r,
                    vis: [
                        VisParams::new(0.0, 0.3, 0.1 * i as f64).unwrap(),
                        VisParams::new(0.0, 0.3, 0.1 * i as f64 + 0.05).unwrap(),
                    ],
                    pair_id: i as u64,
                }
            })
            .collect()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                channels: 8,
                latent_channels: 4,
                hyper_channels: 4,
                mlp_hidden: 8,
                ..ModelConfig::desk()
            },
            lr: 1e-3,
            epochs: 4,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn shuffle_is_a_permutation_that_changes_per_epoch() {
        let t = Trainer::new(tiny_config(), &tiny_pairs(6)).unwrap();
        let a = t.epoch_order(0);
        let b = t.epoch_order(1);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..6).collect::<Vec<_>>());
        assert_ne!(a, b);
        assert_eq!(a, t.epoch_order(0));
    }

    #[test]
    fn epochs_complete_on_schedule() {
        let mut cfg = tiny_config();
        cfg.batch_size = 2;
        cfg.epochs = 2;
        let mut t = Trainer::new(cfg, &tiny_pairs(3)).unwrap();
        assert_eq!(t.steps_per_epoch(), 2);
        assert_eq!(t.total_steps(), 4);
        let ends: Vec<bool> = (0..4).map(|_| t.step().unwrap().1.is_some()).collect();
        assert_eq!(ends, [false, true, false, true]);
        assert!(t.is_done());
    }

    #[test]
    fn zero_lambda_ignores_distortion() {
        // With lambda = 0 the update is a function of the rate alone: a model
        // whose decoder is perturbed receives exactly the same update.
        let mut cfg = tiny_config();
        cfg.lambda_rd = 0.0;
        let pairs = tiny_pairs(1);
        let a = Trainer::new(cfg.clone(), &pairs).unwrap();
        let b = Trainer::new(cfg.clone(), &pairs).unwrap();
        for (name, var) in b.model().store().iter() {
            if name.starts_with("decoder.") {
                var.set(&(var.as_tensor() * 1.5).unwrap()).unwrap();
            }
        }
        let (mut a, mut b) = (a, b);
        a.step().unwrap();
        b.step().unwrap();
        for (name, va) in a.model().store().iter() {
            if name.starts_with("decoder.") {
                continue;
            }
            let vb = b.model().store().get(name).unwrap();
            assert_eq!(to_f64_vec(va.as_tensor()).unwrap(), to_f64_vec(vb.as_tensor()).unwrap(), "{name}");
        }
    }

    #[test]
    fn non_finite_loss_names_the_term() {
        let pairs = tiny_pairs(1);
        let t = Trainer::new(tiny_config(), &pairs).unwrap();
        let mut sample = t.samples[0].clone();
        sample.images = (sample.images * f64::NAN).unwrap();
        let mut adam = t.adam.clone();
        let err = train_step(&t.model, &mut adam, &[&sample], &t.cfg, 0).unwrap_err();
        assert!(matches!(err, FcnrError::Diverged { step: 0, .. }), "{err}");
    }
}
