//! Rate–distortion sweeps over λ and the ablation comparison.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{CoderBackend, ImagePair};
use crate::data::{Manifest, SplitFilter};
use crate::error::{FcnrError, Result};
use crate::eval::chart::{line_chart, Series};
use crate::eval::report::{evaluate_corpus, EvalReport};
use crate::networks::{Ablation, FcnrModel};
use crate::training::{TrainConfig, TrainOutputs, Trainer};

pub fn load_pairs(manifest: &Manifest, filter: SplitFilter) -> Result<Vec<ImagePair>> {
    manifest.pairs_in(filter)?.iter().map(|p| manifest.load_pair(p)).collect()
}

/// Train into `dir`, or reuse the weights a previous run left there.
pub fn train_or_load(cfg: &TrainConfig, pairs: &[ImagePair], dir: &Path) -> Result<FcnrModel> {
    let outputs = TrainOutputs::new(dir);
    let weights = outputs.weights();
    if weights.exists() {
        let model = FcnrModel::load(&weights)?;
        if model.config() == &cfg.model {
            log::info!("reusing {}", weights.display());
            return Ok(model);
        }
        log::warn!("{} has a different model configuration; retraining", weights.display());
    }
    let mut trainer = Trainer::new(cfg.clone(), pairs)?;
    trainer.run(Some(&outputs))?;
    Ok(trainer.into_model())
}

fn split_psnr(r: &EvalReport) -> (Option<f64>, Option<f64>) {
    (r.train.as_ref().map(|s| s.mean_psnr), r.heldout.as_ref().map(|s| s.mean_psnr))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub lambda: f64,
    pub bpp: f64,
    pub psnr: f64,
    pub train_psnr: Option<f64>,
    pub heldout_psnr: Option<f64>,
    pub fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdTable {
    pub points: Vec<RdPoint>,
}

impl RdTable {
    /// Whether BPP does not increase as λ decreases. Expected, not required.
    pub fn rate_monotone_in_lambda(&self) -> bool {
        let mut pts: Vec<&RdPoint> = self.points.iter().collect();
        pts.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        pts.windows(2).all(|w| w[0].bpp <= w[1].bpp)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush().map_err(|e| FcnrError::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut points = Vec::new();
        for row in csv::Reader::from_path(path)?.deserialize() {
            points.push(row?);
        }
        Ok(RdTable { points })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:>10} {:>8} {:>10} {:>16}\n", "lambda", "BPP", "PSNR(dB)", "fingerprint");
        for p in &self.points {
            out += &format!("{:>10} {:>8.4} {:>10.3} {:>16x}\n", p.lambda, p.bpp, p.psnr, p.fingerprint);
        }
        out += &format!(
            "rate nonincreasing as lambda decreases: {}\n",
            if self.rate_monotone_in_lambda() { "yes" } else { "no" }
        );
        out
    }
}

/// One model per λ, each trained on the manifest's training split and
/// evaluated on `eval_split`. Writes `rd.csv` and `rd.svg` into `out_dir`.
pub fn rd_sweep(
    lambdas: &[f64],
    base: &TrainConfig,
    manifest: &Manifest,
    out_dir: &Path,
    coder: CoderBackend,
    eval_split: SplitFilter,
) -> Result<RdTable> {
    if lambdas.is_empty() {
        return Err(FcnrError::InvalidArgument("rd sweep needs at least one lambda".into()));
    }
    let train = load_pairs(manifest, SplitFilter::Train)?;
    let mut points = Vec::new();
    for &lambda in lambdas {
        let cfg = TrainConfig {
            lambda_rd: lambda,
            ..base.clone()
        };
        let dir = out_dir.join(format!("lambda_{lambda}"));
        let model = train_or_load(&cfg, &train, &dir)?;
        let report = evaluate_corpus(manifest, &model, &dir.display().to_string(), coder.clone(), eval_split)?;
        let (train_psnr, heldout_psnr) = split_psnr(&report);
        points.push(RdPoint {
            lambda,
            bpp: report.bpp,
            psnr: report.mean_psnr,
            train_psnr,
            heldout_psnr,
            fingerprint: report.fingerprint,
        });
    }
    let table = RdTable { points };
    std::fs::create_dir_all(out_dir).map_err(|e| FcnrError::io(out_dir, e))?;
    table.write_csv(&out_dir.join("rd.csv"))?;
    let mut curve: Vec<(f64, f64)> = table.points.iter().map(|p| (p.bpp, p.psnr)).collect();
    curve.sort_by(|a, b| a.0.total_cmp(&b.0));
    line_chart(&out_dir.join("rd.svg"), "rate-distortion", "BPP", "PSNR (dB)", &[Series::new("fcnr", curve)])?;
    if !table.rate_monotone_in_lambda() {
        log::warn!("BPP is not monotone in lambda across the sweep");
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Ablation,
    pub psnr: f64,
    pub bpp: f64,
    pub train_psnr: Option<f64>,
    pub heldout_psnr: Option<f64>,
    pub encode_secs: f64,
    pub decode_secs: f64,
    pub parameters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| FcnrError::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rows = Vec::new();
        for row in csv::Reader::from_path(path)?.deserialize() {
            rows.push(row?);
        }
        Ok(AblationTable { rows })
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        let mut out = format!(
            "{:<10} {:>10} {:>8} {:>10} {:>10} {:>10}\n",
            "method", "PSNR(dB)", "BPP", "train", "heldout", "params"
        );
        for r in &self.rows {
            out += &format!(
                "{:<10} {:>10.3} {:>8.4} {:>10} {:>10} {:>10}\n",
                r.variant.name(),
                r.psnr,
                r.bpp,
                opt(r.train_psnr),
                opt(r.heldout_psnr),
                r.parameters
            );
        }
        out
    }
}

/// Train and evaluate every ablation variant with otherwise identical
/// settings. Writes `ablation.csv` into `out_dir`.
pub fn ablate(
    base: &TrainConfig,
    manifest: &Manifest,
    out_dir: &Path,
    coder: CoderBackend,
    eval_split: SplitFilter,
) -> Result<AblationTable> {
    let train = load_pairs(manifest, SplitFilter::Train)?;
    let mut rows = Vec::new();
    for variant in Ablation::ALL {
        let mut cfg = base.clone();
        cfg.model.ablation = variant;
        let dir = out_dir.join(variant.name());
        let model = train_or_load(&cfg, &train, &dir)?;
        let report = evaluate_corpus(manifest, &model, &dir.display().to_string(), coder.clone(), eval_split)?;
        let (train_psnr, heldout_psnr) = split_psnr(&report);
        rows.push(AblationRow {
            variant,
            psnr: report.mean_psnr,
            bpp: report.bpp,
            train_psnr,
            heldout_psnr,
            encode_secs: report.encode_secs,
            decode_secs: report.decode_secs,
            parameters: model.store().parameter_count(),
        });
    }
    let table = AblationTable { rows };
    std::fs::create_dir_all(out_dir).map_err(|e| FcnrError::io(out_dir, e))?;
    table.write_csv(&out_dir.join("ablation.csv"))?;
    Ok(table)
}
