//! Corpus-level evaluation.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Codec, CoderBackend, FcnrBitstream};
use crate::data::{Manifest, PairRecords, Side, Split, SplitFilter};
use crate::error::{FcnrError, Result};
use crate::eval::metrics::{psnr, PSNR_CAP_DB};
use crate::networks::FcnrModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub pair_id: u64,
    pub side: Side,
    pub path: String,
    pub split: Split,
    pub psnr: f64,
    /// Reconstruction equals the input; `psnr` holds the cap.
    pub identical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub pair_id: u64,
    pub split: Split,
    pub payload_bits: u64,
    pub pixels: u64,
    pub encode_secs: f64,
    pub decode_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub pairs: usize,
    pub mean_psnr: f64,
    pub bpp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordError {
    pub pair_id: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Where the weights came from, or `untrained`.
    pub weights: String,
    pub fingerprint: u64,
    pub split: String,
    pub images: Vec<ImageResult>,
    pub pairs: Vec<PairResult>,
    pub mean_psnr: f64,
    pub bpp: f64,
    pub encode_secs: f64,
    pub decode_secs: f64,
    pub train: Option<SplitSummary>,
    pub heldout: Option<SplitSummary>,
    pub errors: Vec<RecordError>,
}

struct PairOutcome {
    pair: PairResult,
    images: [ImageResult; 2],
}

fn evaluate_pair(codec: &Codec<'_>, manifest: &Manifest, rec: &PairRecords) -> Result<PairOutcome> {
    let pair = manifest.load_pair(rec)?;
    let start = Instant::now();
    let encoded = codec.compress(&pair)?;
    let bytes = encoded.bitstream.to_bytes();
    let encode_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let bitstream = FcnrBitstream::parse(&bytes)?;
    let decoded = codec.decompress(&bitstream)?;
    let decode_secs = start.elapsed().as_secs_f64();
    if decoded != encoded.reconstruction {
        return Err(FcnrError::Corrupt("decoded images differ from the encoder's reconstruction".into()));
    }

    let image = |r: &crate::data::Record, x, y| -> Result<ImageResult> {
        let p = psnr(x, y)?;
        Ok(ImageResult {
            pair_id: rec.pair_id,
            side: r.side,
            path: r.path.clone(),
            split: r.split,
            psnr: p,
            identical: p >= PSNR_CAP_DB,
        })
    };
    Ok(PairOutcome {
        pair: PairResult {
            pair_id: rec.pair_id,
            split: rec.split(),
            payload_bits: bitstream.payload_bits(),
            pixels: 2 * pair.left.pixel_count() as u64,
            encode_secs,
            decode_secs,
        },
        images: [
            image(&rec.left, &pair.left, &decoded[0])?,
            image(&rec.right, &pair.right, &decoded[1])?,
        ],
    })
}

fn summarize(pairs: &[&PairResult], images: &[&ImageResult]) -> Option<SplitSummary> {
    if pairs.is_empty() {
        return None;
    }
    let bits: u64 = pairs.iter().map(|p| p.payload_bits).sum();
    let pixels: u64 = pairs.iter().map(|p| p.pixels).sum();
    Some(SplitSummary {
        pairs: pairs.len(),
        mean_psnr: images.iter().map(|i| i.psnr).sum::<f64>() / images.len() as f64,
        bpp: bits as f64 / pixels as f64,
    })
}

/// Compress and decompress every pair admitted by `filter`. Pairs that fail
/// are listed in `errors` and left out of the aggregates.
pub fn evaluate_corpus(
    manifest: &Manifest,
    model: &FcnrModel,
    weights: &str,
    coder: CoderBackend,
    filter: SplitFilter,
) -> Result<EvalReport> {
    let codec = Codec::new(model, coder)?;
    let records = manifest.pairs_in(filter)?;
    let outcomes: Vec<(u64, Result<PairOutcome>)> = records
        .par_iter()
        .map(|rec| (rec.pair_id, evaluate_pair(&codec, manifest, rec)))
        .collect();

    let mut images = Vec::new();
    let mut pairs = Vec::new();
    let mut errors = Vec::new();
    for (pair_id, outcome) in outcomes {
        match outcome {
            Ok(o) => {
                pairs.push(o.pair);
                images.extend(o.images);
            }
            Err(e) => {
                log::warn!("pair {pair_id}: {e}");
                errors.push(RecordError {
                    pair_id,
                    message: e.to_string(),
                });
            }
        }
    }

    let all_pairs: Vec<&PairResult> = pairs.iter().collect();
    let all_images: Vec<&ImageResult> = images.iter().collect();
    let overall = summarize(&all_pairs, &all_images);
    let of_split = |s: Split| {
        let p: Vec<&PairResult> = pairs.iter().filter(|p| p.split == s).collect();
        let i: Vec<&ImageResult> = images.iter().filter(|i| i.split == s).collect();
        summarize(&p, &i)
    };
    Ok(EvalReport {
        weights: weights.to_string(),
        fingerprint: codec.fingerprint(),
        split: format!("{filter:?}").to_lowercase(),
        mean_psnr: overall.as_ref().map_or(f64::NAN, |s| s.mean_psnr),
        bpp: overall.as_ref().map_or(f64::NAN, |s| s.bpp),
        encode_secs: pairs.iter().map(|p| p.encode_secs).sum(),
        decode_secs: pairs.iter().map(|p| p.decode_secs).sum(),
        train: of_split(Split::Train),
        heldout: of_split(Split::Heldout),
        images,
        pairs,
        errors,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "weights      {}\nfingerprint  {:016x}\nsplit        {}\npairs        {} ({} failed)\n",
            self.weights,
            self.fingerprint,
            self.split,
            self.pairs.len(),
            self.errors.len()
        );
        out += &format!("{:<10} {:>6} {:>10} {:>8}\n", "subset", "pairs", "PSNR(dB)", "BPP");
        let mut row = |name: &str, s: &Option<SplitSummary>| {
            if let Some(s) = s {
                out += &format!("{:<10} {:>6} {:>10.3} {:>8.4}\n", name, s.pairs, s.mean_psnr, s.bpp);
            }
        };
        row("train", &self.train);
        row("heldout", &self.heldout);
        row(
            "all",
            &Some(SplitSummary {
                pairs: self.pairs.len(),
                mean_psnr: self.mean_psnr,
                bpp: self.bpp,
            }),
        );
        out += &format!(
            "encode time  {:.3} s\ndecode time  {:.3} s\n",
            self.encode_secs, self.decode_secs
        );
        for e in &self.errors {
            out += &format!("error        pair {}: {}\n", e.pair_id, e.message);
        }
        out
    }

    /// Per-image results as CSV.
    pub fn write_images_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for i in &self.images {
            w.serialize(i)?;
        }
        w.flush().map_err(|e| FcnrError::io(path, e))
    }
}
