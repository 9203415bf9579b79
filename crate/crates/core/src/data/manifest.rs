//! Corpus manifest, view pairing and the training subset.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::ImagePair;
use crate::data::icosphere::ViewPoint;
use crate::data::raster::Raster;
use crate::error::{FcnrError, Result};
use crate::networks::VisParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "l")]
    Left,
    #[serde(rename = "r")]
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Heldout,
}

/// Which records an operation should see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitFilter {
    Train,
    Heldout,
    #[default]
    All,
}

impl SplitFilter {
    pub fn admits(self, split: Split) -> bool {
        match self {
            SplitFilter::All => true,
            SplitFilter::Train => split == Split::Train,
            SplitFilter::Heldout => split == Split::Heldout,
        }
    }
}

impl std::str::FromStr for SplitFilter {
    type Err = FcnrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitFilter::Train),
            "heldout" => Ok(SplitFilter::Heldout),
            "all" => Ok(SplitFilter::All),
            other => Err(FcnrError::InvalidArgument(format!(
                "unknown split {other:?} (expected train, heldout or all)"
            ))),
        }
    }
}

/// One manifest row. Angles are in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub path: String,
    pub t: usize,
    pub theta: f64,
    pub phi: f64,
    pub split: Split,
    pub pair_id: u64,
    pub side: Side,
}

/// Angles closer than this are treated as equal when sorting views.
const THETA_TIE: f64 = 1e-9;

fn theta_key(theta: f64) -> i64 {
    (theta / THETA_TIE).round() as i64
}

/// Result of pairing the views of one timestep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewPairing {
    /// `(left, right)` indices into the input slice.
    pub pairs: Vec<(usize, usize)>,
    pub dropped: Option<usize>,
}

/// Sort views by polar angle, then azimuth, and pair consecutive entries
/// `(0, 1), (2, 3), ...`. An odd trailing view is dropped.
pub fn sort_and_pair(views: &[ViewPoint]) -> Result<ViewPairing> {
    if views.len() < 2 {
        return Err(FcnrError::InvalidArgument(format!(
            "pairing needs at least two views, got {}",
            views.len()
        )));
    }
    let mut order: Vec<usize> = (0..views.len()).collect();
    order.sort_by(|&a, &b| {
        let (va, vb) = (&views[a], &views[b]);
        theta_key(va.theta)
            .cmp(&theta_key(vb.theta))
            .then(va.phi_view.total_cmp(&vb.phi_view))
    });
    let pairs = order.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    let dropped = (order.len() % 2 == 1).then(|| order[order.len() - 1]);
    if let Some(d) = dropped {
        log::info!(
            "odd view count {}: dropping view theta={:.6} phi={:.6}",
            views.len(),
            views[d].theta,
            views[d].phi_view
        );
    }
    Ok(ViewPairing { pairs, dropped })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<Record>,
    /// Number of timesteps of the corpus, used to normalize `t`.
    pub timesteps: usize,
    /// Directory that relative image paths are resolved against.
    pub root: PathBuf,
}

/// Both records of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecords {
    pub pair_id: u64,
    pub left: Record,
    pub right: Record,
}

impl PairRecords {
    pub fn split(&self) -> Split {
        self.left.split
    }
}

pub const MANIFEST_FILE: &str = "manifest.csv";

impl Manifest {
    /// Pair the views identically at every timestep. Image paths come from
    /// `path_for(t, view_index)`. Pair ids enumerate `(t, pair)` in order.
    pub fn build(
        views: &[ViewPoint],
        timesteps: usize,
        root: PathBuf,
        path_for: impl Fn(usize, usize) -> String,
    ) -> Result<Manifest> {
        if timesteps == 0 {
            return Err(FcnrError::InvalidArgument("corpus needs at least one timestep".into()));
        }
        let pairing = sort_and_pair(views)?;
        let mut records = Vec::with_capacity(2 * pairing.pairs.len() * timesteps);
        let mut pair_id = 0u64;
        for t in 0..timesteps {
            for &(l, r) in &pairing.pairs {
                for (side, v) in [(Side::Left, l), (Side::Right, r)] {
                    records.push(Record {
                        path: path_for(t, v),
                        t,
                        theta: views[v].theta,
                        phi: views[v].phi_view,
                        split: Split::Heldout,
                        pair_id,
                        side,
                    });
                }
                pair_id += 1;
            }
        }
        Ok(Manifest {
            records,
            timesteps,
            root,
        })
    }

    /// Pairs in id order. Fails if a pair is missing a side or has two of one.
    pub fn pairs(&self) -> Result<Vec<PairRecords>> {
        let mut by_id: BTreeMap<u64, (Option<&Record>, Option<&Record>)> = BTreeMap::new();
        for r in &self.records {
            let slot = by_id.entry(r.pair_id).or_default();
            let side = match r.side {
                Side::Left => &mut slot.0,
                Side::Right => &mut slot.1,
            };
            if side.replace(r).is_some() {
                return Err(FcnrError::InvalidArgument(format!(
                    "pair {} has two {:?} records",
                    r.pair_id, r.side
                )));
            }
        }
        by_id
            .into_iter()
            .map(|(id, (l, r))| match (l, r) {
                (Some(l), Some(r)) if l.split == r.split => Ok(PairRecords {
                    pair_id: id,
                    left: l.clone(),
                    right: r.clone(),
                }),
                (Some(_), Some(_)) => Err(FcnrError::InvalidArgument(format!("pair {id} straddles splits"))),
                _ => Err(FcnrError::InvalidArgument(format!("pair {id} is missing a side"))),
            })
            .collect()
    }

    pub fn pairs_in(&self, filter: SplitFilter) -> Result<Vec<PairRecords>> {
        Ok(self.pairs()?.into_iter().filter(|p| filter.admits(p.split())).collect())
    }

    pub fn vis_params(&self, r: &Record) -> Result<VisParams> {
        let t = if self.timesteps > 1 {
            r.t as f64 / (self.timesteps - 1) as f64
        } else {
            0.0
        };
        VisParams::new(t, r.theta / PI, r.phi / (2.0 * PI))
    }

    pub fn image_path(&self, r: &Record) -> PathBuf {
        self.root.join(&r.path)
    }

    pub fn load_pair(&self, p: &PairRecords) -> Result<ImagePair> {
        Ok(ImagePair {
            left: Raster::load_png(&self.image_path(&p.left))?,
            right: Raster::load_png(&self.image_path(&p.right))?,
            vis: [self.vis_params(&p.left)?, self.vis_params(&p.right)?],
            pair_id: p.pair_id,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => FcnrError::io(path, io),
            other => FcnrError::InvalidArgument(format!("{other:?}")),
        })?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| FcnrError::io(path, e))
    }

    /// Read a manifest; image paths resolve relative to its directory.
    pub fn read_csv(path: &Path) -> Result<Manifest> {
        let file = std::fs::File::open(path).map_err(|e| FcnrError::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let records = reader.deserialize().collect::<std::result::Result<Vec<Record>, _>>()?;
        let timesteps = records.iter().map(|r| r.t + 1).max().unwrap_or(0);
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Manifest {
            records,
            timesteps,
            root,
        })
    }
}

/// Mark an evenly strided subset of pairs and timesteps as training data.
///
/// Within each timestep pairs are ranked by id; every `1/view_fraction`-th
/// pair at every `1/time_fraction`-th timestep goes to the training split,
/// everything else is held out. Whole pairs move together.
pub fn select_training_subset(manifest: &Manifest, view_fraction: f64, time_fraction: f64) -> Result<Manifest> {
    let stride = |f: f64, name: &str| -> Result<usize> {
        let s = (1.0 / f).round();
        if !(f > 0.0 && f <= 1.0) || ((1.0 / f) - s).abs() > 1e-9 {
            return Err(FcnrError::InvalidArgument(format!(
                "{name} fraction {f} is not the reciprocal of a positive integer"
            )));
        }
        Ok(s as usize)
    };
    let view_stride = stride(view_fraction, "view")?;
    let time_stride = stride(time_fraction, "time")?;

    let pairs = manifest.pairs()?;
    let mut rank_in_t: BTreeMap<usize, usize> = BTreeMap::new();
    let mut train = std::collections::HashSet::new();
    for p in &pairs {
        if p.left.t != p.right.t {
            return Err(FcnrError::InvalidArgument(format!("pair {} spans two timesteps", p.pair_id)));
        }
        let rank = rank_in_t.entry(p.left.t).or_insert(0);
        if *rank % view_stride == 0 && p.left.t % time_stride == 0 {
            train.insert(p.pair_id);
        }
        *rank += 1;
    }
    if train.is_empty() {
        return Err(FcnrError::InvalidArgument("subset selection left no training pairs".into()));
    }
    let mut out = manifest.clone();
    for r in &mut out.records {
        r.split = if train.contains(&r.pair_id) { Split::Train } else { Split::Heldout };
    }
    Ok(out)
}
