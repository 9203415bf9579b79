//! Synthetic corpus generation.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::icosphere::icosphere_views;
use crate::data::manifest::{select_training_subset, Manifest, MANIFEST_FILE};
use crate::data::render::{render, Field, FieldConfig, RenderMode};
use crate::error::{FcnrError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub subdivision: u32,
    pub timesteps: usize,
    pub height: usize,
    pub width: usize,
    pub mode: RenderMode,
    pub seed: u64,
    pub view_fraction: f64,
    pub time_fraction: f64,
    pub field: FieldConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            subdivision: 1,
            timesteps: 6,
            height: 128,
            width: 128,
            mode: RenderMode::Ir,
            seed: 7,
            view_fraction: 0.5,
            time_fraction: 1.0 / 3.0,
            field: FieldConfig::default(),
        }
    }
}

impl CorpusConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| FcnrError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FcnrError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("corpus config serializes")
    }
}

pub const CONFIG_FILE: &str = "corpus.toml";

fn image_name(t: usize, view: usize) -> String {
    format!("images/t{t:03}_v{view:04}.png")
}

/// Render every (timestep, view) image into `out_dir` and write the
/// manifest with its train/heldout split. Returns the manifest.
pub fn generate_corpus(cfg: &CorpusConfig, out_dir: &Path) -> Result<Manifest> {
    if cfg.height == 0 || cfg.width == 0 {
        return Err(FcnrError::Config("image size must be positive".into()));
    }
    let views = icosphere_views(cfg.subdivision)?;
    let field = Field::from_config(&cfg.field, cfg.seed);
    let manifest = Manifest::build(&views, cfg.timesteps, out_dir.to_path_buf(), image_name)?;
    let manifest = select_training_subset(&manifest, cfg.view_fraction, cfg.time_fraction)?;
    std::fs::create_dir_all(out_dir.join("images")).map_err(|e| FcnrError::io(out_dir, e))?;

    let jobs: Vec<(usize, usize)> = (0..cfg.timesteps)
        .flat_map(|t| (0..views.len()).map(move |v| (t, v)))
        .collect();
    jobs.par_iter().try_for_each(|&(t, v)| -> Result<()> {
        let img = render(&field, t as f64, &views[v], cfg.mode, cfg.height, cfg.width);
        img.save_png(&out_dir.join(image_name(t, v)))
    })?;

    manifest.write_csv(&out_dir.join(MANIFEST_FILE))?;
    let cfg_path = out_dir.join(CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| FcnrError::io(cfg_path, e))?;
    log::info!(
        "rendered {} images ({} pairs) into {}",
        jobs.len(),
        manifest.records.len() / 2,
        out_dir.display()
    );
    Ok(manifest)
}

/// Manifest path inside a corpus directory.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}
