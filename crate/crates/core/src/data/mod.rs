//! Synthetic corpus generation and the view pairing protocol.

pub mod corpus;
pub mod icosphere;
pub mod manifest;
pub mod raster;
pub mod render;

pub use corpus::{generate_corpus, CorpusConfig};
pub use icosphere::{icosphere_views, ViewPoint};
pub use manifest::{select_training_subset, sort_and_pair, Manifest, PairRecords, Record, Side, Split, SplitFilter};
pub use raster::Raster;
pub use render::{render, Field, FieldConfig, RenderMode};
