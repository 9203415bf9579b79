//! Metrics, corpus evaluation, sweeps and charts.

mod chart;
mod metrics;
mod report;
mod sweep;

pub use chart::{line_chart, Series};
pub use metrics::{bpp, mse, psnr, psnr_from_mse, PSNR_CAP_DB};
pub use report::{evaluate_corpus, EvalReport, ImageResult, PairResult, RecordError, SplitSummary};
pub use sweep::{ablate, load_pairs, rd_sweep, train_or_load, AblationRow, AblationTable, RdPoint, RdTable};
