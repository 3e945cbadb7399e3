//! Per-site accuracy and spatial-dependence statistics for comparing
//! downscaled ensembles.

mod report;
mod scores;
mod spatial;

pub use report::{compare_models, metric_names, EvalConfig, MetricReport, MetricRow, MODELS};
pub use scores::{empirical_quantile, per_site_scores, PerSiteScores, QUANTILES};
pub use spatial::{morans_i, neighbor_correlation, variogram};
