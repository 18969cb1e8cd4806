//! Evaluation protocol: a contrastive feature extractor, R-Precision, FID,
//! MM-Dist and MultiModality, repeated with confidence intervals.

pub mod evaluate;
pub mod extractor;
pub mod metrics;

pub use evaluate::{evaluate, report_fingerprint, sweep_w, write_sweep_csv, EvalReport, EvalSettings, MetricSummary, METRICS};
pub use extractor::{matched_pair_accuracy, train_eval_extractor, EvalExtractor, ExtractorConfig};
pub use metrics::{fid, mean_ci, mm_dist, mm_pairs, multimodality, r_precision};
