//! Inclusion statistics: speaking-time inequality, fair-share deviation,
//! paired one-tailed signed-rank tests and FDR adjustment.
//!
//! Everything here is a pure function over its inputs.

mod comparison;
mod fdr;
mod gini;
mod wilcoxon;

pub use comparison::{
    build_report, condition_comparison, export_csv, ComparisonReport, DeviationRow, GiniPair,
    MetricsInput, MetricsReport, NamedSample, NamedTest, SpeakingDistribution,
};
pub use fdr::bh_fdr_adjust;
pub use gini::{fair_share_deviation, gini};
pub use wilcoxon::{
    rank_biserial, wilcoxon_one_tailed, Alternative, Method, PairedSample, TestResult, EXACT_MAX_N,
};
