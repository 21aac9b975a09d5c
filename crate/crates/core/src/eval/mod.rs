//! Evaluation: metrics, baseline orderings, significance and reports.

mod appgen;
mod baselines;
pub mod metrics;
mod report;
pub mod significance;
mod synth;

use thiserror::Error;

pub use appgen::{app_name, domains, generate_app};
pub use baselines::{baseline_order, baseline_ordering, f4_order, oracle_order, rule_order, Method};
pub use metrics::{mrr, ndcg_at_k, precision_at_k, reciprocal_rank};
pub use report::{
    emit_report, evaluate, format_table, MethodOrderings, MethodRow, MetricsReport, QueryMetrics, QueryRow,
    SignificanceRow, METRIC_NAMES,
};
pub use significance::{sign_flip_exact, sign_flip_test, DEFAULT_RESAMPLES};
pub use synth::{
    generate_synthetic_dataset, page_html, perturb_trajectory, query_text, split_queries, summarize_demo,
    write_dataset, PageKind, Splits, SynthConfig, SynthDataset, SynthPage,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    Empty,
    #[error("paired inputs differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("query {0} has unlabelled pages")]
    Unlabeled(String),
    #[error("ordering for query {0} is not a permutation of its pages")]
    BadOrdering(String),
    #[error("{0}")]
    Io(String),
    #[error("synthetic data: {0}")]
    Synth(String),
}
