//! Per-method metric tables, per-query breakdowns and their files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{ndcg_at_k, precision_at_k, reciprocal_rank};
use super::significance::sign_flip_test;
use super::EvalError;
use crate::rerank::RankGroup;

pub const METRIC_NAMES: [&str; 4] = ["MRR", "P@1", "P@5", "NDCG@5"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub reciprocal_rank: f64,
    pub p_at_1: f64,
    pub p_at_5: f64,
    pub ndcg_at_5: f64,
}

impl QueryMetrics {
    pub fn of(ranked: &[u8]) -> Self {
        Self {
            reciprocal_rank: reciprocal_rank(ranked),
            p_at_1: precision_at_k(ranked, 1),
            p_at_5: precision_at_k(ranked, 5),
            ndcg_at_5: ndcg_at_k(ranked, 5),
        }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.reciprocal_rank, self.p_at_1, self.p_at_5, self.ndcg_at_5]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    /// Means over queries, in `METRIC_NAMES` order.
    pub values: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub method: String,
    pub query_id: String,
    #[serde(flatten)]
    pub metrics: QueryMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub method: String,
    pub reference: String,
    pub metric: String,
    pub p_value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MethodRow>,
    pub per_query: Vec<QueryRow>,
    pub significance: Vec<SignificanceRow>,
}

impl MetricsReport {
    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn p_value(&self, method: &str, metric: &str) -> Option<f64> {
        self.significance.iter().find(|s| s.method == method && s.metric == metric).map(|s| s.p_value)
    }

    pub fn query_values(&self, method: &str) -> Vec<QueryMetrics> {
        self.per_query.iter().filter(|r| r.method == method).map(|r| r.metrics).collect()
    }
}

/// Orderings of every group under one method, aligned with the group list.
#[derive(Debug, Clone)]
pub struct MethodOrderings {
    pub method: String,
    pub orderings: Vec<Vec<usize>>,
}

fn ranked_labels(group: &RankGroup, order: &[usize]) -> Result<Vec<u8>, EvalError> {
    let mut seen = vec![false; group.items.len()];
    if order.len() != seen.len() || order.iter().any(|&i| i >= seen.len() || std::mem::replace(&mut seen[i], true)) {
        return Err(EvalError::BadOrdering(group.query_id.clone()));
    }
    order.iter().map(|&i| group.items[i].label.ok_or_else(|| EvalError::Unlabeled(group.query_id.clone()))).collect()
}

/// Scores each method on every group and tests every non-reference method
/// against `reference` on all four metrics.
pub fn evaluate(
    groups: &[RankGroup],
    methods: &[MethodOrderings],
    reference: Option<&str>,
    resamples: usize,
    seed: u64,
) -> Result<MetricsReport, EvalError> {
    if groups.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut report = MetricsReport::default();
    for m in methods {
        if m.orderings.len() != groups.len() {
            return Err(EvalError::LengthMismatch { left: groups.len(), right: m.orderings.len() });
        }
        let mut sums = [0.0; 4];
        for (g, order) in groups.iter().zip(&m.orderings) {
            let metrics = QueryMetrics::of(&ranked_labels(g, order)?);
            sums.iter_mut().zip(metrics.values()).for_each(|(s, v)| *s += v);
            report.per_query.push(QueryRow { method: m.method.clone(), query_id: g.query_id.clone(), metrics });
        }
        report.rows.push(MethodRow { method: m.method.clone(), values: sums.map(|s| s / groups.len() as f64) });
    }
    if let Some(reference) = reference.filter(|r| report.row(r).is_some()) {
        let base = report.query_values(reference);
        for m in methods.iter().filter(|m| m.method != reference) {
            let mine = report.query_values(&m.method);
            for (k, metric) in METRIC_NAMES.iter().enumerate() {
                let a: Vec<f64> = mine.iter().map(|q| q.values()[k]).collect();
                let b: Vec<f64> = base.iter().map(|q| q.values()[k]).collect();
                report.significance.push(SignificanceRow {
                    method: m.method.clone(),
                    reference: reference.to_string(),
                    metric: metric.to_string(),
                    p_value: sign_flip_test(&a, &b, resamples, seed)?,
                });
            }
        }
    }
    Ok(report)
}

pub fn format_table(report: &MetricsReport) -> String {
    let mut out = format!("method\t{}\n", METRIC_NAMES.join("\t"));
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            r.method, r.values[0], r.values[1], r.values[2], r.values[3]
        );
    }
    out
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "metrics".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Writes the method table to `path`, the per-query breakdown next to it as
/// `<stem>.per_query.jsonl` and p-values as `<stem>.significance.tsv`.
pub fn emit_report(report: &MetricsReport, path: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let io = |p: &Path, e: std::io::Error| EvalError::Io(format!("{}: {e}", p.display()));
    let mut lines = String::new();
    for row in &report.per_query {
        lines.push_str(&serde_json::to_string(row).expect("row serializes"));
        lines.push('\n');
    }
    let mut sig = String::from("method\treference\tmetric\tp_value\n");
    for s in &report.significance {
        let _ = writeln!(sig, "{}\t{}\t{}\t{:.4}", s.method, s.reference, s.metric, s.p_value);
    }
    let files = [
        (path.to_path_buf(), format_table(report)),
        (sibling(path, ".per_query.jsonl"), lines),
        (sibling(path, ".significance.tsv"), sig),
    ];
    for (p, text) in &files {
        std::fs::write(p, text).map_err(|e| io(p, e))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
