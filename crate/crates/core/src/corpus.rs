//! Queries, result pages and their line-delimited persistence.
//!
//! A corpus file holds one JSON record per line. Records carry a `kind`
//! discriminator: `query`, `page`, or `meta` (provenance key/value pairs).

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write corpus {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate {what} id `{id}`")]
    Duplicate { what: &'static str, id: String },
    #[error("page `{page_id}` references unknown query `{query_id}`")]
    DanglingQuery { page_id: String, query_id: String },
    #[error("query `{query_id}` has duplicate original rank {rank}")]
    DuplicateRank { query_id: String, rank: u32 },
    #[error("invalid record `{id}`: {message}")]
    Invalid { id: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
    pub app_domain: String,
    pub app_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageRecord {
    pub page_id: String,
    pub query_id: String,
    pub url: String,
    pub original_rank: u32,
    pub title: String,
    pub raw_html: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusBundle {
    pub queries: Vec<QueryRecord>,
    pub pages: Vec<PageRecord>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Query(QueryRecord),
    Page(PageRecord),
    Meta { key: String, value: String },
}

impl CorpusBundle {
    pub fn query(&self, query_id: &str) -> Option<&QueryRecord> {
        self.queries.iter().find(|q| q.query_id == query_id)
    }

    /// Pages of one query sorted by original rank.
    pub fn pages_for(&self, query_id: &str) -> Vec<&PageRecord> {
        let mut pages: Vec<_> = self.pages.iter().filter(|p| p.query_id == query_id).collect();
        pages.sort_by_key(|p| p.original_rank);
        pages
    }

    /// Checks every structural invariant; the first violation is returned.
    pub fn check(&self) -> Result<(), CorpusError> {
        let mut query_ids = BTreeSet::new();
        for q in &self.queries {
            if !query_ids.insert(q.query_id.as_str()) {
                return Err(CorpusError::Duplicate { what: "query", id: q.query_id.clone() });
            }
            if q.text.trim().is_empty() {
                return Err(CorpusError::Invalid { id: q.query_id.clone(), message: "query text is empty".into() });
            }
        }
        let mut page_ids = BTreeSet::new();
        let mut ranks: BTreeMap<&str, BTreeSet<u32>> = BTreeMap::new();
        for p in &self.pages {
            if !page_ids.insert(p.page_id.as_str()) {
                return Err(CorpusError::Duplicate { what: "page", id: p.page_id.clone() });
            }
            if !query_ids.contains(p.query_id.as_str()) {
                return Err(CorpusError::DanglingQuery { page_id: p.page_id.clone(), query_id: p.query_id.clone() });
            }
            if p.original_rank == 0 {
                return Err(CorpusError::Invalid {
                    id: p.page_id.clone(),
                    message: "original_rank must be >= 1".into(),
                });
            }
            if let Some(label) = p.label {
                if label > 1 {
                    return Err(CorpusError::Invalid {
                        id: p.page_id.clone(),
                        message: format!("label {label} is not 0 or 1"),
                    });
                }
            }
            if !ranks.entry(&p.query_id).or_default().insert(p.original_rank) {
                return Err(CorpusError::DuplicateRank { query_id: p.query_id.clone(), rank: p.original_rank });
            }
        }
        for q in &self.queries {
            if !ranks.contains_key(q.query_id.as_str()) {
                return Err(CorpusError::Invalid { id: q.query_id.clone(), message: "query has no pages".into() });
            }
        }
        Ok(())
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<CorpusBundle, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Read { path: path.into(), source })?;
    let mut bundle = CorpusBundle::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Read { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed { line: i + 1, message: e.to_string() })?;
        match record {
            Record::Query(q) => bundle.queries.push(q),
            Record::Page(p) => bundle.pages.push(p),
            Record::Meta { key, value } => {
                bundle.metadata.insert(key, value);
            }
        }
    }
    bundle.check()?;
    Ok(bundle)
}

pub fn save_corpus(bundle: &CorpusBundle, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let err = |source| CorpusError::Write { path: path.into(), source };
    let mut out = BufWriter::new(File::create(path).map_err(err)?);
    let mut emit = |record: &Record| -> Result<(), CorpusError> {
        let line = serde_json::to_string(record).expect("corpus records serialize");
        writeln!(out, "{line}").map_err(err)
    };
    for (key, value) in &bundle.metadata {
        emit(&Record::Meta { key: key.clone(), value: value.clone() })?;
    }
    for q in &bundle.queries {
        emit(&Record::Query(q.clone()))?;
    }
    for p in &bundle.pages {
        emit(&Record::Page(p.clone()))?;
    }
    out.flush().map_err(err)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryStats {
    pub query_id: String,
    pub pages: usize,
    pub labeled: usize,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub query_count: usize,
    pub page_count: usize,
    pub per_query: Vec<QueryStats>,
    /// Fraction of pages carrying a label, in [0, 1].
    pub label_coverage: f64,
    pub warnings: Vec<String>,
}

/// Diagnostics over a bundle; never fails, even for bundles `check` rejects.
pub fn validate_corpus(bundle: &CorpusBundle) -> ValidationReport {
    let mut warnings = Vec::new();
    if bundle.queries.is_empty() {
        warnings.push("no queries".to_string());
    }
    let mut per_query = Vec::new();
    for q in &bundle.queries {
        let pages = bundle.pages_for(&q.query_id);
        if pages.is_empty() {
            warnings.push(format!("query {} has no pages", q.query_id));
        }
        let ranks: BTreeSet<u32> = pages.iter().map(|p| p.original_rank).collect();
        if ranks.len() < pages.len() {
            warnings.push(format!("query {} has duplicate original ranks", q.query_id));
        }
        if let Some(&max) = ranks.iter().next_back() {
            for missing in (1..=max).filter(|r| !ranks.contains(r)) {
                warnings.push(format!("query {} has a rank gap at {missing}", q.query_id));
            }
        }
        per_query.push(QueryStats {
            query_id: q.query_id.clone(),
            pages: pages.len(),
            labeled: pages.iter().filter(|p| p.label.is_some()).count(),
            positives: pages.iter().filter(|p| p.label == Some(1)).count(),
        });
    }
    let known: BTreeSet<&str> = bundle.queries.iter().map(|q| q.query_id.as_str()).collect();
    for p in bundle.pages.iter().filter(|p| !known.contains(p.query_id.as_str())) {
        warnings.push(format!("page {} references unknown query {}", p.page_id, p.query_id));
    }
    let labeled = bundle.pages.iter().filter(|p| p.label.is_some()).count();
    let label_coverage = if bundle.pages.is_empty() { 0.0 } else { labeled as f64 / bundle.pages.len() as f64 };
    ValidationReport {
        query_count: bundle.queries.len(),
        page_count: bundle.pages.len(),
        per_query,
        label_coverage,
        warnings,
    }
}
