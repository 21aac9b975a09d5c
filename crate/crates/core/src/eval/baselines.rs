//! Reference orderings that need no trained model.

use serde::{Deserialize, Serialize};

use crate::rerank::{ModelKind, RankGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Oracle,
    Baseline,
    F4Based,
    Rule,
    Model(ModelKind),
}

impl Method {
    pub const BASELINES: [Method; 4] = [Method::Oracle, Method::Baseline, Method::F4Based, Method::Rule];

    pub fn name(self) -> &'static str {
        match self {
            Method::Oracle => "Oracle",
            Method::Baseline => "Baseline",
            Method::F4Based => "F4-based",
            Method::Rule => "Rule",
            Method::Model(k) => k.display(),
        }
    }
}

/// Positives then negatives, each in original order. `None` when a label is
/// missing.
pub fn oracle_order(group: &RankGroup) -> Option<Vec<usize>> {
    if !group.is_labeled() {
        return None;
    }
    let n = group.items.len();
    let pos = (0..n).filter(|&i| group.items[i].label == Some(1));
    Some(pos.chain((0..n).filter(|&i| group.items[i].label != Some(1))).collect())
}

/// Pages with extracted instructions first, both blocks in original order.
pub fn baseline_order(group: &RankGroup) -> Vec<usize> {
    let n = group.items.len();
    let with = (0..n).filter(|&i| group.items[i].has_instructions);
    with.chain((0..n).filter(|&i| !group.items[i].has_instructions)).collect()
}

/// Instruction pages by descending completion score (ties by original rank),
/// then the rest in original order.
pub fn f4_order(group: &RankGroup) -> Vec<usize> {
    let n = group.items.len();
    let mut with: Vec<usize> = (0..n).filter(|&i| group.items[i].has_instructions).collect();
    with.sort_by(|&a, &b| {
        group.items[b].features.completion().total_cmp(&group.items[a].features.completion()).then(a.cmp(&b))
    });
    with.extend((0..n).filter(|&i| !group.items[i].has_instructions));
    with
}

/// Pages whose completion score is exactly 1 move to the top; nothing else
/// changes.
pub fn rule_order(group: &RankGroup) -> Vec<usize> {
    let n = group.items.len();
    let full = |i: &usize| group.items[*i].features.completion() == 1.0;
    let top = (0..n).filter(full);
    top.chain((0..n).filter(|i| !full(i))).collect()
}

/// Ordering for one of the model-free methods; `None` for Oracle without
/// labels and for model methods.
pub fn baseline_ordering(method: Method, group: &RankGroup) -> Option<Vec<usize>> {
    match method {
        Method::Oracle => oracle_order(group),
        Method::Baseline => Some(baseline_order(group)),
        Method::F4Based => Some(f4_order(group)),
        Method::Rule => Some(rule_order(group)),
        Method::Model(_) => None,
    }
}
