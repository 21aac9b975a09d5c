//! Rank groups, the verification gate and final ordering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agent::Trajectory;
use crate::extract::GroundingStatus;
use crate::features::{FeatureRecord, FeatureVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankItem {
    pub page_id: String,
    pub features: FeatureVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    pub original_rank: u32,
    pub verified: bool,
    pub has_instructions: bool,
    pub grounding_status: GroundingStatus,
    pub applied_actions: usize,
}

impl RankItem {
    pub fn from_record(r: &FeatureRecord) -> Self {
        Self {
            page_id: r.page_id.clone(),
            features: r.features,
            label: r.label,
            original_rank: r.original_rank,
            verified: false,
            has_instructions: r.has_instructions,
            grounding_status: r.grounding_status,
            applied_actions: r.applied_actions,
        }
    }

    pub fn relevance(&self) -> f64 {
        f64::from(self.label.unwrap_or(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankGroup {
    pub query_id: String,
    /// Kept sorted by original rank.
    pub items: Vec<RankItem>,
}

impl RankGroup {
    pub fn new(query_id: impl Into<String>, mut items: Vec<RankItem>) -> Self {
        items.sort_by_key(|i| i.original_rank);
        Self { query_id: query_id.into(), items }
    }

    pub fn is_labeled(&self) -> bool {
        self.items.iter().all(|i| i.label.is_some())
    }

    pub fn verified_indices(&self) -> Vec<usize> {
        (0..self.items.len()).filter(|&i| self.items[i].verified).collect()
    }
}

/// Groups feature records by query, ordered by query id.
pub fn groups_from_records(records: &[FeatureRecord]) -> Vec<RankGroup> {
    let mut by_query: BTreeMap<&str, Vec<RankItem>> = BTreeMap::new();
    for r in records {
        by_query.entry(&r.query_id).or_default().push(RankItem::from_record(r));
    }
    by_query.into_iter().map(|(q, items)| apply_gate(RankGroup::new(q, items))).collect()
}

fn passes(item: &RankItem) -> bool {
    item.grounding_status != GroundingStatus::None && item.applied_actions >= 1 && item.features.completion() > 0.0
}

/// Sets `verified` from the stored action counts and completion scores.
pub fn apply_gate(mut group: RankGroup) -> RankGroup {
    for item in &mut group.items {
        item.verified = passes(item);
    }
    group
}

/// Refreshes applied-action counts from trajectories, then gates. Pages
/// without a trajectory count as having no applied action.
pub fn gate_verified(mut group: RankGroup, trajectories: &BTreeMap<String, Trajectory>) -> RankGroup {
    for item in &mut group.items {
        item.applied_actions = trajectories.get(&item.page_id).map_or(0, Trajectory::applied_actions);
    }
    apply_gate(group)
}

/// Verified items by descending score (ties: lower original rank first),
/// then unverified items in original order. `scores` is indexed like
/// `group.items`; entries for unverified items are ignored.
pub fn order_by_scores(group: &RankGroup, scores: &[f64]) -> Vec<usize> {
    let mut verified = group.verified_indices();
    verified.sort_by(|&a, &b| {
        scores[b].total_cmp(&scores[a]).then(group.items[a].original_rank.cmp(&group.items[b].original_rank))
    });
    verified.extend((0..group.items.len()).filter(|&i| !group.items[i].verified));
    verified
}
