//! Binding generated steps to verbatim page snippets.

use serde::{Deserialize, Serialize};

use super::generator::{strip_enumeration, ExtractionResult};
use super::html::Snippet;
use super::similarity::{cosine_distance, rouge_l, Embedder};

/// Acceptance thresholds for a step/snippet match.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingConfig {
    /// A match needs ROUGE-L strictly above this...
    pub rouge_min: f64,
    /// ...or cosine distance strictly below this.
    pub embed_dist_max: f64,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self { rouge_min: 0.7, embed_dist_max: 0.25 }
    }
}

impl GroundingConfig {
    pub fn accepts(&self, scores: &MatchScores) -> bool {
        scores.rouge > self.rouge_min || scores.embedding_distance < self.embed_dist_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchScores {
    pub rouge: f64,
    pub embedding_distance: f64,
}

impl MatchScores {
    /// Single similarity used to rank acceptable candidates.
    fn quality(&self) -> f64 {
        self.rouge.max(1.0 - self.embedding_distance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedStep {
    pub instruction_text: String,
    pub snippet_index: usize,
    pub xpath: String,
    pub match_scores: MatchScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingStatus {
    Full,
    Partial,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedInstructions {
    pub steps: Vec<GroundedStep>,
    pub grounding_status: GroundingStatus,
}

impl GroundedInstructions {
    pub fn texts(&self) -> Vec<String> {
        self.steps.iter().map(|s| s.instruction_text.clone()).collect()
    }

    /// Instructions supplied directly, bypassing page grounding. Used for
    /// synthetic data where steps come from a summarizer, not a web page.
    pub fn ungrounded(steps: &[String]) -> Self {
        let steps: Vec<GroundedStep> = steps
            .iter()
            .enumerate()
            .map(|(i, s)| GroundedStep {
                instruction_text: s.clone(),
                snippet_index: i,
                xpath: format!("/html/body/ol/li[{}]", i + 1),
                match_scores: MatchScores { rouge: 1.0, embedding_distance: 0.0 },
            })
            .collect();
        let grounding_status = if steps.is_empty() { GroundingStatus::None } else { GroundingStatus::Full };
        Self { steps, grounding_status }
    }
}

fn strip_positions(segment: &str) -> &str {
    segment.split_once('[').map_or(segment, |(tag, _)| tag)
}

/// Two XPaths are similar when they are equal after dropping the positional
/// indices of their last two segments, i.e. they address siblings or cousins
/// inside the same list-like structure.
pub fn xpaths_similar(a: &str, b: &str) -> bool {
    let sa: Vec<&str> = a.split('/').collect();
    let sb: Vec<&str> = b.split('/').collect();
    if sa.len() != sb.len() {
        return false;
    }
    let n = sa.len();
    sa.iter().zip(&sb).enumerate().all(
        |(i, (x, y))| {
            if i + 2 >= n {
                strip_positions(x) == strip_positions(y)
            } else {
                x == y
            }
        },
    )
}

/// Greedy sequential grounding.
///
/// The first step that can be grounded is matched against every snippet; each
/// later step only against snippets after the previous match whose XPath is
/// similar to it. Among acceptable candidates the highest quality wins, the
/// earliest snippet on ties. Steps without an acceptable candidate are dropped.
pub fn ground_instructions(
    result: &ExtractionResult,
    snippets: &[Snippet],
    embedder: &dyn Embedder,
    config: &GroundingConfig,
) -> GroundedInstructions {
    let reference_text: Vec<String> = snippets.iter().map(|s| strip_enumeration(&s.text)).collect();
    let snippet_vecs: Vec<Vec<f64>> = reference_text.iter().map(|t| embedder.embed(t)).collect();
    let mut steps: Vec<GroundedStep> = Vec::new();
    for text in &result.steps {
        let step_vec = embedder.embed(text);
        let mut best: Option<(usize, MatchScores)> = None;
        for (i, snippet) in snippets.iter().enumerate() {
            if let Some(prev) = steps.last() {
                if i <= prev.snippet_index || !xpaths_similar(&prev.xpath, &snippet.xpath) {
                    continue;
                }
            }
            let scores = MatchScores {
                rouge: rouge_l(text, &reference_text[i]),
                embedding_distance: cosine_distance(&step_vec, &snippet_vecs[i]),
            };
            if !config.accepts(&scores) {
                continue;
            }
            if best.is_none_or(|(_, b)| scores.quality() > b.quality()) {
                best = Some((i, scores));
            }
        }
        if let Some((i, scores)) = best {
            steps.push(GroundedStep {
                instruction_text: text.clone(),
                snippet_index: snippets[i].index,
                xpath: snippets[i].xpath.clone(),
                match_scores: scores,
            });
        }
    }
    let grounding_status = if steps.is_empty() {
        GroundingStatus::None
    } else if steps.len() == result.steps.len() {
        GroundingStatus::Full
    } else {
        GroundingStatus::Partial
    };
    GroundedInstructions { steps, grounding_status }
}
