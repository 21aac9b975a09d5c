//! The eighteen reranking features.
//!
//! Every feature lies in `[0, 1]`. Empty inputs map to 0 throughout.

use std::collections::{BTreeMap, BTreeSet};

use serde::de::Error as _;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::agent::{CompletionJudge, JudgeError, Trajectory};
use crate::extract::GroundingStatus;
use crate::text::{overlap, token_set, TokenizedText};

pub const FEATURE_COUNT: usize = 18;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "query_term_ratio",
    "relevance",
    "keyword_ratio",
    "completion",
    "action_term_mean",
    "action_term_min",
    "action_term_max",
    "action_term_var",
    "visible_ui_mean",
    "visible_ui_min",
    "visible_ui_max",
    "visible_ui_var",
    "distilled_ui_mean",
    "distilled_ui_min",
    "distilled_ui_max",
    "distilled_ui_var",
    "last_match_position",
    "match_spread",
];

/// Index of the completion feature.
pub const COMPLETION: usize = 3;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("feature {name} is not a finite value in [0, 1]: {value}")]
    OutOfRange { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn completion(&self) -> f64 {
        self.0[COMPLETION]
    }

    pub fn check(&self) -> Result<(), FeatureError> {
        for (name, &value) in FEATURE_NAMES.iter().zip(&self.0) {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(FeatureError::OutOfRange { name, value });
            }
        }
        Ok(())
    }
}

impl Serialize for FeatureVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("FeatureVector", FEATURE_COUNT)?;
        for (name, v) in FEATURE_NAMES.iter().zip(&self.0) {
            st.serialize_field(name, v)?;
        }
        st.end()
    }
}

impl<'de> Deserialize<'de> for FeatureVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, f64>::deserialize(d)?;
        let mut out = [0.0; FEATURE_COUNT];
        for (slot, name) in out.iter_mut().zip(FEATURE_NAMES) {
            *slot = *map.get(name).ok_or_else(|| D::Error::missing_field(name))?;
        }
        Ok(FeatureVector(out))
    }
}

fn clamp01(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

fn term_ratio(terms: &BTreeSet<String>, instructions: &TokenizedText) -> f64 {
    if instructions.is_empty() {
        return 0.0;
    }
    let hits = instructions.tokens.iter().filter(|t| terms.contains(*t)).count();
    clamp01(hits as f64 / instructions.len() as f64)
}

/// Summed in-instruction frequency of the query's terms over instruction length.
pub fn query_term_ratio(query: &TokenizedText, instructions: &TokenizedText) -> f64 {
    term_ratio(&query.set(), instructions)
}

/// Judges how relevant a page's instructions are to the query.
pub trait RelevanceJudge: Send + Sync {
    fn id(&self) -> &str;
    fn judge(&self, query: &str, title: &str, instructions: &[String]) -> Result<f64, JudgeError>;
}

/// Harmonic mean of the query's token overlap with the title and with the
/// instructions.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapRelevanceJudge;

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

impl RelevanceJudge for OverlapRelevanceJudge {
    fn id(&self) -> &str {
        "builtin-overlap"
    }

    fn judge(&self, query: &str, title: &str, instructions: &[String]) -> Result<f64, JudgeError> {
        let q = token_set(query);
        let title_overlap = overlap(&q, &token_set(title));
        let instr = token_set(&instructions.join(" "));
        Ok(clamp01(harmonic_mean(title_overlap, overlap(&q, &instr))))
    }
}

/// Common how-to keywords.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordLexicon {
    pub keywords: Vec<String>,
}

const DEFAULT_KEYWORDS: [&str; 50] = [
    "tap",
    "click",
    "press",
    "open",
    "select",
    "choose",
    "scroll",
    "swipe",
    "menu",
    "settings",
    "toggle",
    "enable",
    "disable",
    "turn",
    "switch",
    "sign",
    "account",
    "option",
    "button",
    "icon",
    "screen",
    "tab",
    "app",
    "enter",
    "type",
    "search",
    "save",
    "confirm",
    "back",
    "home",
    "profile",
    "notifications",
    "privacy",
    "security",
    "general",
    "advanced",
    "edit",
    "add",
    "delete",
    "remove",
    "find",
    "go",
    "navigate",
    "show",
    "allow",
    "change",
    "set",
    "manage",
    "done",
    "next",
];

impl Default for KeywordLexicon {
    fn default() -> Self {
        Self { keywords: DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect() }
    }
}

impl KeywordLexicon {
    /// The first `k` default keywords.
    pub fn truncated(k: usize) -> Self {
        Self { keywords: DEFAULT_KEYWORDS.iter().take(k).map(|s| s.to_string()).collect() }
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }
}

pub fn keyword_ratio(instructions: &TokenizedText, lexicon: &KeywordLexicon) -> f64 {
    term_ratio(&lexicon.keywords.iter().cloned().collect(), instructions)
}

/// Mean, min, max and population variance, each clamped to `[0, 1]`.
pub fn stats4(values: &[f64]) -> [f64; 4] {
    if values.is_empty() {
        return [0.0; 4];
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    // rounding can push the mean a hair outside [min, max]
    [clamp01(mean.clamp(min, max)), clamp01(min), clamp01(max), clamp01(var)]
}

/// Per step: share of instruction terms named by the step's action description.
pub fn action_term_stats(traj: &Trajectory, instructions: &TokenizedText) -> [f64; 4] {
    let terms = instructions.set();
    let per_step: Vec<f64> = traj.steps.iter().map(|s| overlap(&terms, &token_set(&s.description()))).collect();
    stats4(&per_step)
}

fn screen_ratio<'a>(texts: impl Iterator<Item = &'a str>, terms: &BTreeSet<String>) -> f64 {
    let screen: BTreeSet<String> = texts.flat_map(token_set).collect();
    overlap(&screen, terms)
}

/// Per step: share of visible screen terms that appear in the instructions.
pub fn visible_ui_stats(traj: &Trajectory, instructions: &TokenizedText) -> [f64; 4] {
    let terms = instructions.set();
    let per_step: Vec<f64> =
        traj.steps.iter().map(|s| screen_ratio(s.snapshot.visible_texts.iter().map(String::as_str), &terms)).collect();
    stats4(&per_step)
}

/// Per step: share of distilled control terms that appear in the instructions.
pub fn distilled_ui_stats(traj: &Trajectory, instructions: &TokenizedText) -> [f64; 4] {
    let terms = instructions.set();
    let per_step: Vec<f64> = traj
        .steps
        .iter()
        .map(|s| screen_ratio(s.snapshot.distilled_controls.iter().map(|c| c.label.as_str()), &terms))
        .collect();
    stats4(&per_step)
}

/// Relative position of the last instruction token matched by an applied
/// action, and the relative span between first and last match.
pub fn position_features(traj: &Trajectory, instructions: &TokenizedText) -> [f64; 2] {
    let acted: BTreeSet<String> = traj.applied_descriptions().iter().flat_map(|d| token_set(d)).collect();
    let positions: Vec<usize> =
        instructions.tokens.iter().enumerate().filter(|(_, t)| acted.contains(*t)).map(|(i, _)| i + 1).collect();
    let l = instructions.len() as f64;
    match (positions.first(), positions.last()) {
        (Some(&lo), Some(&hi)) => [clamp01(hi as f64 / l), clamp01((hi - lo) as f64 / l)],
        _ => [0.0, 0.0],
    }
}

/// Judges used to compute a vector; recorded next to it.
pub struct Judges<'a> {
    pub relevance: &'a dyn RelevanceJudge,
    pub completion: &'a dyn CompletionJudge,
}

pub struct FeatureInputs<'a> {
    pub query: &'a str,
    pub title: &'a str,
    pub instructions: &'a [String],
    pub trajectory: Option<&'a Trajectory>,
}

pub fn build_feature_vector(
    inputs: &FeatureInputs<'_>,
    judges: &Judges<'_>,
    lexicon: &KeywordLexicon,
) -> Result<FeatureVector, FeatureError> {
    let q = TokenizedText::new(inputs.query, "query");
    let i = TokenizedText::from_parts(inputs.instructions, "instructions");
    let mut f = [0.0; FEATURE_COUNT];
    f[0] = query_term_ratio(&q, &i);
    f[1] = clamp01(judges.relevance.judge(inputs.query, inputs.title, inputs.instructions)?);
    f[2] = keyword_ratio(&i, lexicon);
    if let Some(traj) = inputs.trajectory {
        f[3] = clamp01(judges.completion.judge(traj, inputs.instructions)?);
        f[4..8].copy_from_slice(&action_term_stats(traj, &i));
        f[8..12].copy_from_slice(&visible_ui_stats(traj, &i));
        f[12..16].copy_from_slice(&distilled_ui_stats(traj, &i));
        f[16..18].copy_from_slice(&position_features(traj, &i));
    }
    let v = FeatureVector(f);
    v.check()?;
    Ok(v)
}

/// One line of the feature dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub query_id: String,
    pub page_id: String,
    pub original_rank: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    pub has_instructions: bool,
    pub grounding_status: GroundingStatus,
    pub applied_actions: usize,
    pub features: FeatureVector,
    pub relevance_judge: String,
    pub completion_judge: String,
}

/// Writes records as JSON lines.
pub fn write_feature_records(path: &std::path::Path, records: &[FeatureRecord]) -> std::io::Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("feature records serialize"));
        out.push('\n');
    }
    std::fs::write(path, out)
}

pub fn read_feature_records(path: &std::path::Path) -> std::io::Result<Vec<FeatureRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), n + 1))
            })
        })
        .collect()
}
