//! Instruction generators.
//!
//! A generator reads (query, title, cleaned HTML) and returns an ordered list
//! of step strings, or an empty list for "none". Two implementations ship:
//! [`ListGenerator`], a deterministic extractive rule, and
//! [`SimulatedLlmGenerator`], which reproduces the failure modes of a
//! generative extractor (paraphrasing, adapting irrelevant steps, inventing
//! steps) so grounding can be exercised without a hosted model.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::html::{is_block, parse_clean_tree, CleanNode, CleanedHtml};
use super::similarity::fnv1a;
use crate::corpus::QueryRecord;
use crate::text::{normalize_whitespace, token_set};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    /// The generator could not be reached; the call may be retried.
    #[error("generator transport failure: {0}")]
    Transport(String),
}

impl GeneratorError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GeneratorError::Transport(_))
    }
}

#[derive(Debug, Clone)]
pub struct GenerationRequest<'a> {
    pub query_text: &'a str,
    pub app_name: &'a str,
    pub title: &'a str,
    pub cleaned_html: &'a str,
}

pub trait InstructionGenerator: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Vec<String>, GeneratorError>;
    /// Nondeterministic generators disable reuse of cached extraction results.
    fn is_deterministic(&self) -> bool {
        true
    }
    /// Generators that are not safe for concurrent calls are serialized by the pipeline.
    fn is_concurrent_safe(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub steps: Vec<String>,
    pub generator_id: String,
}

impl ExtractionResult {
    pub fn is_none(&self) -> bool {
        self.steps.is_empty()
    }
}

pub fn generate_instructions(
    query: &QueryRecord,
    title: &str,
    doc: &CleanedHtml,
    generator: &dyn InstructionGenerator,
) -> Result<ExtractionResult, GeneratorError> {
    let request =
        GenerationRequest { query_text: &query.text, app_name: &query.app_name, title, cleaned_html: &doc.text };
    let steps =
        generator.generate(&request)?.into_iter().map(|s| normalize_whitespace(&s)).filter(|s| !s.is_empty()).collect();
    Ok(ExtractionResult { steps, generator_id: generator.id().to_string() })
}

fn enumeration_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*(?:(?:step\s*)?\d{1,3}\s*[.):\-]|[•\-\*·])\s*").expect("valid regex"))
}

/// Removes a leading list marker such as `3.`, `Step 2:` or `•`.
pub fn strip_enumeration(text: &str) -> String {
    enumeration_re().replace(text, "").trim().to_string()
}

fn is_numbered(text: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*(?:step\s*)?\d{1,3}\s*[.):\-]\s*\S").expect("valid regex")).is_match(text)
}

/// Ordered lists, unordered lists and runs of numbered paragraphs, in document order.
pub(crate) fn candidate_lists(tree: &CleanNode) -> Vec<Vec<String>> {
    fn rec(node: &CleanNode, out: &mut Vec<Vec<String>>) {
        if node.tag == "ol" || node.tag == "ul" {
            let items: Vec<String> = node
                .elements()
                .filter(|e| e.tag == "li")
                .map(|li| strip_enumeration(&li.own_text()))
                .filter(|t| !t.is_empty())
                .collect();
            if !items.is_empty() {
                out.push(items);
            }
        }
        let mut run: Vec<String> = Vec::new();
        for child in node.elements() {
            let text = child.own_text();
            if child.tag != "li" && is_block(&child.tag) && is_numbered(&text) {
                run.push(strip_enumeration(&text));
                continue;
            }
            if run.len() >= 2 {
                out.push(std::mem::take(&mut run));
            }
            run.clear();
        }
        if run.len() >= 2 {
            out.push(run);
        }
        for child in node.elements() {
            rec(child, out);
        }
    }
    let mut out = Vec::new();
    rec(tree, &mut out);
    out
}

fn best_list<'a>(lists: &'a [Vec<String>], vocabulary: &BTreeSet<String>) -> Option<&'a Vec<String>> {
    let mut best: Option<(&Vec<String>, usize)> = None;
    for list in lists {
        let tokens = token_set(&list.join(" "));
        let shared = tokens.intersection(vocabulary).count();
        if shared > 0 && best.is_none_or(|(_, s)| shared > s) {
            best = Some((list, shared));
        }
    }
    best.map(|(l, _)| l)
}

/// Extractive rule: the list whose text shares the most non-stopword tokens
/// with the query or app name (at least one), earliest on ties.
#[derive(Debug, Clone, Default)]
pub struct ListGenerator;

impl InstructionGenerator for ListGenerator {
    fn id(&self) -> &str {
        "builtin-list"
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Vec<String>, GeneratorError> {
        let Ok(tree) = parse_clean_tree(request.cleaned_html) else { return Ok(Vec::new()) };
        let lists = candidate_lists(&tree);
        let mut vocabulary = token_set(request.query_text);
        vocabulary.extend(token_set(request.app_name));
        Ok(best_list(&lists, &vocabulary).cloned().unwrap_or_default())
    }
}

/// Deterministic stand-in for a generative extractor with its typical errors.
///
/// * a list relevant to the query is returned, each step lightly paraphrased
///   with probability `paraphrase_rate` and heavily reworded with probability
///   `rewrite_rate`;
/// * a page with only irrelevant lists gets those steps adapted toward the query;
/// * a page that merely mentions the query topic gets invented steps.
#[derive(Debug, Clone)]
pub struct SimulatedLlmGenerator {
    pub seed: u64,
    pub paraphrase_rate: f64,
    pub rewrite_rate: f64,
}

impl Default for SimulatedLlmGenerator {
    fn default() -> Self {
        Self { seed: 0, paraphrase_rate: 0.3, rewrite_rate: 0.1 }
    }
}

impl SimulatedLlmGenerator {
    fn rng_for(&self, request: &GenerationRequest<'_>) -> ChaCha8Rng {
        let mut key = Vec::new();
        key.extend_from_slice(request.query_text.as_bytes());
        key.push(0);
        key.extend_from_slice(request.title.as_bytes());
        key.push(0);
        key.extend_from_slice(request.cleaned_html.as_bytes());
        ChaCha8Rng::seed_from_u64(fnv1a(&key) ^ self.seed)
    }
}

fn goal_phrase(query: &str) -> String {
    let tokens: Vec<String> = crate::text::tokenize(query);
    tokens.join(" ")
}

impl InstructionGenerator for SimulatedLlmGenerator {
    fn id(&self) -> &str {
        "simulated-llm"
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Vec<String>, GeneratorError> {
        let Ok(tree) = parse_clean_tree(request.cleaned_html) else { return Ok(Vec::new()) };
        let mut rng = self.rng_for(request);
        let lists = candidate_lists(&tree);
        let mut query_terms = token_set(request.query_text);
        for t in token_set(request.app_name) {
            query_terms.remove(&t);
        }
        if let Some(list) = best_list(&lists, &query_terms) {
            return Ok(list
                .iter()
                .map(|step| {
                    let roll: f64 = rng.random();
                    if roll < self.rewrite_rate {
                        format!("Navigate to the section called {step} in the menu")
                    } else if roll < self.rewrite_rate + self.paraphrase_rate {
                        paraphrase(step)
                    } else {
                        step.clone()
                    }
                })
                .collect());
        }
        let goal = goal_phrase(request.query_text);
        if let Some(list) = lists.first() {
            return Ok(list.iter().map(|step| format!("{step} to {goal}")).collect());
        }
        let page_terms = token_set(&tree.own_text_deep());
        if page_terms.intersection(&query_terms).next().is_some() {
            let mut terms: Vec<&String> = query_terms.iter().collect();
            terms.sort();
            let last = terms.last().map(|s| s.as_str()).unwrap_or("option");
            return Ok(vec![
                format!("Launch the {} application", request.app_name),
                format!("Look for the {goal} option in the menu"),
                format!("Choose {last} and confirm your choice"),
            ]);
        }
        Ok(Vec::new())
    }
}

/// "Tap Sound" -> "Tap on Sound".
fn paraphrase(step: &str) -> String {
    match step.split_once(' ') {
        Some((verb, rest)) => format!("{verb} on {rest}"),
        None => format!("Select {step}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::html::clean_html;

    fn query(text: &str, app: &str) -> QueryRecord {
        QueryRecord { query_id: "q".into(), text: text.into(), app_domain: "System".into(), app_name: app.into() }
    }

    fn run(gen: &dyn InstructionGenerator, q: &QueryRecord, html: &str) -> ExtractionResult {
        let doc = clean_html(html, "p").unwrap();
        generate_instructions(q, "title", &doc, gen).unwrap()
    }

    #[test]
    fn builtin_extracts_the_relevant_ordered_list() {
        // query tokens {change, ringtone}, app tokens {settings}; the list shares
        // "settings" and "ringtone" so all three items come back in order.
        let q = query("how to change ringtone", "Settings");
        let html = "<ul><li>Home</li><li>Contact us</li></ul>\
                    <ol><li>Open Settings</li><li>Tap Sound</li><li>Tap Ringtone</li></ol>";
        let r = run(&ListGenerator, &q, html);
        assert_eq!(r.steps, vec!["Open Settings", "Tap Sound", "Tap Ringtone"]);
        assert_eq!(r.generator_id, "builtin-list");
    }

    #[test]
    fn builtin_returns_none_without_list_content() {
        let q = query("how to change ringtone", "Settings");
        let r = run(&ListGenerator, &q, "<p>Ringtones are fun. Many people like them.</p>");
        assert!(r.is_none());
    }

    #[test]
    fn numbered_paragraphs_form_a_list() {
        let q = query("how to change ringtone", "Settings");
        let html = "<p>Intro</p><p>1. Open Settings</p><p>Step 2: Tap Sound</p><p>3) Tap Ringtone</p>";
        let r = run(&ListGenerator, &q, html);
        assert_eq!(r.steps, vec!["Open Settings", "Tap Sound", "Tap Ringtone"]);
    }

    #[test]
    fn simulated_llm_invents_steps_for_topical_prose() {
        let q = query("how to change ringtone", "Settings");
        let gen = SimulatedLlmGenerator::default();
        let r = run(&gen, &q, "<p>Your ringtone says a lot about you.</p>");
        assert_eq!(r.steps.len(), 3);
        let again = run(&gen, &q, "<p>Your ringtone says a lot about you.</p>");
        assert_eq!(r, again);
        assert!(run(&gen, &q, "<p>Unrelated cooking recipe.</p>").is_none());
    }

    #[test]
    fn simulated_llm_adapts_irrelevant_lists() {
        let q = query("how to change ringtone", "Settings");
        let gen = SimulatedLlmGenerator::default();
        let r = run(&gen, &q, "<ol><li>Open Settings</li><li>Tap Display</li></ol>");
        assert_eq!(r.steps, vec!["Open Settings to change ringtone", "Tap Display to change ringtone"]);
    }

    #[test]
    fn strip_enumeration_handles_common_markers() {
        assert_eq!(strip_enumeration("1. Open"), "Open");
        assert_eq!(strip_enumeration("Step 12: Tap"), "Tap");
        assert_eq!(strip_enumeration("• Tap"), "Tap");
        assert_eq!(strip_enumeration("Tap 2 times"), "Tap 2 times");
    }
}
