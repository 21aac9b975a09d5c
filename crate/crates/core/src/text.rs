//! Shared text normalization.
//!
//! Every lexical comparison in the pipeline (grounding, prediction, features,
//! judges) goes through [`tokenize`]: case-fold, split on any non-alphanumeric
//! character, drop stopwords. ROUGE scoring is the one exception and keeps
//! stopwords, see [`raw_tokens`].

use std::collections::BTreeSet;
use std::sync::OnceLock;

/// The shipped English stopword list (127 entries).
pub const STOPWORDS: [&str; 127] = [
    "i",
    "me",
    "my",
    "myself",
    "we",
    "our",
    "ours",
    "ourselves",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
    "he",
    "him",
    "his",
    "himself",
    "she",
    "her",
    "hers",
    "herself",
    "it",
    "its",
    "itself",
    "they",
    "them",
    "their",
    "theirs",
    "themselves",
    "what",
    "which",
    "who",
    "whom",
    "this",
    "that",
    "these",
    "those",
    "am",
    "is",
    "are",
    "was",
    "were",
    "be",
    "been",
    "being",
    "have",
    "has",
    "had",
    "having",
    "do",
    "does",
    "did",
    "doing",
    "a",
    "an",
    "the",
    "and",
    "but",
    "if",
    "or",
    "because",
    "as",
    "until",
    "while",
    "of",
    "at",
    "by",
    "for",
    "with",
    "about",
    "against",
    "between",
    "into",
    "through",
    "during",
    "before",
    "after",
    "above",
    "below",
    "to",
    "from",
    "up",
    "down",
    "in",
    "out",
    "on",
    "off",
    "over",
    "under",
    "again",
    "further",
    "then",
    "once",
    "here",
    "there",
    "when",
    "where",
    "why",
    "how",
    "all",
    "any",
    "both",
    "each",
    "few",
    "more",
    "most",
    "other",
    "some",
    "such",
    "no",
    "nor",
    "not",
    "only",
    "own",
    "same",
    "so",
    "than",
    "too",
    "very",
    "s",
    "t",
    "can",
    "will",
    "just",
    "don",
    "should",
    "now",
];

fn stopword_set() -> &'static BTreeSet<&'static str> {
    static SET: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS.iter().copied().collect())
}

pub fn is_stopword(token: &str) -> bool {
    stopword_set().contains(token)
}

/// Case-folded alphanumeric runs, stopwords kept.
pub fn raw_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// Case-folded alphanumeric runs with stopwords removed.
pub fn tokenize(text: &str) -> Vec<String> {
    raw_tokens(text).into_iter().filter(|t| !is_stopword(t)).collect()
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

/// `|A ∩ B| / |A|`, zero when `a` is empty.
pub fn overlap(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.intersection(b).count() as f64 / a.len() as f64
}

/// Collapses runs of whitespace into single spaces and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A normalized token sequence with a provenance tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
    pub source: String,
}

impl TokenizedText {
    pub fn new(text: &str, source: impl Into<String>) -> Self {
        Self { tokens: tokenize(text), source: source.into() }
    }

    /// Tokenizes each part in order and concatenates the results.
    pub fn from_parts<S: AsRef<str>>(parts: &[S], source: impl Into<String>) -> Self {
        let tokens = parts.iter().flat_map(|p| tokenize(p.as_ref())).collect();
        Self { tokens, source: source.into() }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn set(&self) -> BTreeSet<String> {
        self.tokens.iter().cloned().collect()
    }

    pub fn term_frequency(&self, term: &str) -> usize {
        self.tokens.iter().filter(|t| t.as_str() == term).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopword_list_is_unique_and_lowercase() {
        assert_eq!(stopword_set().len(), 127);
        assert!(STOPWORDS.iter().all(|w| w.chars().all(|c| c.is_ascii_lowercase())));
    }

    #[test]
    fn tokenize_folds_case_splits_punctuation_and_drops_stopwords() {
        assert_eq!(tokenize("How to change the Ringtone?"), vec!["change", "ringtone"]);
        assert_eq!(tokenize("Wi-Fi & Bluetooth"), vec!["wi", "fi", "bluetooth"]);
        assert!(tokenize("  ... ").is_empty());
    }

    #[test]
    fn raw_tokens_keep_stopwords() {
        assert_eq!(raw_tokens("A b, C"), vec!["a", "b", "c"]);
    }

    #[test]
    fn overlap_is_relative_to_first_set() {
        let a = token_set("tap sound");
        let b = token_set("sound");
        assert_eq!(overlap(&a, &b), 0.5);
        assert_eq!(overlap(&b, &a), 1.0);
        assert_eq!(overlap(&BTreeSet::new(), &a), 0.0);
    }
}
