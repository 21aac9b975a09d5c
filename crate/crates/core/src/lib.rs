//! Core algorithms for mining, executing and reranking how-to instructions
//! for mobile apps.

pub mod agent;
pub mod corpus;
pub mod eval;
pub mod extract;
pub mod features;
pub mod pipeline;
pub mod rerank;
pub mod simenv;
pub mod text;

pub use corpus::{load_corpus, save_corpus, validate_corpus, CorpusBundle, CorpusError, PageRecord, QueryRecord};
