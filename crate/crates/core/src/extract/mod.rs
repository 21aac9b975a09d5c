//! Instruction extraction: HTML cleaning, step generation and grounding.

pub mod generator;
pub mod grounding;
pub mod html;
pub mod similarity;

pub use generator::{
    generate_instructions, ExtractionResult, GenerationRequest, GeneratorError, InstructionGenerator, ListGenerator,
    SimulatedLlmGenerator,
};
pub use grounding::{
    ground_instructions, xpaths_similar, GroundedInstructions, GroundedStep, GroundingConfig, GroundingStatus,
    MatchScores,
};
pub use html::{clean_html, count_xpath_matches, index_snippets, CleanedHtml, HtmlError, Snippet};
pub use similarity::{cosine_distance, embed, rouge_l, Embedder, HashedEmbedder};
