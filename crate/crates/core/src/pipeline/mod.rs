//! File-based pipeline stages and their configuration.
//!
//! Each stage reads the artifacts of earlier stages from the work directory
//! and writes its own, so any stage can be re-run in isolation.

mod stages;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::SynthConfig;
use crate::extract::GroundingConfig;
use crate::rerank::{ModelConfig, ModelKind};

pub use stages::{
    extraction_summary, page_file_stem, run_all, run_eval, run_execute, run_extract, run_featurize, run_rerank,
    run_synth, run_train, target_groups, ExtractionSummary, OrderingRecord, PageExtraction, Stage, Workspace,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    /// 2 for configuration problems, 1 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 1,
        }
    }
}

pub(crate) fn config_err(m: impl Into<String>) -> PipelineError {
    PipelineError::Config(m.into())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Corpus of queries and result pages (JSON lines).
    pub corpus: Option<PathBuf>,
    /// Directory of app scripts.
    pub scripts: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorChoice {
    List,
    SimulatedLlm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub generator: GeneratorChoice,
    pub paraphrase_rate: f64,
    pub rewrite_rate: f64,
    /// Width of the hashed bag-of-words embedding.
    pub embed_dim: usize,
    pub grounding: GroundingConfig,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorChoice::List,
            paraphrase_rate: 0.3,
            rewrite_rate: 0.1,
            embed_dim: crate::extract::similarity::DEFAULT_EMBED_DIM,
            grounding: GroundingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionConfig {
    pub max_steps: usize,
    pub per_action_timeout_ms: u64,
    /// Minimum label overlap for the lexical predictor.
    pub match_threshold: f64,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        Self { max_steps: 28, per_action_timeout_ms: 30_000, match_threshold: crate::agent::DEFAULT_MATCH_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub relevance_judge: String,
    pub completion_judge: String,
    /// Keyword lexicon size; 0 uses the whole default list.
    pub keywords: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { relevance_judge: "builtin-overlap".into(), completion_judge: "builtin-attribution".into(), keywords: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Model names, or `all`.
    pub models: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { models: vec!["all".into()] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTarget {
    /// The featurized corpus.
    Corpus,
    /// The test split of the synthetic dataset.
    SynthTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub target: EvalTarget,
    pub resamples: usize,
    /// Method every other method is tested against.
    pub reference: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { target: EvalTarget::Corpus, resamples: crate::eval::DEFAULT_RESAMPLES, reference: "Baseline".into() }
    }
}

/// Everything a pipeline run needs. The top-level `seed` overrides the seeds
/// of the model and synthetic-data sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub jobs: usize,
    pub work_dir: PathBuf,
    pub paths: PathsConfig,
    pub extract: ExtractConfig,
    pub execution: ExecutionConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            work_dir: PathBuf::from("work"),
            paths: PathsConfig::default(),
            extract: ExtractConfig::default(),
            execution: ExecutionConfig::default(),
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Parses TOML text. Relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        rebase(base, &mut cfg.work_dir);
        for p in [&mut cfg.paths.corpus, &mut cfg.paths.scripts].into_iter().flatten() {
            rebase(base, p);
        }
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            PipelineError::Config(m) => config_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
        self.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.jobs == 0 {
            return Err(config_err("jobs must be at least 1"));
        }
        self.model.check().map_err(|e| config_err(e.to_string()))?;
        let g = &self.extract.grounding;
        if !(0.0..=1.0).contains(&g.rouge_min) || !(0.0..=2.0).contains(&g.embed_dist_max) {
            return Err(config_err("grounding thresholds out of range"));
        }
        if self.extract.embed_dim == 0 {
            return Err(config_err("embed_dim must be positive"));
        }
        if self.execution.max_steps == 0 {
            return Err(config_err("max_steps must be positive"));
        }
        for r in [self.extract.paraphrase_rate, self.extract.rewrite_rate, self.synth.noisy_positive_rate] {
            if !(0.0..=1.0).contains(&r) {
                return Err(config_err(format!("rate {r} is outside [0, 1]")));
            }
        }
        if self.features.relevance_judge != "builtin-overlap" {
            return Err(config_err(format!("unknown relevance judge `{}`", self.features.relevance_judge)));
        }
        if self.features.completion_judge != "builtin-attribution" {
            return Err(config_err(format!("unknown completion judge `{}`", self.features.completion_judge)));
        }
        self.model_kinds()?;
        Ok(())
    }

    /// Model kinds named in `train.models`, in canonical order.
    pub fn model_kinds(&self) -> Result<Vec<ModelKind>, PipelineError> {
        let mut kinds = Vec::new();
        for name in &self.train.models {
            if name == "all" {
                kinds.extend(ModelKind::ALL);
            } else {
                kinds.push(ModelKind::parse(name).ok_or_else(|| config_err(format!("unknown model `{name}`")))?);
            }
        }
        kinds.sort();
        kinds.dedup();
        if kinds.is_empty() {
            return Err(config_err("train.models is empty"));
        }
        Ok(kinds)
    }
}
