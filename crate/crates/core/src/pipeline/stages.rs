use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{config_err, EvalTarget, GeneratorChoice, PipelineConfig, PipelineError};
use crate::agent::{
    read_trajectory, run_execution, write_execution_index, write_trajectory, AttributionJudge, ExecutionIndex,
    ExecutionLimits, ExecutionRequest, IndexEntry, LexicalPredictor, Predictor, Trajectory,
};
use crate::corpus::{load_corpus, CorpusBundle, PageRecord};
use crate::eval::{
    baseline_ordering, emit_report, evaluate, format_table, generate_synthetic_dataset, split_queries, write_dataset,
    Method, MethodOrderings, Splits,
};
use crate::extract::{
    clean_html, generate_instructions, ground_instructions, index_snippets, ExtractionResult, GeneratorError,
    GroundedInstructions, GroundingStatus, HashedEmbedder, InstructionGenerator, ListGenerator, SimulatedLlmGenerator,
};
use crate::features::{
    build_feature_vector, read_feature_records, write_feature_records, FeatureInputs, FeatureRecord, Judges,
    KeywordLexicon, OverlapRelevanceJudge,
};
use crate::rerank::{groups_from_records, rerank, train_model, ModelConfig, ModelKind, RankGroup, TrainedModel};
use crate::simenv::{load_app_scripts, AppScript};

/// Artifact locations under the work directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn extractions(&self) -> PathBuf {
        self.root.join("extract/extractions.jsonl")
    }
    pub fn extraction_summary(&self) -> PathBuf {
        self.root.join("extract/summary.tsv")
    }
    pub fn execute_dir(&self) -> PathBuf {
        self.root.join("execute")
    }
    pub fn execution_index(&self) -> PathBuf {
        self.root.join("execute/index.json")
    }
    pub fn features(&self) -> PathBuf {
        self.root.join("features/features.jsonl")
    }
    pub fn synth_dir(&self) -> PathBuf {
        self.root.join("synth")
    }
    pub fn splits(&self) -> PathBuf {
        self.root.join("synth/splits.json")
    }
    pub fn model(&self, kind: ModelKind) -> PathBuf {
        self.root.join(format!("models/{}.json", kind.name()))
    }
    pub fn orderings(&self) -> PathBuf {
        self.root.join("rerank/orderings.jsonl")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("eval/metrics.tsv")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Extract,
    Execute,
    Featurize,
    Synth,
    Train,
    Rerank,
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::Execute => "execute",
            Stage::Featurize => "featurize",
            Stage::Synth => "synth",
            Stage::Train => "train",
            Stage::Rerank => "rerank",
            Stage::Eval => "eval",
        }
    }

    pub fn run(self, cfg: &PipelineConfig) -> Result<(), PipelineError> {
        match self {
            Stage::Extract => run_extract(cfg).map(drop),
            Stage::Execute => run_execute(cfg).map(drop),
            Stage::Featurize => run_featurize(cfg).map(drop),
            Stage::Synth => run_synth(cfg).map(drop),
            Stage::Train => run_train(cfg).map(drop),
            Stage::Rerank => run_rerank(cfg).map(drop),
            Stage::Eval => run_eval(cfg).map(drop),
        }
    }
}

/// Runs the stages that apply to the configuration, in order: the corpus
/// stages when a corpus is configured, then synth, train, rerank and eval.
pub fn run_all(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let mut stages = Vec::new();
    if cfg.paths.corpus.is_some() {
        stages.extend([Stage::Extract, Stage::Execute, Stage::Featurize]);
    }
    stages.extend([Stage::Synth, Stage::Train, Stage::Rerank, Stage::Eval]);
    for s in stages {
        log::info!("== {} ==", s.name());
        s.run(cfg)?;
    }
    Ok(())
}

fn stage_err(stage: &'static str) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage { stage, message }
}

fn io_err(stage: &'static str, path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage { stage, message: format!("{}: {e}", path.display()) }
}

fn write_file(stage: &'static str, path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(stage, dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(stage, path, e))
}

fn fresh_dir(stage: &'static str, dir: &Path) -> Result<(), PipelineError> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| io_err(stage, dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| io_err(stage, dir, e))
}

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    rows.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect()
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(stage: &'static str, path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(stage, path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| io_err(stage, path, format!("line {}: {e}", n + 1))))
        .collect()
}

fn require(stage: &'static str, path: &Path, hint: &str) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::Stage { stage, message: format!("{} is missing; run `{hint}` first", path.display()) })
    }
}

fn pool(cfg: &PipelineConfig) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build().map_err(|e| config_err(e.to_string()))
}

fn corpus(cfg: &PipelineConfig) -> Result<CorpusBundle, PipelineError> {
    let path = cfg.paths.corpus.as_ref().ok_or_else(|| config_err("paths.corpus is not set"))?;
    if !path.exists() {
        return Err(config_err(format!("corpus {} does not exist", path.display())));
    }
    let bundle = load_corpus(path).map_err(|e| config_err(e.to_string()))?;
    bundle.check().map_err(|e| config_err(e.to_string()))?;
    Ok(bundle)
}

fn scripts(cfg: &PipelineConfig, required: bool) -> Result<Vec<AppScript>, PipelineError> {
    match &cfg.paths.scripts {
        Some(dir) if dir.is_dir() => load_app_scripts(dir).map_err(|e| config_err(e.to_string())),
        Some(dir) => Err(config_err(format!("scripts directory {} does not exist", dir.display()))),
        None if required => Err(config_err("paths.scripts is not set")),
        None => Ok(Vec::new()),
    }
}

/// File name stem for a page id: anything outside `[A-Za-z0-9._-]` becomes `_`.
pub fn page_file_stem(page_id: &str) -> String {
    page_id.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
}

// ---------------------------------------------------------------- extract

/// One line of the extraction artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageExtraction {
    pub page_id: String,
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub extraction: ExtractionResult,
    pub grounded: GroundedInstructions,
}

const GENERATOR_RETRIES: usize = 2;

fn extract_page(
    page: &PageRecord,
    bundle: &CorpusBundle,
    generator: &dyn InstructionGenerator,
    cfg: &PipelineConfig,
) -> PageExtraction {
    let failed = |error: String| PageExtraction {
        page_id: page.page_id.clone(),
        query_id: page.query_id.clone(),
        error: Some(error),
        extraction: ExtractionResult { steps: Vec::new(), generator_id: generator.id().to_string() },
        grounded: GroundedInstructions::ungrounded(&[]),
    };
    let query = bundle.query(&page.query_id).expect("checked corpus");
    let doc = match clean_html(&page.raw_html, &page.page_id) {
        Ok(d) => d,
        Err(e) => {
            log::warn!("extract: skipping {}: {e}", page.page_id);
            return failed(e.to_string());
        }
    };
    let mut attempt = 0;
    let extraction = loop {
        match generate_instructions(query, &page.title, &doc, generator) {
            Ok(r) => break r,
            Err(e) if e.is_retryable() && attempt < GENERATOR_RETRIES => attempt += 1,
            Err(GeneratorError::Transport(m)) => {
                log::warn!("extract: generator failed on {}: {m}", page.page_id);
                return failed(m);
            }
        }
    };
    let embedder = HashedEmbedder::with_dim(cfg.extract.embed_dim);
    let grounded = ground_instructions(&extraction, &index_snippets(&doc), &embedder, &cfg.extract.grounding);
    PageExtraction { page_id: page.page_id.clone(), query_id: page.query_id.clone(), error: None, extraction, grounded }
}

/// Page counts by extraction outcome and relevance label, with and without
/// grounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSummary {
    /// (category, with grounding, without grounding)
    pub rows: Vec<(String, usize, usize)>,
}

impl ExtractionSummary {
    pub fn get(&self, category: &str) -> Option<(usize, usize)> {
        self.rows.iter().find(|r| r.0 == category).map(|r| (r.1, r.2))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("category\twith_grounding\twithout_grounding\n");
        for (c, a, b) in &self.rows {
            let _ = writeln!(out, "{c}\t{a}\t{b}");
        }
        out
    }
}

/// Without grounding every non-empty extraction counts as full. Labels of
/// `None` are reported in separate `Unlabeled` rows when present.
pub fn extraction_summary(records: &[PageExtraction], labels: &BTreeMap<String, Option<u8>>) -> ExtractionSummary {
    const OUTCOMES: [(&str, &str); 5] = [
        ("Full Extraction / True", "full+1"),
        ("Partial Extraction / True", "partial+1"),
        ("Full (any) Extraction / False", "any+0"),
        ("No Extraction / True", "none+1"),
        ("No Extraction / False", "none+0"),
    ];
    let mut with: BTreeMap<String, usize> = BTreeMap::new();
    let mut without: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        let label = match labels.get(&r.page_id).copied().flatten() {
            Some(1) => "1",
            Some(_) => "0",
            None => "u",
        };
        let grounded = match (r.grounded.grounding_status, label) {
            (GroundingStatus::None, _) => "none",
            (_, "0") => "any",
            (GroundingStatus::Full, _) => "full",
            (GroundingStatus::Partial, _) => "partial",
        };
        let raw = match (r.extraction.is_none(), label) {
            (true, _) => "none",
            (false, "0") => "any",
            (false, _) => "full",
        };
        *with.entry(format!("{grounded}+{label}")).or_default() += 1;
        *without.entry(format!("{raw}+{label}")).or_default() += 1;
    }
    let count = |m: &BTreeMap<String, usize>, k: &str| m.get(k).copied().unwrap_or(0);
    let mut rows: Vec<(String, usize, usize)> =
        OUTCOMES.iter().map(|(name, key)| (name.to_string(), count(&with, key), count(&without, key))).collect();
    for (name, key) in [
        ("Full Extraction / Unlabeled", "full+u"),
        ("Partial Extraction / Unlabeled", "partial+u"),
        ("No Extraction / Unlabeled", "none+u"),
    ] {
        if count(&with, key) + count(&without, key) > 0 {
            rows.push((name.to_string(), count(&with, key), count(&without, key)));
        }
    }
    ExtractionSummary { rows }
}

pub fn run_extract(cfg: &PipelineConfig) -> Result<ExtractionSummary, PipelineError> {
    const STAGE: &str = "extract";
    let bundle = corpus(cfg)?;
    let generator: Box<dyn InstructionGenerator> = match cfg.extract.generator {
        GeneratorChoice::List => Box::new(ListGenerator),
        GeneratorChoice::SimulatedLlm => Box::new(SimulatedLlmGenerator {
            seed: cfg.seed,
            paraphrase_rate: cfg.extract.paraphrase_rate,
            rewrite_rate: cfg.extract.rewrite_rate,
        }),
    };
    let run = |p: &PageRecord| extract_page(p, &bundle, generator.as_ref(), cfg);
    let records: Vec<PageExtraction> = if generator.is_concurrent_safe() {
        pool(cfg)?.install(|| bundle.pages.par_iter().map(run).collect())
    } else {
        bundle.pages.iter().map(run).collect()
    };
    let ws = Workspace::new(&cfg.work_dir);
    write_file(STAGE, &ws.extractions(), &jsonl(&records))?;
    let labels = bundle.pages.iter().map(|p| (p.page_id.clone(), p.label)).collect();
    let summary = extraction_summary(&records, &labels);
    write_file(STAGE, &ws.extraction_summary(), &summary.to_tsv())?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    let by_status = |s: GroundingStatus| records.iter().filter(|r| r.grounded.grounding_status == s).count();
    log::info!(
        "extract: {} pages, {} fully grounded, {} partially, {} without instructions, {failed} failed",
        records.len(),
        by_status(GroundingStatus::Full),
        by_status(GroundingStatus::Partial),
        by_status(GroundingStatus::None),
    );
    for (c, a, b) in &summary.rows {
        log::info!("extract: {c}: {a} with grounding, {b} without");
    }
    Ok(summary)
}

// ---------------------------------------------------------------- execute

fn read_extractions(stage: &'static str, ws: &Workspace) -> Result<Vec<PageExtraction>, PipelineError> {
    require(stage, &ws.extractions(), "extract")?;
    read_jsonl(stage, &ws.extractions())
}

/// User profile for an app: the merged auxiliary values of its tasks.
fn app_context(script: &AppScript) -> BTreeMap<String, String> {
    script.tasks.iter().flat_map(|t| t.aux_context.clone()).collect()
}

pub fn run_execute(cfg: &PipelineConfig) -> Result<ExecutionIndex, PipelineError> {
    const STAGE: &str = "execute";
    let ws = Workspace::new(&cfg.work_dir);
    let bundle = corpus(cfg)?;
    let apps = scripts(cfg, true)?;
    let extractions = read_extractions(STAGE, &ws)?;
    let by_app: BTreeMap<&str, (&AppScript, BTreeMap<String, String>)> =
        apps.iter().map(|a| (a.app_name.as_str(), (a, app_context(a)))).collect();
    let limits = ExecutionLimits {
        max_steps: cfg.execution.max_steps,
        per_action_timeout_ms: cfg.execution.per_action_timeout_ms,
    };
    let grounded: Vec<&PageExtraction> =
        extractions.iter().filter(|e| e.grounded.grounding_status != GroundingStatus::None).collect();
    let predictor_id = LexicalPredictor::default().id().to_string();

    let run = |e: &&PageExtraction| -> (IndexEntry, Option<Trajectory>) {
        let entry = |error: Option<String>, t: Option<&Trajectory>| IndexEntry {
            page_id: e.page_id.clone(),
            query_id: e.query_id.clone(),
            file: t.map(|_| format!("trajectories/{}.json", page_file_stem(&e.page_id))),
            termination: t.map(|t| t.termination),
            step_count: t.map_or(0, |t| t.step_count),
            error,
        };
        let app = bundle.query(&e.query_id).map(|q| q.app_name.as_str()).unwrap_or_default();
        let Some((script, aux)) = by_app.get(app) else {
            let msg = format!("no app script for `{app}`");
            log::warn!("execute: {}: {msg}", e.page_id);
            return (entry(Some(msg), None), None);
        };
        let request = ExecutionRequest {
            page_id: &e.page_id,
            query_id: &e.query_id,
            instructions: &e.grounded,
            aux_context: aux,
        };
        let mut predictor = LexicalPredictor::new(cfg.execution.match_threshold);
        match run_execution(&request, script, &mut predictor, &limits) {
            Ok(t) => (entry(None, Some(&t)), Some(t)),
            Err(err) => {
                log::warn!("execute: {}: {err}", e.page_id);
                (entry(Some(err.to_string()), None), None)
            }
        }
    };
    let results: Vec<(IndexEntry, Option<Trajectory>)> = pool(cfg)?.install(|| grounded.par_iter().map(run).collect());

    fresh_dir(STAGE, &ws.execute_dir().join("trajectories"))?;
    for (entry, t) in &results {
        if let (Some(file), Some(t)) = (&entry.file, t) {
            let path = ws.execute_dir().join(file);
            write_trajectory(&path, t).map_err(|e| io_err(STAGE, &path, e))?;
        }
    }
    let index = ExecutionIndex {
        predictor: predictor_id,
        max_steps: limits.max_steps,
        executions: results.into_iter().map(|(e, _)| e).collect(),
    };
    write_execution_index(&ws.execution_index(), &index).map_err(|e| io_err(STAGE, &ws.execution_index(), e))?;
    let mut terminations: BTreeMap<String, usize> = BTreeMap::new();
    for e in &index.executions {
        let key = e.termination.map_or_else(
            || "failed".to_string(),
            |t| serde_json::to_value(t).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
        );
        *terminations.entry(key).or_default() += 1;
    }
    log::info!("execute: {} grounded pages run, terminations {terminations:?}", index.executions.len());
    Ok(index)
}

// ---------------------------------------------------------------- featurize

fn lexicon(cfg: &PipelineConfig) -> KeywordLexicon {
    if cfg.features.keywords == 0 {
        KeywordLexicon::default()
    } else {
        KeywordLexicon::truncated(cfg.features.keywords)
    }
}

pub fn run_featurize(cfg: &PipelineConfig) -> Result<Vec<FeatureRecord>, PipelineError> {
    const STAGE: &str = "featurize";
    let ws = Workspace::new(&cfg.work_dir);
    let bundle = corpus(cfg)?;
    let extractions: BTreeMap<String, PageExtraction> =
        read_extractions(STAGE, &ws)?.into_iter().map(|e| (e.page_id.clone(), e)).collect();
    require(STAGE, &ws.execution_index(), "execute")?;
    let index_text =
        std::fs::read_to_string(ws.execution_index()).map_err(|e| io_err(STAGE, &ws.execution_index(), e))?;
    let index: ExecutionIndex =
        serde_json::from_str(&index_text).map_err(|e| io_err(STAGE, &ws.execution_index(), e))?;
    let files: BTreeMap<&str, &str> =
        index.executions.iter().filter_map(|e| e.file.as_deref().map(|f| (e.page_id.as_str(), f))).collect();
    let lex = lexicon(cfg);
    let (relevance, completion) = (OverlapRelevanceJudge, AttributionJudge);
    let judges = Judges { relevance: &relevance, completion: &completion };

    let build = |page: &PageRecord| -> Result<FeatureRecord, PipelineError> {
        let query = bundle.query(&page.query_id).expect("checked corpus");
        let e = extractions
            .get(&page.page_id)
            .ok_or_else(|| stage_err(STAGE)(format!("page {} has no extraction record", page.page_id)))?;
        let trajectory = match files.get(page.page_id.as_str()) {
            Some(f) => {
                let path = ws.execute_dir().join(f);
                Some(read_trajectory(&path).map_err(|err| io_err(STAGE, &path, err))?)
            }
            None => None,
        };
        let instructions = e.grounded.texts();
        let inputs = FeatureInputs {
            query: &query.text,
            title: &page.title,
            instructions: &instructions,
            trajectory: trajectory.as_ref(),
        };
        let features = build_feature_vector(&inputs, &judges, &lex)
            .map_err(|err| stage_err(STAGE)(format!("{}: {err}", page.page_id)))?;
        Ok(FeatureRecord {
            query_id: page.query_id.clone(),
            page_id: page.page_id.clone(),
            original_rank: page.original_rank,
            label: page.label,
            has_instructions: e.grounded.grounding_status != GroundingStatus::None,
            grounding_status: e.grounded.grounding_status,
            applied_actions: trajectory.as_ref().map_or(0, Trajectory::applied_actions),
            features,
            relevance_judge: judges.relevance.id().to_string(),
            completion_judge: judges.completion.id().to_string(),
        })
    };
    let records: Vec<FeatureRecord> =
        pool(cfg)?.install(|| bundle.pages.par_iter().map(build).collect::<Result<_, _>>())?;
    write_file(STAGE, &ws.features(), "")?;
    write_feature_records(&ws.features(), &records).map_err(|e| io_err(STAGE, &ws.features(), e))?;
    let verified = groups_from_records(&records).iter().map(|g| g.verified_indices().len()).sum::<usize>();
    log::info!("featurize: {} pages, {verified} pass the verification gate", records.len());
    Ok(records)
}

// ---------------------------------------------------------------- synth

pub fn run_synth(cfg: &PipelineConfig) -> Result<Splits, PipelineError> {
    const STAGE: &str = "synth";
    let ws = Workspace::new(&cfg.work_dir);
    let apps = scripts(cfg, false)?;
    let ds = pool(cfg)?
        .install(|| generate_synthetic_dataset(&apps, &cfg.synth))
        .map_err(|e| stage_err(STAGE)(e.to_string()))?;
    fresh_dir(STAGE, &ws.synth_dir())?;
    write_dataset(&ds, &ws.synth_dir()).map_err(|e| stage_err(STAGE)(e.to_string()))?;
    let ids: Vec<String> = ds.corpus.queries.iter().map(|q| q.query_id.clone()).collect();
    let splits = split_queries(&ids, cfg.seed);
    write_file(STAGE, &ws.splits(), &(serde_json::to_string_pretty(&splits).expect("splits serialize") + "\n"))?;
    log::info!(
        "synth: {} queries, {} pages ({} positive, {} negative); split {}/{}/{}",
        ids.len(),
        ds.corpus.pages.len(),
        ds.positives(),
        ds.negatives(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    Ok(splits)
}

fn read_splits(stage: &'static str, ws: &Workspace) -> Result<Splits, PipelineError> {
    require(stage, &ws.splits(), "synth")?;
    let text = std::fs::read_to_string(ws.splits()).map_err(|e| io_err(stage, &ws.splits(), e))?;
    serde_json::from_str(&text).map_err(|e| io_err(stage, &ws.splits(), e))
}

fn synth_groups(stage: &'static str, ws: &Workspace) -> Result<Vec<RankGroup>, PipelineError> {
    let path = ws.synth_dir().join("features.jsonl");
    require(stage, &path, "synth")?;
    let records = read_feature_records(&path).map_err(|e| io_err(stage, &path, e))?;
    Ok(groups_from_records(&records))
}

fn select(groups: &[RankGroup], ids: &[String]) -> Vec<RankGroup> {
    let keep: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    groups.iter().filter(|g| keep.contains(g.query_id.as_str())).cloned().collect()
}

// ---------------------------------------------------------------- train

pub fn run_train(cfg: &PipelineConfig) -> Result<Vec<TrainedModel>, PipelineError> {
    const STAGE: &str = "train";
    let ws = Workspace::new(&cfg.work_dir);
    let splits = read_splits(STAGE, &ws)?;
    let groups = synth_groups(STAGE, &ws)?;
    let (train, val) = (select(&groups, &splits.train), select(&groups, &splits.val));
    let pool = pool(cfg)?;
    let mut models = Vec::new();
    for kind in cfg.model_kinds()? {
        let mc = ModelConfig { model_kind: kind, ..cfg.model.clone() };
        let model = pool
            .install(|| train_model(&train, &val, &mc))
            .map_err(|e| stage_err(STAGE)(format!("{}: {e}", kind.name())))?;
        let path = ws.model(kind);
        write_file(STAGE, &path, &model.to_json())?;
        let h = &model.history;
        log::info!(
            "train: {} val NDCG@{} {:.4} -> {:.4} (best epoch {} of {})",
            kind.name(),
            mc.val_k,
            h.initial_val_ndcg,
            h.best_val_ndcg,
            h.best_epoch,
            h.epochs.len()
        );
        models.push(model);
    }
    Ok(models)
}

// ---------------------------------------------------------------- rerank

/// Groups the rerank and eval stages work on.
pub fn target_groups(cfg: &PipelineConfig, stage: &'static str) -> Result<Vec<RankGroup>, PipelineError> {
    let ws = Workspace::new(&cfg.work_dir);
    match cfg.eval.target {
        EvalTarget::Corpus => {
            require(stage, &ws.features(), "featurize")?;
            let records = read_feature_records(&ws.features()).map_err(|e| io_err(stage, &ws.features(), e))?;
            Ok(groups_from_records(&records))
        }
        EvalTarget::SynthTest => {
            let splits = read_splits(stage, &ws)?;
            Ok(select(&synth_groups(stage, &ws)?, &splits.test))
        }
    }
}

/// Final order of one query under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingRecord {
    pub method: String,
    pub query_id: String,
    pub page_ids: Vec<String>,
    /// Pages that passed the verification gate.
    pub verified: usize,
}

pub fn run_rerank(cfg: &PipelineConfig) -> Result<Vec<OrderingRecord>, PipelineError> {
    const STAGE: &str = "rerank";
    let ws = Workspace::new(&cfg.work_dir);
    let groups = target_groups(cfg, STAGE)?;
    let mut models = Vec::new();
    for kind in cfg.model_kinds()? {
        let path = ws.model(kind);
        require(STAGE, &path, "train")?;
        models.push(TrainedModel::load(&path).map_err(|e| stage_err(STAGE)(e.to_string()))?);
    }
    let per_model: Vec<Vec<OrderingRecord>> = pool(cfg)?.install(|| {
        models
            .iter()
            .map(|m| {
                groups
                    .par_iter()
                    .map(|g| OrderingRecord {
                        method: m.kind.display().to_string(),
                        query_id: g.query_id.clone(),
                        page_ids: rerank(g, m).into_iter().map(|i| g.items[i].page_id.clone()).collect(),
                        verified: g.verified_indices().len(),
                    })
                    .collect()
            })
            .collect()
    });
    let records: Vec<OrderingRecord> = per_model.into_iter().flatten().collect();
    write_file(STAGE, &ws.orderings(), &jsonl(&records))?;
    log::info!("rerank: {} queries under {} models", groups.len(), models.len());
    Ok(records)
}

// ---------------------------------------------------------------- eval

pub fn run_eval(cfg: &PipelineConfig) -> Result<crate::eval::MetricsReport, PipelineError> {
    const STAGE: &str = "eval";
    let ws = Workspace::new(&cfg.work_dir);
    let mut groups = target_groups(cfg, STAGE)?;
    if groups.is_empty() {
        return Err(stage_err(STAGE)("no query groups to evaluate".into()));
    }
    let labeled = groups.iter().all(RankGroup::is_labeled);
    let mut methods = Vec::new();
    for m in Method::BASELINES {
        if m == Method::Oracle && !labeled {
            log::warn!("eval: some pages are unlabelled; Oracle row omitted and missing labels scored as 0");
            continue;
        }
        let orderings = groups.iter().map(|g| baseline_ordering(m, g).expect("model-free ordering")).collect();
        methods.push(MethodOrderings { method: m.name().to_string(), orderings });
    }
    if !labeled {
        groups.iter_mut().flat_map(|g| &mut g.items).filter(|i| i.label.is_none()).for_each(|i| i.label = Some(0));
    }
    if ws.orderings().exists() {
        let records: Vec<OrderingRecord> = read_jsonl(STAGE, &ws.orderings())?;
        let mut by_method: BTreeMap<&str, BTreeMap<&str, &OrderingRecord>> = BTreeMap::new();
        for r in &records {
            by_method.entry(&r.method).or_default().insert(&r.query_id, r);
        }
        for kind in ModelKind::ALL {
            let Some(per_query) = by_method.get(kind.display()) else { continue };
            let mut orderings = Vec::new();
            for g in &groups {
                let r = per_query.get(g.query_id.as_str()).ok_or_else(|| {
                    stage_err(STAGE)(format!("{} has no ordering for {}; rerun rerank", kind.display(), g.query_id))
                })?;
                let pos: BTreeMap<&str, usize> =
                    g.items.iter().enumerate().map(|(i, it)| (it.page_id.as_str(), i)).collect();
                let order = r
                    .page_ids
                    .iter()
                    .map(|p| pos.get(p.as_str()).copied())
                    .collect::<Option<Vec<usize>>>()
                    .ok_or_else(|| stage_err(STAGE)(format!("stale ordering for {}; rerun rerank", g.query_id)))?;
                orderings.push(order);
            }
            methods.push(MethodOrderings { method: kind.display().to_string(), orderings });
        }
    } else {
        log::warn!("eval: {} not found; reporting model-free methods only", ws.orderings().display());
    }
    let report = evaluate(&groups, &methods, Some(&cfg.eval.reference), cfg.eval.resamples, cfg.seed)
        .map_err(|e| stage_err(STAGE)(e.to_string()))?;
    let path = ws.report();
    write_file(STAGE, &path, "")?;
    emit_report(&report, &path).map_err(|e| stage_err(STAGE)(e.to_string()))?;
    log::info!("eval: {} queries\n{}", groups.len(), format_table(&report).trim_end());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(page: &str, status: GroundingStatus, raw: usize) -> PageExtraction {
        PageExtraction {
            page_id: page.into(),
            query_id: "q".into(),
            error: None,
            extraction: ExtractionResult { steps: vec!["Tap A".into(); raw], generator_id: "t".into() },
            grounded: GroundedInstructions { steps: Vec::new(), grounding_status: status },
        }
    }

    #[test]
    fn summary_rows_follow_outcome_and_label() {
        let records = [
            record("a", GroundingStatus::Full, 2),
            record("b", GroundingStatus::Partial, 3),
            record("c", GroundingStatus::None, 2),
            record("d", GroundingStatus::Partial, 2),
            record("e", GroundingStatus::None, 0),
            record("f", GroundingStatus::None, 0),
        ];
        let labels: BTreeMap<String, Option<u8>> = [("a", 1), ("b", 1), ("c", 0), ("d", 0), ("e", 1), ("f", 0)]
            .into_iter()
            .map(|(p, y)| (p.to_string(), Some(y)))
            .collect();
        let s = extraction_summary(&records, &labels);
        assert_eq!(s.rows.len(), 5);
        assert_eq!(s.get("Full Extraction / True"), Some((1, 2)));
        assert_eq!(s.get("Partial Extraction / True"), Some((1, 0)));
        assert_eq!(s.get("Full (any) Extraction / False"), Some((1, 2)));
        assert_eq!(s.get("No Extraction / True"), Some((1, 1)));
        assert_eq!(s.get("No Extraction / False"), Some((2, 1)));
        assert!(s.to_tsv().starts_with("category\twith_grounding\twithout_grounding\nFull Extraction / True\t1\t2\n"));

        let unlabeled: BTreeMap<String, Option<u8>> = BTreeMap::new();
        let s = extraction_summary(&records[..1], &unlabeled);
        assert_eq!(s.get("Full Extraction / Unlabeled"), Some((1, 1)));
    }

    #[test]
    fn page_stems_are_file_safe() {
        assert_eq!(page_file_stem("q1/p 2:x"), "q1_p_2_x");
        assert_eq!(page_file_stem("syn0001-p03"), "syn0001-p03");
    }
}
