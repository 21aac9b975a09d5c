//! Labelled ranking groups built from scripted app tasks.
//!
//! Every task becomes one query. Its group mixes pages whose instructions
//! solve the task with pages that fail, pages whose trajectories were
//! damaged after the fact, pages for other tasks of the same app and pages
//! without any instructions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::appgen::generate_app;
use super::EvalError;
use crate::agent::{run_steps, AttributionJudge, ExecutionLimits, LexicalPredictor, Termination, Trajectory};
use crate::corpus::{save_corpus, CorpusBundle, PageRecord, QueryRecord};
use crate::extract::GroundingStatus;
use crate::features::{
    build_feature_vector, write_feature_records, FeatureInputs, FeatureRecord, Judges, KeywordLexicon,
    OverlapRelevanceJudge, RelevanceJudge,
};
use crate::simenv::{ActionRequest, ActionStatus, AppScript, Task, TransitionAction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Procedural apps added after the supplied scripts.
    pub generated_apps: usize,
    /// Tasks taken from each app; 0 keeps all.
    pub tasks_per_app: usize,
    pub positives_per_task: usize,
    pub swap_positives: usize,
    pub failure_negatives: usize,
    pub perturb_negatives: usize,
    pub cross_task_negatives: usize,
    /// Instruction-free pages pad each group up to this size; 0 adds none.
    pub pages_per_query: usize,
    /// Chance that a positive's last step is reworded beyond recognition.
    pub noisy_positive_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            generated_apps: 100,
            tasks_per_app: 4,
            positives_per_task: 1,
            swap_positives: 1,
            failure_negatives: 2,
            perturb_negatives: 2,
            cross_task_negatives: 3,
            pages_per_query: 20,
            noisy_positive_rate: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageKind {
    Positive,
    SwapPositive,
    FailureNegative,
    PerturbNegative,
    CrossTaskNegative,
    Filler,
}

impl PageKind {
    pub const ALL: [PageKind; 6] = [
        PageKind::Positive,
        PageKind::SwapPositive,
        PageKind::FailureNegative,
        PageKind::PerturbNegative,
        PageKind::CrossTaskNegative,
        PageKind::Filler,
    ];

    pub fn label(self) -> u8 {
        u8::from(matches!(self, PageKind::Positive | PageKind::SwapPositive))
    }

    pub fn name(self) -> &'static str {
        match self {
            PageKind::Positive => "positive",
            PageKind::SwapPositive => "swap_positive",
            PageKind::FailureNegative => "failure_negative",
            PageKind::PerturbNegative => "perturb_negative",
            PageKind::CrossTaskNegative => "cross_task_negative",
            PageKind::Filler => "filler",
        }
    }
}

/// One generated page before it is written out.
#[derive(Debug, Clone)]
pub struct SynthPage {
    pub page_id: String,
    pub kind: PageKind,
    pub title: String,
    pub instructions: Vec<String>,
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, Default)]
pub struct SynthDataset {
    pub corpus: CorpusBundle,
    pub trajectories: BTreeMap<String, Trajectory>,
    pub records: Vec<FeatureRecord>,
    pub kinds: BTreeMap<String, PageKind>,
}

impl SynthDataset {
    pub fn count(&self, kind: PageKind) -> usize {
        self.kinds.values().filter(|&&k| k == kind).count()
    }

    pub fn positives(&self) -> usize {
        self.kinds.values().filter(|k| k.label() == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.kinds.len() - self.positives()
    }

    /// Page totals per kind followed by the positive and negative totals.
    pub fn summary_tsv(&self) -> String {
        let mut out = String::from("kind\tpages\n");
        for k in PageKind::ALL {
            let _ = writeln!(out, "{}\t{}", k.name(), self.count(k));
        }
        let _ = writeln!(out, "positives\t{}\nnegatives\t{}", self.positives(), self.negatives());
        out
    }

    /// Keeps only the listed queries.
    pub fn subset(&self, query_ids: &[String]) -> SynthDataset {
        let keep: std::collections::BTreeSet<&str> = query_ids.iter().map(String::as_str).collect();
        let pages: Vec<PageRecord> =
            self.corpus.pages.iter().filter(|p| keep.contains(p.query_id.as_str())).cloned().collect();
        let page_ids: std::collections::BTreeSet<&str> = pages.iter().map(|p| p.page_id.as_str()).collect();
        SynthDataset {
            corpus: CorpusBundle {
                queries: self.corpus.queries.iter().filter(|q| keep.contains(q.query_id.as_str())).cloned().collect(),
                pages: pages.clone(),
                metadata: self.corpus.metadata.clone(),
            },
            trajectories: self
                .trajectories
                .iter()
                .filter(|(k, _)| page_ids.contains(k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            records: self.records.iter().filter(|r| keep.contains(r.query_id.as_str())).cloned().collect(),
            kinds: self
                .kinds
                .iter()
                .filter(|(k, _)| page_ids.contains(k.as_str()))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }
}

const CLICK_TEMPLATES: [&str; 4] = ["Tap {}", "Select {}", "Open {}", "Choose {}"];
const TOGGLE_TEMPLATES: [&str; 3] = ["Turn on {}", "Switch on {}", "Enable {}"];
const BAIT_CONTROLS: [&str; 6] =
    ["Labs", "Experimental features", "Legacy mode", "Classic view", "Beta program", "Developer tools"];
const FILLER_TITLES: [&str; 5] = [
    "{app} review",
    "Top ten {domain} apps this year",
    "{app} release notes",
    "Is {app} worth it?",
    "{app} pricing plans",
];

fn fill(template: &str, value: &str) -> String {
    template.replacen("{}", value, 1)
}

/// Template summary of a demonstration, one instruction per demo step.
/// Scrolls are left out, as written guides usually do.
pub fn summarize_demo(task: &Task, style: usize) -> Vec<String> {
    task.demo
        .iter()
        .filter(|d| d.action != TransitionAction::Swipe)
        .enumerate()
        .map(|(i, d)| match d.action {
            TransitionAction::Toggle => fill(TOGGLE_TEMPLATES[(style + i) % TOGGLE_TEMPLATES.len()], &d.label),
            TransitionAction::Input => {
                let key = task.aux_context.keys().next().cloned().unwrap_or_else(|| d.label.to_lowercase());
                match style % 3 {
                    0 => format!("Enter your {key} in the {} field", d.label),
                    1 => format!("Type your {key} into {}", d.label),
                    _ => format!("Fill in {} with your {key}", d.label),
                }
            }
            TransitionAction::Click | TransitionAction::Swipe => {
                fill(CLICK_TEMPLATES[(style + i) % CLICK_TEMPLATES.len()], &d.label)
            }
        })
        .collect()
}

pub fn query_text(task: &Task, app: &AppScript) -> String {
    format!("how to {} in {}", task.intent, app.app_name)
}

fn title_for(task: &Task, app: &AppScript, style: usize) -> String {
    let mut intent = task.intent.clone();
    if let Some(first) = intent.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    match style % 3 {
        0 => format!("How to {} in {}", task.intent, app.app_name),
        1 => format!("{}: {intent}", app.app_name),
        _ => format!("{intent} on {} - step by step", app.app_name),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn page_html(title: &str, instructions: &[String]) -> String {
    let mut html = format!("<html><head><title>{0}</title></head><body><h1>{0}</h1>", escape(title));
    if instructions.is_empty() {
        html.push_str("<p>Opinions, screenshots and pricing details. No walkthrough here.</p>");
    } else {
        html.push_str("<ol>");
        for s in instructions {
            let _ = write!(html, "<li>{}</li>", escape(s));
        }
        html.push_str("</ol>");
    }
    html.push_str("</body></html>");
    html
}

fn execute(
    page_id: &str,
    query_id: &str,
    steps: &[String],
    aux: &BTreeMap<String, String>,
    app: &AppScript,
) -> Result<Trajectory, EvalError> {
    run_steps(page_id, query_id, steps, aux, app, &mut LexicalPredictor::default(), &ExecutionLimits::default())
        .map_err(|e| EvalError::Synth(format!("{page_id}: {e}")))
}

/// Removes or misdirects one step-driven action of a trajectory.
pub fn perturb_trajectory(source: &Trajectory, page_id: &str, rng: &mut ChaCha8Rng) -> Trajectory {
    let mut t = source.clone();
    t.page_id = page_id.to_string();
    let driven: Vec<usize> =
        (0..t.steps.len()).filter(|&i| t.steps[i].status.is_applied() && t.steps[i].confidence > 0.0).collect();
    if let Some(&i) = driven.choose(rng) {
        let step = &t.steps[i];
        let other = step.snapshot.distilled_controls.iter().find(|c| Some(&c.label) != step.acted_label.as_ref());
        match other {
            Some(control) if rng.random::<bool>() => {
                let control = control.clone();
                let step = &mut t.steps[i];
                step.action = ActionRequest::click(&control);
                step.acted_label = None;
                step.status = ActionStatus::Rejected;
            }
            _ => {
                t.steps.remove(i);
            }
        }
    }
    for (n, s) in t.steps.iter_mut().enumerate() {
        s.wall_time_ms = (n as u64 + 1) * 400;
    }
    t.step_count = t.steps.len();
    t.termination = Termination::Stuck;
    t
}

struct TaskRef<'a> {
    app: &'a AppScript,
    task: &'a Task,
}

fn collect_apps(scripts: &[AppScript], cfg: &SynthConfig) -> Vec<AppScript> {
    let mut apps = scripts.to_vec();
    let per_app = if cfg.tasks_per_app == 0 { 6 } else { cfg.tasks_per_app };
    apps.extend((0..cfg.generated_apps).map(|i| generate_app(i, per_app, cfg.seed)));
    if cfg.tasks_per_app > 0 {
        apps.iter_mut().for_each(|a| a.tasks.truncate(cfg.tasks_per_app));
    }
    apps
}

/// Generates the labelled corpus, trajectories and feature records.
pub fn generate_synthetic_dataset(scripts: &[AppScript], cfg: &SynthConfig) -> Result<SynthDataset, EvalError> {
    if !(0.0..=1.0).contains(&cfg.noisy_positive_rate) {
        return Err(EvalError::Synth(format!("noisy_positive_rate {} is outside [0, 1]", cfg.noisy_positive_rate)));
    }
    let apps = collect_apps(scripts, cfg);
    let tasks: Vec<TaskRef> =
        apps.iter().flat_map(|app| app.tasks.iter().map(move |task| TaskRef { app, task })).collect();
    let relevance = OverlapRelevanceJudge;
    let completion = AttributionJudge;
    let judges = Judges { relevance: &relevance, completion: &completion };
    let lexicon = KeywordLexicon::default();
    let mut ds = SynthDataset::default();
    ds.corpus.metadata.insert("generator".into(), "synthetic".into());
    ds.corpus.metadata.insert("seed".into(), cfg.seed.to_string());

    for (qi, tr) in tasks.iter().enumerate() {
        let query_id = format!("syn{qi:04}");
        let query = query_text(tr.task, tr.app);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5157_4e54);
        rng.set_stream(qi as u64);
        let mut pages: Vec<SynthPage> = Vec::new();
        let next_id = |pages: &Vec<SynthPage>| format!("{query_id}-p{:02}", pages.len() + 1);

        let clean = summarize_demo(tr.task, 0);
        let base = execute("base", &query_id, &clean, &tr.task.aux_context, tr.app)?;
        if base.termination != Termination::Completed {
            return Err(EvalError::Synth(format!(
                "demo of {}/{} does not complete ({:?})",
                tr.app.app_name, tr.task.task_id, base.termination
            )));
        }

        for _ in 0..cfg.positives_per_task {
            let id = next_id(&pages);
            let style = rng.random_range(0..12);
            let mut steps = summarize_demo(tr.task, style);
            if rng.random::<f64>() < cfg.noisy_positive_rate {
                if let Some(last) = steps.last_mut() {
                    *last = "Pick the one you want and you are all set".into();
                }
            }
            let trajectory = execute(&id, &query_id, &steps, &tr.task.aux_context, tr.app)?;
            pages.push(SynthPage {
                page_id: id,
                kind: PageKind::Positive,
                title: title_for(tr.task, tr.app, style),
                instructions: steps,
                trajectory: Some(trajectory),
            });
        }

        let siblings: Vec<&TaskRef> =
            tasks.iter().filter(|o| o.app.domain == tr.app.domain && !std::ptr::eq(o.task, tr.task)).collect();
        for _ in 0..cfg.swap_positives {
            let id = next_id(&pages);
            let style = rng.random_range(0..12);
            let steps = summarize_demo(tr.task, style);
            let title = match siblings.choose(&mut rng) {
                Some(o) => query_text(o.task, o.app),
                None => query.clone(),
            };
            let trajectory = execute(&id, &query_id, &steps, &tr.task.aux_context, tr.app)?;
            pages.push(SynthPage {
                page_id: id,
                kind: PageKind::SwapPositive,
                title,
                instructions: steps,
                trajectory: Some(trajectory),
            });
        }

        for _ in 0..cfg.failure_negatives {
            let id = next_id(&pages);
            let style = rng.random_range(0..12);
            let mut steps = summarize_demo(tr.task, style);
            let keep = rng.random_range(1..steps.len().max(2));
            steps.truncate(keep);
            for _ in 0..rng.random_range(1..3) {
                steps
                    .push(fill(CLICK_TEMPLATES[rng.random_range(0..4)], BAIT_CONTROLS.choose(&mut rng).expect("bait")));
            }
            let trajectory = execute(&id, &query_id, &steps, &tr.task.aux_context, tr.app)?;
            pages.push(SynthPage {
                page_id: id,
                kind: PageKind::FailureNegative,
                title: title_for(tr.task, tr.app, style),
                instructions: steps,
                trajectory: Some(trajectory),
            });
        }

        for _ in 0..cfg.perturb_negatives {
            let id = next_id(&pages);
            let style = rng.random_range(0..3);
            let trajectory = perturb_trajectory(&base, &id, &mut rng);
            pages.push(SynthPage {
                page_id: id,
                kind: PageKind::PerturbNegative,
                title: title_for(tr.task, tr.app, style),
                instructions: clean.clone(),
                trajectory: Some(trajectory),
            });
        }

        let same_app: Vec<&Task> = tr.app.tasks.iter().filter(|t| !std::ptr::eq(*t, tr.task)).collect();
        for c in 0..cfg.cross_task_negatives {
            let id = next_id(&pages);
            let style = rng.random_range(0..12);
            let (other_task, other_app) = if same_app.is_empty() {
                match siblings.choose(&mut rng) {
                    Some(o) => (o.task, o.app),
                    None => break,
                }
            } else {
                (same_app[(c + rng.random_range(0..same_app.len())) % same_app.len()], tr.app)
            };
            let steps = summarize_demo(other_task, style);
            let trajectory = execute(&id, &query_id, &steps, &other_task.aux_context, tr.app)?;
            pages.push(SynthPage {
                page_id: id,
                kind: PageKind::CrossTaskNegative,
                title: title_for(other_task, other_app, style),
                instructions: steps,
                trajectory: Some(trajectory),
            });
        }

        while pages.len() < cfg.pages_per_query {
            let id = next_id(&pages);
            let title = FILLER_TITLES
                .choose(&mut rng)
                .expect("titles")
                .replace("{app}", &tr.app.app_name)
                .replace("{domain}", &tr.app.domain.to_lowercase());
            pages.push(SynthPage {
                page_id: id,
                kind: PageKind::Filler,
                title,
                instructions: Vec::new(),
                trajectory: None,
            });
        }

        let mut ranks: Vec<u32> = (1..=pages.len() as u32).collect();
        ranks.shuffle(&mut rng);
        ds.corpus.queries.push(QueryRecord {
            query_id: query_id.clone(),
            text: query.clone(),
            app_domain: tr.app.domain.clone(),
            app_name: tr.app.app_name.clone(),
        });
        for (page, rank) in pages.into_iter().zip(ranks) {
            let features = build_feature_vector(
                &FeatureInputs {
                    query: &query,
                    title: &page.title,
                    instructions: &page.instructions,
                    trajectory: page.trajectory.as_ref(),
                },
                &judges,
                &lexicon,
            )
            .map_err(|e| EvalError::Synth(format!("{}: {e}", page.page_id)))?;
            let has_instructions = !page.instructions.is_empty();
            ds.records.push(FeatureRecord {
                query_id: query_id.clone(),
                page_id: page.page_id.clone(),
                original_rank: rank,
                label: Some(page.kind.label()),
                has_instructions,
                grounding_status: if has_instructions { GroundingStatus::Full } else { GroundingStatus::None },
                applied_actions: page.trajectory.as_ref().map_or(0, Trajectory::applied_actions),
                features,
                relevance_judge: relevance.id().to_string(),
                completion_judge: "builtin-attribution".into(),
            });
            ds.corpus.pages.push(PageRecord {
                page_id: page.page_id.clone(),
                query_id: query_id.clone(),
                url: format!("https://howto.example/{}/{}", query_id, page.page_id),
                original_rank: rank,
                title: page.title.clone(),
                raw_html: page_html(&page.title, &page.instructions),
                label: Some(page.kind.label()),
            });
            ds.kinds.insert(page.page_id.clone(), page.kind);
            if let Some(t) = page.trajectory {
                ds.trajectories.insert(page.page_id, t);
            }
        }
    }
    ds.corpus.check().map_err(|e| EvalError::Synth(e.to_string()))?;
    Ok(ds)
}

/// Query membership of the train, validation and test splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded 80/10/10 split by query. Validation and test each get
/// `round(n / 10)` queries; training keeps the rest. Members are sorted.
pub fn split_queries(query_ids: &[String], seed: u64) -> Splits {
    let mut ids = query_ids.to_vec();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5_9117);
    ids.shuffle(&mut rng);
    let tenth = (ids.len() as f64 / 10.0).round() as usize;
    let mut test = ids.split_off(ids.len() - tenth);
    let mut val = ids.split_off(ids.len() - tenth);
    ids.sort();
    val.sort();
    test.sort();
    Splits { train: ids, val, test }
}

/// Writes `corpus.jsonl`, `features.jsonl`, `kinds.json`, `summary.tsv` and
/// one trajectory file per executed page under `dir`.
pub fn write_dataset(ds: &SynthDataset, dir: &Path) -> Result<(), EvalError> {
    let io = |p: &Path, e: &dyn std::fmt::Display| EvalError::Io(format!("{}: {e}", p.display()));
    let traj_dir = dir.join("trajectories");
    std::fs::create_dir_all(&traj_dir).map_err(|e| io(&traj_dir, &e))?;
    save_corpus(&ds.corpus, dir.join("corpus.jsonl")).map_err(|e| io(dir, &e))?;
    let features = dir.join("features.jsonl");
    write_feature_records(&features, &ds.records).map_err(|e| io(&features, &e))?;
    for (page_id, t) in &ds.trajectories {
        let p = traj_dir.join(format!("{page_id}.json"));
        crate::agent::write_trajectory(&p, t).map_err(|e| io(&p, &e))?;
    }
    let kinds = dir.join("kinds.json");
    let text = serde_json::to_string_pretty(&ds.kinds).expect("kinds serialize") + "\n";
    std::fs::write(&kinds, text).map_err(|e| io(&kinds, &e))?;
    let summary = dir.join("summary.tsv");
    std::fs::write(&summary, ds.summary_tsv()).map_err(|e| io(&summary, &e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::judge_completion;
    use crate::simenv::testkit::settings;

    fn small() -> SynthConfig {
        SynthConfig {
            generated_apps: 2,
            tasks_per_app: 2,
            positives_per_task: 1,
            swap_positives: 0,
            failure_negatives: 0,
            perturb_negatives: 1,
            cross_task_negatives: 0,
            pages_per_query: 0,
            noisy_positive_rate: 0.0,
            seed: 3,
        }
    }

    #[test]
    fn count_arithmetic() {
        let ds = generate_synthetic_dataset(&[], &small()).unwrap();
        assert_eq!(ds.corpus.queries.len(), 4);
        assert_eq!((ds.positives(), ds.negatives()), (4, 4));
        assert!(ds.summary_tsv().ends_with("positives\t4\nnegatives\t4\n"));
    }

    #[test]
    fn perturbed_pages_lose_completion() {
        let ds = generate_synthetic_dataset(&[], &small()).unwrap();
        for q in &ds.corpus.queries {
            let recs: Vec<&FeatureRecord> = ds.records.iter().filter(|r| r.query_id == q.query_id).collect();
            let pos = recs.iter().find(|r| ds.kinds[&r.page_id] == PageKind::Positive).unwrap();
            let neg = recs.iter().find(|r| ds.kinds[&r.page_id] == PageKind::PerturbNegative).unwrap();
            assert_eq!(neg.label, Some(0));
            assert_eq!(pos.features.completion(), 1.0);
            assert!(neg.features.completion() < pos.features.completion());
        }
    }

    #[test]
    fn deletion_lowers_attribution() {
        let app = settings();
        let task = &app.tasks[0];
        let steps = summarize_demo(task, 0);
        let base = execute("b", "q", &steps, &task.aux_context, &app).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = perturb_trajectory(&base, "x", &mut rng);
            assert!(judge_completion(&t, steps.len()) < judge_completion(&base, steps.len()));
        }
    }

    #[test]
    fn same_seed_same_bytes_and_full_groups() {
        let cfg = SynthConfig { generated_apps: 3, seed: 9, ..SynthConfig::default() };
        let a = generate_synthetic_dataset(&[settings()], &cfg).unwrap();
        let b = generate_synthetic_dataset(&[settings()], &cfg).unwrap();
        let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_dataset(&a, da.path()).unwrap();
        write_dataset(&b, db.path()).unwrap();
        for f in ["corpus.jsonl", "features.jsonl", "kinds.json", "summary.tsv"] {
            assert_eq!(std::fs::read(da.path().join(f)).unwrap(), std::fs::read(db.path().join(f)).unwrap(), "{f}");
        }
        assert_eq!(a.corpus.queries.len(), 13);
        for q in &a.corpus.queries {
            assert_eq!(a.corpus.pages_for(&q.query_id).len(), 20);
        }
    }

    #[test]
    fn split_rule() {
        let ids: Vec<String> = (0..47).map(|i| format!("q{i:02}")).collect();
        let s = split_queries(&ids, 4);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (37, 5, 5));
        assert_eq!(s, split_queries(&ids, 4));
        let mut all: Vec<String> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
        all.sort();
        assert_eq!(all, ids);
    }
}
