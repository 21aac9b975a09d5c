//! Instruction execution on the simulator.
//!
//! [`run_execution`] repeatedly shows the current screen to a [`Predictor`],
//! applies the action it picks and records everything in a [`Trajectory`].

mod lexical;
mod trajectory;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexical::{label_match, step_terms, LexicalPredictor, DEFAULT_MATCH_THRESHOLD};
pub use trajectory::{
    read_trajectory, write_execution_index, write_trajectory, ExecutionIndex, IndexEntry, StateSnapshot, Termination,
    Trajectory, TrajectoryStep,
};

use crate::extract::{GroundedInstructions, GroundingStatus};
use crate::simenv::{
    apply_action, candidate_actions, distill_controls, ActionKind, ActionRequest, ActionSet, ActionStatus, AppScript,
    DistilledControl, SimError, UiState,
};

/// Simulated time charged per action.
const ACTION_LATENCY_MS: u64 = 400;

/// Predictor transport failures are retried this many times.
const PREDICT_RETRIES: usize = 2;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("predictor transport failure: {message}")]
    Transport { message: String, retryable: bool },
    #[error("predicted action {0:?} is not among the candidates")]
    OffCandidate(ActionRequest),
    #[error("attributed step {step} is out of range for {len} instructions")]
    BadAttribution { step: usize, len: usize },
}

#[derive(Debug, Error)]
pub enum ExecutionError {
    #[error("page has no grounded instructions")]
    NotGrounded,
    #[error(transparent)]
    Simulator(#[from] SimError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutionLimits {
    pub max_steps: usize,
    pub per_action_timeout_ms: u64,
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        Self { max_steps: 28, per_action_timeout_ms: 30_000 }
    }
}

/// What the predictor sees of the current screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiContext {
    pub app_name: String,
    pub screen_id: String,
    pub controls: Vec<DistilledControl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorInput {
    pub ui_context: UiContext,
    pub prior_states: Vec<StateSnapshot>,
    /// "<action> <control label>" for every earlier step.
    pub prior_actions: Vec<String>,
    pub candidates: ActionSet,
    pub aux_context: BTreeMap<String, String>,
    pub instructions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedAction {
    pub action: ActionRequest,
    pub attributed_step: usize,
    pub confidence: f64,
}

pub trait Predictor: Send {
    fn id(&self) -> &str;

    /// Clears per-execution state before a new run.
    fn reset(&mut self) {}

    /// `None` means the predictor cannot determine a next action.
    fn predict(&mut self, input: &PredictorInput) -> Result<Option<PredictedAction>, PredictorError>;

    /// Outcome of the last predicted action.
    fn feedback(&mut self, _predicted: &PredictedAction, _status: ActionStatus) {}
}

/// Recorded history of one execution so far.
#[derive(Debug, Clone, Default)]
pub struct History {
    pub states: Vec<StateSnapshot>,
    pub actions: Vec<String>,
}

pub fn build_predictor_input(
    state: &UiState,
    app_name: &str,
    history: &History,
    instructions: &[String],
    aux_context: &BTreeMap<String, String>,
) -> PredictorInput {
    debug_assert_eq!(history.states.len(), history.actions.len());
    let controls = distill_controls(&state.root);
    let candidates = candidate_actions(&controls, state);
    PredictorInput {
        ui_context: UiContext { app_name: app_name.to_string(), screen_id: state.screen_id.clone(), controls },
        prior_states: history.states.clone(),
        prior_actions: history.actions.clone(),
        candidates,
        aux_context: aux_context.clone(),
        instructions: instructions.to_vec(),
    }
}

/// Queries the predictor and enforces that its answer is a legal candidate.
pub fn predict_action(
    input: &PredictorInput,
    predictor: &mut dyn Predictor,
) -> Result<Option<PredictedAction>, PredictorError> {
    let mut attempt = 0;
    let predicted = loop {
        match predictor.predict(input) {
            Err(PredictorError::Transport { retryable: true, .. }) if attempt < PREDICT_RETRIES => attempt += 1,
            other => break other?,
        }
    };
    let Some(p) = predicted else { return Ok(None) };
    if !input.candidates.contains(&p.action) {
        return Err(PredictorError::OffCandidate(p.action));
    }
    let len = input.instructions.len();
    if len > 0 && p.attributed_step >= len {
        return Err(PredictorError::BadAttribution { step: p.attributed_step, len });
    }
    Ok(Some(p))
}

/// Everything needed to execute one page's instructions.
#[derive(Debug, Clone)]
pub struct ExecutionRequest<'a> {
    pub page_id: &'a str,
    pub query_id: &'a str,
    pub instructions: &'a GroundedInstructions,
    pub aux_context: &'a BTreeMap<String, String>,
}

pub fn run_execution(
    request: &ExecutionRequest<'_>,
    script: &AppScript,
    predictor: &mut dyn Predictor,
    limits: &ExecutionLimits,
) -> Result<Trajectory, ExecutionError> {
    if request.instructions.grounding_status == GroundingStatus::None {
        return Err(ExecutionError::NotGrounded);
    }
    let instructions = request.instructions.texts();
    run_steps(request.page_id, request.query_id, &instructions, request.aux_context, script, predictor, limits)
}

/// The execution loop over plain instruction texts.
pub fn run_steps(
    page_id: &str,
    query_id: &str,
    instructions: &[String],
    aux_context: &BTreeMap<String, String>,
    script: &AppScript,
    predictor: &mut dyn Predictor,
    limits: &ExecutionLimits,
) -> Result<Trajectory, ExecutionError> {
    predictor.reset();
    let mut state = UiState::initial(script);
    let mut history = History::default();
    let mut steps: Vec<TrajectoryStep> = Vec::new();
    let mut rejections = 0;
    let termination = loop {
        let input = build_predictor_input(&state, &script.app_name, &history, instructions, aux_context);
        let Some(predicted) = predict_action(&input, predictor)? else {
            break Termination::Stuck;
        };
        if predicted.action.kind == ActionKind::Done {
            break Termination::Completed;
        }
        if steps.len() >= limits.max_steps {
            break Termination::MaxSteps;
        }
        let result = apply_action(&state, &predicted.action, script)?;
        predictor.feedback(&predicted, result.status);
        let snapshot = StateSnapshot::capture(&state, input.ui_context.controls);
        let step = TrajectoryStep {
            snapshot: snapshot.clone(),
            action: predicted.action,
            acted_label: result.resolved_label,
            attributed_step: predicted.attributed_step,
            confidence: predicted.confidence,
            status: result.status,
            wall_time_ms: (steps.len() as u64 + 1) * ACTION_LATENCY_MS,
        };
        history.states.push(snapshot);
        history.actions.push(step.description());
        steps.push(step);
        if result.status == ActionStatus::Rejected {
            rejections += 1;
            if rejections >= 2 {
                break Termination::Stuck;
            }
        } else {
            rejections = 0;
            state = result.new_state;
        }
    };
    Ok(Trajectory {
        page_id: page_id.to_string(),
        query_id: query_id.to_string(),
        termination,
        step_count: steps.len(),
        steps,
    })
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge transport failure: {0}")]
    Transport(String),
}

/// Scores how much of an instruction list a trajectory carried out.
pub trait CompletionJudge: Send + Sync {
    fn id(&self) -> &str;
    fn judge(&self, trajectory: &Trajectory, instructions: &[String]) -> Result<f64, JudgeError>;
}

/// Fraction of steps that at least one applied, step-driven action was
/// attributed to, rounded to two decimals. Exploratory actions (swipes the
/// predictor issues with zero confidence) carry no attribution.
#[derive(Debug, Clone, Copy, Default)]
pub struct AttributionJudge;

impl CompletionJudge for AttributionJudge {
    fn id(&self) -> &str {
        "builtin-attribution"
    }

    fn judge(&self, trajectory: &Trajectory, instructions: &[String]) -> Result<f64, JudgeError> {
        Ok(judge_completion(trajectory, instructions.len()))
    }
}

pub fn judge_completion(trajectory: &Trajectory, instruction_count: usize) -> f64 {
    if instruction_count == 0 {
        return 0.0;
    }
    let attributed: std::collections::BTreeSet<usize> = trajectory
        .steps
        .iter()
        .filter(|s| s.status.is_applied() && s.confidence > 0.0 && s.attributed_step < instruction_count)
        .map(|s| s.attributed_step)
        .collect();
    let ratio = attributed.len() as f64 / instruction_count as f64;
    (ratio * 100.0).round() / 100.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simenv::testkit::settings;

    fn grounded(steps: &[&str]) -> GroundedInstructions {
        GroundedInstructions::ungrounded(&steps.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    }

    fn run(steps: &[&str], aux: &BTreeMap<String, String>, script: &AppScript) -> Trajectory {
        let g = grounded(steps);
        let req = ExecutionRequest { page_id: "p", query_id: "q", instructions: &g, aux_context: aux };
        run_execution(&req, script, &mut LexicalPredictor::default(), &ExecutionLimits::default()).unwrap()
    }

    #[test]
    fn predictor_input_history() {
        let s = settings();
        let state = UiState::initial(&s);
        let aux = BTreeMap::from([("username".to_string(), "u".to_string())]);
        let mut h = History::default();
        let first = build_predictor_input(&state, "Settings", &h, &["Tap Sound".into()], &aux);
        assert!(first.prior_states.is_empty() && first.prior_actions.is_empty());
        assert_eq!(first.aux_context, aux);
        for _ in 0..2 {
            h.states.push(StateSnapshot::capture(&state, distill_controls(&state.root)));
            h.actions.push("click Sound".into());
        }
        let third = build_predictor_input(&state, "Settings", &h, &["Tap Sound".into()], &aux);
        assert_eq!((third.prior_states.len(), third.prior_actions.len()), (2, 2));
    }

    #[test]
    fn lexical_predictor_clicks_matching_control() {
        let s = settings();
        let state = UiState::initial(&s);
        let input =
            build_predictor_input(&state, "Settings", &History::default(), &["Tap Sound".into()], &BTreeMap::new());
        let p = predict_action(&input, &mut LexicalPredictor::default()).unwrap().unwrap();
        assert_eq!(p.action.kind, ActionKind::Click);
        assert_eq!(p.action.control_label.as_deref(), Some("Sound Volume, vibration"));
        assert_eq!(p.attributed_step, 0);
    }

    #[test]
    fn lexical_predictor_enters_aux_value() {
        let s = settings();
        let sound = UiState {
            screen_id: "sound".into(),
            root: s.screen("sound").unwrap().root.clone(),
            ..UiState::initial(&s)
        };
        let aux = BTreeMap::from([("name".to_string(), "Pixel".to_string())]);
        let input =
            build_predictor_input(&sound, "Settings", &History::default(), &["Enter the device name".into()], &aux);
        let p = predict_action(&input, &mut LexicalPredictor::default()).unwrap().unwrap();
        assert_eq!(p.action.kind, ActionKind::Input);
        assert_eq!(p.action.text_value.as_deref(), Some("Pixel"));
    }

    #[test]
    fn no_overlap_on_static_screen_means_none() {
        let s = settings();
        let sound = UiState {
            screen_id: "sound".into(),
            root: s.screen("sound").unwrap().root.clone(),
            ..UiState::initial(&s)
        };
        let input =
            build_predictor_input(&sound, "Settings", &History::default(), &["Tap Bluetooth".into()], &BTreeMap::new());
        assert!(predict_action(&input, &mut LexicalPredictor::default()).unwrap().is_none());
    }

    struct Rogue;
    impl Predictor for Rogue {
        fn id(&self) -> &str {
            "rogue"
        }
        fn predict(&mut self, _: &PredictorInput) -> Result<Option<PredictedAction>, PredictorError> {
            Ok(Some(PredictedAction {
                action: ActionRequest::swipe(crate::simenv::Direction::Up),
                attributed_step: 0,
                confidence: 1.0,
            }))
        }
    }

    #[test]
    fn off_candidate_predictions_are_refused() {
        let s = settings();
        let sound = UiState {
            screen_id: "sound".into(),
            root: s.screen("sound").unwrap().root.clone(),
            ..UiState::initial(&s)
        };
        let input = build_predictor_input(&sound, "Settings", &History::default(), &["x".into()], &BTreeMap::new());
        assert!(matches!(predict_action(&input, &mut Rogue), Err(PredictorError::OffCandidate(_))));
    }

    #[test]
    fn scripted_task_completes() {
        let t = run(&["Tap Sound", "Tap Ringtone", "Choose Chime"], &BTreeMap::new(), &settings());
        assert_eq!(t.termination, Termination::Completed);
        assert_eq!(t.step_count, 3);
        assert_eq!(judge_completion(&t, 3), 1.0);
        assert_eq!(t.steps[2].snapshot.screen_id, "ringtone");
    }

    #[test]
    fn absent_control_gets_stuck() {
        // home scrolls: one swipe, then nothing left to try
        let t = run(&["Tap Bluetooth"], &BTreeMap::new(), &settings());
        assert_eq!(t.termination, Termination::Stuck);
        assert_eq!(t.step_count, 1);
        assert_eq!(judge_completion(&t, 1), 0.0);
    }

    #[test]
    fn judge_ratios() {
        let t = run(&["Tap Sound", "Tap Ringtone", "Tap Bluetooth", "Tap Wallpaper"], &BTreeMap::new(), &settings());
        assert_eq!(judge_completion(&t, 4), 0.5);
        let empty = Trajectory {
            page_id: "p".into(),
            query_id: "q".into(),
            termination: Termination::Stuck,
            step_count: 0,
            steps: vec![],
        };
        assert_eq!(judge_completion(&empty, 4), 0.0);
    }

    #[test]
    fn replay_is_byte_identical() {
        let a = serde_json::to_string(&run(&["Tap Sound", "Tap Ringtone"], &BTreeMap::new(), &settings())).unwrap();
        let b = serde_json::to_string(&run(&["Tap Sound", "Tap Ringtone"], &BTreeMap::new(), &settings())).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ungrounded_pages_do_not_run() {
        let g = GroundedInstructions { steps: vec![], grounding_status: GroundingStatus::None };
        let aux = BTreeMap::new();
        let req = ExecutionRequest { page_id: "p", query_id: "q", instructions: &g, aux_context: &aux };
        let err = run_execution(&req, &settings(), &mut LexicalPredictor::default(), &ExecutionLimits::default());
        assert!(matches!(err, Err(ExecutionError::NotGrounded)));
    }
}
