use std::collections::BTreeSet;

use super::{PredictedAction, Predictor, PredictorError, PredictorInput};
use crate::simenv::{ActionKind, ActionRequest, ActionStatus, Capability, Direction};
use crate::text::{token_set, tokenize};

/// Verbs that describe how to act rather than what to act on. They are left
/// out when matching a step against control labels.
const UI_VERBS: [&str; 14] = [
    "tap", "click", "press", "hit", "touch", "select", "choose", "pick", "open", "go", "navigate", "launch", "find",
    "turn",
];

/// Verbs that signal a text-entry step.
const ENTRY_VERBS: [&str; 6] = ["enter", "type", "input", "write", "fill", "provide"];

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.34;

/// Content tokens of a step: stopwords and interaction verbs removed.
pub fn step_terms(step: &str) -> BTreeSet<String> {
    tokenize(step).into_iter().filter(|t| !UI_VERBS.contains(&t.as_str())).collect()
}

/// Share of a step's content tokens that occur in a control label.
pub fn label_match(step_terms: &BTreeSet<String>, label: &str) -> f64 {
    if step_terms.is_empty() {
        return 0.0;
    }
    let label = token_set(label);
    step_terms.intersection(&label).count() as f64 / step_terms.len() as f64
}

/// A step that only names the app itself, e.g. "Open the Settings app". The
/// execution starts inside the app, so such steps are already satisfied.
fn is_launch_step(step: &str, app_name: &str) -> bool {
    let app: BTreeSet<String> = token_set(app_name);
    let terms: BTreeSet<String> = step_terms(step).into_iter().filter(|t| t != "app" && t != "application").collect();
    !app.is_empty() && !terms.is_empty() && terms.is_subset(&app)
}

/// Deterministic instruction follower driven by token overlap.
///
/// Keeps a cursor on the first unconsumed step. The cursor moves on when an
/// action taken for the step is applied with a match score at or above the
/// threshold; once it passes the last step the predictor answers `done`.
#[derive(Debug, Clone)]
pub struct LexicalPredictor {
    pub threshold: f64,
    cursor: usize,
    pending_score: f64,
    last_swipe: Option<Direction>,
}

impl Default for LexicalPredictor {
    fn default() -> Self {
        Self::new(DEFAULT_MATCH_THRESHOLD)
    }
}

impl LexicalPredictor {
    pub fn new(threshold: f64) -> Self {
        Self { threshold, cursor: 0, pending_score: 0.0, last_swipe: None }
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    fn skip_launch_steps(&mut self, input: &PredictorInput) {
        while input.instructions.get(self.cursor).is_some_and(|s| is_launch_step(s, &input.ui_context.app_name)) {
            self.cursor += 1;
        }
    }
}

impl Predictor for LexicalPredictor {
    fn id(&self) -> &str {
        "builtin-lexical"
    }

    fn reset(&mut self) {
        *self = Self::new(self.threshold);
    }

    fn predict(&mut self, input: &PredictorInput) -> Result<Option<PredictedAction>, PredictorError> {
        self.skip_launch_steps(input);
        let n = input.instructions.len();
        if self.cursor >= n {
            return Ok(Some(PredictedAction {
                action: ActionRequest::done(),
                attributed_step: n.saturating_sub(1),
                confidence: 1.0,
            }));
        }
        let step = &input.instructions[self.cursor];
        let terms = step_terms(step);
        let controls = &input.ui_context.controls;
        let raw: BTreeSet<String> = tokenize(step).into_iter().collect();
        let attributed_step = self.cursor;

        if ENTRY_VERBS.iter().any(|v| raw.contains(*v)) {
            let value = input.aux_context.iter().find(|(k, _)| token_set(k).iter().any(|t| raw.contains(t)));
            if let Some((key, value)) = value {
                let editable = controls
                    .iter()
                    .filter(|c| c.supports(Capability::Input))
                    .map(|c| (c, label_match(&token_set(key), &c.label)))
                    .fold(None, |best: Option<(&_, f64)>, (c, s)| match best {
                        Some((_, b)) if b >= s => best,
                        _ => Some((c, s)),
                    });
                if let Some((control, _)) = editable {
                    let action = ActionRequest::input(control, value.clone());
                    if input.candidates.contains(&action) {
                        self.pending_score = 1.0;
                        return Ok(Some(PredictedAction { action, attributed_step, confidence: 1.0 }));
                    }
                }
            }
        }

        let mut best: Option<(usize, f64)> = None;
        for c in controls {
            let s = label_match(&terms, &c.label);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((c.control_index, s));
            }
        }
        if let Some((i, s)) = best.filter(|&(_, s)| s >= self.threshold) {
            let action = ActionRequest::click(&controls[i]);
            if input.candidates.contains(&action) {
                self.pending_score = s;
                return Ok(Some(PredictedAction { action, attributed_step, confidence: s }));
            }
        }

        let swipe = ActionRequest::swipe(Direction::Down);
        if input.candidates.contains(&swipe) && self.last_swipe != Some(Direction::Down) {
            self.pending_score = 0.0;
            return Ok(Some(PredictedAction { action: swipe, attributed_step, confidence: 0.0 }));
        }
        Ok(None)
    }

    fn feedback(&mut self, predicted: &PredictedAction, status: ActionStatus) {
        self.last_swipe = (predicted.action.kind == ActionKind::Swipe).then_some(predicted.action.direction).flatten();
        if status.is_applied()
            && matches!(predicted.action.kind, ActionKind::Click | ActionKind::Input)
            && self.pending_score >= self.threshold
        {
            self.cursor += 1;
        }
        self.pending_score = 0.0;
    }
}
