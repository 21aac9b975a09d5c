//! UI state, control distillation and action application.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::script::{AppScript, Region, SimError, TransitionAction};
use crate::text::{overlap, token_set};

/// Maximum number of screens remembered for `back`.
pub const BACK_STACK_LIMIT: usize = 32;

/// Token overlap a substitute control must reach during fallback.
pub const FALLBACK_OVERLAP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UiState {
    pub screen_id: String,
    pub root: Region,
    /// Entered text keyed by region id, toggles as `"on"`/`"off"`, plus
    /// any values written by transition effects.
    pub fields: BTreeMap<String, String>,
    pub back_stack: Vec<String>,
}

impl UiState {
    pub fn initial(script: &AppScript) -> Self {
        let screen = script.screen(&script.initial_screen).expect("validated script");
        Self {
            screen_id: screen.screen_id.clone(),
            root: screen.root.clone(),
            fields: BTreeMap::new(),
            back_stack: Vec::new(),
        }
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.hash(&mut h);
        h.finish()
    }

    /// Display text of every region whose ancestors are all visible.
    pub fn visible_texts(&self) -> Vec<String> {
        let mut out = Vec::new();
        collect_visible(&self.root, &mut out);
        out
    }

    pub fn any_scrollable(&self) -> bool {
        let mut stack = vec![&self.root];
        while let Some(r) = stack.pop() {
            if r.visible {
                if r.scrollable {
                    return true;
                }
                stack.extend(&r.children);
            }
        }
        false
    }
}

fn collect_visible(r: &Region, out: &mut Vec<String>) {
    if !r.visible {
        return;
    }
    if let Some(t) = r.display_text() {
        out.push(t.to_string());
    }
    for c in &r.children {
        collect_visible(c, out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Click,
    Input,
    Swipe,
    Toggle,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DistilledControl {
    pub control_index: usize,
    pub label: String,
    pub actions_supported: Vec<Capability>,
    pub source_region_id: String,
}

impl DistilledControl {
    pub fn supports(&self, c: Capability) -> bool {
        self.actions_supported.contains(&c)
    }

    fn toggle_only(&self) -> bool {
        self.actions_supported == [Capability::Toggle]
    }
}

/// Flattens a region tree into labelled actionable controls, depth first.
///
/// Invisible subtrees are skipped. An actionable region without its own text
/// borrows the texts of its visible, non-actionable descendants, stopping at
/// nested actionable regions (which become controls of their own).
pub fn distill_controls(root: &Region) -> Vec<DistilledControl> {
    let mut out = Vec::new();
    distill_into(root, &mut out);
    out
}

fn distill_into(r: &Region, out: &mut Vec<DistilledControl>) {
    if !r.visible {
        return;
    }
    if r.actionable {
        let label = match r.display_text() {
            Some(t) => t.to_string(),
            None => {
                let mut parts = Vec::new();
                for c in &r.children {
                    borrowed_texts(c, &mut parts);
                }
                parts.join(" ")
            }
        };
        let label = crate::text::normalize_whitespace(&label);
        if !label.is_empty() {
            out.push(DistilledControl {
                control_index: out.len(),
                label,
                actions_supported: capabilities(r),
                source_region_id: r.region_id.clone(),
            });
        }
    }
    for c in &r.children {
        distill_into(c, out);
    }
}

fn borrowed_texts(r: &Region, parts: &mut Vec<String>) {
    if !r.visible || r.actionable {
        return;
    }
    if let Some(t) = r.display_text() {
        parts.push(t.to_string());
    }
    for c in &r.children {
        borrowed_texts(c, parts);
    }
}

fn capabilities(r: &Region) -> Vec<Capability> {
    if r.checkable {
        return vec![Capability::Toggle];
    }
    let mut caps = vec![Capability::Click];
    if r.editable {
        caps.push(Capability::Input);
    }
    if r.scrollable {
        caps.push(Capability::Swipe);
    }
    caps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    Input,
    Swipe,
    Back,
    Done,
}

impl ActionKind {
    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Click => "click",
            ActionKind::Input => "input",
            ActionKind::Swipe => "swipe",
            ActionKind::Back => "back",
            ActionKind::Done => "done",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionRequest {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    /// Label of the control the caller meant; used to find a substitute when
    /// the index is stale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_label: Option<String>,
}

impl ActionRequest {
    fn bare(kind: ActionKind) -> Self {
        Self { kind, control_index: None, text_value: None, direction: None, control_label: None }
    }

    pub fn click(control: &DistilledControl) -> Self {
        Self {
            control_index: Some(control.control_index),
            control_label: Some(control.label.clone()),
            ..Self::bare(ActionKind::Click)
        }
    }

    pub fn input(control: &DistilledControl, text: impl Into<String>) -> Self {
        Self {
            control_index: Some(control.control_index),
            control_label: Some(control.label.clone()),
            text_value: Some(text.into()),
            ..Self::bare(ActionKind::Input)
        }
    }

    pub fn swipe(direction: Direction) -> Self {
        Self { direction: Some(direction), ..Self::bare(ActionKind::Swipe) }
    }

    pub fn back() -> Self {
        Self::bare(ActionKind::Back)
    }

    pub fn done() -> Self {
        Self::bare(ActionKind::Done)
    }

    pub fn check(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::MalformedRequest(format!("{}: {m}", self.kind.name())));
        match self.kind {
            ActionKind::Click if self.control_index.is_none() => bad("missing control_index"),
            ActionKind::Input if self.control_index.is_none() || self.text_value.is_none() => {
                bad("needs control_index and text_value")
            }
            ActionKind::Swipe if self.direction.is_none() => bad("missing direction"),
            _ => Ok(()),
        }
    }
}

/// One entry of the candidate set, identified by kind, control and direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidateAction {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSet {
    pub actions: Vec<CandidateAction>,
}

impl ActionSet {
    pub fn contains(&self, req: &ActionRequest) -> bool {
        self.actions
            .iter()
            .any(|a| a.kind == req.kind && a.control_index == req.control_index && a.direction == req.direction)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn count(&self, kind: ActionKind) -> usize {
        self.actions.iter().filter(|a| a.kind == kind).count()
    }
}

pub fn candidate_actions(controls: &[DistilledControl], state: &UiState) -> ActionSet {
    let mut actions = Vec::new();
    for c in controls {
        actions.push(CandidateAction {
            kind: ActionKind::Click,
            control_index: Some(c.control_index),
            direction: None,
        });
    }
    for c in controls.iter().filter(|c| c.supports(Capability::Input)) {
        actions.push(CandidateAction {
            kind: ActionKind::Input,
            control_index: Some(c.control_index),
            direction: None,
        });
    }
    if state.any_scrollable() {
        for d in [Direction::Up, Direction::Down] {
            actions.push(CandidateAction { kind: ActionKind::Swipe, control_index: None, direction: Some(d) });
        }
    }
    actions.push(CandidateAction { kind: ActionKind::Back, control_index: None, direction: None });
    actions.push(CandidateAction { kind: ActionKind::Done, control_index: None, direction: None });
    ActionSet { actions }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionStatus {
    Applied,
    AppliedViaFallback,
    Rejected,
}

impl ActionStatus {
    pub fn is_applied(self) -> bool {
        self != ActionStatus::Rejected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    pub status: ActionStatus,
    pub new_state: UiState,
    pub note: String,
    /// Label of the control actually acted on, if any.
    pub resolved_label: Option<String>,
}

fn rejected(state: &UiState, note: impl Into<String>) -> ActionResult {
    ActionResult { status: ActionStatus::Rejected, new_state: state.clone(), note: note.into(), resolved_label: None }
}

/// Finds the control a request refers to: the indexed control when it still
/// carries the requested label, otherwise a unique substitute.
fn resolve<'a>(controls: &'a [DistilledControl], req: &ActionRequest) -> Option<(&'a DistilledControl, bool)> {
    let idx = req.control_index?;
    let wanted = req.control_label.as_deref();
    if let Some(c) = controls.get(idx) {
        if wanted.is_none_or(|w| w.eq_ignore_ascii_case(&c.label)) {
            return Some((c, false));
        }
    }
    let wanted = wanted?;
    let exact: Vec<_> = controls.iter().filter(|c| c.label.eq_ignore_ascii_case(wanted)).collect();
    if exact.len() == 1 {
        return Some((exact[0], true));
    }
    let want_tokens = token_set(wanted);
    let close: Vec<_> =
        controls.iter().filter(|c| overlap(&want_tokens, &token_set(&c.label)) >= FALLBACK_OVERLAP).collect();
    (close.len() == 1).then(|| (close[0], true))
}

fn enter(
    state: &UiState,
    to: &str,
    effects: &BTreeMap<String, String>,
    script: &AppScript,
) -> Result<UiState, SimError> {
    let screen = script.screen(to).ok_or_else(|| SimError::UnknownScreen(to.to_string()))?;
    let mut next = state.clone();
    if to != state.screen_id {
        next.back_stack.push(state.screen_id.clone());
        if next.back_stack.len() > BACK_STACK_LIMIT {
            next.back_stack.remove(0);
        }
        next.screen_id = screen.screen_id.clone();
        next.root = screen.root.clone();
    }
    next.fields.extend(effects.iter().map(|(k, v)| (k.clone(), v.clone())));
    Ok(next)
}

/// Applies one action. Rejections leave the state untouched; a malformed
/// request is an error rather than a rejection.
pub fn apply_action(state: &UiState, req: &ActionRequest, script: &AppScript) -> Result<ActionResult, SimError> {
    req.check()?;
    let applied = |status, new_state, note: String, label: Option<String>| ActionResult {
        status,
        new_state,
        note,
        resolved_label: label,
    };
    match req.kind {
        ActionKind::Done => Ok(applied(ActionStatus::Applied, state.clone(), "done".into(), None)),
        ActionKind::Back => {
            let Some(prev) = state.back_stack.last() else {
                return Ok(rejected(state, "back stack is empty"));
            };
            let screen = script.screen(prev).ok_or_else(|| SimError::UnknownScreen(prev.clone()))?;
            let mut next = state.clone();
            next.back_stack.pop();
            next.screen_id = screen.screen_id.clone();
            next.root = screen.root.clone();
            Ok(applied(ActionStatus::Applied, next, format!("back to {}", screen.screen_id), None))
        }
        ActionKind::Swipe => {
            if !state.any_scrollable() {
                return Ok(rejected(state, "nothing to scroll"));
            }
            let dir = req.direction.expect("checked").name();
            let next = match script.find_transition(&state.screen_id, TransitionAction::Swipe, dir) {
                Some(t) => enter(state, &t.to, &t.effects, script)?,
                None => state.clone(),
            };
            Ok(applied(ActionStatus::Applied, next, format!("swipe {dir}"), None))
        }
        ActionKind::Click | ActionKind::Input => {
            let controls = distill_controls(&state.root);
            let Some((control, substituted)) = resolve(&controls, req) else {
                return Ok(rejected(state, "requested control not found"));
            };
            let label = control.label.clone();
            let status = if substituted { ActionStatus::AppliedViaFallback } else { ActionStatus::Applied };
            if req.kind == ActionKind::Input {
                if !control.supports(Capability::Input) {
                    return Ok(rejected(state, format!("`{label}` is not editable")));
                }
                let mut next = state.clone();
                next.fields.insert(control.source_region_id.clone(), req.text_value.clone().expect("checked"));
                if let Some(t) = script.find_transition(&state.screen_id, TransitionAction::Input, &label) {
                    next = enter(&next, &t.to, &t.effects, script)?;
                }
                return Ok(applied(status, next, format!("input into `{label}`"), Some(label)));
            }
            if control.toggle_only() {
                let mut next = state.clone();
                let slot = next.fields.entry(control.source_region_id.clone()).or_insert_with(|| "off".into());
                *slot = if slot == "on" { "off".into() } else { "on".into() };
                if let Some(t) = script.find_transition(&state.screen_id, TransitionAction::Toggle, &label) {
                    next = enter(&next, &t.to, &t.effects, script)?;
                }
                return Ok(applied(ActionStatus::AppliedViaFallback, next, format!("toggled `{label}`"), Some(label)));
            }
            match script.find_transition(&state.screen_id, TransitionAction::Click, &label) {
                Some(t) => {
                    let next = enter(state, &t.to, &t.effects, script)?;
                    Ok(applied(status, next, format!("click `{label}`"), Some(label)))
                }
                None => Ok(rejected(state, format!("click on `{label}` has no effect"))),
            }
        }
    }
}

/// Region ids of every visible, actionable region.
pub fn actionable_ids(root: &Region) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![root];
    while let Some(r) = stack.pop() {
        if r.visible {
            if r.actionable {
                out.insert(r.region_id.clone());
            }
            stack.extend(&r.children);
        }
    }
    out
}
