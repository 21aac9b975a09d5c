use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::simenv::{ActionKind, ActionRequest, ActionStatus, DistilledControl, UiState};

/// Textual stand-in for a screenshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub screen_id: String,
    pub distilled_controls: Vec<DistilledControl>,
    pub visible_texts: Vec<String>,
}

impl StateSnapshot {
    pub fn capture(state: &UiState, controls: Vec<DistilledControl>) -> Self {
        Self { screen_id: state.screen_id.clone(), distilled_controls: controls, visible_texts: state.visible_texts() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Stuck,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// State before the action.
    #[serde(flatten)]
    pub snapshot: StateSnapshot,
    pub action: ActionRequest,
    /// Label of the control the simulator actually acted on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acted_label: Option<String>,
    pub attributed_step: usize,
    pub confidence: f64,
    pub status: ActionStatus,
    pub wall_time_ms: u64,
}

impl TrajectoryStep {
    /// Action name followed by the chosen control's label (or direction).
    pub fn description(&self) -> String {
        let target = match self.action.kind {
            ActionKind::Swipe => self.action.direction.map(|d| d.name().to_string()),
            _ => self.acted_label.clone().or_else(|| self.action.control_label.clone()),
        };
        match target {
            Some(t) => format!("{} {t}", self.action.kind.name()),
            None => self.action.kind.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub page_id: String,
    pub query_id: String,
    pub termination: Termination,
    pub step_count: usize,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn applied_actions(&self) -> usize {
        self.steps.iter().filter(|s| s.status.is_applied()).count()
    }

    pub fn applied_descriptions(&self) -> Vec<String> {
        self.steps.iter().filter(|s| s.status.is_applied()).map(TrajectoryStep::description).collect()
    }
}

pub fn write_trajectory(path: &Path, trajectory: &Trajectory) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(trajectory).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

pub fn read_trajectory(path: &Path) -> std::io::Result<Trajectory> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub page_id: String,
    pub query_id: String,
    /// Trajectory file relative to the index, absent when execution failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
    pub step_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionIndex {
    pub predictor: String,
    pub max_steps: usize,
    pub executions: Vec<IndexEntry>,
}

pub fn write_execution_index(path: &Path, index: &ExecutionIndex) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(index).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}
