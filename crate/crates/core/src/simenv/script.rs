//! App scripts: screens, transitions and demonstration tasks.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot read app script {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("app script {location}: {message}")]
    Schema { location: String, message: String },
    #[error("malformed action request: {0}")]
    MalformedRequest(String),
    #[error("unknown screen `{0}`")]
    UnknownScreen(String),
}

fn schema(location: impl Into<String>, message: impl Into<String>) -> SimError {
    SimError::Schema { location: location.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bounds {
    pub left: i32,
    pub top: i32,
    pub right: i32,
    pub bottom: i32,
}

impl Bounds {
    pub const SCREEN: Bounds = Bounds { left: 0, top: 0, right: 1080, bottom: 2400 };

    pub fn contains(&self, other: &Bounds) -> bool {
        other.left >= self.left && other.top >= self.top && other.right <= self.right && other.bottom <= self.bottom
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub region_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_desc: Option<String>,
    #[serde(default = "yes")]
    pub visible: bool,
    #[serde(default)]
    pub actionable: bool,
    #[serde(default)]
    pub scrollable: bool,
    #[serde(default)]
    pub editable: bool,
    /// A switch-like control that only supports toggling.
    #[serde(default)]
    pub checkable: bool,
    /// Missing bounds inherit the parent's rectangle when the script loads.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Bounds>,
    #[serde(default)]
    pub children: Vec<Region>,
}

impl Region {
    /// Text shown to the user: `text`, falling back to `content_desc`.
    pub fn display_text(&self) -> Option<&str> {
        [self.text.as_deref(), self.content_desc.as_deref()]
            .into_iter()
            .flatten()
            .map(str::trim)
            .find(|t| !t.is_empty())
    }

    pub fn iter(&self) -> RegionIter<'_> {
        RegionIter { stack: vec![self] }
    }
}

/// Pre-order traversal over a region tree.
pub struct RegionIter<'a> {
    stack: Vec<&'a Region>,
}

impl<'a> Iterator for RegionIter<'a> {
    type Item = &'a Region;

    fn next(&mut self) -> Option<&'a Region> {
        let r = self.stack.pop()?;
        self.stack.extend(r.children.iter().rev());
        Some(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Screen {
    pub screen_id: String,
    pub root: Region,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionAction {
    Click,
    Input,
    Toggle,
    Swipe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: String,
    /// Case-insensitive regular expression that must match the whole control
    /// label (for swipes: the direction, `up` or `down`).
    pub control_label_pattern: String,
    pub action: TransitionAction,
    pub to: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub effects: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoStep {
    pub action: TransitionAction,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

/// A task the app supports, with a demonstration that solves it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    /// Verb phrase such as "change the ringtone".
    pub intent: String,
    pub goal_screen: String,
    #[serde(default)]
    pub aux_context: BTreeMap<String, String>,
    pub demo: Vec<DemoStep>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppScript {
    pub app_name: String,
    pub domain: String,
    pub initial_screen: String,
    pub screens: Vec<Screen>,
    pub transitions: Vec<Transition>,
    #[serde(default)]
    pub tasks: Vec<Task>,
    #[serde(skip)]
    matchers: Vec<Regex>,
    #[serde(skip)]
    screen_index: BTreeMap<String, usize>,
}

impl AppScript {
    /// Parses and validates a script from its JSON text.
    pub fn from_json(text: &str, location: &str) -> Result<Self, SimError> {
        let script: AppScript = serde_json::from_str(text)
            .map_err(|e| schema(format!("{location}:{}:{}", e.line(), e.column()), e.to_string()))?;
        script.validated(location)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("app scripts always serialize")
    }

    fn validated(mut self, location: &str) -> Result<Self, SimError> {
        for (i, screen) in self.screens.iter_mut().enumerate() {
            if self.screen_index.insert(screen.screen_id.clone(), i).is_some() {
                return Err(schema(location, format!("duplicate screen_id `{}`", screen.screen_id)));
            }
            let mut ids = BTreeSet::new();
            resolve_bounds(&mut screen.root, Bounds::SCREEN, &mut ids)
                .map_err(|m| schema(format!("{location}: screen `{}`", screen.screen_id), m))?;
        }
        if !self.screen_index.contains_key(&self.initial_screen) {
            return Err(schema(location, format!("initial_screen `{}` is not defined", self.initial_screen)));
        }
        for (i, t) in self.transitions.iter().enumerate() {
            for end in [&t.from, &t.to] {
                if !self.screen_index.contains_key(end) {
                    return Err(schema(format!("{location}: transitions[{i}]"), format!("undefined screen `{end}`")));
                }
            }
            let re = RegexBuilder::new(&format!("^(?:{})$", t.control_label_pattern))
                .case_insensitive(true)
                .build()
                .map_err(|e| schema(format!("{location}: transitions[{i}]"), e.to_string()))?;
            self.matchers.push(re);
        }
        for task in &self.tasks {
            if !self.screen_index.contains_key(&task.goal_screen) {
                return Err(schema(
                    format!("{location}: task `{}`", task.task_id),
                    format!("undefined goal screen `{}`", task.goal_screen),
                ));
            }
        }
        Ok(self)
    }

    pub fn screen(&self, screen_id: &str) -> Option<&Screen> {
        self.screen_index.get(screen_id).map(|&i| &self.screens[i])
    }

    /// First transition out of `from` for `action` whose pattern matches `label`.
    pub fn find_transition(&self, from: &str, action: TransitionAction, label: &str) -> Option<&Transition> {
        self.transitions
            .iter()
            .zip(&self.matchers)
            .find(|(t, re)| t.from == from && t.action == action && re.is_match(label.trim()))
            .map(|(t, _)| t)
    }

    /// Screens reachable from the initial screen through scripted transitions.
    pub fn reachable_screens(&self) -> BTreeSet<String> {
        let mut seen = BTreeSet::from([self.initial_screen.clone()]);
        let mut frontier = vec![self.initial_screen.clone()];
        while let Some(s) = frontier.pop() {
            for t in self.transitions.iter().filter(|t| t.from == s) {
                if seen.insert(t.to.clone()) {
                    frontier.push(t.to.clone());
                }
            }
        }
        seen
    }

    pub fn task(&self, task_id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }
}

fn resolve_bounds(region: &mut Region, parent: Bounds, ids: &mut BTreeSet<String>) -> Result<(), String> {
    if !ids.insert(region.region_id.clone()) {
        return Err(format!("duplicate region_id `{}`", region.region_id));
    }
    let own = *region.bounds.get_or_insert(parent);
    if !parent.contains(&own) {
        return Err(format!("region `{}` lies outside its parent", region.region_id));
    }
    for child in &mut region.children {
        resolve_bounds(child, own, ids)?;
    }
    Ok(())
}

pub fn load_app_script(path: &Path) -> Result<AppScript, SimError> {
    let text = std::fs::read_to_string(path).map_err(|source| SimError::Read { path: path.to_path_buf(), source })?;
    AppScript::from_json(&text, &path.display().to_string())
}

/// Loads every `*.json` script in a directory, sorted by file name.
pub fn load_app_scripts(dir: &Path) -> Result<Vec<AppScript>, SimError> {
    let entries = std::fs::read_dir(dir).map_err(|source| SimError::Read { path: dir.to_path_buf(), source })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_app_script(p)).collect()
}
