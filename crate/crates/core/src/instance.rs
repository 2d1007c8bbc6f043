//! Dataset items and the JSONL dataset manifest.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FestaError, Result};

/// A single option label, e.g. `A`. Labels compare case-sensitively; parsing
/// normalizes model output onto the declared labels.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub String);

impl Label {
    pub fn new(s: impl Into<String>) -> Self {
        Label(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionChoice {
    pub label: Label,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaKind {
    Image,
    Audio,
    None,
}

/// One annotated sound event inside an audio clip, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSegment {
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
}

impl EventSegment {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaRef {
    pub kind: MediaKind,
    /// Resolved against the manifest directory when relative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventSegment>,
}

impl MediaRef {
    pub fn none() -> Self {
        MediaRef {
            kind: MediaKind::None,
            path: None,
            events: Vec::new(),
        }
    }
}

/// The reasoning task an item exercises. Audio complementary transforms are
/// chosen by this tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskTag {
    Spatial,
    Order,
    Duration,
    Count,
    #[default]
    Generic,
}

/// One multiple-choice item: media, question, labeled options and ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqInstance {
    pub id: String,
    pub question: String,
    pub options: Vec<OptionChoice>,
    pub target_label: Label,
    pub media: MediaRef,
    pub task_tag: TaskTag,
}

impl McqInstance {
    pub fn labels(&self) -> Vec<Label> {
        self.options.iter().map(|o| o.label.clone()).collect()
    }

    pub fn has_label(&self, label: &Label) -> bool {
        self.options.iter().any(|o| &o.label == label)
    }

    /// Checks the structural invariants every instance must satisfy.
    pub fn validate(&self) -> Result<()> {
        let n = self.options.len();
        if !(2..=26).contains(&n) {
            return Err(FestaError::Input(format!(
                "instance {}: expected 2..=26 options, got {n}",
                self.id
            )));
        }
        let mut seen = HashSet::new();
        for opt in &self.options {
            let l = opt.label.as_str();
            if l.is_empty() || l.chars().any(char::is_whitespace) {
                return Err(FestaError::Input(format!(
                    "instance {}: option label {l:?} must be a single non-empty token",
                    self.id
                )));
            }
            if !seen.insert(l.to_ascii_uppercase()) {
                return Err(FestaError::Input(format!(
                    "instance {}: duplicate option label {l:?}",
                    self.id
                )));
            }
        }
        if !self.has_label(&self.target_label) {
            return Err(FestaError::Input(format!(
                "instance {}: answer {} is not an option label",
                self.id, self.target_label
            )));
        }
        let mut prev_end = f64::NEG_INFINITY;
        for ev in &self.media.events {
            if !(ev.start_s.is_finite() && ev.end_s.is_finite()) || ev.start_s < 0.0 || ev.end_s <= ev.start_s {
                return Err(FestaError::Input(format!(
                    "instance {}: malformed event segment {:?}",
                    self.id, ev
                )));
            }
            if ev.start_s < prev_end {
                return Err(FestaError::Input(format!(
                    "instance {}: event segments must be sorted and non-overlapping",
                    self.id
                )));
            }
            prev_end = ev.end_s;
        }
        if self.media.kind != MediaKind::None && self.media.path.is_none() {
            return Err(FestaError::Input(format!(
                "instance {}: media kind {:?} requires a path",
                self.id, self.media.kind
            )));
        }
        Ok(())
    }
}

/// Wire form of one manifest line.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    question: String,
    options: Vec<OptionChoice>,
    answer: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    media: Option<ManifestMedia>,
    #[serde(default)]
    task: TaskTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    events: Option<Vec<EventSegment>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestMedia {
    kind: MediaKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    path: Option<PathBuf>,
}

impl From<ManifestRow> for McqInstance {
    fn from(row: ManifestRow) -> Self {
        let media = match row.media {
            Some(m) => MediaRef {
                kind: m.kind,
                path: m.path,
                events: row.events.unwrap_or_default(),
            },
            None => MediaRef {
                events: row.events.unwrap_or_default(),
                ..MediaRef::none()
            },
        };
        McqInstance {
            id: row.id,
            question: row.question,
            options: row.options,
            target_label: row.answer,
            media,
            task_tag: row.task,
        }
    }
}

impl From<&McqInstance> for ManifestRow {
    fn from(inst: &McqInstance) -> Self {
        ManifestRow {
            id: inst.id.clone(),
            question: inst.question.clone(),
            options: inst.options.clone(),
            answer: inst.target_label.clone(),
            media: (inst.media.kind != MediaKind::None || inst.media.path.is_some()).then(|| ManifestMedia {
                kind: inst.media.kind,
                path: inst.media.path.clone(),
            }),
            task: inst.task_tag,
            events: (!inst.media.events.is_empty()).then(|| inst.media.events.clone()),
        }
    }
}

/// A loaded dataset. Media paths are resolved to absolute-or-cwd-relative
/// paths against the manifest's directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub instances: Vec<McqInstance>,
    pub root: PathBuf,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut instances = parse_manifest(&text)?;
        for inst in &mut instances {
            if let Some(p) = inst.media.path.as_mut() {
                if p.is_relative() {
                    *p = root.join(&*p);
                }
            }
        }
        Ok(Dataset { instances, root })
    }

    pub fn get(&self, id: &str) -> Option<&McqInstance> {
        self.instances.iter().find(|i| i.id == id)
    }
}

/// Parses manifest JSONL. Blank lines are skipped; any schema violation is
/// reported with its 1-based line number.
pub fn parse_manifest(text: &str) -> Result<Vec<McqInstance>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(line).map_err(|e| FestaError::Validation {
            line: lineno,
            message: e.to_string(),
        })?;
        let inst = McqInstance::from(row);
        inst.validate().map_err(|e| FestaError::Validation {
            line: lineno,
            message: e.to_string(),
        })?;
        if !ids.insert(inst.id.clone()) {
            return Err(FestaError::Validation {
                line: lineno,
                message: format!("duplicate instance id {:?}", inst.id),
            });
        }
        out.push(inst);
    }
    Ok(out)
}

/// Serializes instances back to manifest JSONL.
pub fn write_manifest(instances: &[McqInstance]) -> Result<String> {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(&ManifestRow::from(inst))?);
        out.push('\n');
    }
    Ok(out)
}
