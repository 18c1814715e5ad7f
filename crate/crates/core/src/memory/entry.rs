use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{EqaError, Result};
use crate::geometry::Pose;

/// Coarse scene caption: `Room / Object / Description`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneCaption {
    pub room: String,
    pub objects: Vec<String>,
    pub description: String,
}

/// Fine object caption: `cate / attr / desc`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectCaption {
    pub cate: String,
    pub attr: String,
    pub desc: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionNote {
    pub category: String,
    pub attribute: String,
    pub description: String,
    pub bbox: [u32; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateNote {
    pub pose: Pose,
    /// Coarse description of the space the agent is in.
    pub space: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMemoryEntry {
    pub step: u32,
    pub observation_ref: String,
    pub detections: Vec<DetectionNote>,
    pub scene_caption: SceneCaption,
    pub decision: String,
    pub state: StateNote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GlobalMemoryEntry {
    Room {
        category: String,
        position: [f64; 2],
    },
    Target {
        position: [f64; 3],
        category: String,
        description: String,
        observer: Pose,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "level", rename_all = "lowercase")]
pub enum MemoryPayload {
    Local(LocalMemoryEntry),
    Global(GlobalMemoryEntry),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Local,
    Room,
    Target,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Local => "local",
            Self::Room => "room",
            Self::Target => "target",
        }
    }
}

/// Builds a local entry. A missing scene caption leaves the caption empty.
pub fn build_local_entry(
    step: i64,
    observation_ref: &str,
    detections: Vec<DetectionNote>,
    scene_caption: Option<SceneCaption>,
    decision: &str,
    state: StateNote,
) -> Result<LocalMemoryEntry> {
    let step = u32::try_from(step).map_err(|_| EqaError::InvalidInput(format!("step {step} must be non-negative")))?;
    if !state.pose.is_finite() {
        return Err(EqaError::InvalidInput("state pose must be finite".into()));
    }
    if let Some(i) = detections.iter().position(|d| d.category.trim().is_empty()) {
        return Err(EqaError::InvalidInput(format!("detection {i} has an empty category")));
    }
    let scene_caption = scene_caption.unwrap_or_else(|| {
        log::warn!("step {step}: no scene caption, storing an empty one");
        SceneCaption::default()
    });
    Ok(LocalMemoryEntry {
        step,
        observation_ref: observation_ref.to_string(),
        detections,
        scene_caption,
        decision: decision.to_string(),
        state,
    })
}

fn fmt_pose(p: &Pose) -> String {
    format!(
        "({:.2}, {:.2}) heading {:.0} deg",
        p.position[0],
        p.position[1],
        p.yaw.to_degrees()
    )
}

impl MemoryPayload {
    pub fn kind(&self) -> RecordKind {
        match self {
            Self::Local(_) => RecordKind::Local,
            Self::Global(GlobalMemoryEntry::Room { .. }) => RecordKind::Room,
            Self::Global(GlobalMemoryEntry::Target { .. }) => RecordKind::Target,
        }
    }

    pub fn as_local(&self) -> Option<&LocalMemoryEntry> {
        match self {
            Self::Local(e) => Some(e),
            Self::Global(_) => None,
        }
    }

    /// Fixed-order `key: value` lines used both for encoding and as prompt
    /// context.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        match self {
            Self::Local(e) => {
                let _ = writeln!(s, "step: {}", e.step);
                let _ = writeln!(s, "Room: {}", e.scene_caption.room);
                let _ = writeln!(s, "Object: {}", e.scene_caption.objects.join(", "));
                let _ = writeln!(s, "Description: {}", e.scene_caption.description);
                for d in &e.detections {
                    let _ = writeln!(s, "cate: {}; attr: {}; desc: {}", d.category, d.attribute, d.description);
                }
                let _ = writeln!(s, "decision: {}", e.decision);
                let _ = write!(s, "state: {}; {}", fmt_pose(&e.state.pose), e.state.space);
            }
            Self::Global(GlobalMemoryEntry::Room { category, position }) => {
                let _ = writeln!(s, "Room: {category}");
                let _ = write!(s, "observed at: ({:.2}, {:.2})", position[0], position[1]);
            }
            Self::Global(GlobalMemoryEntry::Target {
                position,
                category,
                description,
                observer,
            }) => {
                let _ = writeln!(s, "target: {category}");
                let _ = writeln!(s, "desc: {description}");
                let _ = writeln!(s, "position: ({:.2}, {:.2}, {:.2})", position[0], position[1], position[2]);
                let _ = write!(s, "observed from: {}", fmt_pose(observer));
            }
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Local(e) => {
                if !e.state.pose.is_finite() {
                    return Err(EqaError::InvalidInput("local entry pose must be finite".into()));
                }
                if e.detections.iter().any(|d| d.category.trim().is_empty()) {
                    return Err(EqaError::InvalidInput("detection with empty category".into()));
                }
            }
            Self::Global(GlobalMemoryEntry::Room { category, position }) => {
                if category.trim().is_empty() || !position.iter().all(|v| v.is_finite()) {
                    return Err(EqaError::InvalidInput("room entry needs a category and a finite position".into()));
                }
            }
            Self::Global(GlobalMemoryEntry::Target {
                position,
                category,
                observer,
                ..
            }) => {
                if category.trim().is_empty() || !position.iter().all(|v| v.is_finite()) || !observer.is_finite() {
                    return Err(EqaError::InvalidInput("target entry needs a category and finite positions".into()));
                }
            }
        }
        Ok(())
    }
}
