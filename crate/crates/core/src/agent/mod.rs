//! The episode loop: observe, update memory, retrieve, then either answer
//! or plan the next pose.

mod episode;
mod planner;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::HyperParams;
use crate::error::{EqaError, Result};
use crate::geometry::Pose;
use crate::oracle::ConfidenceReply;
use crate::simulator::{Question, QuestionKind};
use crate::update_gate::GateOutcome;

pub use episode::{run_episode, EpisodeInput, EpisodeOutput};
pub use planner::{
    decision_label, draw_label, fallback_weight, inject_planner, plan_next, Injection, Plan, SemanticWeight,
};

/// Which modules receive retrieved memories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Ablation {
    pub stop: bool,
    pub answer: bool,
    pub planner: bool,
}

impl Ablation {
    pub const NONE: Self = Self { stop: false, answer: false, planner: false };
    pub const FULL: Self = Self { stop: true, answer: true, planner: true };

    /// The four rows of the ablation table.
    pub fn rows() -> [Self; 4] {
        [
            Self::NONE,
            Self { stop: true, ..Self::NONE },
            Self { stop: true, answer: true, planner: false },
            Self::FULL,
        ]
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.stop, "S"), (self.answer, "A"), (self.planner, "P")]
            .into_iter()
            .filter_map(|(on, s)| on.then_some(s))
            .collect();
        if parts.is_empty() {
            f.write_str("None")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

impl FromStr for Ablation {
    type Err = EqaError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") || s.is_empty() {
            return Ok(Self::NONE);
        }
        let mut out = Self::NONE;
        for part in s.split('+') {
            match part.trim().to_ascii_uppercase().as_str() {
                "S" => out.stop = true,
                "A" => out.answer = true,
                "P" => out.planner = true,
                other => {
                    return Err(EqaError::InvalidInput(format!(
                        "unknown ablation flag {other:?} (expected None or a '+'-joined subset of S, A, P)"
                    )))
                }
            }
        }
        Ok(out)
    }
}

impl Serialize for Ablation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ablation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Why an episode answered without the stop module asking it to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcedBy {
    MaxSteps,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    Answer {
        answer: Option<String>,
        raw: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        forced: Option<ForcedBy>,
    },
    Move {
        target: Pose,
        reached: Pose,
        label: String,
        frontier_cell: (usize, usize),
        candidates: usize,
        labeled: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        chosen: Option<usize>,
        fallback: bool,
    },
    Rotate {
        yaw: f64,
        reached: Pose,
    },
}

impl Decision {
    pub fn is_answer(&self) -> bool {
        matches!(self, Self::Answer { .. })
    }

    /// Pose at the start of the next step, if there is one.
    pub fn next_pose(&self) -> Option<Pose> {
        match self {
            Self::Answer { .. } => None,
            Self::Move { reached, .. } | Self::Rotate { reached, .. } => Some(*reached),
        }
    }

    /// Short text stored with the local memory entry.
    pub fn summary(&self) -> String {
        match self {
            Self::Answer { .. } => "answer".into(),
            Self::Move { label, target, .. } => {
                format!("move {label} to ({:.2}, {:.2})", target.position[0], target.position[1])
            }
            Self::Rotate { yaw, .. } => format!("turn to heading {:.0} deg", yaw.to_degrees()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalLog {
    pub k: usize,
    pub entropy: f64,
    /// `(record index, cosine)` in rank order.
    pub hits: Vec<(u64, f64)>,
}

/// Record indices each module actually received.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextLog {
    pub stop: Vec<u64>,
    pub planner: Vec<u64>,
    pub answer: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub pose: Pose,
    pub room: Option<String>,
    pub visible: Vec<u32>,
    pub black_ratio: f64,
    pub gate: GateOutcome,
    /// Index of the local entry stored for this step.
    pub inserted: Option<u64>,
    /// Global entries added (rooms, targets) and superseded.
    pub global_added: Vec<u64>,
    pub global_superseded: Vec<u64>,
    pub retrieval: RetrievalLog,
    pub context: ContextLog,
    pub confidence: Option<ConfidenceReply>,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub scene: String,
    pub question_id: String,
    pub question: String,
    pub gold: String,
    pub ablation: Ablation,
    pub seed: u64,
    pub spawn: usize,
    pub max_steps: usize,
    /// Room area the step budget and normalized steps are computed from.
    pub area_m2: f64,
    pub scene_id: u32,
    /// Whether the scene id came from matching a persisted bank.
    pub scene_matched: bool,
    /// Live global records of the scene before the first step.
    pub loaded_global: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_in: Option<String>,
    pub params: HyperParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub answer: Option<String>,
    pub steps: usize,
    pub stop_step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced: Option<ForcedBy>,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TraceLine {
    Header(TraceHeader),
    Step(Box<StepRecord>),
    Footer(TraceFooter),
}

/// One episode as a header, one record per step and a footer.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub steps: Vec<StepRecord>,
    pub footer: TraceFooter,
}

impl EpisodeTrace {
    /// JSON lines, one per header / step / footer.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: TraceLine| {
            out.push_str(&serde_json::to_string(&line).expect("trace serializes"));
            out.push('\n');
        };
        push(TraceLine::Header(self.header.clone()));
        for s in &self.steps {
            push(TraceLine::Step(Box::new(s.clone())));
        }
        push(TraceLine::Footer(self.footer.clone()));
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let (mut header, mut steps, mut footer) = (None, Vec::new(), None);
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: TraceLine = serde_json::from_str(line)
                .map_err(|e| EqaError::Parse(format!("trace line {}: {e}", n + 1)))?;
            match parsed {
                TraceLine::Header(h) if header.is_none() => header = Some(h),
                TraceLine::Step(s) if header.is_some() && footer.is_none() => steps.push(*s),
                TraceLine::Footer(f) if header.is_some() && footer.is_none() => footer = Some(f),
                _ => return Err(EqaError::Parse(format!("trace line {}: out of order", n + 1))),
            }
        }
        let header = header.ok_or_else(|| EqaError::Parse("trace has no header".into()))?;
        let footer = footer.ok_or_else(|| EqaError::Parse("trace has no footer".into()))?;
        if footer.steps != steps.len() {
            return Err(EqaError::Parse(format!(
                "footer says {} steps, trace has {}",
                footer.steps,
                steps.len()
            )));
        }
        Ok(Self { header, steps, footer })
    }

    /// The decision sequence alone, as compared by replay.
    pub fn decisions_jsonl(&self) -> String {
        self.steps
            .iter()
            .map(|s| serde_json::to_string(&s.decision).expect("decision serializes") + "\n")
            .collect()
    }
}

fn normalize_words(s: &str) -> String {
    s.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Choice questions need the exact letter; open answers must contain the
/// gold sentence's words in order (case and punctuation ignored).
pub fn is_correct(question: &Question, answer: Option<&str>) -> bool {
    let Some(a) = answer else { return false };
    match question.kind {
        QuestionKind::Choice => a.trim() == question.answer,
        QuestionKind::Open => {
            let gold = normalize_words(&question.answer);
            !gold.is_empty() && format!(" {} ", normalize_words(a)).contains(&format!(" {gold} "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_roundtrip() {
        for a in Ablation::rows() {
            assert_eq!(a.to_string().parse::<Ablation>().unwrap(), a);
        }
        assert_eq!(Ablation::rows().map(|a| a.to_string()), ["None", "S", "S+A", "S+A+P"]);
        assert_eq!("p+s".parse::<Ablation>().unwrap(), Ablation { stop: true, answer: false, planner: true });
        assert!("S+X".parse::<Ablation>().is_err());
    }

    #[test]
    fn correctness() {
        let q = Question {
            id: "q".into(),
            text: "What color?".into(),
            kind: QuestionKind::Open,
            options: vec![],
            answer: "The bed is blue.".into(),
            entities: vec![],
            label: String::new(),
        };
        assert!(is_correct(&q, Some("The answer is The bed is blue.")));
        assert!(!is_correct(&q, Some("I am not sure.")));
        assert!(!is_correct(&q, None));
        let mc = Question { kind: QuestionKind::Choice, answer: "B".into(), ..q };
        assert!(is_correct(&mc, Some("B")));
        assert!(!is_correct(&mc, Some("A")));
    }

    #[test]
    fn trace_rejects_bad_order() {
        assert!(EpisodeTrace::from_jsonl("").is_err());
        assert!(EpisodeTrace::from_jsonl("{\"type\":\"footer\",\"answer\":null,\"steps\":0,\"stop_step\":0,\"success\":false}").is_err());
    }
}
