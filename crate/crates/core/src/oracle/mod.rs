//! The model boundary: prompt templates, reply parsing, a scripted oracle
//! driven by simulator ground truth, and a JSON-over-HTTP client.

pub mod parse;
mod remote;
mod scripted;
pub mod templates;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{ObjectCaption, SceneCaption};
use crate::simulator::FrameTruth;

pub use parse::{LetterReply, Parsed};
pub use remote::{EndpointConfig, RemoteOracle, Transport, TransportError, UreqTransport};
pub use scripted::ScriptedOracle;
pub use templates::TemplateId;

pub const UNSURE: &str = "I am not sure.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle transport: {0}")]
    Transport(String),
    #[error("oracle timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("oracle returned status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("image of {bytes} bytes exceeds the {cap}-byte cap")]
    OverSize { bytes: usize, cap: usize },
    #[error("oracle reply: {0}")]
    Malformed(String),
}

impl OracleError {
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Transport(_) | Self::Timeout { .. } => true,
            Self::Status { code, .. } => *code >= 500 || *code == 429,
            Self::OverSize { .. } | Self::Malformed(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleImage {
    pub rgb: RgbImage,
    /// Simulator sidecar; never sent over the wire.
    pub truth: Option<FrameTruth>,
}

impl OracleImage {
    pub fn new(rgb: RgbImage, truth: Option<FrameTruth>) -> Self {
        Self { rgb, truth }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRequest {
    pub template: TemplateId,
    pub prompt: String,
    pub images: Vec<OracleImage>,
}

pub trait Oracle: Send + Sync {
    /// Raw reply text.
    fn call(&self, request: &OracleRequest) -> Result<String, OracleError>;
}

impl<T: Oracle + ?Sized> Oracle for &T {
    fn call(&self, request: &OracleRequest) -> Result<String, OracleError> {
        (**self).call(request)
    }
}

impl<T: Oracle + ?Sized> Oracle for Box<T> {
    fn call(&self, request: &OracleRequest) -> Result<String, OracleError> {
        (**self).call(request)
    }
}

pub const CONFIDENCE_LETTERS: [char; 5] = ['A', 'B', 'C', 'D', 'E'];

pub fn confidence_value(letter: char) -> f64 {
    match letter {
        'B' => 0.25,
        'C' => 0.5,
        'D' => 0.75,
        'E' => 1.0,
        _ => 0.0,
    }
}

pub fn candidate_letter(i: usize) -> char {
    (b'A' + (i % 26) as u8) as char
}

pub fn describe_scene(oracle: &dyn Oracle, image: OracleImage) -> Result<Parsed<SceneCaption>, OracleError> {
    let req = OracleRequest {
        template: TemplateId::SceneCaption,
        prompt: templates::SCENE_CAPTION.to_string(),
        images: vec![image],
    };
    Ok(parse::scene_caption(&oracle.call(&req)?))
}

pub fn describe_object(oracle: &dyn Oracle, crop: OracleImage) -> Result<Parsed<ObjectCaption>, OracleError> {
    let req = OracleRequest {
        template: TemplateId::ObjectCaption,
        prompt: templates::OBJECT_CAPTION.to_string(),
        images: vec![crop],
    };
    Ok(parse::object_caption(&oracle.call(&req)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReply {
    pub letter: char,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Never fails: transport errors and unreadable replies read as `A`.
pub fn confidence(oracle: &dyn Oracle, question: &str, context: &[String], image: OracleImage) -> ConfidenceReply {
    let req = OracleRequest {
        template: TemplateId::Confidence,
        prompt: templates::fill(TemplateId::Confidence, question, context, None),
        images: vec![image],
    };
    let low = |warning: String| ConfidenceReply {
        letter: 'A',
        value: 0.0,
        warning: Some(warning),
    };
    match oracle.call(&req) {
        Err(e) => low(format!("confidence: {e}")),
        Ok(text) => match parse::classify_letter(&text, &CONFIDENCE_LETTERS) {
            LetterReply::Valid(c) => ConfidenceReply {
                letter: c,
                value: confidence_value(c),
                warning: None,
            },
            _ => low(format!("confidence: unreadable reply {text:?}")),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DirectionChoice {
    Chosen(usize),
    Fallback(String),
}

/// Asks which labeled candidate to explore. `image.truth.labels` carries
/// the label positions for ground-truth oracles.
pub fn choose_direction(
    oracle: &dyn Oracle,
    question: &str,
    image: OracleImage,
    n_candidates: usize,
    context: &[String],
) -> DirectionChoice {
    if n_candidates == 0 || n_candidates > 26 {
        return DirectionChoice::Fallback(format!("{n_candidates} candidates cannot be labeled"));
    }
    let allowed: Vec<char> = (0..n_candidates).map(candidate_letter).collect();
    let req = OracleRequest {
        template: TemplateId::Direction,
        prompt: templates::fill(TemplateId::Direction, question, context, None),
        images: vec![image],
    };
    match oracle.call(&req) {
        Err(e) => DirectionChoice::Fallback(format!("direction: {e}")),
        Ok(text) => match parse::classify_letter(&text, &allowed) {
            LetterReply::Valid(c) => DirectionChoice::Chosen((c as u8 - b'A') as usize),
            LetterReply::OutOfRange(c) => DirectionChoice::Fallback(format!("direction: letter {c} out of range")),
            LetterReply::Missing => DirectionChoice::Fallback(format!("direction: unreadable reply {text:?}")),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerReply {
    /// `None` when unanswered.
    pub answer: Option<String>,
    pub raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

pub fn answer_mc(
    oracle: &dyn Oracle,
    question_with_options: &str,
    letters: &[char],
    context: &[String],
    state: Option<&str>,
    image: OracleImage,
) -> AnswerReply {
    let req = OracleRequest {
        template: TemplateId::AnswerMc,
        prompt: templates::fill(TemplateId::AnswerMc, question_with_options, context, state),
        images: vec![image],
    };
    match oracle.call(&req) {
        Err(e) => AnswerReply {
            answer: None,
            raw: String::new(),
            warning: Some(format!("answer: {e}")),
        },
        Ok(text) => match parse::classify_letter(&text, letters) {
            LetterReply::Valid(c) => AnswerReply {
                answer: Some(c.to_string()),
                raw: text,
                warning: None,
            },
            _ => AnswerReply {
                warning: Some(format!("answer: no valid option letter in {text:?}")),
                answer: None,
                raw: text,
            },
        },
    }
}

pub fn answer_open(
    oracle: &dyn Oracle,
    question: &str,
    context: &[String],
    state: Option<&str>,
    image: OracleImage,
) -> AnswerReply {
    let req = OracleRequest {
        template: TemplateId::AnswerOpen,
        prompt: templates::fill(TemplateId::AnswerOpen, question, context, state),
        images: vec![image],
    };
    match oracle.call(&req) {
        Err(e) => AnswerReply {
            answer: None,
            raw: String::new(),
            warning: Some(format!("answer: {e}")),
        },
        Ok(text) if text.trim().is_empty() => AnswerReply {
            answer: None,
            raw: text,
            warning: Some("answer: empty reply".into()),
        },
        Ok(text) => AnswerReply {
            answer: Some(text.trim().to_string()),
            raw: text,
            warning: None,
        },
    }
}

/// A judge score, or `None` when the judge fails or replies without one.
pub fn judge(oracle: &dyn Oracle, question: &str, reference: &str, candidate: &str) -> Option<f64> {
    let req = OracleRequest {
        template: TemplateId::Judge,
        prompt: templates::fill_judge(question, reference, candidate),
        images: vec![],
    };
    oracle.call(&req).ok().and_then(|t| parse::judge_score(&t))
}

/// Replays canned replies in order, then repeats the last one.
#[derive(Debug, Default)]
pub struct CannedOracle {
    replies: Vec<Result<String, OracleError>>,
    next: std::sync::Mutex<usize>,
    pub requests: std::sync::Mutex<Vec<OracleRequest>>,
}

impl CannedOracle {
    pub fn new(replies: Vec<Result<String, OracleError>>) -> Self {
        Self {
            replies,
            ..Self::default()
        }
    }

    pub fn text(reply: &str) -> Self {
        Self::new(vec![Ok(reply.to_string())])
    }
}

impl Oracle for CannedOracle {
    fn call(&self, request: &OracleRequest) -> Result<String, OracleError> {
        self.requests.lock().unwrap().push(request.clone());
        let mut n = self.next.lock().unwrap();
        let i = (*n).min(self.replies.len().saturating_sub(1));
        *n += 1;
        self.replies
            .get(i)
            .cloned()
            .unwrap_or_else(|| Err(OracleError::Transport("no canned reply".into())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> OracleImage {
        OracleImage::new(RgbImage::new(4, 4), None)
    }

    #[test]
    fn confidence_fallbacks() {
        assert_eq!(confidence(&CannedOracle::text("D"), "q", &[], img()).letter, 'D');
        let r = confidence(&CannedOracle::text("very high"), "q", &[], img());
        assert_eq!((r.letter, r.value), ('A', 0.0));
        assert!(r.warning.is_some());
        let r = confidence(&CannedOracle::new(vec![Err(OracleError::Timeout { attempts: 2 })]), "q", &[], img());
        assert_eq!(r.letter, 'A');
    }

    #[test]
    fn direction_cases() {
        assert_eq!(choose_direction(&CannedOracle::text("B"), "q", img(), 2, &[]), DirectionChoice::Chosen(1));
        assert_eq!(choose_direction(&CannedOracle::text("A"), "q", img(), 1, &[]), DirectionChoice::Chosen(0));
        assert!(matches!(choose_direction(&CannedOracle::text("Z"), "q", img(), 3, &[]), DirectionChoice::Fallback(_)));
    }

    #[test]
    fn answer_cases() {
        let r = answer_mc(&CannedOracle::text("B"), "q A. x B. y", &['A', 'B'], &[], None, img());
        assert_eq!(r.answer.as_deref(), Some("B"));
        let r = answer_mc(&CannedOracle::text("F"), "q", &['A', 'B'], &[], None, img());
        assert_eq!(r.answer, None);
        let r = answer_open(&CannedOracle::text("  "), "q", &[], None, img());
        assert_eq!(r.answer, None);
    }

    #[test]
    fn captions_through_oracle() {
        let o = CannedOracle::text("Room: kitchen\nObject: chair\nDescription: d");
        assert_eq!(describe_scene(&o, img()).unwrap().value.room, "kitchen");
        let o = CannedOracle::new(vec![Err(OracleError::Transport("down".into()))]);
        assert!(describe_object(&o, img()).unwrap_err().is_retryable());
    }
}
