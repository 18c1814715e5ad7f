use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    SceneCaption,
    ObjectCaption,
    Confidence,
    Direction,
    AnswerMc,
    AnswerOpen,
    Judge,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SceneCaption => "scene_caption",
            Self::ObjectCaption => "object_caption",
            Self::Confidence => "confidence",
            Self::Direction => "direction",
            Self::AnswerMc => "answer_mc",
            Self::AnswerOpen => "answer_open",
            Self::Judge => "judge",
        }
    }
}

pub const SCENE_CAPTION: &str = "Describe this image. Output in the following format:
```
Room: <room>
Object: <obj1>, <obj2>,...
Description: <description>
```";

pub const OBJECT_CAPTION: &str = "Please describe the category, arrtibute, and description of the object.
Output in the following format:
```
cate: [category]
attr: [arrtibute]
desc: [description]
```";

pub const CONFIDENCE: &str = "Consider the question: `{Question}'. How confident are you in answering this question from your current perspective?
A. Very low
B. Low
C. Medium
D. High
E. Very high
Answer with the option's letter from the given choices directly.";

pub const ANSWER_MC: &str = "{Question} Answer with the option's letter from the given choices directly.";

pub const ANSWER_OPEN: &str = "{Question} Answer with the brief sentence.";

pub const DIRECTION: &str = "Consider the question: '{Question}', and you will explore the environment for answering it.
Which direction (black letters on the image) would you explore then? Provide reasons and answer with a single letter.";

/// No reference wording exists for judging; this stand-in asks for a 1–5
/// score so a configured judge endpoint has something to answer.
pub const JUDGE: &str = "Question: {Question}
Reference answer: {Reference}
Candidate answer: {Candidate}
Rate how well the candidate answer matches the reference on a scale from 1 to 5. Answer with a single number.";

pub const MEMORY_HEADER: &str = "Memory:";
pub const STATE_HEADER: &str = "Current state:";

pub fn template_text(id: TemplateId) -> &'static str {
    match id {
        TemplateId::SceneCaption => SCENE_CAPTION,
        TemplateId::ObjectCaption => OBJECT_CAPTION,
        TemplateId::Confidence => CONFIDENCE,
        TemplateId::Direction => DIRECTION,
        TemplateId::AnswerMc => ANSWER_MC,
        TemplateId::AnswerOpen => ANSWER_OPEN,
        TemplateId::Judge => JUDGE,
    }
}

/// Fills `{Question}` and prefixes the memory context block and state line
/// when present.
pub fn fill(id: TemplateId, question: &str, context: &[String], state: Option<&str>) -> String {
    let mut out = String::new();
    if !context.is_empty() {
        out.push_str(MEMORY_HEADER);
        out.push('\n');
        for (i, c) in context.iter().enumerate() {
            out.push_str(&format!("[{}]\n{}\n", i + 1, c.trim_end()));
        }
        out.push('\n');
    }
    if let Some(s) = state {
        out.push_str(&format!("{STATE_HEADER} {s}\n\n"));
    }
    out.push_str(&template_text(id).replace("{Question}", question));
    out
}

pub fn fill_judge(question: &str, reference: &str, candidate: &str) -> String {
    JUDGE
        .replace("{Question}", question)
        .replace("{Reference}", reference)
        .replace("{Candidate}", candidate)
}
