//! Tolerant parsers for oracle replies. None of them fail; malformed input
//! yields an empty payload plus warnings.

use crate::memory::{ObjectCaption, SceneCaption};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Parsed<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

fn strip_fences(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(str::trim).filter(|l| !l.starts_with("```"))
}

/// Value after `key:` on the first line that starts with the key,
/// case-insensitive.
fn field<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    strip_fences(text).find_map(|l| {
        let (k, v) = l.split_once(':')?;
        k.trim().eq_ignore_ascii_case(key).then(|| v.trim())
    })
}

fn clean(v: &str) -> String {
    v.trim()
        .trim_start_matches(['[', '<'])
        .trim_end_matches([']', '>'])
        .trim()
        .to_string()
}

pub fn scene_caption(text: &str) -> Parsed<SceneCaption> {
    let mut warnings = Vec::new();
    let mut get = |key: &str| match field(text, key) {
        Some(v) => clean(v),
        None => {
            warnings.push(format!("scene caption: missing '{key}' line"));
            String::new()
        }
    };
    let room = get("Room");
    let objects = get("Object");
    let description = get("Description");
    if room.is_empty() && !warnings.iter().any(|w| w.contains("'Room'")) {
        warnings.push("scene caption: empty room".into());
    }
    let objects = objects
        .split(',')
        .map(clean)
        .filter(|o| !o.is_empty() && o != "...")
        .collect();
    Parsed {
        value: SceneCaption {
            room: room.to_lowercase(),
            objects,
            description,
        },
        warnings,
    }
}

pub fn object_caption(text: &str) -> Parsed<ObjectCaption> {
    let (cate, attr, desc) = (field(text, "cate"), field(text, "attr"), field(text, "desc"));
    match cate {
        Some(c) if !clean(c).is_empty() => {
            let mut warnings = Vec::new();
            if attr.is_none() {
                warnings.push("object caption: missing 'attr' line".into());
            }
            if desc.is_none() {
                warnings.push("object caption: missing 'desc' line".into());
            }
            Parsed {
                value: ObjectCaption {
                    cate: clean(c).to_lowercase(),
                    attr: attr.map(clean).unwrap_or_default(),
                    desc: desc.map(clean).unwrap_or_default(),
                },
                warnings,
            }
        }
        _ => Parsed {
            value: ObjectCaption::default(),
            warnings: vec!["object caption: no category".into()],
        },
    }
}

/// Picks the answer letter out of a reply.
///
/// An explicit `answer: X` / `answer is X` wins; otherwise the first
/// standalone capital letter, or a reply that is a single letter in any
/// case. The pronoun `I` is only read as a letter when it is allowed.
/// Returns the letter even when it is outside `allowed` so callers can
/// tell a wrong letter from no letter.
pub fn letter(text: &str, allowed: &[char]) -> Option<char> {
    let trimmed = text.trim().trim_matches(|c: char| !c.is_alphanumeric());
    if trimmed.len() == 1 {
        let c = trimmed.chars().next()?.to_ascii_uppercase();
        return c.is_ascii_alphabetic().then_some(c);
    }
    let lower = text.to_lowercase();
    for marker in ["answer:", "answer is", "answer -"] {
        if let Some(pos) = lower.rfind(marker) {
            let rest = &text[pos + marker.len()..];
            if let Some(c) = first_capital(rest, allowed) {
                return Some(c);
            }
        }
    }
    first_capital(text, allowed)
}

fn first_capital(text: &str, allowed: &[char]) -> Option<char> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.len() == 1)
        .filter_map(|t| t.chars().next())
        .filter(|c| c.is_ascii_uppercase())
        .find(|&c| c != 'I' || allowed.contains(&'I'))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LetterReply {
    Valid(char),
    OutOfRange(char),
    Missing,
}

pub fn classify_letter(text: &str, allowed: &[char]) -> LetterReply {
    match letter(text, allowed) {
        Some(c) if allowed.contains(&c) => LetterReply::Valid(c),
        Some(c) => LetterReply::OutOfRange(c),
        None => LetterReply::Missing,
    }
}

/// A judge score in `[1, 5]`, if one is present.
pub fn judge_score(text: &str) -> Option<f64> {
    text.split(|c: char| !(c.is_ascii_digit() || c == '.'))
        .filter_map(|t| t.parse::<f64>().ok())
        .find(|v| (1.0..=5.0).contains(v))
}
