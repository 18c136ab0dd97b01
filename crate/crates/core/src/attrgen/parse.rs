use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::prompt::CoordMode;
use crate::geom::{clip, BBox, ImageDims, Rect};
use crate::textmatch::normalize_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Single,
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Answered,
    NoAnswer,
    Unparseable,
}

/// A generation reduced to its structured fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub kind: OutputKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// 1-based candidate index, multi mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    /// Why the output was unparseable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ModelOutput {
    pub fn no_answer() -> Self {
        Self {
            kind: OutputKind::NoAnswer,
            answer: None,
            evidence_index: None,
            bbox: None,
            note: None,
        }
    }

    pub fn unparseable(note: impl Into<String>) -> Self {
        Self {
            kind: OutputKind::Unparseable,
            answer: None,
            evidence_index: None,
            bbox: None,
            note: Some(note.into()),
        }
    }

    pub fn is_answered(&self) -> bool {
        self.kind == OutputKind::Answered
    }
}

fn is_no_answer(s: &str) -> bool {
    normalize_text(s) == "no answer"
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[-+]?\d+(?:\.\d+)?").unwrap())
}

fn box_shape_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[\s\[\]\(\),\d.+-]+$").unwrap())
}

/// Four numbers in any mix of brackets, parentheses, commas and spaces.
fn parse_corners(s: &str) -> Result<Rect, String> {
    if !box_shape_re().is_match(s) {
        return Err(format!("bounding box {s:?} has unexpected characters"));
    }
    let nums: Vec<f64> = number_re()
        .find_iter(s)
        .map(|m| m.as_str().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    match nums.as_slice() {
        &[x1, y1, x2, y2] => Ok(Rect::new(x1, y1, x2, y2)),
        other => Err(format!("bounding box needs 4 numbers, found {}", other.len())),
    }
}

/// Reads `Answer:`, `Evidence Document:` (multi) and `Bounding Box:` lines.
///
/// `dims` lists the transmitted image sizes in candidate order (one entry in
/// single mode). The box is clipped to the referenced image; any failure
/// yields [`OutputKind::Unparseable`] carrying the reason.
pub fn parse_model_output(
    text: &str,
    mode: PromptMode,
    dims: &[ImageDims],
    coord: CoordMode,
) -> ModelOutput {
    if is_no_answer(text) {
        return ModelOutput::no_answer();
    }

    let (mut answer, mut evidence, mut bbox) = (None, None, None);
    for line in text.lines().map(str::trim) {
        if let Some(v) = line.strip_prefix("Answer:") {
            answer.get_or_insert(v.trim());
        } else if let Some(v) = line.strip_prefix("Evidence Document:") {
            evidence.get_or_insert(v.trim());
        } else if let Some(v) = line.strip_prefix("Bounding Box:") {
            bbox.get_or_insert(v.trim());
        }
    }

    let Some(answer) = answer.filter(|a| !a.is_empty()) else {
        return ModelOutput::unparseable("missing Answer field");
    };
    if is_no_answer(answer) {
        return ModelOutput::no_answer();
    }

    let (evidence_index, image_dims) = match mode {
        PromptMode::Single => match dims.first() {
            Some(d) => (None, d),
            None => return ModelOutput::unparseable("no image dimensions supplied"),
        },
        PromptMode::Multi => {
            let Some(raw) = evidence else {
                return ModelOutput::unparseable("missing Evidence Document field");
            };
            let idx = match raw.trim_end_matches('.').parse::<usize>() {
                Ok(i) if (1..=dims.len()).contains(&i) => i,
                Ok(i) => {
                    return ModelOutput::unparseable(format!(
                        "evidence document {i} outside 1..={}",
                        dims.len()
                    ))
                }
                Err(_) => {
                    return ModelOutput::unparseable(format!("evidence document {raw:?} is not an index"))
                }
            };
            (Some(idx), &dims[idx - 1])
        }
    };

    let Some(raw_box) = bbox else {
        return ModelOutput::unparseable("missing Bounding Box field");
    };
    let rect = match parse_corners(raw_box) {
        Ok(r) => r,
        Err(e) => return ModelOutput::unparseable(e),
    };
    let rect = match coord {
        CoordMode::Absolute => rect,
        CoordMode::Normalized => {
            let (w, h) = (image_dims.width as f64, image_dims.height as f64);
            Rect::new(rect.x1 * w, rect.y1 * h, rect.x2 * w, rect.y2 * h)
        }
    };
    match clip(rect, image_dims) {
        Ok(b) => ModelOutput {
            kind: OutputKind::Answered,
            answer: Some(answer.to_string()),
            evidence_index,
            bbox: Some(b),
            note: None,
        },
        Err(e) => ModelOutput::unparseable(e.to_string()),
    }
}
