use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{AttributionExample, Dataset, DocumentImage};
use crate::geom::{normalize, BBox, ImageDims, NormBBox};
use crate::retrieval::CandidateSet;

pub const SINGLE_SYSTEM_PROMPT: &str = "Given a document image, your task is to answer the question and locate the source of the answer via a bounding box.";

pub const MULTI_SYSTEM_PROMPT: &str = "Given document images, your task is to answer the question and locate the source of the answer via a bounding box.";

pub const NO_ANSWER: &str = "No answer.";

/// An image attachment as transmitted to the endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub doc_id: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
}

impl ImageRef {
    pub fn for_document(ds: &Dataset, doc: &DocumentImage) -> Self {
        Self {
            doc_id: doc.doc_id.clone(),
            path: ds.image_path(doc),
            width: doc.width,
            height: doc.height,
        }
    }

    /// `(width, height)`, the tuple form of an image size.
    pub fn size_string(&self) -> String {
        format!("({}, {})", self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Segment {
    Image(ImageRef),
    Text { text: String },
}

impl Segment {
    pub fn text(s: impl Into<String>) -> Self {
        Segment::Text { text: s.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 256,
        }
    }
}

/// Dialect-neutral chat request: one system string and interleaved user segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Correlates the request with its item; never sent on the wire.
    pub request_id: String,
    pub system: String,
    pub user: Vec<Segment>,
    pub decoding: DecodingParams,
}

impl ChatRequest {
    pub fn images(&self) -> impl Iterator<Item = &ImageRef> {
        self.user.iter().filter_map(|s| match s {
            Segment::Image(i) => Some(i),
            _ => None,
        })
    }

    /// Flattened transcript with `<image:doc_id>` placeholders, for logs and
    /// golden comparisons.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "System:\n{}\n\nUser:\n", self.system);
        for seg in &self.user {
            match seg {
                Segment::Image(i) => {
                    let _ = write!(out, "<image:{}>", i.doc_id);
                }
                Segment::Text { text } => out.push_str(text),
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordMode {
    /// Pixel coordinates of the transmitted image.
    #[default]
    Absolute,
    /// Fractions of the transmitted image's width and height.
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("candidate document {0:?} not found in corpus")]
    MissingDoc(String),
}

fn push_image(user: &mut Vec<Segment>, image: ImageRef) {
    let size = format!(" Image Size: {}\n", image.size_string());
    user.push(Segment::Image(image));
    user.push(Segment::text(size));
}

fn question_line(query: &str) -> Segment {
    Segment::text(format!("Question: {query}"))
}

/// One oracle document followed by the question.
pub fn build_single_prompt(request_id: &str, query: &str, image: ImageRef) -> ChatRequest {
    let mut user = Vec::with_capacity(3);
    push_image(&mut user, image);
    user.push(question_line(query));
    ChatRequest {
        request_id: request_id.to_string(),
        system: SINGLE_SYSTEM_PROMPT.to_string(),
        user,
        decoding: DecodingParams::default(),
    }
}

/// Candidate images in set order, each with its size line, then the question.
pub fn build_multi_prompt(
    query: &str,
    cands: &CandidateSet,
    ds: &Dataset,
) -> Result<ChatRequest, PromptError> {
    let mut user = Vec::with_capacity(2 * cands.len() + 1);
    for doc_id in &cands.docs {
        let doc = ds
            .document(doc_id)
            .ok_or_else(|| PromptError::MissingDoc(doc_id.clone()))?;
        push_image(&mut user, ImageRef::for_document(ds, doc));
    }
    user.push(question_line(query));
    Ok(ChatRequest {
        request_id: cands.example_id.clone(),
        system: MULTI_SYSTEM_PROMPT.to_string(),
        user,
        decoding: DecodingParams::default(),
    })
}

fn fmt_fraction(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Box text in the chosen coordinate mode.
pub fn format_bbox(b: &BBox, coord: CoordMode, dims: &ImageDims) -> String {
    match coord {
        CoordMode::Absolute => b.to_corner_string(),
        CoordMode::Normalized => {
            let NormBBox { x1, y1, x2, y2 } =
                normalize(b, dims).expect("dataset documents have non-zero dims");
            format!(
                "[({}, {}), ({}, {})]",
                fmt_fraction(x1),
                fmt_fraction(y1),
                fmt_fraction(x2),
                fmt_fraction(y2)
            )
        }
    }
}

/// Assistant text for absolute coordinates.
pub fn format_target(ex: &AttributionExample, cands: Option<&CandidateSet>) -> String {
    format_target_with(ex, cands, CoordMode::Absolute, None)
}

/// Assistant text the model is trained to produce. `dims` is required for
/// normalized coordinates.
pub fn format_target_with(
    ex: &AttributionExample,
    cands: Option<&CandidateSet>,
    coord: CoordMode,
    dims: Option<&ImageDims>,
) -> String {
    let fallback;
    let dims = match dims {
        Some(d) => d,
        None => {
            fallback = ImageDims::new(1, 1);
            &fallback
        }
    };
    let bbox = format_bbox(&ex.gold_bbox, coord, dims);
    match cands {
        None => format!("Answer: {}\nBounding Box: {}", ex.answers.primary(), bbox),
        Some(c) => match (c.has_gold, c.gold_slot) {
            (true, Some(slot)) => format!(
                "Answer: {}\nEvidence Document: {}\nBounding Box: {}",
                ex.answers.primary(),
                slot,
                bbox
            ),
            _ => NO_ANSWER.to_string(),
        },
    }
}
