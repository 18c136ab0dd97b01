//! Synthetic question/answer generation: mark a target region on a
//! screenshot, ask a multimodal endpoint about it, keep well-formed pairs.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use image::{Rgb, RgbImage};
use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attrgen::{ChatRequest, DecodingParams, ImageRef, Segment};
use crate::corpus::{assign_category, AttributionExample, DocumentImage, ElementClass, LayoutRecord, Split};
use crate::endpoint::{complete_with_retry, CallFailure, InferenceClient, RetryPolicy};
use crate::geom::BBox;
use crate::textmatch::AnswerSet;

pub const SYNTHESIS_SYSTEM_PROMPT: &str = "Ask a question that can be specifically answered by the content in the red bounding box area and give a short answer. The question can be a wh- question, a yes/no question, or a how question, that can be answered in a few words.\nOutput format:\n\nQuestion: <question>\nShort Answer: <short answer>\n\nOr simply return 'Empty' if the bounding box area is not visible or informative.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayStyle {
    pub color: [u8; 3],
    /// Band thickness in pixels, measured inward from the box edge.
    pub stroke: u32,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            color: [255, 0, 0],
            stroke: 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("box {bbox} lies outside the {width}x{height} image")]
    OutOfBounds { bbox: BBox, width: u32, height: u32 },
    #[error("target {0} does not qualify for synthesis")]
    NotQualifying(String),
    #[error("unparseable synthesis output: {0:?}")]
    Unparseable(String),
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Endpoint(#[from] CallFailure),
}

/// Pixel columns/rows covered by `b`, as half-open integer ranges.
fn pixel_span(b: &BBox) -> (u32, u32, u32, u32) {
    (
        b.x1().floor() as u32,
        b.y1().floor() as u32,
        b.x2().ceil() as u32,
        b.y2().ceil() as u32,
    )
}

/// Whether pixel (x, y) falls in the stroke band of `b`.
pub fn in_stroke_band(b: &BBox, stroke: u32, x: u32, y: u32) -> bool {
    let (x0, y0, x1, y1) = pixel_span(b);
    if x < x0 || x >= x1 || y < y0 || y >= y1 {
        return false;
    }
    x < x0 + stroke || x + stroke >= x1 || y < y0 + stroke || y + stroke >= y1
}

/// Returns a copy of `img` with the edges of `bbox` painted.
pub fn overlay_bbox(img: &RgbImage, bbox: &BBox, style: &OverlayStyle) -> Result<RgbImage, SynthesisError> {
    let (w, h) = img.dimensions();
    if bbox.x2() > w as f64 || bbox.y2() > h as f64 {
        return Err(SynthesisError::OutOfBounds {
            bbox: *bbox,
            width: w,
            height: h,
        });
    }
    let mut out = img.clone();
    let (x0, y0, x1, y1) = pixel_span(bbox);
    for y in y0..y1 {
        for x in x0..x1 {
            if in_stroke_band(bbox, style.stroke, x, y) {
                out.put_pixel(x, y, Rgb(style.color));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisRequest {
    pub doc: DocumentImage,
    pub target_bbox: BBox,
    pub overlay_style: OverlayStyle,
}

/// `overlaid` must point at the already-marked screenshot.
pub fn build_synthesis_prompt(request_id: &str, req: &SynthesisRequest, overlaid: &Path) -> ChatRequest {
    ChatRequest {
        request_id: request_id.to_string(),
        system: SYNTHESIS_SYSTEM_PROMPT.to_string(),
        user: vec![Segment::Image(ImageRef {
            doc_id: req.doc.doc_id.clone(),
            path: overlaid.to_path_buf(),
            width: req.doc.width,
            height: req.doc.height,
        })],
        decoding: DecodingParams::default(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisResult {
    Pair { question: String, short_answer: String },
    Empty,
}

fn pair_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?s)^Question:\s*(?P<q>.*?)\s*Short Answer:\s*(?P<a>.*?)$").unwrap()
    })
}

pub fn format_synthesis_pair(question: &str, short_answer: &str) -> String {
    format!("Question: {question}\nShort Answer: {short_answer}")
}

pub fn parse_synthesis_output(text: &str) -> Result<SynthesisResult, SynthesisError> {
    let t = text.trim();
    let bare = t.trim_end_matches('.').trim_matches(|c| matches!(c, '\'' | '"' | '`'));
    if bare.eq_ignore_ascii_case("empty") {
        return Ok(SynthesisResult::Empty);
    }
    let caps = pair_re()
        .captures(t)
        .ok_or_else(|| SynthesisError::Unparseable(text.to_string()))?;
    let (q, a) = (caps["q"].trim(), caps["a"].trim());
    if q.is_empty() || a.is_empty() || a.contains("Question:") {
        return Err(SynthesisError::Unparseable(text.to_string()));
    }
    Ok(SynthesisResult::Pair {
        question: q.to_string(),
        short_answer: a.to_string(),
    })
}

/// Eligibility of layout elements as synthesis targets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetFilter {
    /// When set, only text passages with at least this many words qualify.
    pub min_words: Option<u32>,
}

impl TargetFilter {
    pub fn qualifies(&self, rec: &LayoutRecord) -> bool {
        match self.min_words {
            None => true,
            Some(n) => {
                rec.element_class == ElementClass::Text && rec.word_count.is_some_and(|w| w >= n)
            }
        }
    }
}

/// Uniform choice among qualifying records.
pub fn select_target<'a, R: Rng + ?Sized>(
    records: &'a [LayoutRecord],
    filter: &TargetFilter,
    rng: &mut R,
) -> Option<&'a LayoutRecord> {
    let pool: Vec<&LayoutRecord> = records.iter().filter(|r| filter.qualifies(r)).collect();
    pool.choose(rng).copied()
}

/// Up to `n` distinct qualifying records, uniformly without replacement,
/// in their original order.
pub fn select_targets<'a, R: Rng + ?Sized>(
    records: &'a [LayoutRecord],
    filter: &TargetFilter,
    n: usize,
    rng: &mut R,
) -> Vec<&'a LayoutRecord> {
    let pool: Vec<&LayoutRecord> = records.iter().filter(|r| filter.qualifies(r)).collect();
    let mut picked = rand::seq::index::sample(rng, pool.len(), n.min(pool.len())).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| pool[i]).collect()
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub style: OverlayStyle,
    pub retry: RetryPolicy,
    pub filter: TargetFilter,
    pub multi_page: bool,
    pub split: Split,
    /// Where overlaid screenshots are written.
    pub work_dir: PathBuf,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            style: OverlayStyle::default(),
            retry: RetryPolicy::default(),
            filter: TargetFilter::default(),
            multi_page: true,
            split: Split::Train,
            work_dir: PathBuf::from("overlays"),
        }
    }
}

/// One synthesis unit: a document, its resolved image path, and a target.
#[derive(Debug, Clone)]
pub struct SynthesisJob {
    pub example_id: String,
    pub doc: DocumentImage,
    pub image_path: PathBuf,
    pub target: LayoutRecord,
}

fn load_rgb(path: &Path) -> Result<RgbImage, SynthesisError> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|source| SynthesisError::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Runs overlay, prompt and parse for one job.
///
/// `Ok(None)` means the endpoint answered Empty or something unparseable;
/// the latter is logged and skipped.
pub fn synthesize_example(
    job: &SynthesisJob,
    client: &dyn InferenceClient,
    opts: &SynthesisOptions,
) -> Result<Option<AttributionExample>, SynthesisError> {
    if !opts.filter.qualifies(&job.target) {
        return Err(SynthesisError::NotQualifying(job.example_id.clone()));
    }
    let bbox = job.target.element_bbox;
    let img = load_rgb(&job.image_path)?;
    let marked = overlay_bbox(&img, &bbox, &opts.style)?;
    std::fs::create_dir_all(&opts.work_dir)?;
    let overlay_path = opts.work_dir.join(format!("{}.png", job.example_id));
    marked
        .save(&overlay_path)
        .map_err(|source| SynthesisError::Image {
            path: overlay_path.clone(),
            source,
        })?;

    let req = SynthesisRequest {
        doc: job.doc.clone(),
        target_bbox: bbox,
        overlay_style: opts.style,
    };
    let chat = build_synthesis_prompt(&job.example_id, &req, &overlay_path);
    let completion = complete_with_retry(client, &chat, &opts.retry)?;
    if completion.attempts > 1 {
        tracing::info!(example = %job.example_id, retries = completion.attempts - 1, "synthesis succeeded after retries");
    }

    match parse_synthesis_output(&completion.text) {
        Ok(SynthesisResult::Pair { question, short_answer }) => {
            let Some(answers) = AnswerSet::single(short_answer) else {
                return Ok(None);
            };
            Ok(Some(AttributionExample {
                example_id: job.example_id.clone(),
                query: question,
                answers,
                gold_doc_id: job.doc.doc_id.clone(),
                gold_bbox: bbox,
                category: assign_category(job.target.element_class, &bbox, &job.doc.dims(), opts.multi_page),
                split: opts.split,
            }))
        }
        Ok(SynthesisResult::Empty) => Ok(None),
        Err(e) => {
            tracing::warn!(example = %job.example_id, error = %e, "skipping synthesis sample");
            Ok(None)
        }
    }
}

#[derive(Debug, Default)]
pub struct SynthesisSummary {
    pub examples: Vec<AttributionExample>,
    pub skipped: Vec<String>,
    pub failed: Vec<(String, String)>,
}

/// Runs jobs with a bounded number of in-flight requests; examples are
/// sorted by id.
pub fn synthesize_all(
    jobs: &[SynthesisJob],
    client: &dyn InferenceClient,
    opts: &SynthesisOptions,
    max_in_flight: usize,
) -> SynthesisSummary {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|j| (j.example_id.clone(), synthesize_example(j, client, opts)))
            .collect()
    });
    let mut summary = SynthesisSummary::default();
    for (id, r) in results {
        match r {
            Ok(Some(ex)) => summary.examples.push(ex),
            Ok(None) => summary.skipped.push(id),
            Err(e) => {
                tracing::error!(example = %id, error = %e, "synthesis failed");
                summary.failed.push((id, e.to_string()));
            }
        }
    }
    summary.examples.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    summary.skipped.sort();
    summary.failed.sort();
    summary
}
