//! Draws gold and predicted boxes on screenshots, with a caption strip, and
//! groups failures into per-error-type galleries.

use std::fs;
use std::path::{Path, PathBuf};

use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attrgen::{ModelOutput, OutputKind};
use crate::corpus::{write_jsonl, AttributionExample, Dataset};
use crate::evaluate::{ErrorType, ExampleScore};
use crate::geom::BBox;
use crate::qaforge::in_stroke_band;

pub const GOLD_COLOR: [u8; 3] = [0, 170, 0];
pub const PRED_COLOR: [u8; 3] = [220, 0, 0];
pub const STROKE: u32 = 3;

const GLYPH: u32 = 8;
const LINE_HEIGHT: u32 = 11;
const CAPTION_LINES: u32 = 6;
const PAD: u32 = 4;
/// Height of the strip appended below every render.
pub const CAPTION_HEIGHT: u32 = CAPTION_LINES * LINE_HEIGHT + 2 * PAD;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("document {0:?} is not in the corpus")]
    MissingDoc(String),
    #[error("evidence index {index} has no candidate document")]
    BadEvidence { index: usize },
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub bbox: BBox,
    pub color: [u8; 3],
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderSpec {
    pub example_id: String,
    pub source: PathBuf,
    pub layers: Vec<Layer>,
    pub caption: Vec<String>,
    pub output: PathBuf,
}

fn draw_box(img: &mut RgbImage, b: &BBox, color: [u8; 3]) {
    let (w, h) = img.dimensions();
    let x0 = b.x1().floor() as u32;
    let y0 = b.y1().floor() as u32;
    let x1 = (b.x2().ceil() as u32).min(w);
    let y1 = (b.y2().ceil() as u32).min(h);
    for y in y0..y1 {
        for x in x0..x1 {
            if in_stroke_band(b, STROKE, x, y) {
                img.put_pixel(x, y, Rgb(color));
            }
        }
    }
}

fn draw_text(img: &mut RgbImage, x: u32, y: u32, text: &str, color: Rgb<u8>) {
    let (w, h) = img.dimensions();
    for (i, ch) in text.chars().enumerate() {
        let gx = x + i as u32 * GLYPH;
        if gx + GLYPH > w {
            break;
        }
        let glyph = BASIC_FONTS.get(ch).or_else(|| BASIC_FONTS.get('?')).unwrap_or([0; 8]);
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                let (px, py) = (gx + col, y + row as u32);
                if bits >> col & 1 == 1 && py < h {
                    img.put_pixel(px, py, color);
                }
            }
        }
    }
}

/// Copies the source, draws layers, appends the caption strip and writes
/// the result. The source file is only read.
pub fn render_spec(spec: &RenderSpec) -> Result<(u32, u32), RenderError> {
    let src = image::open(&spec.source)
        .map_err(|source| RenderError::Image {
            path: spec.source.clone(),
            source,
        })?
        .to_rgb8();
    let (w, h) = src.dimensions();
    let mut canvas = RgbImage::from_pixel(w, h + CAPTION_HEIGHT, Rgb([255, 255, 255]));
    image::imageops::replace(&mut canvas, &src, 0, 0);
    for layer in &spec.layers {
        draw_box(&mut canvas, &layer.bbox, layer.color);
    }
    let max_chars = (w.saturating_sub(2 * PAD) / GLYPH) as usize;
    for (i, line) in spec.caption.iter().take(CAPTION_LINES as usize).enumerate() {
        let clipped: String = line.chars().take(max_chars).collect();
        draw_text(&mut canvas, PAD, h + PAD + i as u32 * LINE_HEIGHT, &clipped, Rgb([0, 0, 0]));
    }
    if let Some(parent) = spec.output.parent() {
        fs::create_dir_all(parent)?;
    }
    canvas.save(&spec.output).map_err(|source| RenderError::Image {
        path: spec.output.clone(),
        source,
    })?;
    Ok(canvas.dimensions())
}

/// Builds the render for one scored output.
///
/// `candidates` lists the candidate doc ids in multi mode. When the model
/// points at a non-gold document, that document is drawn with the
/// prediction only and the caption says where gold lives.
pub fn build_render_spec(
    ex: &AttributionExample,
    out: &ModelOutput,
    score: Option<&ExampleScore>,
    candidates: Option<&[String]>,
    ds: &Dataset,
    output: PathBuf,
) -> Result<RenderSpec, RenderError> {
    let pred_doc = match (candidates, out.evidence_index) {
        (Some(c), Some(i)) => c
            .get(i.wrapping_sub(1))
            .cloned()
            .ok_or(RenderError::BadEvidence { index: i })?,
        _ => ex.gold_doc_id.clone(),
    };
    let on_gold = pred_doc == ex.gold_doc_id;
    let doc = ds
        .document(&pred_doc)
        .ok_or_else(|| RenderError::MissingDoc(pred_doc.clone()))?;

    let mut layers = Vec::new();
    if on_gold {
        layers.push(Layer {
            bbox: ex.gold_bbox,
            color: GOLD_COLOR,
            label: "gold".into(),
        });
    }
    if let (true, Some(b)) = (out.is_answered(), out.bbox) {
        layers.push(Layer {
            bbox: b,
            color: PRED_COLOR,
            label: "prediction".into(),
        });
    }

    let answers: Vec<&str> = ex.answers.iter().collect();
    let pred = match out.kind {
        OutputKind::Answered => format!("Pred: {}", out.answer.as_deref().unwrap_or("")),
        OutputKind::NoAnswer => "Pred: no prediction (model abstained)".to_string(),
        OutputKind::Unparseable => "Pred: no prediction (unparseable output)".to_string(),
    };
    let iou = score
        .and_then(|s| s.iou)
        .map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
    let triage = score
        .and_then(|s| s.triage)
        .map_or("none", |t| t.as_str());
    let doc_line = if on_gold {
        format!("doc: {}", ex.gold_doc_id)
    } else {
        format!("doc: {} (predicted; gold is {})", pred_doc, ex.gold_doc_id)
    };

    Ok(RenderSpec {
        example_id: ex.example_id.clone(),
        source: ds.image_path(doc),
        layers,
        caption: vec![
            format!("{} [{}]", ex.example_id, ex.category.label()),
            format!("Q: {}", ex.query),
            format!("Gold: {}", answers.join(" | ")),
            pred,
            format!("IoU: {iou}  error: {triage}"),
            doc_line,
        ],
        output,
    })
}

pub fn render_result(
    ex: &AttributionExample,
    out: &ModelOutput,
    score: Option<&ExampleScore>,
    candidates: Option<&[String]>,
    ds: &Dataset,
    output: &Path,
) -> Result<RenderSpec, RenderError> {
    let spec = build_render_spec(ex, out, score, candidates, ds, output.to_path_buf())?;
    render_spec(&spec)?;
    Ok(spec)
}

/// Gallery input: one scored output with its example.
#[derive(Debug, Clone)]
pub struct GalleryItem<'a> {
    pub example: &'a AttributionExample,
    pub output: &'a ModelOutput,
    pub score: &'a ExampleScore,
    pub candidates: Option<&'a [String]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub file: String,
    pub example_id: String,
    pub triage: ErrorType,
}

pub const GALLERY_INDEX: &str = "index.jsonl";

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Renders every gold-present item whose box was scored wrong into
/// `dir/<error type>/`, plus an `index.jsonl` manifest sorted by example id.
pub fn render_gallery(items: &[GalleryItem<'_>], ds: &Dataset, dir: &Path) -> Result<Vec<GalleryEntry>, RenderError> {
    let selected: Vec<&GalleryItem> = items
        .iter()
        .filter(|i| i.score.gold_present && !i.score.bbx_correct)
        .collect();
    let mut entries: Vec<GalleryEntry> = selected
        .par_iter()
        .map(|item| {
            let triage = item.score.triage.unwrap_or(ErrorType::None);
            let file = format!("{}/{}.png", triage.as_str(), file_stem(&item.example.example_id));
            render_result(item.example, item.output, Some(item.score), item.candidates, ds, &dir.join(&file))?;
            Ok(GalleryEntry {
                file,
                example_id: item.example.example_id.clone(),
                triage,
            })
        })
        .collect::<Result<_, RenderError>>()?;
    entries.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    write_jsonl(&dir.join(GALLERY_INDEX), &entries)?;
    Ok(entries)
}
