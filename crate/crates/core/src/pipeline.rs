//! End-to-end glue: dataset + candidates → requests → outputs → scores →
//! report, plus the training export with optional crop augmentation.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attrgen::{
    build_multi_prompt, build_single_prompt, format_target_with, BatchItem, BatchRecord, ChatRequest,
    CoordMode, DecodingParams, ImageRef, PromptError, ResultRecord,
};
use crate::corpus::{write_jsonl, AttributionExample, Dataset, DatasetError, Split};
use crate::endpoint::ScriptedClient;
use crate::evaluate::{aggregate, score_example, EvalError, EvalMode, ExampleScore, Report, ScoringConfig};
use crate::geom::{cropped_dims, remap_bbox, sample_crop, CropConfig, CropRect, GeomError, ImageDims};
use crate::retrieval::CandidateSet;
use crate::seed::item_rng;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const REPORT_TABLE_FILE: &str = "report.txt";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const ORACLE_CANDIDATES_FILE: &str = "candidates_oracle.jsonl";
pub const FULL_CANDIDATES_FILE: &str = "candidates_full.jsonl";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("document {0:?} is not in the corpus")]
    MissingDoc(String),
    #[error("no candidate set for example {0:?}")]
    MissingCandidates(String),
    #[error("mode {0} needs candidate sets")]
    CandidatesRequired(&'static str),
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Test-split examples sorted by id.
pub fn test_examples(ds: &Dataset) -> Vec<&AttributionExample> {
    let mut v: Vec<_> = ds.split(Split::Test).collect();
    v.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    v
}

pub fn index_candidates(sets: Vec<CandidateSet>) -> BTreeMap<String, CandidateSet> {
    sets.into_iter().map(|c| (c.example_id.clone(), c)).collect()
}

fn doc_dims(ds: &Dataset, doc_id: &str) -> Result<ImageDims, PipelineError> {
    ds.document(doc_id)
        .map(|d| d.dims())
        .ok_or_else(|| PipelineError::MissingDoc(doc_id.to_string()))
}

fn candidates_for<'a>(
    ex: &AttributionExample,
    mode: EvalMode,
    cands: Option<&'a BTreeMap<String, CandidateSet>>,
) -> Result<Option<&'a CandidateSet>, PipelineError> {
    if mode == EvalMode::Single {
        return Ok(None);
    }
    let cands = cands.ok_or(PipelineError::CandidatesRequired(mode.as_str()))?;
    cands
        .get(&ex.example_id)
        .map(Some)
        .ok_or_else(|| PipelineError::MissingCandidates(ex.example_id.clone()))
}

/// One request per example, keyed by example id.
pub fn build_items(
    ds: &Dataset,
    examples: &[&AttributionExample],
    mode: EvalMode,
    cands: Option<&BTreeMap<String, CandidateSet>>,
    coord: CoordMode,
    decoding: &DecodingParams,
) -> Result<Vec<BatchItem>, PipelineError> {
    examples
        .iter()
        .map(|ex| {
            let (mut request, dims) = match candidates_for(ex, mode, cands)? {
                None => {
                    let doc = ds
                        .document(&ex.gold_doc_id)
                        .ok_or_else(|| PipelineError::MissingDoc(ex.gold_doc_id.clone()))?;
                    let req = build_single_prompt(&ex.example_id, &ex.query, ImageRef::for_document(ds, doc));
                    (req, vec![doc.dims()])
                }
                Some(c) => {
                    let req = build_multi_prompt(&ex.query, c, ds)?;
                    let dims = c
                        .docs
                        .iter()
                        .map(|d| doc_dims(ds, d))
                        .collect::<Result<Vec<_>, _>>()?;
                    (req, dims)
                }
            };
            request.decoding = decoding.clone();
            Ok(BatchItem {
                example_id: ex.example_id.clone(),
                request,
                mode: mode.prompt_mode(),
                dims,
                coord,
            })
        })
        .collect()
}

/// The assistant text a perfect model would produce for each example.
pub fn gold_targets(
    ds: &Dataset,
    examples: &[&AttributionExample],
    mode: EvalMode,
    cands: Option<&BTreeMap<String, CandidateSet>>,
    coord: CoordMode,
) -> Result<Vec<(String, String)>, PipelineError> {
    examples
        .iter()
        .map(|ex| {
            let c = candidates_for(ex, mode, cands)?;
            let dims = doc_dims(ds, &ex.gold_doc_id)?;
            Ok((ex.example_id.clone(), format_target_with(ex, c, coord, Some(&dims))))
        })
        .collect()
}

/// Mock endpoint that answers every request with its gold target.
pub fn gold_echo_client(
    ds: &Dataset,
    examples: &[&AttributionExample],
    mode: EvalMode,
    cands: Option<&BTreeMap<String, CandidateSet>>,
    coord: CoordMode,
) -> Result<ScriptedClient, PipelineError> {
    let targets = gold_targets(ds, examples, mode, cands, coord)?;
    Ok(targets
        .into_iter()
        .fold(ScriptedClient::new(), |c, (id, text)| c.respond(id, text)))
}

/// Scores records against their examples; order follows `records`.
pub fn score_records(
    records: &[BatchRecord],
    ds: &Dataset,
    mode: EvalMode,
    cands: Option<&BTreeMap<String, CandidateSet>>,
    cfg: &ScoringConfig,
) -> Result<Vec<ExampleScore>, PipelineError> {
    let by_id: HashMap<&str, &AttributionExample> =
        ds.examples.iter().map(|e| (e.example_id.as_str(), e)).collect();
    records
        .iter()
        .map(|r| {
            let ex = by_id
                .get(r.example_id.as_str())
                .ok_or_else(|| EvalError::UnknownExample(r.example_id.clone()))?;
            let c = candidates_for(ex, mode, cands)?;
            Ok(score_example(&r.output, ex, c, cfg))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub records: Vec<BatchRecord>,
    pub scores: Vec<ExampleScore>,
    pub report: Report,
}

/// Scores and aggregates over the dataset's category scheme.
pub fn evaluate_records(
    records: Vec<BatchRecord>,
    ds: &Dataset,
    mode: EvalMode,
    cands: Option<&BTreeMap<String, CandidateSet>>,
    cfg: &ScoringConfig,
) -> Result<Evaluation, PipelineError> {
    let scores = score_records(&records, ds, mode, cands, cfg)?;
    let report = aggregate(&scores, &ds.examples, ds.scheme().categories(), mode, cfg)?;
    Ok(Evaluation { records, scores, report })
}

/// Writes results, scores and both report forms into `dir`.
pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)?;
    write_jsonl(&dir.join(RESULTS_FILE), eval.records.iter().map(ResultRecord::from))?;
    write_jsonl(&dir.join(SCORES_FILE), &eval.scores)?;
    crate::evaluate::emit_report(&eval.report, crate::evaluate::ReportFormat::Table, &dir.join(REPORT_TABLE_FILE))?;
    crate::evaluate::emit_report(&eval.report, crate::evaluate::ReportFormat::Json, &dir.join(REPORT_JSON_FILE))?;
    Ok(())
}

/// `target` expressed relative to `base`, both taken as absolute paths.
pub fn relative_path(target: &Path, base: &Path) -> std::io::Result<PathBuf> {
    let t = std::path::absolute(target)?;
    let b = std::path::absolute(base)?;
    let tc: Vec<Component> = t.components().collect();
    let bc: Vec<Component> = b.components().collect();
    let common = tc.iter().zip(&bc).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..bc.len() {
        out.push("..");
    }
    for c in &tc[common..] {
        out.push(c.as_os_str());
    }
    Ok(out)
}

/// Copy of `ds` whose image paths resolve from `new_root`.
pub fn rebase_dataset(ds: &Dataset, new_root: &Path) -> std::io::Result<Dataset> {
    let mut out = ds.clone();
    for doc in out.documents.values_mut() {
        let abs = ds.image_path(doc);
        doc.image_path = relative_path(&abs, new_root)?;
    }
    out.root = new_root.to_path_buf();
    out.examples.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    Ok(out)
}

/// One supervised pair for fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub example_id: String,
    pub request: ChatRequest,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<CropRect>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExportOptions {
    pub coord: CoordMode,
    /// Crop each image around its gold box before export.
    pub crop: Option<CropConfig>,
    pub seed: u64,
}

/// Single-document training pairs for the train split, sorted by id.
///
/// With cropping on, cropped images are written under `out_dir/images`
/// and the target box is remapped into the crop.
pub fn export_training(ds: &Dataset, opts: &ExportOptions, out_dir: &Path) -> Result<Vec<TrainRecord>, PipelineError> {
    let mut examples: Vec<&AttributionExample> = ds.split(Split::Train).collect();
    examples.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let doc = ds
            .document(&ex.gold_doc_id)
            .ok_or_else(|| PipelineError::MissingDoc(ex.gold_doc_id.clone()))?;
        let dims = doc.dims();
        let (image, target_ex, target_dims, crop) = match &opts.crop {
            None => (ImageRef::for_document(ds, doc), ex.clone(), dims, None),
            Some(cfg) => {
                let mut rng = item_rng(opts.seed, "crop", &ex.example_id);
                let crop = sample_crop(&dims, &ex.gold_bbox, &mut rng, cfg);
                let cdims = cropped_dims(&crop, &dims);
                let src_path = ds.image_path(doc);
                let src = image::open(&src_path)
                    .map_err(|source| PipelineError::Image { path: src_path.clone(), source })?;
                let cut = src.crop_imm(crop.x1() as u32, crop.y1() as u32, cdims.width, cdims.height);
                let path = out_dir.join("images").join(format!("{}.png", ex.example_id.replace('/', "_")));
                if let Some(p) = path.parent() {
                    fs::create_dir_all(p)?;
                }
                cut.save(&path)
                    .map_err(|source| PipelineError::Image { path: path.clone(), source })?;
                let mut remapped = ex.clone();
                remapped.gold_bbox = remap_bbox(&ex.gold_bbox, &crop)?;
                let image = ImageRef {
                    doc_id: doc.doc_id.clone(),
                    path,
                    width: cdims.width,
                    height: cdims.height,
                };
                (image, remapped, cdims, Some(crop))
            }
        };
        out.push(TrainRecord {
            example_id: ex.example_id.clone(),
            request: build_single_prompt(&ex.example_id, &ex.query, image),
            target: format_target_with(&target_ex, None, opts.coord, Some(&target_dims)),
            crop,
        });
    }
    Ok(out)
}
