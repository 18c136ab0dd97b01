use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::parse::{parse_model_output, ModelOutput, OutputKind, PromptMode};
use super::prompt::{ChatRequest, CoordMode};
use crate::corpus::{read_jsonl, write_jsonl, DatasetError};
use crate::endpoint::{complete_with_retry, InferenceClient, RetryPolicy};
use crate::geom::{BBox, ImageDims};

/// A request plus what is needed to parse its reply.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub example_id: String,
    pub request: ChatRequest,
    pub mode: PromptMode,
    /// Transmitted image sizes, in candidate order.
    pub dims: Vec<ImageDims>,
    pub coord: CoordMode,
}

impl BatchItem {
    pub fn parse(&self, raw: &str) -> ModelOutput {
        parse_model_output(raw, self.mode, &self.dims, self.coord)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    pub example_id: String,
    pub output: ModelOutput,
    pub latency_ms: u64,
    pub attempts: u32,
    /// Generated text; empty when the call never succeeded.
    pub raw: String,
    /// Transport failure that exhausted the retry budget.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct BatchOptions {
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }
}

fn run_one(item: &BatchItem, client: &dyn InferenceClient, retry: &RetryPolicy) -> BatchRecord {
    match complete_with_retry(client, &item.request, retry) {
        Ok(c) => BatchRecord {
            example_id: item.example_id.clone(),
            output: item.parse(&c.text),
            latency_ms: c.latency.as_millis() as u64,
            attempts: c.attempts,
            raw: c.text,
            error: None,
        },
        Err(f) => {
            tracing::error!(example = %item.example_id, error = %f, "endpoint call failed");
            BatchRecord {
                example_id: item.example_id.clone(),
                output: ModelOutput::unparseable(format!("endpoint failure: {}", f.error)),
                latency_ms: 0,
                attempts: f.attempts,
                raw: String::new(),
                error: Some(f.to_string()),
            }
        }
    }
}

/// Runs every item with at most `max_in_flight` concurrent calls. Output is
/// sorted by example id regardless of completion order.
pub fn run_batch(
    items: &[BatchItem],
    client: &dyn InferenceClient,
    opts: &BatchOptions,
) -> Vec<BatchRecord> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.max_in_flight.max(1))
        .build()
        .expect("thread pool");
    let mut out: Vec<BatchRecord> = pool.install(|| {
        items
            .par_iter()
            .map(|item| run_one(item, client, &opts.retry))
            .collect()
    });
    out.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    out
}

/// Line of the persisted results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub example_id: String,
    pub kind: OutputKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    pub raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<&BatchRecord> for ResultRecord {
    fn from(r: &BatchRecord) -> Self {
        Self {
            example_id: r.example_id.clone(),
            kind: r.output.kind,
            answer: r.output.answer.clone(),
            evidence_index: r.output.evidence_index,
            bbox: r.output.bbox,
            raw: r.raw.clone(),
            note: r.output.note.clone(),
            error: r.error.clone(),
        }
    }
}

impl ResultRecord {
    pub fn output(&self) -> ModelOutput {
        ModelOutput {
            kind: self.kind,
            answer: self.answer.clone(),
            evidence_index: self.evidence_index,
            bbox: self.bbox,
            note: self.note.clone(),
        }
    }
}

pub fn write_results(path: &Path, records: &[BatchRecord]) -> std::io::Result<()> {
    write_jsonl(path, records.iter().map(ResultRecord::from))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>, DatasetError> {
    read_jsonl(path)
}

/// Re-parses persisted raw responses without contacting any endpoint.
///
/// Items without a stored response come back unparseable.
pub fn replay_batch(items: &[BatchItem], stored: &[ResultRecord]) -> Vec<BatchRecord> {
    let by_id: std::collections::HashMap<&str, &ResultRecord> =
        stored.iter().map(|r| (r.example_id.as_str(), r)).collect();
    let mut out: Vec<BatchRecord> = items
        .iter()
        .map(|item| match by_id.get(item.example_id.as_str()) {
            Some(rec) => BatchRecord {
                example_id: item.example_id.clone(),
                output: match &rec.error {
                    Some(_) => rec.output(),
                    None => item.parse(&rec.raw),
                },
                latency_ms: 0,
                attempts: 0,
                raw: rec.raw.clone(),
                error: rec.error.clone(),
            },
            None => BatchRecord {
                example_id: item.example_id.clone(),
                output: ModelOutput::unparseable("no stored response to replay"),
                latency_ms: 0,
                attempts: 0,
                raw: String::new(),
                error: None,
            },
        })
        .collect();
    out.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    out
}
