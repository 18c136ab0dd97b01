//! Exact cosine search over precomputed embeddings and multi-candidate
//! assembly with hard negatives and no-answer injection.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{read_jsonl, AttributionExample};
use crate::seed::item_rng;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("vector for {id:?} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        got: usize,
    },
    #[error("vector for {0:?} has zero norm")]
    ZeroNorm(String),
    #[error("duplicate id {0:?} in embedding file")]
    DuplicateId(String),
    #[error("index is empty")]
    Empty,
    #[error("example {example_id}: need {needed} distinct negatives, only {available} available")]
    InsufficientNegatives {
        example_id: String,
        needed: usize,
        available: usize,
    },
    #[error("invalid assembly config: {0}")]
    InvalidConfig(String),
    #[error("no ranking for example {0:?}")]
    MissingRanking(String),
    #[error("embedding file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub doc_id: String,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEmbedding {
    pub example_id: String,
    pub vector: Vec<f32>,
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

/// Descending score, then ascending id.
fn rank_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Flat exact-search index. Immutable once built.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<Vec<f32>>,
    norms: Vec<f64>,
}

impl EmbeddingIndex {
    pub fn build(records: Vec<EmbeddingRecord>) -> Result<Self, RetrievalError> {
        let dim = records.first().ok_or(RetrievalError::Empty)?.vector.len();
        let mut seen = HashSet::new();
        let mut index = Self {
            dim,
            ids: Vec::with_capacity(records.len()),
            vectors: Vec::with_capacity(records.len()),
            norms: Vec::with_capacity(records.len()),
        };
        for r in records {
            if r.vector.len() != dim {
                return Err(RetrievalError::DimensionMismatch {
                    id: r.doc_id,
                    expected: dim,
                    got: r.vector.len(),
                });
            }
            let n = norm(&r.vector);
            if n == 0.0 || !n.is_finite() {
                return Err(RetrievalError::ZeroNorm(r.doc_id));
            }
            if !seen.insert(r.doc_id.clone()) {
                return Err(RetrievalError::DuplicateId(r.doc_id));
            }
            index.ids.push(r.doc_id);
            index.vectors.push(r.vector);
            index.norms.push(n);
        }
        Ok(index)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// The `min(k, len)` most cosine-similar documents.
    /// Scores are normalized so `-0.0` never sorts apart from `0.0`.
    pub fn top_k(&self, query: &[f32], k: usize) -> Result<Vec<(String, f64)>, RetrievalError> {
        if query.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                id: "<query>".into(),
                expected: self.dim,
                got: query.len(),
            });
        }
        let qn = norm(query);
        if qn == 0.0 {
            return Err(RetrievalError::ZeroNorm("<query>".into()));
        }
        let mut scored: Vec<(String, f64)> = self
            .ids
            .iter()
            .zip(&self.vectors)
            .zip(&self.norms)
            .map(|((id, v), n)| (id.clone(), dot(query, v) / (qn * n) + 0.0))
            .collect();
        let k = k.min(scored.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, rank_order);
            scored.truncate(k);
        }
        scored.sort_by(rank_order);
        Ok(scored)
    }
}

/// Reads `{"doc_id", "vector"}` lines, or a raw little-endian f32 matrix
/// (`*.f32`) whose row ids live in a sidecar with extension `.ids`.
pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>, RetrievalError> {
    let file_err = |message: String| RetrievalError::File {
        path: path.display().to_string(),
        message,
    };
    if path.extension().is_some_and(|e| e == "f32") {
        let ids_path = path.with_extension("ids");
        let ids_text = fs::read_to_string(&ids_path)
            .map_err(|e| file_err(format!("sidecar {}: {e}", ids_path.display())))?;
        let ids: Vec<&str> = ids_text.lines().filter(|l| !l.trim().is_empty()).collect();
        let bytes = fs::read(path).map_err(|e| file_err(e.to_string()))?;
        if ids.is_empty() || bytes.len() % (4 * ids.len()) != 0 {
            return Err(file_err(format!(
                "{} bytes do not divide into {} f32 rows",
                bytes.len(),
                ids.len()
            )));
        }
        let dim = bytes.len() / 4 / ids.len();
        let floats: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        return Ok(ids
            .iter()
            .zip(floats.chunks_exact(dim))
            .map(|(id, row)| EmbeddingRecord {
                doc_id: id.trim().to_string(),
                vector: row.to_vec(),
            })
            .collect());
    }
    read_jsonl(path).map_err(|e| file_err(e.to_string()))
}

pub fn load_query_embeddings(path: &Path) -> Result<Vec<QueryEmbedding>, RetrievalError> {
    read_jsonl(path).map_err(|e| RetrievalError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssemblyConfig {
    /// Retrieval depth negatives are drawn from.
    pub k: usize,
    /// Documents shown to the model.
    pub m: usize,
    /// Chance the gold document is swapped for one more negative.
    pub no_answer_prob: f64,
    pub seed: u64,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        Self {
            k: 20,
            m: 3,
            no_answer_prob: 0.2,
            seed: 0,
        }
    }
}

impl AssemblyConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.m < 1 || self.m > self.k {
            return Err(RetrievalError::InvalidConfig(format!(
                "need 1 <= m <= k, got m={} k={}",
                self.m, self.k
            )));
        }
        if !(0.0..=1.0).contains(&self.no_answer_prob) {
            return Err(RetrievalError::InvalidConfig(format!(
                "no_answer_prob {} outside [0, 1]",
                self.no_answer_prob
            )));
        }
        Ok(())
    }
}

/// Documents presented together to the model for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub example_id: String,
    pub docs: Vec<String>,
    /// 1-based position of the gold document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_slot: Option<usize>,
    pub has_gold: bool,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Document at a 1-based slot.
    pub fn doc_at(&self, slot: usize) -> Option<&str> {
        slot.checked_sub(1)
            .and_then(|i| self.docs.get(i))
            .map(String::as_str)
    }
}

/// Both views of one assembly: the set with gold guaranteed, and the set
/// after the no-answer draw. They differ only when gold was replaced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assembly {
    pub oracle: CandidateSet,
    pub full: CandidateSet,
}

/// Samples `m - 1` negatives from the top `k` non-gold documents, inserts
/// gold at a uniform slot, then with `no_answer_prob` swaps gold for one
/// further unused negative.
///
/// Draw order is fixed (negatives, slot, coin, replacement), so the oracle
/// view does not depend on `no_answer_prob`.
pub fn assemble_candidates<R: Rng + ?Sized>(
    ex: &AttributionExample,
    ranked: &[(String, f64)],
    cfg: &AssemblyConfig,
    rng: &mut R,
) -> Result<Assembly, RetrievalError> {
    cfg.validate()?;
    let mut seen = HashSet::new();
    let pool: Vec<&str> = ranked
        .iter()
        .take(cfg.k)
        .map(|(id, _)| id.as_str())
        .filter(|id| *id != ex.gold_doc_id && seen.insert(*id))
        .collect();
    if pool.len() < cfg.m {
        return Err(RetrievalError::InsufficientNegatives {
            example_id: ex.example_id.clone(),
            needed: cfg.m,
            available: pool.len(),
        });
    }

    let picked = sample(rng, pool.len(), cfg.m - 1).into_vec();
    let slot = rng.random_range(0..cfg.m);
    let replace = rng.random_bool(cfg.no_answer_prob);

    let mut docs: Vec<String> = picked.iter().map(|&i| pool[i].to_string()).collect();
    docs.insert(slot, ex.gold_doc_id.clone());
    let oracle = CandidateSet {
        example_id: ex.example_id.clone(),
        docs,
        gold_slot: Some(slot + 1),
        has_gold: true,
    };

    let full = if replace {
        let unused: Vec<usize> = (0..pool.len()).filter(|i| !picked.contains(i)).collect();
        let extra = unused[rng.random_range(0..unused.len())];
        let mut docs = oracle.docs.clone();
        docs[slot] = pool[extra].to_string();
        CandidateSet {
            example_id: ex.example_id.clone(),
            docs,
            gold_slot: None,
            has_gold: false,
        }
    } else {
        oracle.clone()
    };
    Ok(Assembly { oracle, full })
}

/// Assembles every example with a per-example generator derived from
/// `cfg.seed` and the example id. Output is sorted by example id.
pub fn assemble_all(
    examples: &[&AttributionExample],
    rankings: &BTreeMap<String, Vec<(String, f64)>>,
    cfg: &AssemblyConfig,
) -> Result<Vec<Assembly>, RetrievalError> {
    let mut out = examples
        .iter()
        .map(|ex| {
            let ranked = rankings
                .get(&ex.example_id)
                .ok_or_else(|| RetrievalError::MissingRanking(ex.example_id.clone()))?;
            let mut rng = item_rng(cfg.seed, "assemble", &ex.example_id);
            assemble_candidates(ex, ranked, cfg, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    out.sort_by(|a, b| a.full.example_id.cmp(&b.full.example_id));
    Ok(out)
}

/// Fraction of sets that still contain the gold document.
pub fn gold_retention(sets: &[CandidateSet]) -> f64 {
    if sets.is_empty() {
        return 0.0;
    }
    sets.iter().filter(|s| s.has_gold).count() as f64 / sets.len() as f64
}
