use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use boxattr::attrgen::CoordMode;
use boxattr::corpus::Split;
use boxattr::evaluate::{EvalMode, NoGoldPolicy};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetSection,
    pub corpus: CorpusSection,
    pub assembly: AssemblySection,
    pub endpoint: EndpointSection,
    pub eval: EvalSection,
    pub synthesis: SynthesisSection,
    pub export: ExportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            dataset: Default::default(),
            corpus: Default::default(),
            assembly: Default::default(),
            endpoint: Default::default(),
            eval: Default::default(),
            synthesis: Default::default(),
            export: Default::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// `examples.jsonl`; `documents.jsonl` sits next to it.
    pub manifest: Option<PathBuf>,
    pub verify_images: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            manifest: None,
            verify_images: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// COCO-style layout annotations used by `synthesize`.
    pub layout: Option<PathBuf>,
    /// Image root for the layout file; defaults to its directory.
    pub images: Option<PathBuf>,
    pub page_height: u32,
    pub multi_page: bool,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            layout: None,
            images: None,
            page_height: boxattr::geom::DEFAULT_PAGE_HEIGHT,
            multi_page: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssemblySection {
    pub k: usize,
    pub m: usize,
    pub no_answer_prob: f64,
    pub doc_embeddings: Option<PathBuf>,
    pub query_embeddings: Option<PathBuf>,
    /// Where candidate files are written and read; defaults to `<out_dir>/candidates`.
    pub candidates_dir: Option<PathBuf>,
}

impl Default for AssemblySection {
    fn default() -> Self {
        Self {
            k: 20,
            m: 3,
            no_answer_prob: 0.2,
            doc_embeddings: None,
            query_embeddings: None,
            candidates_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointSection {
    pub url: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Scripted mock responses (JSONL of request_id/response/error).
    pub mock: Option<PathBuf>,
    /// Answer every request with its gold target.
    pub gold_echo: bool,
}

impl Default for EndpointSection {
    fn default() -> Self {
        Self {
            url: None,
            model: String::new(),
            api_key_env: None,
            timeout_secs: 120,
            max_retries: 3,
            backoff_ms: 500,
            max_in_flight: 4,
            temperature: 0.0,
            max_tokens: 256,
            mock: None,
            gold_echo: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub mode: EvalMode,
    pub coord: CoordMode,
    /// Re-parse stored raw responses instead of calling the endpoint.
    pub replay: bool,
    /// Results file to replay; defaults to the mode's output directory.
    pub replay_from: Option<PathBuf>,
    pub iou_threshold: f64,
    pub no_gold: NoGoldPolicy,
    pub wrong_source_iou: f64,
    pub containment: f64,
    /// Write an error gallery after scoring.
    pub render: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            mode: EvalMode::Single,
            coord: CoordMode::Absolute,
            replay: false,
            replay_from: None,
            iou_threshold: 0.5,
            no_gold: NoGoldPolicy::CreditAbstention,
            wrong_source_iou: 0.1,
            containment: 0.9,
            render: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSection {
    /// Only text passages with at least this many words qualify.
    pub min_words: Option<u32>,
    pub per_document: usize,
    pub split: Split,
    pub stroke: u32,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        Self {
            min_words: None,
            per_document: 1,
            split: Split::Train,
            stroke: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    /// Write supervised training pairs during `build-dataset`.
    pub train: bool,
    pub crop: bool,
    pub max_slack_fraction: f64,
}

impl Default for ExportSection {
    fn default() -> Self {
        Self {
            train: false,
            crop: false,
            max_slack_fraction: 1.0,
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value`; the value is read as TOML, falling back to
/// a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!("override {assignment:?} is not key=value");
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
        cur = entry
            .as_table_mut()
            .with_context(|| format!("override {key:?}: {p:?} is not a section"))?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Reads the config file (if any) and applies overrides in order.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut table = match path {
        Some(p) => std::fs::read_to_string(p)
            .with_context(|| format!("reading config {}", p.display()))?
            .parse::<toml::Table>()
            .with_context(|| format!("parsing config {}", p.display()))?,
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .context("invalid configuration")?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.assembly.no_answer_prob) {
            bail!("assembly.no_answer_prob must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.eval.iou_threshold) {
            bail!("eval.iou_threshold must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.export.max_slack_fraction) {
            bail!("export.max_slack_fraction must lie in [0, 1]");
        }
        if self.endpoint.max_in_flight == 0 {
            bail!("endpoint.max_in_flight must be at least 1");
        }
        Ok(())
    }

    pub fn candidates_dir(&self) -> PathBuf {
        self.assembly
            .candidates_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("candidates"))
    }

    pub fn eval_dir(&self, mode: EvalMode) -> PathBuf {
        self.out_dir.join("eval").join(mode.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_without_file() {
        let c = load_config(None, &[]).unwrap();
        assert_eq!(c.assembly.k, 20);
        assert_eq!(c.eval.mode, EvalMode::Single);
        assert_eq!(c.endpoint.temperature, 0.0);
    }

    #[test]
    fn overrides_win() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 3\n[eval]\nmode = \"multi_full\"\n").unwrap();
        let c = load_config(
            Some(&p),
            &[
                "seed=9".into(),
                "eval.coord=normalized".into(),
                "endpoint.url=http://localhost:1/v1".into(),
                "assembly.no_answer_prob=0".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.eval.mode, EvalMode::MultiFull);
        assert_eq!(c.eval.coord, CoordMode::Normalized);
        assert_eq!(c.endpoint.url.as_deref(), Some("http://localhost:1/v1"));
        assert_eq!(c.assembly.no_answer_prob, 0.0);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_ranges() {
        assert!(load_config(None, &["eval.bogus=1".into()]).is_err());
        assert!(load_config(None, &["assembly.no_answer_prob=1.5".into()]).is_err());
        assert!(load_config(None, &["no_equals_sign".into()]).is_err());
    }
}
