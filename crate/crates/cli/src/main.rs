mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use boxattr::attrgen::{
    read_results, replay_batch, run_batch, BatchOptions, BatchRecord, CoordMode, DecodingParams,
};
use boxattr::corpus::{
    dataset_stats, ingest_coco, load_dataset_with, read_jsonl, write_dataset, write_jsonl, Dataset, DatasetError,
    LoadOptions,
};
use boxattr::endpoint::{HttpClient, InferenceClient, RetryPolicy, ScriptedClient};
use boxattr::evaluate::{comparison_table, load_report, EvalMode, ExampleScore, ScoringConfig, TriageThresholds};
use boxattr::geom::CropConfig;
use boxattr::pipeline::{
    build_items, evaluate_records, export_training, gold_echo_client, index_candidates, rebase_dataset,
    test_examples, write_evaluation, ExportOptions, FULL_CANDIDATES_FILE, ORACLE_CANDIDATES_FILE,
    REPORT_JSON_FILE, RESULTS_FILE, SCORES_FILE,
};
use boxattr::qaforge::{select_targets, synthesize_all, OverlayStyle, SynthesisJob, SynthesisOptions, TargetFilter};
use boxattr::render::{render_gallery, GalleryItem};
use boxattr::retrieval::{
    assemble_all, gold_retention, load_embeddings, load_query_embeddings, AssemblyConfig, CandidateSet,
    EmbeddingIndex,
};
use boxattr::seed::item_rng;

use config::{load_config, RunConfig};

const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "boxattr", version, about = "Answer and evidence-box attribution harness")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set assembly.k=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Dataset `examples.jsonl`.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    mode: Option<EvalMode>,
    #[arg(long, global = true, value_parser = parse_coord)]
    coord: Option<CoordMode>,
    /// Scripted mock responses instead of a live endpoint.
    #[arg(long, global = true)]
    mock: Option<PathBuf>,
    /// Answer every request with its gold target.
    #[arg(long, global = true)]
    gold_echo: bool,
}

fn parse_coord(s: &str) -> Result<CoordMode, String> {
    match s {
        "absolute" => Ok(CoordMode::Absolute),
        "normalized" => Ok(CoordMode::Normalized),
        _ => Err(format!("unknown coordinate mode {s:?}")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset, write its canonical form and print statistics.
    BuildDataset,
    /// Generate question/answer pairs for layout elements via the endpoint.
    Synthesize,
    /// Build candidate sets from precomputed embeddings.
    Assemble,
    /// Run (or replay) the model on the test split and score it.
    Evaluate {
        /// Re-parse stored raw responses; no endpoint is contacted.
        #[arg(long)]
        replay: bool,
        /// Also write an error gallery.
        #[arg(long)]
        render: bool,
    },
    /// Print saved reports side by side.
    Report {
        /// `report.json` files; defaults to every mode under the output directory.
        reports: Vec<PathBuf>,
        /// Also write the table here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Draw gold and predicted boxes for a scored run.
    Render {
        /// Only render these examples (all bbx failures otherwise).
        #[arg(long = "example")]
        examples: Vec<String>,
    },
}

/// A failure with its exit code: 1 for validation, 2 for the endpoint.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: 1, err: e.into() }
    }
}

fn endpoint_failure(err: anyhow::Error) -> Failure {
    Failure { code: 2, err }
}

type CmdResult = Result<(), Failure>;

fn resolve_config(common: &Common, command: &Command) -> anyhow::Result<RunConfig> {
    let mut overrides = common.overrides.clone();
    let mut push = |k: &str, v: String| overrides.push(format!("{k}={v}"));
    if let Some(s) = common.seed {
        push("seed", s.to_string());
    }
    if let Some(p) = &common.out_dir {
        push("out_dir", toml_str(p));
    }
    if let Some(p) = &common.manifest {
        push("dataset.manifest", toml_str(p));
    }
    if let Some(m) = common.mode {
        push("eval.mode", format!("{:?}", m.as_str()));
    }
    if let Some(c) = common.coord {
        push("eval.coord", if c == CoordMode::Normalized { "\"normalized\"" } else { "\"absolute\"" }.into());
    }
    if let Some(p) = &common.mock {
        push("endpoint.mock", toml_str(p));
    }
    if common.gold_echo {
        push("endpoint.gold_echo", "true".into());
    }
    if let Command::Evaluate { replay, render } = command {
        if *replay {
            push("eval.replay", "true".into());
        }
        if *render {
            push("eval.render", "true".into());
        }
    }
    load_config(common.config.as_deref(), &overrides)
}

fn toml_str(p: &Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: &'a RunConfig,
    outputs: Vec<String>,
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, outputs: &[&str]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let m = RunManifest {
        command,
        config: cfg,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    std::fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

fn retry_policy(cfg: &RunConfig) -> RetryPolicy {
    RetryPolicy {
        max_retries: cfg.endpoint.max_retries,
        backoff_ms: cfg.endpoint.backoff_ms,
    }
}

fn decoding(cfg: &RunConfig) -> DecodingParams {
    DecodingParams {
        temperature: cfg.endpoint.temperature,
        max_tokens: cfg.endpoint.max_tokens,
    }
}

/// Live or scripted client; gold echo is handled by the caller.
fn build_client(cfg: &RunConfig) -> anyhow::Result<Box<dyn InferenceClient>> {
    if let Some(path) = &cfg.endpoint.mock {
        return Ok(Box::new(
            ScriptedClient::load(path).with_context(|| format!("loading mock {}", path.display()))?,
        ));
    }
    let Some(url) = &cfg.endpoint.url else {
        bail!("no endpoint configured: set endpoint.url, endpoint.mock or endpoint.gold_echo");
    };
    let key = match &cfg.endpoint.api_key_env {
        Some(var) => Some(std::env::var(var).with_context(|| format!("environment variable {var} is not set"))?),
        None => None,
    };
    Ok(Box::new(
        HttpClient::new(url.clone(), cfg.endpoint.model.clone(), Duration::from_secs(cfg.endpoint.timeout_secs))
            .with_api_key(key),
    ))
}

fn load_dataset_cfg(cfg: &RunConfig) -> Result<Dataset, Failure> {
    let manifest = cfg
        .dataset
        .manifest
        .as_ref()
        .ok_or_else(|| anyhow!("dataset.manifest is not set"))?;
    let opts = LoadOptions {
        verify_images: cfg.dataset.verify_images,
    };
    load_dataset_with(manifest, opts).map_err(|e| {
        for issue in e.issues() {
            eprintln!("{issue}");
        }
        Failure {
            code: 1,
            err: anyhow::Error::new(e).context(format!("loading dataset {}", manifest.display())),
        }
    })
}

fn cmd_build_dataset(cfg: &RunConfig) -> CmdResult {
    let ds = load_dataset_cfg(cfg)?;
    let dir = cfg.out_dir.join("dataset");
    std::fs::create_dir_all(&dir)?;
    let canonical = rebase_dataset(&ds, &dir)?;
    write_dataset(&canonical, &dir)?;
    let stats = dataset_stats(&canonical).to_table();
    std::fs::write(dir.join("stats.txt"), &stats)?;
    print!("{stats}");
    let mut outputs = vec!["documents.jsonl", "examples.jsonl", "stats.txt"];

    if cfg.export.train {
        let export_dir = cfg.out_dir.join("train");
        let opts = ExportOptions {
            coord: cfg.eval.coord,
            crop: cfg.export.crop.then_some(CropConfig {
                max_slack_fraction: cfg.export.max_slack_fraction,
            }),
            seed: cfg.seed,
        };
        let records = export_training(&canonical, &opts, &export_dir)?;
        write_jsonl(&export_dir.join("train.jsonl"), &records)?;
        println!("exported {} training pairs to {}", records.len(), export_dir.display());
        outputs.push("../train/train.jsonl");
    }
    write_manifest(&dir, "build-dataset", cfg, &outputs)?;
    Ok(())
}

fn cmd_synthesize(cfg: &RunConfig) -> CmdResult {
    let layout_path = cfg
        .corpus
        .layout
        .as_ref()
        .ok_or_else(|| anyhow!("corpus.layout is not set"))?;
    let layout = ingest_coco(layout_path, cfg.corpus.page_height)?;
    let image_root = cfg
        .corpus
        .images
        .clone()
        .unwrap_or_else(|| layout_path.parent().unwrap_or(Path::new(".")).to_path_buf());

    let mut by_doc: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for r in &layout.records {
        by_doc.entry(r.doc_id.as_str()).or_default().push(r.clone());
    }
    let filter = TargetFilter {
        min_words: cfg.synthesis.min_words,
    };
    let mut jobs = Vec::new();
    for doc in &layout.documents {
        let Some(records) = by_doc.get(doc.doc_id.as_str()) else {
            continue;
        };
        let mut rng = item_rng(cfg.seed, "synthesize", &doc.doc_id);
        for target in select_targets(records, &filter, cfg.synthesis.per_document, &mut rng) {
            let idx = records.iter().position(|r| std::ptr::eq(r, target)).expect("target from records");
            jobs.push(SynthesisJob {
                example_id: format!("{}-{idx}", doc.doc_id),
                doc: doc.clone(),
                image_path: image_root.join(&doc.image_path),
                target: target.clone(),
            });
        }
    }
    if cfg.endpoint.gold_echo {
        return Err(anyhow!("gold echo has no meaning for synthesis; use endpoint.mock or endpoint.url").into());
    }
    let client = build_client(cfg)?;
    let dir = cfg.out_dir.join("synth");
    let opts = SynthesisOptions {
        style: OverlayStyle {
            stroke: cfg.synthesis.stroke,
            ..Default::default()
        },
        retry: retry_policy(cfg),
        filter,
        multi_page: cfg.corpus.multi_page,
        split: cfg.synthesis.split,
        work_dir: dir.join("overlays"),
    };
    let summary = synthesize_all(&jobs, client.as_ref(), &opts, cfg.endpoint.max_in_flight);

    let ds = Dataset {
        root: image_root.clone(),
        documents: layout.documents.iter().map(|d| (d.doc_id.clone(), d.clone())).collect(),
        examples: summary.examples,
    };
    let out = rebase_dataset(&ds, &dir)?;
    write_dataset(&out, &dir)?;
    write_manifest(&dir, "synthesize", cfg, &["documents.jsonl", "examples.jsonl"])?;
    println!(
        "targets {}: kept {}, skipped {}, failed {}",
        jobs.len(),
        out.examples.len(),
        summary.skipped.len(),
        summary.failed.len()
    );
    if !summary.failed.is_empty() {
        for (id, e) in &summary.failed {
            eprintln!("{id}: {e}");
        }
        return Err(endpoint_failure(anyhow!("{} synthesis request(s) failed", summary.failed.len())));
    }
    Ok(())
}

fn cmd_assemble(cfg: &RunConfig) -> CmdResult {
    let ds = load_dataset_cfg(cfg)?;
    let docs_path = cfg
        .assembly
        .doc_embeddings
        .as_ref()
        .ok_or_else(|| anyhow!("assembly.doc_embeddings is not set"))?;
    let queries_path = cfg
        .assembly
        .query_embeddings
        .as_ref()
        .ok_or_else(|| anyhow!("assembly.query_embeddings is not set"))?;
    let index = EmbeddingIndex::build(load_embeddings(docs_path)?)?;
    let queries: BTreeMap<String, Vec<f32>> = load_query_embeddings(queries_path)?
        .into_iter()
        .map(|q| (q.example_id, q.vector))
        .collect();

    let examples = test_examples(&ds);
    let mut rankings = BTreeMap::new();
    for ex in &examples {
        let q = queries
            .get(&ex.example_id)
            .ok_or_else(|| anyhow!("no query embedding for example {:?}", ex.example_id))?;
        rankings.insert(ex.example_id.clone(), index.top_k(q, cfg.assembly.k)?);
    }
    let acfg = AssemblyConfig {
        k: cfg.assembly.k,
        m: cfg.assembly.m,
        no_answer_prob: cfg.assembly.no_answer_prob,
        seed: cfg.seed,
    };
    let assemblies = assemble_all(&examples, &rankings, &acfg)?;
    let oracle: Vec<&CandidateSet> = assemblies.iter().map(|a| &a.oracle).collect();
    let full: Vec<CandidateSet> = assemblies.iter().map(|a| a.full.clone()).collect();

    let dir = cfg.candidates_dir();
    write_jsonl(&dir.join(ORACLE_CANDIDATES_FILE), oracle)?;
    write_jsonl(&dir.join(FULL_CANDIDATES_FILE), &full)?;
    write_manifest(&dir, "assemble", cfg, &[ORACLE_CANDIDATES_FILE, FULL_CANDIDATES_FILE])?;
    println!(
        "assembled {} candidate sets (m={}, k={}); gold retention {:.1}%",
        full.len(),
        acfg.m,
        acfg.k,
        100.0 * gold_retention(&full)
    );
    Ok(())
}

fn load_candidates(cfg: &RunConfig, mode: EvalMode) -> anyhow::Result<Option<BTreeMap<String, CandidateSet>>> {
    let file = match mode {
        EvalMode::Single => return Ok(None),
        EvalMode::MultiOracle => ORACLE_CANDIDATES_FILE,
        EvalMode::MultiFull => FULL_CANDIDATES_FILE,
    };
    let path = cfg.candidates_dir().join(file);
    let sets: Vec<CandidateSet> = read_jsonl(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(index_candidates(sets)))
}

fn scoring(cfg: &RunConfig) -> ScoringConfig {
    ScoringConfig {
        iou_threshold: cfg.eval.iou_threshold,
        no_gold: cfg.eval.no_gold,
        triage: TriageThresholds {
            wrong_source_iou: cfg.eval.wrong_source_iou,
            containment: cfg.eval.containment,
        },
        ..Default::default()
    }
}

fn cmd_evaluate(cfg: &RunConfig) -> CmdResult {
    let mode = cfg.eval.mode;
    let ds = load_dataset_cfg(cfg)?;
    let cands = load_candidates(cfg, mode)?;
    let examples = test_examples(&ds);
    let items = build_items(&ds, &examples, mode, cands.as_ref(), cfg.eval.coord, &decoding(cfg))?;
    let dir = cfg.eval_dir(mode);

    let records: Vec<BatchRecord> = if cfg.eval.replay {
        let path = cfg.eval.replay_from.clone().unwrap_or_else(|| dir.join(RESULTS_FILE));
        let stored = read_results(&path).with_context(|| format!("reading stored responses {}", path.display()))?;
        replay_batch(&items, &stored)
    } else {
        let client: Box<dyn InferenceClient> = if cfg.endpoint.gold_echo {
            Box::new(gold_echo_client(&ds, &examples, mode, cands.as_ref(), cfg.eval.coord)?)
        } else {
            build_client(cfg)?
        };
        let opts = BatchOptions {
            max_in_flight: cfg.endpoint.max_in_flight,
            retry: retry_policy(cfg),
        };
        run_batch(&items, client.as_ref(), &opts)
    };
    let failed = records.iter().filter(|r| r.error.is_some()).count();

    let mut eval = evaluate_records(records, &ds, mode, cands.as_ref(), &scoring(cfg))?;
    eval.report.seed = Some(cfg.seed);
    write_evaluation(&dir, &eval)?;
    let mut outputs = vec![RESULTS_FILE, SCORES_FILE, "report.txt", REPORT_JSON_FILE];
    print!("{}", eval.report.to_table());

    if cfg.eval.render {
        let gallery = dir.join("gallery");
        let n = gallery_for(&ds, &eval.records, &eval.scores, cands.as_ref(), &gallery, &[])?;
        println!("rendered {n} example(s) to {}", gallery.display());
        outputs.push("gallery/index.jsonl");
    }
    write_manifest(&dir, "evaluate", cfg, &outputs)?;

    if failed > 0 {
        return Err(endpoint_failure(anyhow!(
            "{failed} request(s) failed after retries; rerun or replay once the endpoint recovers"
        )));
    }
    Ok(())
}

fn gallery_for(
    ds: &Dataset,
    records: &[BatchRecord],
    scores: &[ExampleScore],
    cands: Option<&BTreeMap<String, CandidateSet>>,
    dir: &Path,
    only: &[String],
) -> anyhow::Result<usize> {
    let by_id: BTreeMap<&str, &ExampleScore> = scores.iter().map(|s| (s.example_id.as_str(), s)).collect();
    let mut items = Vec::new();
    for r in records {
        if !only.is_empty() && !only.contains(&r.example_id) {
            continue;
        }
        let example = ds
            .example(&r.example_id)
            .ok_or_else(|| anyhow!("unknown example {:?}", r.example_id))?;
        let score = by_id
            .get(r.example_id.as_str())
            .ok_or_else(|| anyhow!("no score for {:?}", r.example_id))?;
        items.push(GalleryItem {
            example,
            output: &r.output,
            score,
            candidates: cands.and_then(|c| c.get(&r.example_id)).map(|c| c.docs.as_slice()),
        });
    }
    Ok(render_gallery(&items, ds, dir)?.len())
}

fn cmd_report(cfg: &RunConfig, paths: &[PathBuf], output: Option<&Path>) -> CmdResult {
    let paths: Vec<PathBuf> = if paths.is_empty() {
        [EvalMode::Single, EvalMode::MultiOracle, EvalMode::MultiFull]
            .iter()
            .map(|m| cfg.eval_dir(*m).join(REPORT_JSON_FILE))
            .filter(|p| p.exists())
            .collect()
    } else {
        paths.to_vec()
    };
    if paths.is_empty() {
        return Err(anyhow!("no reports found under {}", cfg.out_dir.join("eval").display()).into());
    }
    let reports = paths
        .iter()
        .map(|p| load_report(p).with_context(|| format!("reading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut table = comparison_table(&reports);
    for r in &reports {
        for note in &r.footnotes {
            table.push_str(&format!("note ({}): {note}\n", r.label));
        }
    }
    print!("{table}");
    if let Some(out) = output {
        std::fs::write(out, &table)?;
    }
    Ok(())
}

fn cmd_render(cfg: &RunConfig, only: &[String]) -> CmdResult {
    let mode = cfg.eval.mode;
    let ds = load_dataset_cfg(cfg)?;
    let cands = load_candidates(cfg, mode)?;
    let dir = cfg.eval_dir(mode);
    let examples = test_examples(&ds);
    let items = build_items(&ds, &examples, mode, cands.as_ref(), cfg.eval.coord, &decoding(cfg))?;
    let stored = read_results(&dir.join(RESULTS_FILE))?;
    let records = replay_batch(&items, &stored);
    let scores: Vec<ExampleScore> = read_jsonl(&dir.join(SCORES_FILE)).map_err(|e: DatasetError| anyhow!(e))?;
    let gallery = dir.join("gallery");
    let n = gallery_for(&ds, &records, &scores, cands.as_ref(), &gallery, only)?;
    println!("rendered {n} example(s) to {}", gallery.display());
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    let cfg = resolve_config(&cli.common, &cli.command)?;
    match &cli.command {
        Command::BuildDataset => cmd_build_dataset(&cfg),
        Command::Synthesize => cmd_synthesize(&cfg),
        Command::Assemble => cmd_assemble(&cfg),
        Command::Evaluate { .. } => cmd_evaluate(&cfg),
        Command::Report { reports, output } => cmd_report(&cfg, reports, output.as_deref()),
        Command::Render { examples } => cmd_render(&cfg, examples),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
