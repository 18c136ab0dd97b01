//! Scoring of answers and evidence boxes, per-category aggregation with
//! macro averaging, error triage and report emission.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attrgen::{ModelOutput, OutputKind, PromptMode};
use crate::corpus::{AttributionExample, Category};
use crate::geom::iou;
use crate::retrieval::CandidateSet;
use crate::textmatch::{relaxed_em_with, Containment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// The gold document alone.
    Single,
    /// Candidate sets that always contain the gold document.
    MultiOracle,
    /// Candidate sets where gold may have been replaced.
    MultiFull,
}

impl EvalMode {
    pub fn prompt_mode(&self) -> PromptMode {
        match self {
            EvalMode::Single => PromptMode::Single,
            _ => PromptMode::Multi,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMode::Single => "single",
            EvalMode::MultiOracle => "multi_oracle",
            EvalMode::MultiFull => "multi_full",
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(EvalMode::Single),
            "multi_oracle" | "multi-oracle" => Ok(EvalMode::MultiOracle),
            "multi_full" | "multi-full" => Ok(EvalMode::MultiFull),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    WrongSourceAttribution,
    PositionMisalignment,
    GranularityMismatch,
    None,
}

impl ErrorType {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorType::WrongSourceAttribution => "wrong_source_attribution",
            ErrorType::PositionMisalignment => "position_misalignment",
            ErrorType::GranularityMismatch => "granularity_mismatch",
            ErrorType::None => "none",
        }
    }
}

/// How examples whose candidate set lacks the gold document are counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoGoldPolicy {
    /// Both metrics are correct iff the model abstains.
    #[default]
    CreditAbstention,
    /// Left out of category cells; still reported in the no-answer line.
    Exclude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriageThresholds {
    /// Below this IoU (with the predicted center off the gold box) the
    /// prediction points somewhere else entirely.
    pub wrong_source_iou: f64,
    /// Share of the smaller box covered by the larger for a granularity mismatch.
    pub containment: f64,
}

impl Default for TriageThresholds {
    fn default() -> Self {
        Self {
            wrong_source_iou: 0.1,
            containment: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub iou_threshold: f64,
    pub answer_rule: Containment,
    pub no_gold: NoGoldPolicy,
    pub triage: TriageThresholds,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            answer_rule: Containment::Substring,
            no_gold: NoGoldPolicy::CreditAbstention,
            triage: TriageThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub example_id: String,
    pub ans_correct: bool,
    pub bbx_correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_correct: Option<bool>,
    pub gold_present: bool,
    pub kind: OutputKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triage: Option<ErrorType>,
}

/// Scores one output. Pass `cands` in the multi modes, `None` in single mode.
pub fn score_example(
    out: &ModelOutput,
    ex: &AttributionExample,
    cands: Option<&CandidateSet>,
    cfg: &ScoringConfig,
) -> ExampleScore {
    let gold_present = cands.is_none_or(|c| c.has_gold);
    let answered = out.is_answered();

    if !gold_present {
        let abstained = out.kind == OutputKind::NoAnswer;
        return ExampleScore {
            example_id: ex.example_id.clone(),
            ans_correct: abstained,
            bbx_correct: abstained,
            iou: None,
            evidence_correct: None,
            gold_present,
            kind: out.kind,
            triage: None,
        };
    }

    let ans_correct = answered
        && out
            .answer
            .as_deref()
            .is_some_and(|a| relaxed_em_with(a, &ex.answers, cfg.answer_rule));
    let overlap = out.bbox.filter(|_| answered).map(|b| iou(&b, &ex.gold_bbox));
    let evidence_correct =
        cands.map(|c| answered && out.evidence_index.is_some() && out.evidence_index == c.gold_slot);
    let bbx_correct = answered
        && evidence_correct.unwrap_or(true)
        && overlap.is_some_and(|v| v >= cfg.iou_threshold);
    let triage = (answered && !bbx_correct)
        .then(|| triage_error(out, ex, evidence_correct, &cfg.triage));

    ExampleScore {
        example_id: ex.example_id.clone(),
        ans_correct,
        bbx_correct,
        iou: overlap,
        evidence_correct,
        gold_present,
        kind: out.kind,
        triage,
    }
}

/// Classifies a box failure on a gold-present example.
///
/// Order: wrong candidate document, then granularity (one box mostly inside
/// the other), then far-off boxes, then everything else as misalignment.
pub fn triage_error(
    out: &ModelOutput,
    ex: &AttributionExample,
    evidence_correct: Option<bool>,
    th: &TriageThresholds,
) -> ErrorType {
    let Some(pred) = out.bbox.filter(|_| out.is_answered()) else {
        return ErrorType::None;
    };
    if evidence_correct == Some(false) {
        return ErrorType::WrongSourceAttribution;
    }
    let gold = &ex.gold_bbox;
    let overlap = iou(&pred, gold);
    if overlap >= 0.5 {
        // only reachable with a stricter scoring threshold
        return ErrorType::PositionMisalignment;
    }
    let smaller = pred.area().min(gold.area());
    if pred.area() != gold.area() && pred.intersection_area(gold) / smaller >= th.containment {
        return ErrorType::GranularityMismatch;
    }
    let (cx, cy) = pred.center();
    if overlap < th.wrong_source_iou && !gold.contains_point(cx, cy) {
        return ErrorType::WrongSourceAttribution;
    }
    ErrorType::PositionMisalignment
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCell {
    pub category: Category,
    pub count: usize,
    /// Percent; `None` when the category has no examples.
    pub bbx: Option<f64>,
    pub ans: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoAnswerStats {
    pub gold_absent: usize,
    pub abstained: usize,
    pub accuracy: f64,
    /// Gold-present examples where the model wrongly abstained.
    pub false_abstentions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub mode: EvalMode,
    pub label: String,
    pub categories: Vec<CategoryCell>,
    pub macro_bbx: Option<f64>,
    pub macro_ans: Option<f64>,
    pub total: usize,
    pub kinds: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_answer: Option<NoAnswerStats>,
    pub triage: BTreeMap<String, usize>,
    pub scoring: ScoringConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub footnotes: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("score for {0:?} has no matching example")]
    UnknownExample(String),
}

/// Unweighted mean of per-category accuracies.
pub fn macro_average(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn kind_name(k: OutputKind) -> &'static str {
    match k {
        OutputKind::Answered => "answered",
        OutputKind::NoAnswer => "no_answer",
        OutputKind::Unparseable => "unparseable",
    }
}

fn pct(n: usize, d: usize) -> f64 {
    100.0 * n as f64 / d as f64
}

/// Folds id-sorted scores into a report over the defined `categories`.
///
/// Categories without examples are shown as absent and left out of the
/// macro average.
pub fn aggregate(
    scores: &[ExampleScore],
    examples: &[AttributionExample],
    categories: &[Category],
    mode: EvalMode,
    cfg: &ScoringConfig,
) -> Result<Report, EvalError> {
    let by_id: HashMap<&str, &AttributionExample> =
        examples.iter().map(|e| (e.example_id.as_str(), e)).collect();
    let mut sorted: Vec<&ExampleScore> = scores.iter().collect();
    sorted.sort_by(|a, b| a.example_id.cmp(&b.example_id));

    let mut tallies: BTreeMap<Category, (usize, usize, usize)> = BTreeMap::new();
    let mut kinds = BTreeMap::new();
    let mut triage = BTreeMap::new();
    let (mut absent, mut abstained, mut false_abstentions) = (0, 0, 0);
    let mut warnings = Vec::new();

    for s in &sorted {
        let ex = by_id
            .get(s.example_id.as_str())
            .ok_or_else(|| EvalError::UnknownExample(s.example_id.clone()))?;
        *kinds.entry(kind_name(s.kind).to_string()).or_insert(0usize) += 1;
        if let Some(t) = s.triage {
            *triage.entry(t.as_str().to_string()).or_insert(0usize) += 1;
        }
        if !s.gold_present {
            absent += 1;
            abstained += (s.kind == OutputKind::NoAnswer) as usize;
            if cfg.no_gold == NoGoldPolicy::Exclude {
                continue;
            }
        } else if s.kind == OutputKind::NoAnswer {
            false_abstentions += 1;
        }
        if !categories.contains(&ex.category) {
            warnings.push(format!(
                "example {} has category {} outside the report definition",
                ex.example_id, ex.category
            ));
            continue;
        }
        let t = tallies.entry(ex.category).or_default();
        t.0 += 1;
        t.1 += s.bbx_correct as usize;
        t.2 += s.ans_correct as usize;
    }

    let cells: Vec<CategoryCell> = categories
        .iter()
        .map(|&c| match tallies.get(&c) {
            Some(&(n, bbx, ans)) if n > 0 => CategoryCell {
                category: c,
                count: n,
                bbx: Some(pct(bbx, n)),
                ans: Some(pct(ans, n)),
            },
            _ => {
                warnings.push(format!("category {c} has no examples; excluded from the average"));
                CategoryCell {
                    category: c,
                    count: 0,
                    bbx: None,
                    ans: None,
                }
            }
        })
        .collect();

    let macro_bbx = macro_average(&cells.iter().filter_map(|c| c.bbx).collect::<Vec<_>>());
    let macro_ans = macro_average(&cells.iter().filter_map(|c| c.ans).collect::<Vec<_>>());

    let mut footnotes = Vec::new();
    if mode == EvalMode::MultiOracle {
        footnotes.push(
            "multi_oracle uses the same query set as single mode, so the two rows are directly comparable"
                .to_string(),
        );
    }
    if mode == EvalMode::MultiFull {
        footnotes.push(match cfg.no_gold {
            NoGoldPolicy::CreditAbstention => {
                "gold-absent queries count as correct on both metrics iff the model answers \"No answer.\"".to_string()
            }
            NoGoldPolicy::Exclude => "gold-absent queries are excluded from category cells".to_string(),
        });
    }

    Ok(Report {
        mode,
        label: mode.as_str().to_string(),
        categories: cells,
        macro_bbx,
        macro_ans,
        total: sorted.len(),
        kinds,
        no_answer: (mode != EvalMode::Single).then(|| NoAnswerStats {
            gold_absent: absent,
            abstained,
            accuracy: if absent == 0 { 0.0 } else { pct(abstained, absent) },
            false_abstentions,
        }),
        triage,
        scoring: *cfg,
        seed: None,
        footnotes,
        warnings,
        config: None,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"))
}

impl Report {
    /// Column groups in table order: (header, bbx, ans).
    fn columns(&self) -> Vec<(String, Option<f64>, Option<f64>)> {
        let mut cols = Vec::new();
        if self.categories.len() != 1 {
            cols.push(("Average".to_string(), self.macro_bbx, self.macro_ans));
        }
        for c in &self.categories {
            cols.push((c.category.label().to_string(), c.bbx, c.ans));
        }
        cols
    }

    /// Number of bbx/ans value columns in the table.
    pub fn data_columns(&self) -> usize {
        2 * self.columns().len()
    }

    /// Fixed-width table followed by counts, thresholds and notes.
    pub fn to_table(&self) -> String {
        let mut out = comparison_table(std::slice::from_ref(self));
        out.push('\n');
        let counts: Vec<String> = self
            .categories
            .iter()
            .map(|c| format!("{}={}", c.category, c.count))
            .collect();
        let _ = writeln!(out, "examples: {} ({})", self.total, counts.join(", "));
        let kinds: Vec<String> = self.kinds.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(out, "outputs: {}", kinds.join(", "));
        if let Some(na) = &self.no_answer {
            let _ = writeln!(
                out,
                "no-answer detection: {}/{} gold-absent ({:.1}%), false abstentions {}",
                na.abstained, na.gold_absent, na.accuracy, na.false_abstentions
            );
        }
        if !self.triage.is_empty() {
            let t: Vec<String> = self.triage.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(out, "bbx errors: {}", t.join(", "));
        }
        let _ = writeln!(
            out,
            "thresholds: iou>={} triage(wrong_source<{}, containment>={})",
            self.scoring.iou_threshold,
            self.scoring.triage.wrong_source_iou,
            self.scoring.triage.containment
        );
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "seed: {seed}");
        }
        for f in &self.footnotes {
            let _ = writeln!(out, "note: {f}");
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

/// Table with one row per report; columns come from the first report.
pub fn comparison_table(reports: &[Report]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let cols = first.columns();
    let label_w = reports.iter().map(|r| r.label.len()).max().unwrap_or(0).max(12);
    let mut out = String::new();

    let _ = write!(out, "{:<label_w$} ", "Method");
    for (h, _, _) in &cols {
        let _ = write!(out, "| {h:^13} ");
    }
    out.push('\n');
    let _ = write!(out, "{:<label_w$} ", "");
    for _ in &cols {
        let _ = write!(out, "| {:>5}  {:>5}  ", "bbx", "ans");
    }
    out.push('\n');
    out.push_str(&"-".repeat(label_w + 1));
    for _ in &cols {
        out.push_str(&format!("+{}", "-".repeat(15)));
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:<label_w$} ", r.label);
        for (_, b, a) in r.columns() {
            let _ = write!(out, "| {:>5}  {:>5}  ", cell(b), cell(a));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
}

pub fn emit_report(report: &Report, format: ReportFormat, path: &Path) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let body = match format {
        ReportFormat::Table => report.to_table(),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            s
        }
    };
    fs::write(path, body)
}

pub fn load_report(path: &Path) -> std::io::Result<Report> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::geom::BBox;
    use crate::textmatch::AnswerSet;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn ex(id: &str, cat: Category, b: BBox) -> AttributionExample {
        AttributionExample {
            example_id: id.into(),
            query: "q".into(),
            answers: AnswerSet::single("Paris").unwrap(),
            gold_doc_id: "d".into(),
            gold_bbox: b,
            category: cat,
            split: Split::Test,
        }
    }

    fn answered(ans: &str, b: BBox, idx: Option<usize>) -> ModelOutput {
        ModelOutput {
            kind: OutputKind::Answered,
            answer: Some(ans.into()),
            evidence_index: idx,
            bbox: Some(b),
            note: None,
        }
    }

    fn cands(slot: Option<usize>) -> CandidateSet {
        CandidateSet {
            example_id: "e".into(),
            docs: vec!["a".into(), "b".into(), "c".into()],
            gold_slot: slot,
            has_gold: slot.is_some(),
        }
    }

    const CFG: ScoringConfig = ScoringConfig {
        iou_threshold: 0.5,
        answer_rule: Containment::Substring,
        no_gold: NoGoldPolicy::CreditAbstention,
        triage: TriageThresholds { wrong_source_iou: 0.1, containment: 0.9 },
    };

    #[test]
    fn perfect_prediction() {
        let g = bb(0.0, 0.0, 100.0, 50.0);
        let s = score_example(&answered("Paris", g, None), &ex("e", Category::Passage, g), None, &CFG);
        assert!(s.ans_correct && s.bbx_correct);
        assert_eq!(s.iou, Some(1.0));
        assert_eq!(s.triage, None);
    }

    #[test]
    fn shifted_box_fails_bbx_only() {
        let g = bb(0.0, 0.0, 100.0, 50.0);
        // width 100 shifted by 300/7: IoU = (100 - d) / (100 + d) = 0.4
        let d = 300.0 / 7.0;
        let p = bb(d, 0.0, 100.0 + d, 50.0);
        let s = score_example(&answered("Paris", p, None), &ex("e", Category::Passage, g), None, &CFG);
        assert!((s.iou.unwrap() - 0.4).abs() < 1e-12);
        assert!(s.ans_correct);
        assert!(!s.bbx_correct);
        assert_eq!(s.triage, Some(ErrorType::PositionMisalignment));
    }

    #[test]
    fn threshold_is_inclusive() {
        let g = bb(0.0, 0.0, 30.0, 10.0);
        // overlap 200, union 400
        let p = bb(10.0, 0.0, 40.0, 10.0);
        let s = score_example(&answered("Paris", p, None), &ex("e", Category::Passage, g), None, &CFG);
        assert_eq!(s.iou, Some(0.5));
        assert!(s.bbx_correct);
    }

    #[test]
    fn multi_mode_requires_right_document() {
        let g = bb(0.0, 0.0, 100.0, 50.0);
        let e = ex("e", Category::Passage, g);
        let right = score_example(&answered("Paris", g, Some(2)), &e, Some(&cands(Some(2))), &CFG);
        assert!(right.bbx_correct);
        assert_eq!(right.evidence_correct, Some(true));
        let wrong = score_example(&answered("Paris", g, Some(1)), &e, Some(&cands(Some(2))), &CFG);
        assert!(!wrong.bbx_correct);
        assert!(wrong.ans_correct);
        assert_eq!(wrong.evidence_correct, Some(false));
        assert_eq!(wrong.triage, Some(ErrorType::WrongSourceAttribution));
    }

    #[test]
    fn no_gold_scoring() {
        let g = bb(0.0, 0.0, 10.0, 10.0);
        let e = ex("e", Category::Passage, g);
        let s = score_example(&ModelOutput::no_answer(), &e, Some(&cands(None)), &CFG);
        assert!(s.ans_correct && s.bbx_correct);
        assert!(!s.gold_present);
        let s = score_example(&answered("Paris", g, Some(1)), &e, Some(&cands(None)), &CFG);
        assert!(!s.ans_correct && !s.bbx_correct);
        let s = score_example(&ModelOutput::no_answer(), &e, Some(&cands(Some(1))), &CFG);
        assert!(!s.ans_correct && !s.bbx_correct);
        assert_eq!(s.iou, None);
    }

    #[test]
    fn unparseable_scores_false() {
        let e = ex("e", Category::Passage, bb(0.0, 0.0, 10.0, 10.0));
        let s = score_example(&ModelOutput::unparseable("x"), &e, None, &CFG);
        assert!(!s.ans_correct && !s.bbx_correct);
        assert_eq!(s.triage, None);
    }

    #[test]
    fn triage_categories() {
        let gold_table = bb(100.0, 1500.0, 800.0, 2000.0);
        let e = ex("e", Category::NonPassage, gold_table);
        let t = |p: BBox| {
            score_example(&answered("Paris", p, None), &e, None, &CFG).triage.unwrap()
        };
        assert_eq!(t(bb(100.0, 100.0, 800.0, 300.0)), ErrorType::WrongSourceAttribution);
        // one cell of the table
        assert_eq!(t(bb(120.0, 1520.0, 250.0, 1560.0)), ErrorType::GranularityMismatch);
        // predicted box swallowing the gold box
        assert_eq!(t(bb(0.0, 1000.0, 980.0, 3000.0)), ErrorType::GranularityMismatch);
        // IoU 0.35 by vertical shift: (h - d)/(h + d) = 0.35 -> d = 0.65h/1.35
        let d = 500.0 * 0.65 / 1.35;
        let p = bb(100.0, 1500.0 + d, 800.0, 2000.0 + d);
        assert!((iou(&p, &gold_table) - 0.35).abs() < 1e-9);
        assert_eq!(t(p), ErrorType::PositionMisalignment);
    }

    #[test]
    fn macro_examples() {
        assert_eq!(format!("{:.1}", macro_average(&[70.0, 18.7, 23.8]).unwrap()), "37.5");
        assert_eq!(macro_average(&[100.0, 0.0]), Some(50.0));
        assert_eq!(macro_average(&[]), None);
    }

    fn scored(id: &str, ok: bool) -> ExampleScore {
        ExampleScore {
            example_id: id.into(),
            ans_correct: ok,
            bbx_correct: ok,
            iou: None,
            evidence_correct: None,
            gold_present: true,
            kind: OutputKind::Answered,
            triage: None,
        }
    }

    #[test]
    fn macro_ignores_category_sizes() {
        let g = bb(0.0, 0.0, 1.0, 1.0);
        let mut examples = vec![ex("a0", Category::Passage, g)];
        let mut scores = vec![scored("a0", true)];
        for i in 0..9 {
            examples.push(ex(&format!("b{i}"), Category::NonPassage, g));
            scores.push(scored(&format!("b{i}"), false));
        }
        let cats = [Category::Passage, Category::NonPassage];
        let r = aggregate(&scores, &examples, &cats, EvalMode::Single, &CFG).unwrap();
        assert_eq!(r.macro_bbx, Some(50.0));
        assert_eq!(r.macro_ans, Some(50.0));
        assert_eq!(r.data_columns(), 6);
    }

    #[test]
    fn absent_category_excluded_with_warning() {
        let g = bb(0.0, 0.0, 1.0, 1.0);
        let examples = vec![ex("a", Category::PassageFirstPage, g), ex("b", Category::NonPassage, g)];
        let scores = vec![scored("a", true), scored("b", false)];
        let cats = [Category::PassageFirstPage, Category::PassageBeyondFirstPage, Category::NonPassage];
        let r = aggregate(&scores, &examples, &cats, EvalMode::Single, &CFG).unwrap();
        assert_eq!(r.macro_bbx, Some(50.0));
        assert_eq!(r.categories[1].bbx, None);
        assert_eq!(r.warnings.len(), 1);
        assert!(r.to_table().contains("|     -      -  "));
        assert_eq!(r.data_columns(), 8);
    }

    #[test]
    fn unknown_score_is_error() {
        let r = aggregate(&[scored("x", true)], &[], &[Category::Passage], EvalMode::Single, &CFG);
        assert_eq!(r, Err(EvalError::UnknownExample("x".into())));
    }

    #[test]
    fn single_category_has_two_columns() {
        let g = bb(0.0, 0.0, 1.0, 1.0);
        let r = aggregate(&[scored("a", true)], &[ex("a", Category::Passage, g)], &[Category::Passage], EvalMode::Single, &CFG).unwrap();
        assert_eq!(r.data_columns(), 2);
    }

    #[test]
    fn exclude_policy_drops_gold_absent() {
        let g = bb(0.0, 0.0, 1.0, 1.0);
        let examples = vec![ex("a", Category::Passage, g), ex("b", Category::Passage, g)];
        let mut absent = scored("b", true);
        absent.gold_present = false;
        absent.kind = OutputKind::NoAnswer;
        let scores = vec![scored("a", false), absent];
        let cats = [Category::Passage];
        let credit = aggregate(&scores, &examples, &cats, EvalMode::MultiFull, &CFG).unwrap();
        assert_eq!(credit.macro_bbx, Some(50.0));
        let cfg = ScoringConfig { no_gold: NoGoldPolicy::Exclude, ..CFG };
        let excl = aggregate(&scores, &examples, &cats, EvalMode::MultiFull, &cfg).unwrap();
        assert_eq!(excl.macro_bbx, Some(0.0));
        let na = excl.no_answer.unwrap();
        assert_eq!((na.gold_absent, na.abstained, na.accuracy), (1, 1, 100.0));
    }

    #[test]
    fn json_round_trip() {
        let g = bb(0.0, 0.0, 1.0, 1.0);
        let examples: Vec<_> = (0..3).map(|i| ex(&format!("e{i}"), Category::NonPassage, g)).collect();
        let scores = vec![scored("e0", true), scored("e1", false), scored("e2", false)];
        let r = aggregate(&scores, &examples, &[Category::Passage, Category::NonPassage], EvalMode::MultiFull, &CFG).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        emit_report(&r, ReportFormat::Json, &p).unwrap();
        assert_eq!(load_report(&p).unwrap(), r);
    }
}
