//! Relaxed exact-match answer judgment.

use serde::{Deserialize, Serialize};

/// Maximum character-length gap between a prediction and a gold answer.
pub const MAX_LENGTH_DIFF: usize = 20;

/// Lowercases, collapses whitespace runs, trims, and strips terminal periods.
pub fn normalize_text(s: &str) -> String {
    let collapsed = s
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    collapsed.trim_end_matches('.').trim_end().to_string()
}

/// How one normalized string must relate to the other to count as a match.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Containment {
    /// Contiguous substring in either direction.
    #[default]
    Substring,
    /// Order-preserving, possibly gapped, subsequence in either direction.
    Subsequence,
}

impl Containment {
    fn holds(self, a: &str, b: &str) -> bool {
        match self {
            Containment::Substring => a.contains(b) || b.contains(a),
            Containment::Subsequence => is_subsequence(a, b) || is_subsequence(b, a),
        }
    }
}

fn is_subsequence(needle: &str, haystack: &str) -> bool {
    let mut hay = haystack.chars();
    needle.chars().all(|c| hay.any(|h| h == c))
}

/// Non-empty set of acceptable gold answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerSet(Vec<String>);

impl AnswerSet {
    /// Returns `None` if no entry survives normalization as non-empty.
    pub fn new<I, S>(answers: I) -> Option<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let answers: Vec<String> = answers.into_iter().map(Into::into).collect();
        if answers.is_empty() || answers.iter().any(|a| normalize_text(a).is_empty()) {
            return None;
        }
        Some(Self(answers))
    }

    pub fn single(answer: impl Into<String>) -> Option<Self> {
        Self::new([answer.into()])
    }

    /// The first listed answer, used as the generation target.
    pub fn primary(&self) -> &str {
        &self.0[0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, answer: impl Into<String>) {
        self.0.push(answer.into());
    }
}

/// Relaxed exact match with the default substring rule.
pub fn relaxed_em(pred: &str, gold: &AnswerSet) -> bool {
    relaxed_em_with(pred, gold, Containment::Substring)
}

pub fn relaxed_em_with(pred: &str, gold: &AnswerSet, rule: Containment) -> bool {
    let p = normalize_text(pred);
    if p.is_empty() {
        return false;
    }
    let p_len = p.chars().count();
    gold.iter().any(|g| {
        let g = normalize_text(g);
        !g.is_empty()
            && p_len.abs_diff(g.chars().count()) <= MAX_LENGTH_DIFF
            && rule.holds(&p, &g)
    })
}
