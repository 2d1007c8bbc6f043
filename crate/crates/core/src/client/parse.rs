//! Extraction of labels and elicited confidences from free-form replies.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::instance::Label;

/// Outcome of parsing one reply against an option set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedAnswer {
    Label(Label),
    ParseFailure,
}

impl ParsedAnswer {
    pub fn label(&self) -> Option<&Label> {
        match self {
            ParsedAnswer::Label(l) => Some(l),
            ParsedAnswer::ParseFailure => None,
        }
    }
}

static LEADING: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:\((?P<p>[A-Za-z0-9]+)\)|(?P<d>[A-Za-z0-9]+)[.)])").expect("valid regex")
});

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[-+]?\d+(?:\.\d+)?").expect("valid regex"));

static TOPK_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^\W*(?:(?:G|guess)?\s*\d+\s*[.):]\s*)?\(?(?P<label>[A-Za-z0-9]+)\)?\s*(?:[:=,\-]|\s)\s*(?:P\d*\s*[:=]\s*)?\(?(?P<p>\d*\.?\d+)\s*(?P<pct>%?)",
    )
    .expect("valid regex")
});

fn lookup(token: &str, labels: &[Label]) -> Option<Label> {
    labels.iter().find(|l| l.as_str().eq_ignore_ascii_case(token)).cloned()
}

/// Maps a reply onto one of `labels`.
///
/// Precedence: the whole reply is a label; the reply opens with `X)`, `X.`
/// or `(X)`; exactly one distinct label token appears in the first line.
/// Matching is case-insensitive. Anything else, including two labels at the
/// same precedence, is a parse failure.
pub fn parse_answer(raw_text: &str, labels: &[Label]) -> ParsedAnswer {
    let text = raw_text.trim();
    if let Some(l) = lookup(text, labels) {
        return ParsedAnswer::Label(l);
    }
    if let Some(c) = LEADING.captures(text) {
        let tok = c.name("p").or_else(|| c.name("d")).map(|m| m.as_str()).unwrap_or_default();
        if let Some(l) = lookup(tok, labels) {
            return ParsedAnswer::Label(l);
        }
    }
    let first = text.lines().next().unwrap_or_default();
    let mut found: Vec<Label> = first
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .filter_map(|t| lookup(t, labels))
        .collect();
    found.sort();
    found.dedup();
    match found.as_slice() {
        [only] => ParsedAnswer::Label(only.clone()),
        _ => ParsedAnswer::ParseFailure,
    }
}

/// First number in a verbal-confidence reply, if it lies in `[0, 100]`.
pub fn parse_confidence(raw_text: &str) -> Option<f64> {
    let m = NUMBER.find(raw_text)?;
    let v: f64 = m.as_str().parse().ok()?;
    (0.0..=100.0).contains(&v).then_some(v)
}

/// Parses a top-k candidate list into label → confidence in `[0, 1]`.
///
/// Accepts lines such as `A: 0.8`, `2. (B) 15%` or `G1: C, P1: 0.3`.
/// Returns `None` when no line names a known label with a confidence.
pub fn parse_topk(raw_text: &str, labels: &[Label]) -> Option<BTreeMap<Label, f64>> {
    let mut out = BTreeMap::new();
    for line in raw_text.lines() {
        let Some(c) = TOPK_LINE.captures(line.trim()) else {
            continue;
        };
        let Some(label) = lookup(&c["label"], labels) else {
            continue;
        };
        let Ok(mut p) = c["p"].parse::<f64>() else {
            continue;
        };
        if !c["pct"].is_empty() || p > 1.0 {
            p /= 100.0;
        }
        if !(0.0..=1.0).contains(&p) {
            continue;
        }
        out.entry(label).or_insert(p);
    }
    (!out.is_empty()).then_some(out)
}
