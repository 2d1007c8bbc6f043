//! Question paraphrasing (equivalence) and relation inversion (complement).

use std::collections::BTreeSet;
use std::sync::{Arc, LazyLock};

use rand::seq::SliceRandom;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use super::rng_for;
use crate::client::{ChatCall, ModelClient, ReplicateIndex};
use crate::error::{FestaError, Result};

/// Relation phrase pairs a template complement can invert. Each pair is its
/// own inverse, so complementing twice restores the question.
pub const ANTONYM_PAIRS: &[(&str, &str)] = &[
    ("left", "right"),
    ("above", "below"),
    ("in front of", "behind"),
    ("before", "after"),
    ("longer", "shorter"),
    ("longest", "shortest"),
    ("more", "fewer"),
    ("earlier", "later"),
];

/// Interchangeable phrasings that never touch objects or relations.
const SYNONYMS: &[&[&str]] = &[
    &["image", "picture", "photo"],
    &["audio clip", "recording", "audio"],
    &["sound event", "audio event"],
    &["shown", "depicted"],
    &["located", "positioned", "situated"],
    &["occurs", "happens"],
    &["occurred", "happened"],
    &["occur", "happen"],
    &["how many times", "how often"],
    &["which", "what"],
];

const PREFIXES: &[&str] = &[
    "",
    "Please answer the following question: ",
    "Question: ",
    "Looking carefully, ",
    "Based on the input, ",
    "Answer this: ",
    "Considering the given input, ",
];

static TRAILING_CONTEXT: LazyLock<Regex> = LazyLock::new(|| {
    RegexBuilder::new(r"^(?P<core>.*?),?\s+(?P<ctx>(?:in|within|from) (?:the|this) (?:image|picture|photo|audio clip|audio|recording|clip))\s*\?\s*$")
        .case_insensitive(true)
        .build()
        .expect("valid regex")
});

static LEADING_CONTEXT: LazyLock<Regex> = LazyLock::new(|| {
    RegexBuilder::new(r"^(?P<ctx>(?:in|within|from) (?:the|this) (?:image|picture|photo|audio clip|audio|recording|clip)),\s*(?P<core>.*?)\s*\?\s*$")
        .case_insensitive(true)
        .build()
        .expect("valid regex")
});

fn phrase_regex(phrase: &str) -> Regex {
    let pat = phrase.split(' ').map(regex::escape).collect::<Vec<_>>().join(r"\s+");
    RegexBuilder::new(&format!(r"\b{pat}\b"))
        .case_insensitive(true)
        .build()
        .expect("valid regex")
}

fn match_case(original: &str, replacement: &str) -> String {
    let first_upper = original.chars().next().is_some_and(char::is_uppercase);
    let all_upper = original.len() > 1 && original.chars().all(|c| !c.is_lowercase());
    if all_upper {
        replacement.to_uppercase()
    } else if first_upper {
        capitalize(replacement)
    } else {
        replacement.to_string()
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn decapitalize(s: &str) -> String {
    // keep "I" and acronyms as they are
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(f), Some(second)) if f.is_uppercase() && !second.is_uppercase() && second != ' ' => {
            f.to_lowercase().chain(s[f.len_utf8()..].chars()).collect()
        }
        _ => s.to_string(),
    }
}

/// Swaps every occurrence of the phrases in `pair` simultaneously.
fn swap_pair(text: &str, pair: (&str, &str)) -> String {
    let a = phrase_regex(pair.0);
    let b = phrase_regex(pair.1);
    let mut hits: Vec<(usize, usize, &str)> = a
        .find_iter(text)
        .map(|m| (m.start(), m.end(), pair.1))
        .chain(b.find_iter(text).map(|m| (m.start(), m.end(), pair.0)))
        .collect();
    hits.sort();
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for (s, e, repl) in hits {
        if s < cursor {
            continue;
        }
        out.push_str(&text[cursor..s]);
        out.push_str(&match_case(&text[s..e], repl));
        cursor = e;
    }
    out.push_str(&text[cursor..]);
    out
}

/// A complemented question with the relation that was inverted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Complemented {
    pub text: String,
    pub from: String,
    pub to: String,
}

/// Finds the first invertible relation in `question`, by position.
pub fn find_relation(question: &str) -> Option<(usize, (&'static str, &'static str), bool)> {
    ANTONYM_PAIRS
        .iter()
        .flat_map(|&pair| {
            let a = phrase_regex(pair.0).find(question).map(|m| (m.start(), pair, false));
            let b = phrase_regex(pair.1).find(question).map(|m| (m.start(), pair, true));
            [a, b]
        })
        .flatten()
        .min_by_key(|&(pos, pair, _)| (pos, std::cmp::Reverse(pair.0.len().max(pair.1.len()))))
}

/// Template complement: replaces the first recognized relation by its antonym.
pub fn template_complement(question: &str) -> Result<Complemented> {
    let (_, pair, is_second) = find_relation(question).ok_or_else(|| {
        FestaError::NotComplementable(format!("no invertible relation in {question:?}"))
    })?;
    let (from, to) = if is_second { (pair.1, pair.0) } else { (pair.0, pair.1) };
    Ok(Complemented {
        text: swap_pair(question, pair),
        from: from.to_string(),
        to: to.to_string(),
    })
}

fn synonym_variants(text: &str) -> Vec<String> {
    let mut variants = vec![text.to_string()];
    for group in SYNONYMS {
        let mut next = Vec::new();
        for v in &variants {
            let found = group.iter().find_map(|w| {
                let re = phrase_regex(w);
                re.find(v).map(|m| (m.start(), m.end()))
            });
            next.push(v.clone());
            if let Some((s, e)) = found {
                let matched = &v[s..e];
                for alt in group.iter().filter(|alt| !alt.eq_ignore_ascii_case(matched)) {
                    next.push(format!("{}{}{}", &v[..s], match_case(matched, alt), &v[e..]));
                }
            }
        }
        variants = next;
        if variants.len() > 64 {
            variants.truncate(64);
        }
    }
    variants
}

fn reorder_variants(text: &str) -> Vec<String> {
    let mut out = vec![text.to_string()];
    if let Some(c) = TRAILING_CONTEXT.captures(text) {
        out.push(format!("{}, {}?", capitalize(&c["ctx"]), decapitalize(c["core"].trim())));
    } else if let Some(c) = LEADING_CONTEXT.captures(text) {
        out.push(format!("{} {}?", capitalize(c["core"].trim()), c["ctx"].to_lowercase()));
    }
    out
}

/// All distinct template rewrites of `question`, excluding the question itself.
pub fn template_candidates(question: &str) -> Vec<String> {
    let q = question.trim();
    let mut set = BTreeSet::new();
    for reordered in reorder_variants(q) {
        for syn in synonym_variants(&reordered) {
            for prefix in PREFIXES {
                let v = if prefix.is_empty() {
                    syn.clone()
                } else {
                    format!("{prefix}{}", decapitalize(&syn))
                };
                if v != q {
                    set.insert(v);
                }
            }
        }
    }
    set.into_iter().collect()
}

/// Deterministic offline paraphrases. Never fails for `n >= 1`: when the
/// lexicon runs out of distinct rewrites, earlier ones repeat.
pub fn template_paraphrases(question: &str, n: usize, seed: u64) -> Result<Vec<String>> {
    if n == 0 {
        return Err(FestaError::Precondition("paraphrase count must be at least 1".into()));
    }
    let mut candidates = template_candidates(question);
    candidates.shuffle(&mut rng_for(seed));
    if candidates.is_empty() {
        candidates.push(question.trim().to_string());
    }
    if candidates.len() < n {
        tracing::warn!(
            available = candidates.len(),
            requested = n,
            "template lexicon produced too few distinct paraphrases; repeating"
        );
    }
    Ok(candidates.iter().cycle().take(n).cloned().collect())
}

/// Where paraphrases and complements come from.
#[derive(Clone, Default)]
pub enum ParaphraseProvider {
    #[default]
    Template,
    ModelBacked {
        client: Arc<ModelClient>,
        /// `{question}` is replaced by the question text.
        paraphrase_prompt: String,
        complement_prompt: String,
    },
}

impl std::fmt::Debug for ParaphraseProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParaphraseProvider::Template => f.write_str("Template"),
            ParaphraseProvider::ModelBacked { client, .. } => {
                write!(f, "ModelBacked({})", client.endpoint().model_id)
            }
        }
    }
}

pub const DEFAULT_PARAPHRASE_PROMPT: &str = "Paraphrase the following question without changing its meaning, its objects, or the relation it asks about. Reply with the paraphrased question only.\nQuestion: {question}";
pub const DEFAULT_COMPLEMENT_PROMPT: &str = "Rewrite the following question so that the spatial or temporal relation it asks about is reversed (for example left becomes right, before becomes after). Do not use the word \"not\". Reply with the rewritten question only.\nQuestion: {question}";

fn first_line(text: &str) -> String {
    text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("").to_string()
}

static NOT_TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    RegexBuilder::new(r"\bnot\b|n't\b").case_insensitive(true).build().expect("valid regex")
});

/// Returns `n` paraphrases of `question`.
pub async fn paraphrase_question(
    question: &str,
    provider: &ParaphraseProvider,
    n: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if n == 0 {
        return Err(FestaError::Precondition("paraphrase count must be at least 1".into()));
    }
    match provider {
        ParaphraseProvider::Template => template_paraphrases(question, n, seed),
        ParaphraseProvider::ModelBacked { client, paraphrase_prompt, .. } => {
            let prompt = paraphrase_prompt.replace("{question}", question);
            let mut out: Vec<String> = Vec::with_capacity(n);
            for r in 0..n {
                let call = ChatCall::text(
                    prompt.clone(),
                    client.endpoint().temperature,
                    ReplicateIndex::new(format!("paraphrase:{seed}"), (0, 0), r as u32),
                );
                let resp = client.chat(&call).await?;
                let text = first_line(&resp.raw_text);
                out.push(if text.is_empty() { question.to_string() } else { text });
            }
            let distinct: BTreeSet<_> = out.iter().collect();
            if distinct.len() < n {
                tracing::warn!(distinct = distinct.len(), requested = n, "model paraphraser returned duplicates");
            }
            Ok(out)
        }
    }
}

/// Returns `question` with its relation inverted. Never introduces "not".
pub async fn complement_question(
    question: &str,
    provider: &ParaphraseProvider,
    seed: u64,
) -> Result<Complemented> {
    match provider {
        ParaphraseProvider::Template => template_complement(question),
        ParaphraseProvider::ModelBacked { client, complement_prompt, .. } => {
            let call = ChatCall::text(
                complement_prompt.replace("{question}", question),
                0.0,
                ReplicateIndex::new(format!("complement:{seed}"), (0, 0), 0),
            );
            let resp = client.chat(&call).await?;
            let text = first_line(&resp.raw_text);
            if text.is_empty()
                || text.eq_ignore_ascii_case(question.trim())
                || (NOT_TOKEN.is_match(&text) && !NOT_TOKEN.is_match(question))
            {
                return Err(FestaError::NotComplementable(format!(
                    "model complement of {question:?} rejected: {text:?}"
                )));
            }
            Ok(Complemented { text, from: String::new(), to: String::new() })
        }
    }
}
