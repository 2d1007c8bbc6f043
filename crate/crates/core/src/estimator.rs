//! Aggregation of responses into answer distributions, the FESTA scores and
//! the baseline uncertainty measures.

use std::collections::BTreeMap;

use crate::client::{
    parse_confidence, parse_topk, render_topk_prompt, ChatCall, ChatMessage, MediaPayload, ModelClient, ParsedAnswer,
    ReplicateIndex, Sideband, CONFIDENCE_INSTRUCTION,
};
use crate::distribution::AnswerDistribution;
use crate::error::{FestaError, Result};
use crate::instance::{Label, McqInstance};
use crate::record::ParseStats;
use crate::scoring::{festa, shannon_entropy, u_fcs, u_fes, ProbFloor};
use crate::transforms::{SampleFamily, TransformedInput};

pub const DEFAULT_OE_DECODES: usize = 20;
pub const DEFAULT_BU_TOP_K: usize = 4;
pub const DEFAULT_BU_SAMPLES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pooling {
    Full,
    Binary(Label),
}

pub fn parse_stats(responses: &[ParsedAnswer]) -> ParseStats {
    let parsed = responses.iter().filter(|r| r.label().is_some()).count();
    ParseStats { requested: responses.len(), parsed, failed: responses.len() - parsed }
}

fn unusable(reason: String) -> FestaError {
    FestaError::InstanceUnusable { id: String::new(), reason }
}

fn with_id(err: FestaError, id: &str) -> FestaError {
    match err {
        FestaError::InstanceUnusable { id: old, reason } if old.is_empty() => {
            FestaError::InstanceUnusable { id: id.to_string(), reason }
        }
        other => other,
    }
}

/// Empirical distribution over the parsed responses. Parse failures are
/// dropped and reduce `sample_count`; a set where more than half failed is
/// unusable.
pub fn estimate_distribution(responses: &[ParsedAnswer], labels: &[Label], pooling: &Pooling) -> Result<AnswerDistribution> {
    let stats = parse_stats(responses);
    if stats.parsed == 0 {
        return Err(unusable(format!("none of {} responses parsed", stats.requested)));
    }
    if stats.failed * 2 > stats.requested {
        return Err(unusable(format!("{} of {} responses failed to parse", stats.failed, stats.requested)));
    }
    let full = AnswerDistribution::from_observations(responses.iter().filter_map(ParsedAnswer::label), labels)?;
    match pooling {
        Pooling::Full => Ok(full),
        Pooling::Binary(pred) => full.pool_binary(pred),
    }
}

/// Greedy prediction from the original-input responses: the most frequent
/// label, ties broken toward the lexicographically smallest.
pub fn predicted_label(responses: &[ParsedAnswer]) -> Option<Label> {
    let mut counts: BTreeMap<&Label, usize> = BTreeMap::new();
    for l in responses.iter().filter_map(ParsedAnswer::label) {
        *counts.entry(l).or_default() += 1;
    }
    let best = counts.values().copied().max()?;
    let mut tied = counts.iter().filter(|(_, &c)| c == best).map(|(l, _)| *l);
    let winner = tied.next()?.clone();
    let rest: Vec<&Label> = tied.collect();
    if !rest.is_empty() {
        tracing::warn!(%winner, others = ?rest, "tie in original prediction, taking smallest label");
    }
    Some(winner)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FestaScores {
    pub u_fes: f64,
    pub u_fcs: Option<f64>,
    pub u_festa: Option<f64>,
    pub fes_parse: ParseStats,
    pub fcs_parse: Option<ParseStats>,
    /// Unpooled FCS distribution, for diagnostics.
    pub fcs_per_label: BTreeMap<String, f64>,
}

/// FES and FCS uncertainty of `predicted`. With no FCS responses (instance
/// not complementable) only `u_fes` is produced.
pub fn score_festa(
    instance: &McqInstance,
    fes: &[ParsedAnswer],
    fcs: Option<&[ParsedAnswer]>,
    predicted: &Label,
    floor: ProbFloor,
) -> Result<FestaScores> {
    let labels = instance.labels();
    let q_fes = estimate_distribution(fes, &labels, &Pooling::Full).map_err(|e| with_id(e, &instance.id))?;
    let u_fes = u_fes(&q_fes, predicted, floor)?;
    let (u_fcs, fcs_parse, fcs_per_label) = match fcs {
        Some(fcs) => {
            let full = estimate_distribution(fcs, &labels, &Pooling::Full).map_err(|e| with_id(e, &instance.id))?;
            let pooled = full.pool_binary(predicted)?;
            (Some(u_fcs(&pooled, predicted, floor)?), Some(parse_stats(fcs)), full.probs)
        }
        None => (None, None, BTreeMap::new()),
    };
    Ok(FestaScores {
        u_fes,
        u_festa: u_fcs.map(|c| festa(u_fes, c)),
        u_fcs,
        fes_parse: parse_stats(fes),
        fcs_parse,
        fcs_per_label,
    })
}

/// Entropy of the prediction distribution over a response set; the
/// OE, IA and RU baselines differ only in which responses they pass.
pub fn entropy_of(responses: &[ParsedAnswer], labels: &[Label]) -> Result<f64> {
    Ok(shannon_entropy(&estimate_distribution(responses, labels, &Pooling::Full)?))
}

/// `1 − c/100` for the first number `c ∈ [0, 100]` in a confidence reply.
pub fn vc_uncertainty(reply: &str) -> Option<f64> {
    parse_confidence(reply).map(|c| 1.0 - c / 100.0)
}

/// `1 −` mean elicited confidence on `predicted` across top-k replies.
/// Malformed replies contribute zero; `None` if every reply is malformed.
pub fn bu_uncertainty(replies: &[String], predicted: &Label, labels: &[Label]) -> Option<f64> {
    if replies.is_empty() {
        return None;
    }
    let mut any = false;
    let total: f64 = replies
        .iter()
        .map(|r| match parse_topk(r, labels) {
            Some(m) => {
                any = true;
                m.get(predicted).copied().unwrap_or(0.0)
            }
            None => 0.0,
        })
        .sum();
    any.then(|| 1.0 - total / replies.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyAblation {
    pub h_fes: f64,
    pub h_fcs: f64,
    pub h_sum: f64,
}

/// Entropy of `q_FES` (full support) and of binary-pooled `q_FCS`.
pub fn score_entropy_ablation(
    fes: &[ParsedAnswer],
    fcs: &[ParsedAnswer],
    predicted: &Label,
    labels: &[Label],
) -> Result<EntropyAblation> {
    let h_fes = shannon_entropy(&estimate_distribution(fes, labels, &Pooling::Full)?);
    let h_fcs = shannon_entropy(&estimate_distribution(fcs, labels, &Pooling::Binary(predicted.clone()))?);
    Ok(EntropyAblation { h_fes, h_fcs, h_sum: h_fes + h_fcs })
}

/// Builders for every request the estimator issues, shared by the pipeline
/// so direct and staged runs hit the same cache keys.
pub mod calls {
    use super::*;

    pub const ORIGINAL_STREAM: &str = "original";
    pub const OE_STREAM: &str = "oe";
    pub const VC_STREAM: &str = "vc";
    pub const BU_STREAM: &str = "bu";

    fn sideband(instance: &McqInstance, family: SampleFamily) -> Option<Sideband> {
        Some(Sideband { instance_id: instance.id.clone(), family })
    }

    /// Answer request for a generated sample.
    pub fn sample_call(
        instance: &McqInstance,
        sample: &TransformedInput,
        media: Option<MediaPayload>,
        temperature: f64,
        decode: u32,
    ) -> ChatCall {
        ChatCall::mcq(
            &sample.rendered_question,
            &instance.options,
            media,
            temperature,
            ReplicateIndex::new(sample.stream.clone(), sample.replicate_index, decode),
            sideband(instance, sample.family),
        )
    }

    /// Greedy (temperature 0) answer on the untouched input.
    pub fn original_call(instance: &McqInstance, media: Option<MediaPayload>) -> ChatCall {
        ChatCall::mcq(
            &instance.question,
            &instance.options,
            media,
            0.0,
            ReplicateIndex::new(ORIGINAL_STREAM, (0, 0), 0),
            sideband(instance, SampleFamily::Original),
        )
    }

    /// Stochastic decode `decode` of the untouched input.
    pub fn oe_call(instance: &McqInstance, media: Option<MediaPayload>, temperature: f64, decode: u32) -> ChatCall {
        ChatCall::mcq(
            &instance.question,
            &instance.options,
            media,
            temperature,
            ReplicateIndex::new(OE_STREAM, (0, 0), decode),
            sideband(instance, SampleFamily::Original),
        )
    }

    /// Follow-up turn asking for a confidence in the greedy answer.
    pub fn vc_call(instance: &McqInstance, media: Option<MediaPayload>, first_reply: &str) -> ChatCall {
        let mut call = original_call(instance, media);
        call.messages.push(ChatMessage::assistant(first_reply));
        call.messages.push(ChatMessage::user(CONFIDENCE_INSTRUCTION));
        call.replicate = ReplicateIndex::new(VC_STREAM, (0, 0), 0);
        call
    }

    pub fn bu_call(
        instance: &McqInstance,
        media: Option<MediaPayload>,
        temperature: f64,
        top_k: usize,
        decode: u32,
    ) -> ChatCall {
        ChatCall {
            messages: vec![ChatMessage::user(render_topk_prompt(&instance.question, &instance.options, top_k))],
            media,
            temperature,
            replicate: ReplicateIndex::new(BU_STREAM, (0, 0), decode),
            sideband: sideband(instance, SampleFamily::Original),
        }
    }
}

async fn parsed_answers(client: &ModelClient, calls: Vec<ChatCall>, labels: &[Label]) -> Vec<ParsedAnswer> {
    let limit = client.endpoint().max_in_flight;
    use futures::StreamExt;
    futures::stream::iter(calls)
        .map(|c| async move {
            match client.query(&c, labels).await {
                Ok(r) => r.parsed_label,
                Err(e) => {
                    tracing::warn!(error = %e, "query failed, counted as a parse failure");
                    ParsedAnswer::ParseFailure
                }
            }
        })
        .buffered(limit)
        .collect()
        .await
}

/// Greedy prediction on the original input.
pub async fn predict(client: &ModelClient, instance: &McqInstance, media: Option<MediaPayload>) -> Result<Label> {
    let r = client.query(&calls::original_call(instance, media), &instance.labels()).await?;
    r.parsed_label.label().cloned().ok_or_else(|| FestaError::InstanceUnusable {
        id: instance.id.clone(),
        reason: format!("original prediction unparseable: {:?}", r.raw_text),
    })
}

/// Output entropy over `n_decodes` stochastic decodes of the original input.
pub async fn baseline_oe(
    client: &ModelClient,
    instance: &McqInstance,
    media: Option<MediaPayload>,
    n_decodes: usize,
) -> Result<f64> {
    if n_decodes == 0 {
        return Err(FestaError::Precondition("n_decodes must be at least 1".into()));
    }
    let t = client.endpoint().temperature;
    let calls = (0..n_decodes as u32).map(|d| calls::oe_call(instance, media.clone(), t, d)).collect();
    entropy_of(&parsed_answers(client, calls, &instance.labels()).await, &instance.labels())
        .map_err(|e| with_id(e, &instance.id))
}

/// Verbal confidence in the greedy answer; `None` when the reply has no
/// usable number.
pub async fn baseline_vc(client: &ModelClient, instance: &McqInstance, media: Option<MediaPayload>) -> Result<Option<f64>> {
    let first = client.chat(&calls::original_call(instance, media.clone())).await?;
    let reply = client.chat(&calls::vc_call(instance, media, &first.raw_text)).await?;
    Ok(vc_uncertainty(&reply.raw_text))
}

/// Entropy over augmented inputs. Pass media-only samples for IA on media,
/// text-only samples for IA on text or RU, and the FES grid for both.
pub async fn baseline_augmented(
    client: &ModelClient,
    instance: &McqInstance,
    samples: &[(TransformedInput, Option<MediaPayload>)],
) -> Result<f64> {
    let t = client.endpoint().temperature;
    let calls = samples.iter().map(|(s, m)| calls::sample_call(instance, s, m.clone(), t, 0)).collect();
    entropy_of(&parsed_answers(client, calls, &instance.labels()).await, &instance.labels())
        .map_err(|e| with_id(e, &instance.id))
}

/// Top-k elicitation baseline; `None` when every reply is malformed.
pub async fn baseline_bu(
    client: &ModelClient,
    instance: &McqInstance,
    media: Option<MediaPayload>,
    predicted: &Label,
    top_k: usize,
    n_samples: usize,
) -> Result<Option<f64>> {
    let t = client.endpoint().temperature;
    let mut replies = Vec::with_capacity(n_samples);
    for d in 0..n_samples as u32 {
        match client.chat(&calls::bu_call(instance, media.clone(), t, top_k, d)).await {
            Ok(r) => replies.push(r.raw_text),
            Err(e) => {
                tracing::warn!(error = %e, "BU sample failed, counted as malformed");
                replies.push(String::new());
            }
        }
    }
    Ok(bu_uncertainty(&replies, predicted, &instance.labels()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(s: &str) -> ParsedAnswer {
        ParsedAnswer::Label(Label::from(s))
    }

    fn labels(s: &[&str]) -> Vec<Label> {
        s.iter().map(|x| Label::from(*x)).collect()
    }

    #[test]
    fn counting_and_pooling() {
        let d = estimate_distribution(&[l("A"), l("A"), l("B"), l("A")], &labels(&["A", "B"]), &Pooling::Full).unwrap();
        assert_eq!(d.prob("A"), Some(0.75));
        assert_eq!(d.prob("B"), Some(0.25));
        let d = estimate_distribution(
            &[l("A"), l("B"), l("C"), l("D")],
            &labels(&["A", "B", "C", "D"]),
            &Pooling::Binary(Label::from("A")),
        )
        .unwrap();
        assert_eq!(d.prob("A"), Some(0.25));
        assert_eq!(d.prob("A^c"), Some(0.75));
        let d = estimate_distribution(&[l("A"), ParsedAnswer::ParseFailure, l("A")], &labels(&["A", "B"]), &Pooling::Full)
            .unwrap();
        assert_eq!(d.prob("A"), Some(1.0));
        assert_eq!(d.sample_count, 2);
    }

    #[test]
    fn unusable_sets() {
        let fail = ParsedAnswer::ParseFailure;
        assert!(matches!(
            estimate_distribution(std::slice::from_ref(&fail), &labels(&["A"]), &Pooling::Full),
            Err(FestaError::InstanceUnusable { .. })
        ));
        assert!(estimate_distribution(&[fail.clone(), fail.clone(), l("A")], &labels(&["A", "B"]), &Pooling::Full).is_err());
        assert!(estimate_distribution(&[fail, l("A")], &labels(&["A", "B"]), &Pooling::Full).is_ok());
    }

    #[test]
    fn prediction_tie_break() {
        assert_eq!(predicted_label(&[l("C"), l("B"), l("C"), l("B")]), Some(Label::from("B")));
        assert_eq!(predicted_label(&[l("C")]), Some(Label::from("C")));
        assert_eq!(predicted_label(&[ParsedAnswer::ParseFailure]), None);
    }

    #[test]
    fn vc_mapping() {
        assert!((vc_uncertainty("90").unwrap() - 0.10).abs() < 1e-12);
        assert!((vc_uncertainty("confidence: 55%").unwrap() - 0.45).abs() < 1e-12);
        assert_eq!(vc_uncertainty("high"), None);
    }

    #[test]
    fn bu_mean_mass() {
        let ls = labels(&["A", "B", "C", "D"]);
        let a = Label::from("A");
        let replies: Vec<String> = [0.8, 0.6, 1.0, 0.6, 0.5].iter().map(|p| format!("A: {p}\nB: 0.1")).collect();
        assert!((bu_uncertainty(&replies, &a, &ls).unwrap() - 0.30).abs() < 1e-12);
        assert_eq!(bu_uncertainty(&vec!["A: 1.0".to_string(); 5], &a, &ls), Some(0.0));
        assert_eq!(bu_uncertainty(&vec!["B: 0.7\nC: 0.3".to_string(); 5], &a, &ls), Some(1.0));
        assert_eq!(bu_uncertainty(&vec!["no idea".to_string(); 5], &a, &ls), None);
        let mixed = vec!["A: 1.0".to_string(), "garbage".to_string()];
        assert_eq!(bu_uncertainty(&mixed, &a, &ls), Some(0.5));
    }

    #[test]
    fn ablation_values() {
        let ls = labels(&["A", "B", "C", "D"]);
        let a = Label::from("A");
        let uniform = [l("A"), l("B"), l("C"), l("D")];
        let half = [l("A"), l("B")];
        let e = score_entropy_ablation(&uniform, &half, &a, &ls).unwrap();
        assert!((e.h_fes - 4f64.ln()).abs() < 1e-12);
        assert!((e.h_fcs - 2f64.ln()).abs() < 1e-12);
        let agree = vec![l("A"); 5];
        assert_eq!(score_entropy_ablation(&agree, &half, &a, &ls).unwrap().h_fes, 0.0);
    }

    #[test]
    fn festa_composition() {
        let inst = crate::instance::McqInstance {
            id: "x".into(),
            question: "q".into(),
            options: ["A", "B"]
                .iter()
                .map(|s| crate::instance::OptionChoice { label: Label::from(*s), text: (*s).into() })
                .collect(),
            target_label: Label::from("A"),
            media: crate::instance::MediaRef::none(),
            task_tag: Default::default(),
        };
        let a = Label::from("A");
        let s = score_festa(&inst, &vec![l("A"); 4], Some(&vec![l("B"); 4][..]), &a, ProbFloor::EXACT).unwrap();
        assert_eq!((s.u_fes, s.u_fcs, s.u_festa), (0.0, Some(0.0), Some(0.0)));
        let s = score_festa(&inst, &[l("A"), l("B")], Some(&vec![l("A"); 4][..]), &a, ProbFloor::DEFAULT).unwrap();
        let (fes, fcs) = (-(0.5f64.ln()), -(1e-6f64.ln()));
        assert!((s.u_fes - fes).abs() < 1e-12);
        assert!((s.u_fcs.unwrap() - fcs).abs() < 1e-12);
        assert_eq!(s.u_festa.unwrap(), s.u_fes + s.u_fcs.unwrap());
        let s = score_festa(&inst, &[l("A")], None, &a, ProbFloor::DEFAULT).unwrap();
        assert_eq!(s.u_festa, None);
        let err = score_festa(&inst, &[ParsedAnswer::ParseFailure], None, &a, ProbFloor::DEFAULT).unwrap_err();
        assert!(matches!(err, FestaError::InstanceUnusable { id, .. } if id == "x"));
    }
}
