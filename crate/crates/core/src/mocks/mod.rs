//! Behavioral model simulators and an HTTP server that speaks the client's
//! wire protocol.
//!
//! Mocks do not look at media. They identify the instance and sample family
//! from sideband headers and answer from a fixed decision table:
//!
//! | kind          | original / FES                  | FCS                                 |
//! |---------------|---------------------------------|-------------------------------------|
//! | consistent    | seeded fixed label per instance | seeded random label per call        |
//! | sensitive     | target                          | seeded random non-target per call   |
//! | ideal         | target                          | first non-target label              |
//! | mode_collapse | collapse label                  | collapse label                      |
//! | noisy         | target w.p. `p`, else uniform wrong label, per call (all families) |

mod server;

use std::collections::{BTreeMap, HashMap};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::client::CONFIDENCE_INSTRUCTION;
use crate::error::{FestaError, Result};
use crate::instance::{Label, McqInstance};
use crate::transforms::text::{template_complement, template_paraphrases};
use crate::transforms::{derive_seed, rng_for, SampleFamily};

pub use server::{serve_mock, MockServerHandle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockKind {
    Consistent,
    Sensitive,
    Ideal,
    ModeCollapse,
    Noisy,
}

impl MockKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "consistent" => Ok(MockKind::Consistent),
            "sensitive" => Ok(MockKind::Sensitive),
            "ideal" => Ok(MockKind::Ideal),
            "mode_collapse" => Ok(MockKind::ModeCollapse),
            "noisy" => Ok(MockKind::Noisy),
            other => Err(FestaError::Usage(format!(
                "unknown mock profile {other:?} (consistent|sensitive|ideal|mode_collapse|noisy)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockProfile {
    pub kind: MockKind,
    /// Probability of answering the target (noisy only).
    #[serde(default = "default_accuracy")]
    pub accuracy: f64,
    /// Label every input collapses to. Defaults to the first non-target
    /// option, which makes the collapse a confident hallucination.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collapse_label: Option<Label>,
    #[serde(default)]
    pub seed: u64,
}

fn default_accuracy() -> f64 {
    0.5
}

impl MockProfile {
    pub fn new(kind: MockKind, seed: u64) -> Self {
        MockProfile { kind, accuracy: default_accuracy(), collapse_label: None, seed }
    }

    pub fn noisy(accuracy: f64, seed: u64) -> Self {
        MockProfile { accuracy, ..MockProfile::new(MockKind::Noisy, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err(FestaError::Config(format!("mock accuracy must be in [0, 1], got {}", self.accuracy)));
        }
        Ok(())
    }
}

fn first_non_target(instance: &McqInstance) -> Label {
    instance
        .options
        .iter()
        .map(|o| &o.label)
        .find(|l| **l != instance.target_label)
        .cloned()
        .unwrap_or_else(|| instance.target_label.clone())
}

fn wrong_labels(instance: &McqInstance) -> Vec<Label> {
    instance.labels().into_iter().filter(|l| *l != instance.target_label).collect()
}

/// Seed for one call, derived from everything that identifies it.
pub fn call_seed(profile: &MockProfile, instance_id: &str, family: SampleFamily, replicate: &str) -> u64 {
    derive_seed(profile.seed, &[instance_id, family.as_str(), replicate])
}

/// The label `profile` answers for one request.
pub fn mock_answer(profile: &MockProfile, instance: &McqInstance, family: SampleFamily, replicate: &str) -> Label {
    let mut rng = rng_for(call_seed(profile, &instance.id, family, replicate));
    let labels = instance.labels();
    let wrong = wrong_labels(instance);
    let pick_wrong = |rng: &mut rand_chacha::ChaCha8Rng| wrong.choose(rng).cloned().unwrap_or_else(|| instance.target_label.clone());
    match (profile.kind, family) {
        (MockKind::Consistent, SampleFamily::Fcs) => labels.choose(&mut rng).cloned().expect("non-empty options"),
        (MockKind::Consistent, _) => {
            let mut fixed = rng_for(derive_seed(profile.seed, &[&instance.id, "consistent"]));
            labels.choose(&mut fixed).cloned().expect("non-empty options")
        }
        (MockKind::Sensitive, SampleFamily::Fcs) => pick_wrong(&mut rng),
        (MockKind::Ideal, SampleFamily::Fcs) => first_non_target(instance),
        (MockKind::Sensitive | MockKind::Ideal, _) => instance.target_label.clone(),
        (MockKind::ModeCollapse, _) => profile.collapse_label.clone().unwrap_or_else(|| first_non_target(instance)),
        (MockKind::Noisy, _) => {
            if rng.random_bool(profile.accuracy) {
                instance.target_label.clone()
            } else {
                pick_wrong(&mut rng)
            }
        }
    }
}

/// Verbal confidence (0–100) the mock states for an answer.
pub fn mock_confidence(profile: &MockProfile, instance: &McqInstance, replicate: &str) -> u32 {
    match profile.kind {
        MockKind::Noisy => {
            let mut rng = rng_for(call_seed(profile, &instance.id, SampleFamily::Original, &format!("vc/{replicate}")));
            rng.random_range(50..=100)
        }
        _ => 95,
    }
}

/// Top-k candidate list: the mock's answer for this call gets most of the
/// mass, the remaining labels share the rest in option order.
pub fn mock_topk(profile: &MockProfile, instance: &McqInstance, replicate: &str, k: usize) -> String {
    let answer = mock_answer(profile, instance, SampleFamily::Original, replicate);
    let lead = match profile.kind {
        MockKind::Noisy => 0.6,
        _ => 0.9,
    };
    let others: Vec<Label> = instance.labels().into_iter().filter(|l| *l != answer).take(k.saturating_sub(1)).collect();
    let rest = if others.is_empty() { 0.0 } else { (1.0 - lead) / others.len() as f64 };
    let mut lines = vec![format!("{answer}: {lead:.2}")];
    lines.extend(others.iter().map(|l| format!("{l}: {rest:.2}")));
    lines.join("\n")
}

/// What a request asks for, inferred from its messages.
#[derive(Debug, Clone, PartialEq)]
pub enum RequestKind {
    Answer,
    Confidence,
    TopK(usize),
    Paraphrase(String),
    Complement(String),
}

pub fn classify_request(user_turns: &[String]) -> RequestKind {
    let last = user_turns.last().map(String::as_str).unwrap_or_default();
    if user_turns.len() > 1 && last.trim() == CONFIDENCE_INSTRUCTION {
        return RequestKind::Confidence;
    }
    if let Some(pos) = last.find("top-") {
        let k: String = last[pos + 4..].chars().take_while(|c| c.is_ascii_digit()).collect();
        if let Ok(k) = k.parse() {
            return RequestKind::TopK(k);
        }
    }
    let question = last.rsplit_once("Question:").map(|(_, q)| q.trim().to_string());
    match question {
        Some(q) if last.starts_with("Paraphrase") => RequestKind::Paraphrase(q),
        Some(q) if last.starts_with("Rewrite") => RequestKind::Complement(q),
        _ => RequestKind::Answer,
    }
}

/// A mock model over a known instance population.
#[derive(Debug, Clone)]
pub struct MockModel {
    instances: HashMap<String, McqInstance>,
    default_profile: MockProfile,
    overrides: BTreeMap<String, MockProfile>,
    /// Fraction of requests whose first attempt fails with HTTP 503.
    pub fault_rate: f64,
}

impl MockModel {
    pub fn new(instances: Vec<McqInstance>, profile: MockProfile) -> Result<Self> {
        profile.validate()?;
        Ok(MockModel {
            instances: instances.into_iter().map(|i| (i.id.clone(), i)).collect(),
            default_profile: profile,
            overrides: BTreeMap::new(),
            fault_rate: 0.0,
        })
    }

    /// Gives one instance its own profile, for mixed populations.
    pub fn with_override(mut self, instance_id: impl Into<String>, profile: MockProfile) -> Result<Self> {
        profile.validate()?;
        self.overrides.insert(instance_id.into(), profile);
        Ok(self)
    }

    pub fn with_fault_rate(mut self, rate: f64) -> Self {
        self.fault_rate = rate.clamp(0.0, 1.0);
        self
    }

    pub fn profile_for(&self, instance_id: &str) -> &MockProfile {
        self.overrides.get(instance_id).unwrap_or(&self.default_profile)
    }

    pub fn instance(&self, id: &str) -> Option<&McqInstance> {
        self.instances.get(id)
    }

    /// Reply text for one request, or `(status, message)` on rejection.
    pub fn reply(
        &self,
        instance_id: Option<&str>,
        family: SampleFamily,
        replicate: &str,
        user_turns: &[String],
    ) -> std::result::Result<String, (u16, String)> {
        let kind = classify_request(user_turns);
        match &kind {
            RequestKind::Paraphrase(q) => {
                let seed = derive_seed(self.default_profile.seed, &["paraphrase", replicate]);
                return template_paraphrases(q, 1, seed)
                    .map(|mut v| v.remove(0))
                    .map_err(|e| (400, e.to_string()));
            }
            RequestKind::Complement(q) => {
                return template_complement(q).map(|c| c.text).map_err(|e| (422, e.to_string()));
            }
            _ => {}
        }
        let id = instance_id.ok_or((400, "missing x-festa-instance header".to_string()))?;
        let instance = self.instances.get(id).ok_or_else(|| (404, format!("unknown instance {id}")))?;
        let profile = self.profile_for(id);
        Ok(match kind {
            RequestKind::Confidence => mock_confidence(profile, instance, replicate).to_string(),
            RequestKind::TopK(k) => mock_topk(profile, instance, replicate, k),
            _ => mock_answer(profile, instance, family, replicate).to_string(),
        })
    }

    /// Whether the first attempt of a request is rejected to exercise retries.
    pub fn inject_fault(&self, fingerprint: &str) -> bool {
        if self.fault_rate <= 0.0 {
            return false;
        }
        rng_for(derive_seed(self.default_profile.seed, &["fault", fingerprint])).random_bool(self.fault_rate)
    }
}
