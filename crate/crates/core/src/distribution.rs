//! Empirical categorical distributions over option labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{FestaError, Result};
use crate::instance::Label;

/// Tolerance for the sum-to-one check.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Key of the pooled outcome that collects every label other than `predicted`.
pub fn complement_key(predicted: &Label) -> String {
    format!("{}^c", predicted.as_str())
}

/// Categorical distribution over an option set, or over the binary support
/// `{ŷ, ŷ^c}` when `pooled_for` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    pub probs: BTreeMap<String, f64>,
    pub support_size: usize,
    /// Number of responses aggregated.
    pub sample_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooled_for: Option<Label>,
}

impl AnswerDistribution {
    /// Validates explicit probabilities over a full (unpooled) support.
    pub fn from_probs(probs: BTreeMap<String, f64>, sample_count: usize) -> Result<Self> {
        let dist = AnswerDistribution {
            support_size: probs.len(),
            probs,
            sample_count,
            pooled_for: None,
        };
        dist.validate()?;
        Ok(dist)
    }

    /// Binary distribution over `{predicted, predicted^c}` with the given
    /// complement mass.
    pub fn binary(predicted: &Label, complement_mass: f64, sample_count: usize) -> Result<Self> {
        let mut probs = BTreeMap::new();
        probs.insert(predicted.as_str().to_string(), 1.0 - complement_mass);
        probs.insert(complement_key(predicted), complement_mass);
        let dist = AnswerDistribution {
            probs,
            support_size: 2,
            sample_count,
            pooled_for: Some(predicted.clone()),
        };
        dist.validate()?;
        Ok(dist)
    }

    /// Empirical frequencies of `observed` over `support`. Every support member
    /// gets an entry, zero-mass ones included.
    pub fn from_observations<'a, I>(observed: I, support: &[Label]) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Label>,
    {
        let mut counts: BTreeMap<String, usize> =
            support.iter().map(|l| (l.as_str().to_string(), 0)).collect();
        let mut n = 0usize;
        for label in observed {
            match counts.get_mut(label.as_str()) {
                Some(c) => *c += 1,
                None => {
                    return Err(FestaError::Domain(format!(
                        "observed label {label} outside the support"
                    )))
                }
            }
            n += 1;
        }
        if n == 0 {
            return Err(FestaError::Domain("no observations to aggregate".into()));
        }
        let probs = counts
            .into_iter()
            .map(|(k, c)| (k, c as f64 / n as f64))
            .collect::<BTreeMap<_, _>>();
        Ok(AnswerDistribution {
            support_size: probs.len(),
            probs,
            sample_count: n,
            pooled_for: None,
        })
    }

    /// Pools every label other than `predicted` into `predicted^c`.
    pub fn pool_binary(&self, predicted: &Label) -> Result<Self> {
        if self.pooled_for.is_some() {
            return Err(FestaError::Domain("distribution is already pooled".into()));
        }
        let Some(&p) = self.probs.get(predicted.as_str()) else {
            return Err(FestaError::Domain(format!(
                "predicted label {predicted} is not in the support"
            )));
        };
        let rest: f64 = self
            .probs
            .iter()
            .filter(|(k, _)| k.as_str() != predicted.as_str())
            .map(|(_, v)| *v)
            .sum();
        let mut probs = BTreeMap::new();
        probs.insert(predicted.as_str().to_string(), p);
        probs.insert(complement_key(predicted), rest);
        Ok(AnswerDistribution {
            probs,
            support_size: 2,
            sample_count: self.sample_count,
            pooled_for: Some(predicted.clone()),
        })
    }

    pub fn prob(&self, key: &str) -> Option<f64> {
        self.probs.get(key).copied()
    }

    pub fn validate(&self) -> Result<()> {
        let mut sum = 0.0;
        for (k, &p) in &self.probs {
            if !p.is_finite() || p < 0.0 {
                return Err(FestaError::Domain(format!("probability of {k} is {p}")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(FestaError::Domain(format!("probabilities sum to {sum}, not 1")));
        }
        if self.support_size != self.probs.len() {
            return Err(FestaError::Domain("support_size does not match entries".into()));
        }
        Ok(())
    }
}
