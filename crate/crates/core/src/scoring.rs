//! Closed-form uncertainty scores.
//!
//! `u_fes` is the KL divergence from a perfectly consistent model (a delta on
//! the prediction) to the aggregated distribution over equivalent samples,
//! which reduces to `-ln q(ŷ)`. `u_fcs` is the KL divergence from a perfectly
//! sensitive model (a delta on `ŷ^c` over the binary support) and reduces to
//! `-ln q(ŷ^c)`. All logarithms are natural.

use serde::{Deserialize, Serialize};

use crate::distribution::{complement_key, AnswerDistribution};
use crate::error::{FestaError, Result};
use crate::instance::Label;

/// Lower clamp applied to probabilities before taking logs.
///
/// A floor of zero is the exact mode: a zero probability scores `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbFloor(f64);

impl ProbFloor {
    pub const DEFAULT: ProbFloor = ProbFloor(1e-6);
    pub const EXACT: ProbFloor = ProbFloor(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&value) || value.is_nan() {
            return Err(FestaError::Config(format!(
                "probability floor must be in [0, 1), got {value}"
            )));
        }
        Ok(ProbFloor(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_exact(self) -> bool {
        self.0 == 0.0
    }
}

impl Default for ProbFloor {
    fn default() -> Self {
        ProbFloor::DEFAULT
    }
}

/// `-ln(max(p, floor))`, never negative. Returns `+inf` for `p = 0` in exact mode.
pub fn neg_log_clamped(p: f64, floor: ProbFloor) -> f64 {
    let clamped = p.max(floor.value());
    if clamped <= 0.0 {
        return f64::INFINITY;
    }
    let v = -clamped.ln();
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Uncertainty from functionally equivalent samples: `-ln q_FES(ŷ)`.
pub fn u_fes(dist: &AnswerDistribution, predicted: &Label, floor: ProbFloor) -> Result<f64> {
    if dist.pooled_for.is_some() {
        return Err(FestaError::Domain(
            "u_fes expects a distribution over the full option set".into(),
        ));
    }
    let p = dist.prob(predicted.as_str()).ok_or_else(|| {
        FestaError::Domain(format!("predicted label {predicted} absent from support"))
    })?;
    Ok(neg_log_clamped(p, floor))
}

/// Uncertainty from functionally complementary samples: `-ln q_FCS(ŷ^c)`.
///
/// `dist` must be pooled onto `{ŷ, ŷ^c}` for the same `predicted` label.
pub fn u_fcs(dist: &AnswerDistribution, predicted: &Label, floor: ProbFloor) -> Result<f64> {
    let ckey = complement_key(predicted);
    let well_formed = dist.pooled_for.as_ref() == Some(predicted)
        && dist.probs.len() == 2
        && dist.probs.contains_key(predicted.as_str())
        && dist.probs.contains_key(&ckey);
    if !well_formed {
        return Err(FestaError::Domain(format!(
            "u_fcs expects the binary support {{{predicted}, {ckey}}}"
        )));
    }
    Ok(neg_log_clamped(dist.probs[&ckey], floor))
}

/// Combined score `U_FES + U_FCS`.
pub fn festa(u_fes: f64, u_fcs: f64) -> f64 {
    u_fes + u_fcs
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn shannon_entropy(dist: &AnswerDistribution) -> f64 {
    let h: f64 = dist
        .probs
        .values()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.max(0.0)
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    /// KL(delta_target || q) from its definition, summing over the support.
    fn kl_from_delta(q: &BTreeMap<String, f64>, target: &str) -> f64 {
        q.iter()
            .map(|(k, &qk)| {
                let p = if k == target { 1.0 } else { 0.0 };
                if p == 0.0 {
                    0.0
                } else {
                    p * (p / qk).ln()
                }
            })
            .sum()
    }

    fn two(a: f64) -> AnswerDistribution {
        let probs = [("A".to_string(), a), ("B".to_string(), 1.0 - a)].into_iter().collect();
        AnswerDistribution::from_probs(probs, 10).unwrap()
    }

    #[test]
    fn u_fes_examples() {
        let a = Label::from("A");
        assert_eq!(u_fes(&two(1.0), &a, ProbFloor::DEFAULT).unwrap(), 0.0);
        let half = u_fes(&two(0.5), &a, ProbFloor::DEFAULT).unwrap();
        assert!((half - 2f64.ln()).abs() < 1e-12);
        assert!((half - kl_from_delta(&two(0.5).probs, "A")).abs() < 1e-15);
        let zero = u_fes(&two(0.0), &a, ProbFloor::DEFAULT).unwrap();
        assert!((zero - 13.815511).abs() < 1e-6);
        assert!(u_fes(&two(0.0), &a, ProbFloor::EXACT).unwrap().is_infinite());
    }

    #[test]
    fn u_fes_rejects_absent_label() {
        assert!(matches!(
            u_fes(&two(0.5), &Label::from("C"), ProbFloor::DEFAULT),
            Err(FestaError::Domain(_))
        ));
    }

    #[test]
    fn u_fcs_examples() {
        let a = Label::from("A");
        let d = |c: f64| AnswerDistribution::binary(&a, c, 4).unwrap();
        assert_eq!(u_fcs(&d(1.0), &a, ProbFloor::DEFAULT).unwrap(), 0.0);
        assert!((u_fcs(&d(0.5), &a, ProbFloor::DEFAULT).unwrap() - 0.693147).abs() < 1e-6);
        assert!((u_fcs(&d(0.0), &a, ProbFloor::DEFAULT).unwrap() - 13.815511).abs() < 1e-6);
        let kl = kl_from_delta(&d(0.25).probs, "A^c");
        assert!((u_fcs(&d(0.25), &a, ProbFloor::DEFAULT).unwrap() - kl).abs() < 1e-15);
    }

    #[test]
    fn u_fcs_rejects_unpooled_support() {
        let a = Label::from("A");
        assert!(matches!(u_fcs(&two(0.5), &a, ProbFloor::DEFAULT), Err(FestaError::Domain(_))));
        let other = AnswerDistribution::binary(&Label::from("B"), 0.5, 2).unwrap();
        assert!(u_fcs(&other, &a, ProbFloor::DEFAULT).is_err());
    }

    #[test]
    fn festa_adds() {
        assert_eq!(festa(0.0, 0.0), 0.0);
        assert_eq!(festa(0.693147, 0.0), 0.693147);
        assert!((festa(0.693147, 1.386294) - 2.079441).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(shannon_entropy(&two(1.0)), 0.0);
        assert!((shannon_entropy(&two(0.5)) - std::f64::consts::LN_2).abs() < 1e-15);
        let probs = ["A", "B", "C", "D"].iter().map(|k| (k.to_string(), 0.25)).collect();
        let uniform = AnswerDistribution::from_probs(probs, 4).unwrap();
        assert!((shannon_entropy(&uniform) - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn floor_validation() {
        assert!(ProbFloor::new(-1e-3).is_err());
        assert!(ProbFloor::new(1.0).is_err());
        assert!(ProbFloor::new(1e-6).is_ok());
    }
}
