//! Per-instance score rows emitted by the scoring stage.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::instance::Label;

/// An uncertainty value in nats. Serializes `+inf` (exact mode) as the
/// string `"inf"` so JSON rows stay lossless.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Score(pub f64);

impl Score {
    pub fn get(self) -> f64 {
        self.0
    }
}

impl From<f64> for Score {
    fn from(v: f64) -> Self {
        Score(v)
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() && self.0 > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct ScoreVisitor;
        impl Visitor<'_> for ScoreVisitor {
            type Value = Score;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Score, E> {
                Ok(Score(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Score, E> {
                Ok(Score(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Score, E> {
                Ok(Score(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Score, E> {
                match v {
                    "inf" => Ok(Score(f64::INFINITY)),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(ScoreVisitor)
    }
}

/// Grid sizes actually used for an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KUsed {
    pub k11: usize,
    pub k12: usize,
    pub k21: usize,
    pub k22: usize,
}

/// Parse bookkeeping for one sample set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParseStats {
    pub requested: usize,
    pub parsed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fes_parse: Option<ParseStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fcs_parse: Option<ParseStats>,
    /// Unpooled FCS frequencies, kept for inspection only.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fcs_per_label: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Scores for one instance. `u_festa = u_fes + u_fcs` whenever all three
/// are present; FCS scores are absent when the instance could not be
/// complemented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    pub instance_id: String,
    pub predicted_label: Label,
    pub target_label: Label,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_fes: Option<Score>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_fcs: Option<Score>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_festa: Option<Score>,
    pub baselines: BTreeMap<String, Score>,
    pub k_used: KUsed,
    #[serde(default)]
    pub diagnostics: Diagnostics,
}

impl UncertaintyRecord {
    /// Uncertainty reported for `method`, if this record carries it.
    pub fn uncertainty(&self, method: &str) -> Option<f64> {
        match method {
            "festa" => self.u_festa.map(Score::get),
            "fes" => self.u_fes.map(Score::get),
            "fcs" => self.u_fcs.map(Score::get),
            other => self.baselines.get(other).map(|s| s.get()),
        }
    }
}
