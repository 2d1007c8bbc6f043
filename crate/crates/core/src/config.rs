//! Run configuration: one JSON document covering the endpoint, grid sizes,
//! transform ranges, probability floor, seeds and methods.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::ModelEndpoint;
use crate::error::{FestaError, Result};
use crate::estimator::{DEFAULT_BU_SAMPLES, DEFAULT_BU_TOP_K, DEFAULT_OE_DECODES};
use crate::instance::{McqInstance, MediaKind};
use crate::record::KUsed;
use crate::scoring::ProbFloor;
use crate::transforms::sampling::{preferred_fcs_modality, FcsModality, TransformRanges};
use crate::transforms::text::{DEFAULT_COMPLEMENT_PROMPT, DEFAULT_PARAPHRASE_PROMPT};
use crate::transforms::{sha256_hex, Modality};

/// Every method name `score` accepts. `entropy-ablation` expands to
/// `entropy-fes`, `entropy-fcs` and `entropy-sum`.
pub const ALL_METHODS: &[&str] =
    &["festa", "fes", "fcs", "oe", "vc", "ia-i", "ia-t", "ia-it", "ru", "bu", "entropy-ablation"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridK {
    pub k11: usize,
    pub k12: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KConfig {
    /// Image and text-only instances.
    pub vision: GridK,
    pub audio: GridK,
    /// Explicit overrides applied to every instance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k11: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k12: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k21: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k22: Option<usize>,
}

impl Default for KConfig {
    fn default() -> Self {
        KConfig {
            vision: GridK { k11: 14, k12: 4 },
            audio: GridK { k11: 15, k12: 4 },
            k11: None,
            k12: None,
            k21: None,
            k22: None,
        }
    }
}

impl KConfig {
    /// Grid sizes for one instance. Unless overridden, the FCS grid mirrors
    /// the FES grid: a text complement pairs `k12` complements with `k11`
    /// media variants, a media complement pairs `k11` with `k12`.
    pub fn for_instance(&self, instance: &McqInstance, fcs: FcsModality) -> KUsed {
        let base = match instance.media.kind {
            MediaKind::Audio => self.audio,
            _ => self.vision,
        };
        let k11 = self.k11.unwrap_or(base.k11);
        let k12 = self.k12.unwrap_or(base.k12);
        let (d21, d22) = match preferred_fcs_modality(instance, fcs) {
            Modality::Text => (k12, k11),
            _ => (k11, k12),
        };
        KUsed { k11, k12, k21: self.k21.unwrap_or(d21), k22: self.k22.unwrap_or(d22) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParaphraseMode {
    #[default]
    Template,
    ModelBacked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParaphraserConfig {
    pub mode: ParaphraseMode,
    pub paraphrase_prompt: String,
    pub complement_prompt: String,
}

impl Default for ParaphraserConfig {
    fn default() -> Self {
        ParaphraserConfig {
            mode: ParaphraseMode::Template,
            paraphrase_prompt: DEFAULT_PARAPHRASE_PROMPT.into(),
            complement_prompt: DEFAULT_COMPLEMENT_PROMPT.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub oe_decodes: usize,
    /// Media-only augmentations for IA on media; defaults to `k11`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ia_media_k: Option<usize>,
    /// Text-only augmentations for IA on text; defaults to `k12`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ia_text_k: Option<usize>,
    pub ru_k: usize,
    pub bu_top_k: usize,
    pub bu_samples: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            oe_decodes: DEFAULT_OE_DECODES,
            ia_media_k: None,
            ia_text_k: None,
            ru_k: 10,
            bu_top_k: DEFAULT_BU_TOP_K,
            bu_samples: DEFAULT_BU_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FestaConfig {
    pub endpoint: ModelEndpoint,
    pub seed: u64,
    pub methods: Vec<String>,
    pub k: KConfig,
    pub ranges: TransformRanges,
    pub fcs_modality: FcsModality,
    pub fcs_fallback: bool,
    pub paraphraser: ParaphraserConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event_library: Option<PathBuf>,
    /// Probability floor; 0 selects exact mode with infinite scores.
    pub floor: f64,
    /// Stochastic decodes per generated sample.
    pub decodes_per_sample: u32,
    pub baselines: BaselineConfig,
    /// Query failure fraction above which the query stage exits with an
    /// upstream-failure status.
    pub max_failure_rate: f64,
    /// Per-grid sample counts for the sweep; defaults depend on modality.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_schedule: Option<Vec<usize>>,
}

impl Default for FestaConfig {
    fn default() -> Self {
        FestaConfig {
            endpoint: ModelEndpoint::default(),
            seed: 0,
            methods: ALL_METHODS.iter().map(|s| s.to_string()).collect(),
            k: KConfig::default(),
            ranges: TransformRanges::default(),
            fcs_modality: FcsModality::Auto,
            fcs_fallback: false,
            paraphraser: ParaphraserConfig::default(),
            event_library: None,
            floor: ProbFloor::DEFAULT.value(),
            decodes_per_sample: 1,
            baselines: BaselineConfig::default(),
            max_failure_rate: 0.2,
            sweep_schedule: None,
        }
    }
}

pub const VISION_SWEEP: [usize; 14] = [4, 8, 12, 16, 20, 24, 28, 32, 36, 40, 44, 48, 52, 56];
pub const AUDIO_SWEEP: [usize; 12] = [5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60];

/// Splits a comma-separated method list and checks every name.
pub fn parse_methods(list: &str) -> Result<Vec<String>> {
    let methods: Vec<String> = list.split(',').map(|s| s.trim().to_ascii_lowercase()).filter(|s| !s.is_empty()).collect();
    validate_methods(&methods)?;
    Ok(methods)
}

pub fn validate_methods(methods: &[String]) -> Result<()> {
    if methods.is_empty() {
        return Err(FestaError::Usage("method list is empty".into()));
    }
    for m in methods {
        if !ALL_METHODS.contains(&m.as_str()) {
            return Err(FestaError::Usage(format!("unknown method {m:?}; expected one of {}", ALL_METHODS.join(", "))));
        }
    }
    Ok(())
}

impl FestaConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FestaError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: FestaConfig =
            serde_json::from_str(&text).map_err(|e| FestaError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.endpoint.validate()?;
        validate_methods(&self.methods)?;
        ProbFloor::new(self.floor)?;
        let ks = [self.k.vision.k11, self.k.vision.k12, self.k.audio.k11, self.k.audio.k12];
        let overrides = [self.k.k11, self.k.k12, self.k.k21, self.k.k22];
        if ks.contains(&0) || overrides.contains(&Some(0)) {
            return Err(FestaError::Config("every K must be at least 1".into()));
        }
        if self.decodes_per_sample == 0 {
            return Err(FestaError::Config("decodes_per_sample must be at least 1".into()));
        }
        let b = &self.baselines;
        if b.oe_decodes == 0 || b.ru_k == 0 || b.bu_top_k == 0 || b.bu_samples == 0 {
            return Err(FestaError::Config("baseline sample counts must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(FestaError::Config("max_failure_rate must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn floor(&self) -> Result<ProbFloor> {
        ProbFloor::new(self.floor)
    }

    pub fn wants(&self, method: &str) -> bool {
        self.methods.iter().any(|m| m == method)
    }

    /// SHA-256 of the serialized configuration, endpoint secrets excluded
    /// (the token itself never enters the config).
    pub fn fingerprint(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn sweep_schedule(&self, any_audio: bool) -> Vec<usize> {
        match &self.sweep_schedule {
            Some(s) => s.clone(),
            None if any_audio => AUDIO_SWEEP.to_vec(),
            None => VISION_SWEEP.to_vec(),
        }
    }
}
