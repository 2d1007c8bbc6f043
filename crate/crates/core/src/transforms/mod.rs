//! Seeded generators of functionally equivalent (FES) and functionally
//! complementary (FCS) samples over image, audio and text.

pub mod audio;
pub mod image;
pub mod sampling;
pub mod text;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FestaError, Result};

pub use self::audio::{apply_audio_transform, EventLibrary};
pub use self::image::apply_image_transform;
pub use self::sampling::{generate_fcs_set, generate_fes_set, SampleFamily, SamplingConfig, TransformedInput};
pub use self::text::{complement_question, paraphrase_question, Complemented, ParaphraseProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Audio,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Contrast,
    Blur,
    Noise,
    Mask,
    Rotate,
    Shift,
    Grayscale,
    Hflip,
    InsertSilence,
    AdjustVolume,
    SwapEvents,
    AddEvent,
    ReplaceExtremalEvent,
    Paraphrase,
    Complement,
}

impl TransformKind {
    /// Image equivalence kinds, in the order FES media variants cycle through them.
    pub const IMAGE_EQUIVALENCE: [TransformKind; 7] = [
        TransformKind::Contrast,
        TransformKind::Blur,
        TransformKind::Noise,
        TransformKind::Mask,
        TransformKind::Rotate,
        TransformKind::Shift,
        TransformKind::Grayscale,
    ];

    pub const AUDIO_EQUIVALENCE: [TransformKind; 2] =
        [TransformKind::InsertSilence, TransformKind::AdjustVolume];

    pub fn modality(self) -> Modality {
        use TransformKind::*;
        match self {
            Contrast | Blur | Noise | Mask | Rotate | Shift | Grayscale | Hflip => Modality::Image,
            InsertSilence | AdjustVolume | SwapEvents | AddEvent | ReplaceExtremalEvent => {
                Modality::Audio
            }
            Paraphrase | Complement => Modality::Text,
        }
    }

    pub fn is_complementary(self) -> bool {
        use TransformKind::*;
        matches!(self, Hflip | SwapEvents | AddEvent | ReplaceExtremalEvent | Complement)
    }
}

/// One concrete transform with its parameters and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub modality: Modality,
    pub kind: TransformKind,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
}

impl TransformSpec {
    pub fn new(kind: TransformKind, seed: u64) -> Self {
        TransformSpec {
            modality: kind.modality(),
            kind,
            params: BTreeMap::new(),
            seed,
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<f64> {
        self.param(name).ok_or_else(|| {
            FestaError::Config(format!("{:?} transform requires parameter {name:?}", self.kind))
        })
    }

    pub fn validate_modality(&self, expected: Modality) -> Result<()> {
        if self.modality != expected || self.kind.modality() != expected {
            return Err(FestaError::Config(format!(
                "{:?} is not a {:?} transform",
                self.kind, expected
            )));
        }
        Ok(())
    }

    pub fn is_complementary(&self) -> bool {
        self.kind.is_complementary()
    }
}

/// Derives a child seed from a base seed and a path of labels. Stable across
/// platforms and releases.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub(crate) fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Hex SHA-256 of a payload; used for content-addressed staging and cache keys.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
