//! Combinatoric FES and FCS grids and the baseline augmentation sets.
//!
//! An FES grid crosses `k11` media-equivalence variants with `k12` question
//! paraphrases. An FCS grid crosses `k21` complements of one modality with
//! `k22` equivalence variants of the other. Cell `(i, j)` of a grid uses
//! variant `i` of the first axis and variant `j` of the second.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::audio::{apply_audio_transform, EventLibrary};
use super::image::apply_image_transform;
use super::text::{complement_question, find_relation, paraphrase_question, ParaphraseProvider};
use super::{derive_seed, rng_for, sha256_hex, Modality, TransformKind, TransformSpec};
use crate::error::{FestaError, Result};
use crate::instance::{EventSegment, McqInstance, MediaKind, TaskTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFamily {
    Original,
    Fes,
    Fcs,
}

impl SampleFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleFamily::Original => "original",
            SampleFamily::Fes => "fes",
            SampleFamily::Fcs => "fcs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "original" => Some(SampleFamily::Original),
            "fes" => Some(SampleFamily::Fes),
            "fcs" => Some(SampleFamily::Fcs),
            _ => None,
        }
    }
}

/// Sample streams. FES/FCS grids feed FESTA; the others feed baselines.
pub mod stream {
    pub const ORIGINAL: &str = "original";
    pub const FES: &str = "fes";
    pub const FCS: &str = "fcs";
    pub const IA_MEDIA: &str = "ia-i";
    pub const IA_TEXT: &str = "ia-t";
    pub const RU: &str = "ru";
}

/// Media content of a sample, addressed by SHA-256.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaBlob {
    pub kind: MediaKind,
    pub sha256: String,
    /// File name inside the staging directory, once staged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(skip)]
    pub bytes: Option<Arc<Vec<u8>>>,
}

impl MediaBlob {
    pub fn from_bytes(kind: MediaKind, bytes: Vec<u8>) -> Self {
        MediaBlob { kind, sha256: sha256_hex(&bytes), file: None, bytes: Some(Arc::new(bytes)) }
    }

    fn extension(&self) -> &'static str {
        match self.kind {
            MediaKind::Audio => "wav",
            _ => match self.bytes.as_deref() {
                Some(b) if b.starts_with(&[0xFF, 0xD8, 0xFF]) => "jpg",
                _ => "png",
            },
        }
    }

    /// Writes the payload as `<sha256>.<ext>` under `dir` unless already present.
    pub fn stage(&mut self, dir: &Path) -> Result<PathBuf> {
        let name = format!("{}.{}", self.sha256, self.extension());
        let path = dir.join(&name);
        if !path.exists() {
            let bytes = self.bytes.as_ref().ok_or_else(|| {
                FestaError::Precondition(format!("media {} has no bytes to stage", self.sha256))
            })?;
            std::fs::create_dir_all(dir)?;
            let tmp = dir.join(format!(".{name}.tmp"));
            std::fs::write(&tmp, bytes.as_slice())?;
            std::fs::rename(&tmp, &path)?;
        }
        self.file = Some(name);
        Ok(path)
    }

    /// Loads bytes from the staging directory if they are not in memory.
    pub fn load(&mut self, dir: &Path) -> Result<Arc<Vec<u8>>> {
        if let Some(b) = &self.bytes {
            return Ok(b.clone());
        }
        let file = self.file.as_ref().ok_or_else(|| {
            FestaError::Input(format!("media {} was never staged", self.sha256))
        })?;
        let bytes = Arc::new(std::fs::read(dir.join(file))?);
        self.bytes = Some(bytes.clone());
        Ok(bytes)
    }
}

/// One concrete model input with full transform provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedInput {
    pub parent_id: String,
    pub family: SampleFamily,
    pub stream: String,
    /// `None` means the media is untouched (or absent).
    pub media_transform: Option<TransformSpec>,
    /// `None` means the original question text.
    pub text_transform: Option<TransformSpec>,
    pub rendered_question: String,
    pub media_payload: Option<MediaBlob>,
    pub replicate_index: (u32, u32),
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<EventSegment>,
}

impl TransformedInput {
    /// Family/transform consistency: FES samples carry only equivalence kinds;
    /// FCS samples carry exactly one complementary kind.
    pub fn check_family(&self) -> Result<()> {
        let comp = [&self.media_transform, &self.text_transform]
            .iter()
            .filter(|t| t.as_ref().is_some_and(|s| s.is_complementary()))
            .count();
        let ok = match self.family {
            SampleFamily::Original => self.media_transform.is_none() && self.text_transform.is_none(),
            SampleFamily::Fes => comp == 0,
            SampleFamily::Fcs => comp == 1,
        };
        if ok {
            Ok(())
        } else {
            Err(FestaError::Domain(format!(
                "sample {}:{:?} violates its {:?} family contract",
                self.parent_id, self.replicate_index, self.family
            )))
        }
    }
}

/// Ranges parameters are drawn from. Each must sit inside the transform's
/// hard limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformRanges {
    pub contrast_factor: (f64, f64),
    pub blur_radius: (u32, u32),
    pub noise_sigma: (f64, f64),
    pub mask_fraction: (f64, f64),
    pub rotate_degrees: f64,
    pub shift_fraction: f64,
    pub hflip_noise_sigma: f64,
    pub silence_s: (f64, f64),
    pub volume_max_db: f64,
    pub event_gap_s: (f64, f64),
}

impl Default for TransformRanges {
    fn default() -> Self {
        TransformRanges {
            contrast_factor: (0.8, 1.2),
            blur_radius: (1, 2),
            noise_sigma: (2.0 / 255.0, 8.0 / 255.0),
            mask_fraction: (0.005, 0.01),
            rotate_degrees: 5.0,
            shift_fraction: 0.05,
            hflip_noise_sigma: 2.0 / 255.0,
            silence_s: (0.05, 0.3),
            volume_max_db: 3.0,
            event_gap_s: (0.05, 0.3),
        }
    }
}

fn sample_range(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

impl TransformRanges {
    /// Equivalence transform number `index` of the media catalog.
    pub fn equivalence_spec(&self, media: MediaKind, index: usize, seed: u64) -> Option<TransformSpec> {
        let mut rng = rng_for(seed);
        let spec = match media {
            MediaKind::Image => {
                let kind = TransformKind::IMAGE_EQUIVALENCE[index % TransformKind::IMAGE_EQUIVALENCE.len()];
                let s = TransformSpec::new(kind, seed);
                match kind {
                    TransformKind::Contrast => s.with("factor", sample_range(&mut rng, self.contrast_factor)),
                    TransformKind::Blur => {
                        let (lo, hi) = self.blur_radius;
                        s.with("radius", rng.random_range(lo..=hi.max(lo)) as f64)
                    }
                    TransformKind::Noise => s.with("sigma", sample_range(&mut rng, self.noise_sigma)),
                    TransformKind::Mask => s.with("fraction", sample_range(&mut rng, self.mask_fraction)),
                    TransformKind::Rotate => {
                        s.with("degrees", sample_range(&mut rng, (-self.rotate_degrees, self.rotate_degrees)))
                    }
                    TransformKind::Shift => {
                        let r = (-self.shift_fraction, self.shift_fraction);
                        s.with("dx", sample_range(&mut rng, r)).with("dy", sample_range(&mut rng, r))
                    }
                    _ => s,
                }
            }
            MediaKind::Audio => {
                let kind = TransformKind::AUDIO_EQUIVALENCE[index % TransformKind::AUDIO_EQUIVALENCE.len()];
                let s = TransformSpec::new(kind, seed);
                match kind {
                    TransformKind::InsertSilence => s.with("duration_s", sample_range(&mut rng, self.silence_s)),
                    _ => s.with("max_gain_db", self.volume_max_db),
                }
            }
            MediaKind::None => return None,
        };
        Some(spec)
    }
}

/// Which modality an FCS grid complements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FcsModality {
    /// Audio for order/count/duration tasks with audio media, text otherwise.
    #[default]
    Auto,
    Text,
    /// Image horizontal flip (left/right questions only) or the audio task
    /// complement.
    Media,
}

/// Everything generation needs besides the instance.
#[derive(Debug, Clone, Default)]
pub struct SamplingConfig {
    pub ranges: TransformRanges,
    pub paraphraser: ParaphraseProvider,
    pub fcs_modality: FcsModality,
    /// Try the other modality when the chosen one cannot be complemented.
    pub fcs_fallback: bool,
    pub event_library: Option<EventLibrary>,
}

pub fn load_original_media(instance: &McqInstance) -> Result<Option<MediaBlob>> {
    match (instance.media.kind, &instance.media.path) {
        (MediaKind::None, _) => Ok(None),
        (kind, Some(path)) => {
            let bytes = std::fs::read(path).map_err(|e| {
                FestaError::Input(format!("instance {}: cannot read media {}: {e}", instance.id, path.display()))
            })?;
            Ok(Some(MediaBlob::from_bytes(kind, bytes)))
        }
        (kind, None) => Err(FestaError::Input(format!("instance {}: {kind:?} media without a path", instance.id))),
    }
}

struct MediaVariant {
    spec: Option<TransformSpec>,
    blob: Option<MediaBlob>,
    segments: Vec<EventSegment>,
}

fn apply_media(
    original: &Option<MediaBlob>,
    instance: &McqInstance,
    spec: Option<TransformSpec>,
    library: Option<&EventLibrary>,
) -> Result<MediaVariant> {
    let (Some(orig), Some(spec)) = (original, spec.as_ref()) else {
        return Ok(MediaVariant { spec: None, blob: original.clone(), segments: instance.media.events.clone() });
    };
    let bytes = orig.bytes.as_ref().ok_or_else(|| FestaError::Input("original media not loaded".into()))?;
    let (out, segments) = match spec.modality {
        Modality::Image => (apply_image_transform(bytes, spec)?, Vec::new()),
        Modality::Audio => apply_audio_transform(bytes, &instance.media.events, spec, library)?,
        Modality::Text => return Err(FestaError::Config("text transform applied to media".into())),
    };
    Ok(MediaVariant { spec: Some(spec.clone()), blob: Some(MediaBlob::from_bytes(orig.kind, out)), segments })
}

fn media_equivalents(
    instance: &McqInstance,
    original: &Option<MediaBlob>,
    count: usize,
    config: &SamplingConfig,
    seed: u64,
    tag: &str,
) -> Result<Vec<MediaVariant>> {
    (0..count)
        .map(|i| {
            let s = derive_seed(seed, &[&instance.id, tag, &i.to_string()]);
            let spec = config.ranges.equivalence_spec(instance.media.kind, i, s);
            apply_media(original, instance, spec, config.event_library.as_ref())
        })
        .collect()
}

fn paraphrase_specs(texts: &[String], seed: u64, kind: TransformKind) -> Vec<(String, TransformSpec)> {
    texts
        .iter()
        .enumerate()
        .map(|(j, t)| (t.clone(), TransformSpec::new(kind, seed).with("variant", j as f64)))
        .collect()
}

fn check_k(name: &str, k: usize) -> Result<()> {
    if k == 0 {
        return Err(FestaError::Precondition(format!("{name} must be at least 1")));
    }
    Ok(())
}

/// The unmodified input, used for the prediction and decode-based baselines.
pub fn original_sample(instance: &McqInstance, media: Option<MediaBlob>) -> TransformedInput {
    TransformedInput {
        parent_id: instance.id.clone(),
        family: SampleFamily::Original,
        stream: stream::ORIGINAL.into(),
        media_transform: None,
        text_transform: None,
        rendered_question: instance.question.clone(),
        media_payload: media,
        replicate_index: (0, 0),
        segments: instance.media.events.clone(),
    }
}

/// `k11 × k12` functionally equivalent samples.
pub async fn generate_fes_set(
    instance: &McqInstance,
    k11: usize,
    k12: usize,
    config: &SamplingConfig,
    seed: u64,
) -> Result<Vec<TransformedInput>> {
    check_k("k11", k11)?;
    check_k("k12", k12)?;
    let original = load_original_media(instance)?;
    let media = media_equivalents(instance, &original, k11, config, seed, "fes-media")?;
    let text_seed = derive_seed(seed, &[&instance.id, "fes-text"]);
    let texts = paraphrase_question(&instance.question, &config.paraphraser, k12, text_seed).await?;
    let texts = paraphrase_specs(&texts, text_seed, TransformKind::Paraphrase);
    let mut out = Vec::with_capacity(k11 * k12);
    for (i, m) in media.iter().enumerate() {
        for (j, (text, tspec)) in texts.iter().enumerate() {
            out.push(TransformedInput {
                parent_id: instance.id.clone(),
                family: SampleFamily::Fes,
                stream: stream::FES.into(),
                media_transform: m.spec.clone(),
                text_transform: Some(tspec.clone()),
                rendered_question: text.clone(),
                media_payload: m.blob.clone(),
                replicate_index: (i as u32, j as u32),
                segments: m.segments.clone(),
            });
        }
    }
    Ok(out)
}

/// The modality an instance's FCS grid will complement, before fallback.
pub fn preferred_fcs_modality(instance: &McqInstance, choice: FcsModality) -> Modality {
    let audio_task = matches!(instance.task_tag, TaskTag::Order | TaskTag::Count | TaskTag::Duration);
    match (choice, instance.media.kind) {
        (FcsModality::Text, _) => Modality::Text,
        (FcsModality::Auto, MediaKind::Audio) if audio_task => Modality::Audio,
        (FcsModality::Auto, _) => Modality::Text,
        (FcsModality::Media, MediaKind::Audio) => Modality::Audio,
        (FcsModality::Media, MediaKind::Image) => Modality::Image,
        (FcsModality::Media, MediaKind::None) => Modality::Text,
    }
}

fn audio_complement_spec(instance: &McqInstance, variant: usize, seed: u64, ranges: &TransformRanges) -> Result<TransformSpec> {
    let segs = &instance.media.events;
    if segs.is_empty() {
        return Err(FestaError::NotComplementable(format!("instance {}: no event segments", instance.id)));
    }
    let mut rng = rng_for(seed);
    match instance.task_tag {
        TaskTag::Order => {
            let pairs: Vec<(usize, usize)> = (0..segs.len())
                .flat_map(|i| (i + 1..segs.len()).map(move |j| (i, j)))
                .filter(|&(i, j)| segs[i].label != segs[j].label)
                .collect();
            if pairs.is_empty() {
                return Err(FestaError::NotComplementable(format!(
                    "instance {}: order task needs two differently labeled events",
                    instance.id
                )));
            }
            let (i, j) = pairs[variant % pairs.len()];
            Ok(TransformSpec::new(TransformKind::SwapEvents, seed).with("i", i as f64).with("j", j as f64))
        }
        TaskTag::Count => Ok(TransformSpec::new(TransformKind::AddEvent, seed)
            .with("position", variant.is_multiple_of(2) as u8 as f64)
            .with("source_index", rng.random_range(0..segs.len()) as f64)
            .with("gap_s", sample_range(&mut rng, ranges.event_gap_s))),
        TaskTag::Duration => {
            let shortest = instance.question.to_ascii_lowercase().contains("shortest");
            Ok(TransformSpec::new(TransformKind::ReplaceExtremalEvent, seed).with("extremal", shortest as u8 as f64))
        }
        TaskTag::Spatial | TaskTag::Generic => Err(FestaError::NotComplementable(format!(
            "instance {}: no audio complement for {:?} tasks",
            instance.id, instance.task_tag
        ))),
    }
}

fn hflip_applicable(instance: &McqInstance) -> Result<()> {
    match find_relation(&instance.question) {
        Some((_, ("left", "right"), _)) => Ok(()),
        _ => Err(FestaError::NotComplementable(format!(
            "instance {}: image flip only complements left/right questions",
            instance.id
        ))),
    }
}

async fn fcs_text_grid(
    instance: &McqInstance,
    original: &Option<MediaBlob>,
    k21: usize,
    k22: usize,
    config: &SamplingConfig,
    seed: u64,
) -> Result<Vec<TransformedInput>> {
    let cseed = derive_seed(seed, &[&instance.id, "fcs-text"]);
    let complemented = complement_question(&instance.question, &config.paraphraser, cseed).await?;
    let texts = paraphrase_question(&complemented.text, &config.paraphraser, k21, cseed).await?;
    let media = media_equivalents(instance, original, k22, config, seed, "fcs-media")?;
    let mut out = Vec::with_capacity(k21 * k22);
    for (i, text) in texts.iter().enumerate() {
        let tspec = TransformSpec::new(TransformKind::Complement, cseed).with("variant", i as f64);
        for (j, m) in media.iter().enumerate() {
            out.push(TransformedInput {
                parent_id: instance.id.clone(),
                family: SampleFamily::Fcs,
                stream: stream::FCS.into(),
                media_transform: m.spec.clone(),
                text_transform: Some(tspec.clone()),
                rendered_question: text.clone(),
                media_payload: m.blob.clone(),
                replicate_index: (i as u32, j as u32),
                segments: m.segments.clone(),
            });
        }
    }
    Ok(out)
}

async fn fcs_media_grid(
    instance: &McqInstance,
    original: &Option<MediaBlob>,
    modality: Modality,
    k21: usize,
    k22: usize,
    config: &SamplingConfig,
    seed: u64,
) -> Result<Vec<TransformedInput>> {
    let mut variants = Vec::with_capacity(k21);
    for i in 0..k21 {
        let s = derive_seed(seed, &[&instance.id, "fcs-media", &i.to_string()]);
        let spec = match modality {
            Modality::Image => {
                hflip_applicable(instance)?;
                let sigma = if i == 0 {
                    0.0
                } else {
                    sample_range(&mut rng_for(s), (0.0, config.ranges.hflip_noise_sigma))
                };
                TransformSpec::new(TransformKind::Hflip, s).with("noise_sigma", sigma)
            }
            Modality::Audio => audio_complement_spec(instance, i, s, &config.ranges)?,
            Modality::Text => unreachable!("text complements use fcs_text_grid"),
        };
        variants.push(apply_media(original, instance, Some(spec), config.event_library.as_ref())?);
    }
    let tseed = derive_seed(seed, &[&instance.id, "fcs-text"]);
    let texts = paraphrase_question(&instance.question, &config.paraphraser, k22, tseed).await?;
    let texts = paraphrase_specs(&texts, tseed, TransformKind::Paraphrase);
    let mut out = Vec::with_capacity(k21 * k22);
    for (i, m) in variants.iter().enumerate() {
        for (j, (text, tspec)) in texts.iter().enumerate() {
            out.push(TransformedInput {
                parent_id: instance.id.clone(),
                family: SampleFamily::Fcs,
                stream: stream::FCS.into(),
                media_transform: m.spec.clone(),
                text_transform: Some(tspec.clone()),
                rendered_question: text.clone(),
                media_payload: m.blob.clone(),
                replicate_index: (i as u32, j as u32),
                segments: m.segments.clone(),
            });
        }
    }
    Ok(out)
}

/// `k21 × k22` functionally complementary samples. `k21` counts complements
/// of the chosen modality, `k22` equivalence variants of the other.
pub async fn generate_fcs_set(
    instance: &McqInstance,
    k21: usize,
    k22: usize,
    config: &SamplingConfig,
    seed: u64,
) -> Result<Vec<TransformedInput>> {
    check_k("k21", k21)?;
    check_k("k22", k22)?;
    let original = load_original_media(instance)?;
    let preferred = preferred_fcs_modality(instance, config.fcs_modality);
    let first = match preferred {
        Modality::Text => fcs_text_grid(instance, &original, k21, k22, config, seed).await,
        m => fcs_media_grid(instance, &original, m, k21, k22, config, seed).await,
    };
    match first {
        Err(FestaError::NotComplementable(reason)) | Err(FestaError::Precondition(reason)) if config.fcs_fallback => {
            let fallback = match preferred {
                Modality::Text => match instance.media.kind {
                    MediaKind::Image => Some(Modality::Image),
                    MediaKind::Audio => Some(Modality::Audio),
                    MediaKind::None => None,
                },
                _ => Some(Modality::Text),
            };
            tracing::info!(instance = %instance.id, %reason, ?fallback, "FCS falling back to other modality");
            match fallback {
                Some(Modality::Text) => fcs_text_grid(instance, &original, k21, k22, config, seed).await,
                Some(m) => fcs_media_grid(instance, &original, m, k21, k22, config, seed).await,
                None => Err(FestaError::NotComplementable(reason)),
            }
        }
        other => other,
    }
}

/// `k` media-only equivalence variants with the original question (IA on media).
pub fn generate_media_only_set(instance: &McqInstance, k: usize, config: &SamplingConfig, seed: u64) -> Result<Vec<TransformedInput>> {
    check_k("k", k)?;
    let original = load_original_media(instance)?;
    let media = media_equivalents(instance, &original, k, config, seed, "ia-media")?;
    Ok(media
        .into_iter()
        .enumerate()
        .map(|(i, m)| TransformedInput {
            parent_id: instance.id.clone(),
            family: SampleFamily::Fes,
            stream: stream::IA_MEDIA.into(),
            media_transform: m.spec,
            text_transform: None,
            rendered_question: instance.question.clone(),
            media_payload: m.blob,
            replicate_index: (i as u32, 0),
            segments: m.segments,
        })
        .collect())
}

/// `k` paraphrases with untouched media, tagged with `stream_name`
/// (`ia-t` or `ru`).
pub async fn generate_text_only_set(
    instance: &McqInstance,
    k: usize,
    config: &SamplingConfig,
    seed: u64,
    stream_name: &str,
) -> Result<Vec<TransformedInput>> {
    check_k("k", k)?;
    let original = load_original_media(instance)?;
    let tseed = derive_seed(seed, &[&instance.id, stream_name]);
    let texts = paraphrase_question(&instance.question, &config.paraphraser, k, tseed).await?;
    Ok(paraphrase_specs(&texts, tseed, TransformKind::Paraphrase)
        .into_iter()
        .enumerate()
        .map(|(j, (text, tspec))| TransformedInput {
            parent_id: instance.id.clone(),
            family: SampleFamily::Fes,
            stream: stream_name.to_string(),
            media_transform: None,
            text_transform: Some(tspec),
            rendered_question: text,
            media_payload: original.clone(),
            replicate_index: (0, j as u32),
            segments: instance.media.events.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Label, MediaRef, OptionChoice};
    use crate::transforms::audio::AudioClip;
    use crate::transforms::image::encode_png;
    use crate::transforms::text::template_complement;
    use image::{Rgba, RgbaImage};

    fn opts() -> Vec<OptionChoice> {
        vec![
            OptionChoice { label: Label::from("A"), text: "yes".into() },
            OptionChoice { label: Label::from("B"), text: "no".into() },
        ]
    }

    fn text_instance(q: &str) -> McqInstance {
        McqInstance {
            id: "t1".into(),
            question: q.into(),
            options: opts(),
            target_label: Label::from("A"),
            media: MediaRef::none(),
            task_tag: TaskTag::Spatial,
        }
    }

    fn image_instance(dir: &Path) -> McqInstance {
        let img = RgbaImage::from_fn(12, 8, |x, y| Rgba([(x * 20) as u8, (y * 30) as u8, 90, 255]));
        let path = dir.join("img.png");
        std::fs::write(&path, encode_png(&img).unwrap()).unwrap();
        McqInstance {
            id: "img1".into(),
            question: "Is the cat to the left of the car?".into(),
            options: opts(),
            target_label: Label::from("A"),
            media: MediaRef { kind: MediaKind::Image, path: Some(path), events: vec![] },
            task_tag: TaskTag::Spatial,
        }
    }

    fn audio_instance(dir: &Path, task: TaskTag) -> McqInstance {
        let spec = hound::WavSpec { channels: 1, sample_rate: 800, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
        let samples = (0..1600).map(|t| if t % 400 < 300 { 0.3 * ((t as f64) * 0.1).sin() } else { 0.0 }).collect();
        let path = dir.join("a.wav");
        std::fs::write(&path, AudioClip { spec, samples }.encode().unwrap()).unwrap();
        let events = vec![
            EventSegment { label: "dog".into(), start_s: 0.0, end_s: 0.375 },
            EventSegment { label: "cat".into(), start_s: 0.5, end_s: 0.875 },
            EventSegment { label: "bell".into(), start_s: 1.0, end_s: 1.6 },
        ];
        McqInstance {
            id: "aud1".into(),
            question: "Which sound occurs after the dog?".into(),
            options: opts(),
            target_label: Label::from("A"),
            media: MediaRef { kind: MediaKind::Audio, path: Some(path), events },
            task_tag: task,
        }
    }

    #[tokio::test]
    async fn fes_grid_sizes() {
        let inst = text_instance("Is the cat to the left of the car?");
        let cfg = SamplingConfig::default();
        for (k11, k12) in [(14, 4), (1, 1), (15, 4)] {
            let set = generate_fes_set(&inst, k11, k12, &cfg, 7).await.unwrap();
            assert_eq!(set.len(), k11 * k12);
            assert!(set.iter().all(|s| s.check_family().is_ok()));
        }
        assert!(generate_fes_set(&inst, 0, 4, &cfg, 7).await.is_err());
    }

    #[tokio::test]
    async fn image_fes_cycles_catalog_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let inst = image_instance(dir.path());
        let cfg = SamplingConfig::default();
        let a = generate_fes_set(&inst, 14, 4, &cfg, 1).await.unwrap();
        let b = generate_fes_set(&inst, 14, 4, &cfg, 1).await.unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 56);
        for (n, s) in a.iter().enumerate() {
            let i = n / 4;
            let spec = s.media_transform.as_ref().unwrap();
            assert_eq!(spec.kind, TransformKind::IMAGE_EQUIVALENCE[i % 7]);
            assert!(!spec.is_complementary());
            assert_eq!(s.replicate_index, (i as u32, (n % 4) as u32));
        }
    }

    #[tokio::test]
    async fn text_fcs_shares_antonym_relation() {
        let dir = tempfile::tempdir().unwrap();
        let inst = image_instance(dir.path());
        let set = generate_fcs_set(&inst, 4, 14, &SamplingConfig::default(), 3).await.unwrap();
        assert_eq!(set.len(), 56);
        for s in &set {
            s.check_family().unwrap();
            assert_eq!(s.text_transform.as_ref().unwrap().kind, TransformKind::Complement);
            assert!(!s.media_transform.as_ref().unwrap().is_complementary());
            assert!(s.rendered_question.to_lowercase().contains("right"));
            assert!(!s.rendered_question.to_lowercase().contains("left"));
        }
    }

    #[tokio::test]
    async fn single_cell_fcs_has_one_complement() {
        let inst = text_instance("Is the cat to the left of the car?");
        let set = generate_fcs_set(&inst, 1, 1, &SamplingConfig::default(), 0).await.unwrap();
        assert_eq!(set.len(), 1);
        set[0].check_family().unwrap();
    }

    #[tokio::test]
    async fn image_hflip_fcs() {
        let dir = tempfile::tempdir().unwrap();
        let inst = image_instance(dir.path());
        let cfg = SamplingConfig { fcs_modality: FcsModality::Media, ..SamplingConfig::default() };
        let set = generate_fcs_set(&inst, 3, 2, &cfg, 3).await.unwrap();
        assert_eq!(set.len(), 6);
        for s in &set {
            assert_eq!(s.media_transform.as_ref().unwrap().kind, TransformKind::Hflip);
            assert_eq!(s.text_transform.as_ref().unwrap().kind, TransformKind::Paraphrase);
            s.check_family().unwrap();
        }
    }

    #[tokio::test]
    async fn hflip_rejected_for_non_lateral_question_without_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let mut inst = image_instance(dir.path());
        inst.question = "Is the lamp above the table?".into();
        let cfg = SamplingConfig { fcs_modality: FcsModality::Media, ..SamplingConfig::default() };
        assert!(matches!(generate_fcs_set(&inst, 1, 1, &cfg, 0).await, Err(FestaError::NotComplementable(_))));
        let cfg = SamplingConfig { fcs_fallback: true, ..cfg };
        let set = generate_fcs_set(&inst, 1, 1, &cfg, 0).await.unwrap();
        assert_eq!(set[0].text_transform.as_ref().unwrap().kind, TransformKind::Complement);
    }

    #[tokio::test]
    async fn order_task_audio_fcs_grid() {
        let dir = tempfile::tempdir().unwrap();
        let inst = audio_instance(dir.path(), TaskTag::Order);
        let set = generate_fcs_set(&inst, 15, 4, &SamplingConfig::default(), 5).await.unwrap();
        assert_eq!(set.len(), 60);
        let orig: Vec<_> = inst.media.events.iter().map(|e| e.label.clone()).collect();
        for s in &set {
            s.check_family().unwrap();
            assert_eq!(s.media_transform.as_ref().unwrap().kind, TransformKind::SwapEvents);
            let order: Vec<_> = s.segments.iter().map(|e| e.label.clone()).collect();
            assert_ne!(order, orig);
            let mut a = order.clone();
            let mut b = orig.clone();
            a.sort();
            b.sort();
            assert_eq!(a, b);
        }
    }

    #[tokio::test]
    async fn count_task_adds_one_event() {
        let dir = tempfile::tempdir().unwrap();
        let inst = audio_instance(dir.path(), TaskTag::Count);
        let set = generate_fcs_set(&inst, 4, 2, &SamplingConfig::default(), 5).await.unwrap();
        assert!(set.iter().all(|s| s.segments.len() == inst.media.events.len() + 1));
    }

    #[tokio::test]
    async fn audio_fes_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let inst = audio_instance(dir.path(), TaskTag::Order);
        let set = generate_fes_set(&inst, 15, 4, &SamplingConfig::default(), 5).await.unwrap();
        assert_eq!(set.len(), 60);
        for s in &set {
            let labels: Vec<_> = s.segments.iter().map(|e| e.label.as_str()).collect();
            assert_eq!(labels, ["dog", "cat", "bell"]);
        }
    }

    #[tokio::test]
    async fn uncomplementable_text_instance() {
        let inst = text_instance("Describe the scene.");
        let cfg = SamplingConfig { fcs_fallback: true, ..SamplingConfig::default() };
        assert!(matches!(generate_fcs_set(&inst, 2, 2, &cfg, 0).await, Err(FestaError::NotComplementable(_))));
        assert!(template_complement(&inst.question).is_err());
    }

    #[tokio::test]
    async fn staging_is_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let inst = image_instance(dir.path());
        let mut set = generate_media_only_set(&inst, 3, &SamplingConfig::default(), 0).unwrap();
        let stage = dir.path().join("media");
        let blob = set[0].media_payload.as_mut().unwrap();
        let p1 = blob.stage(&stage).unwrap();
        let mtime = std::fs::metadata(&p1).unwrap().modified().unwrap();
        let p2 = blob.stage(&stage).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(std::fs::metadata(&p2).unwrap().modified().unwrap(), mtime);
        assert_eq!(sha256_hex(&std::fs::read(&p1).unwrap()), blob.sha256);
    }
}
