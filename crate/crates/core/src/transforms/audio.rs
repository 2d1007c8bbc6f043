//! PCM WAV transforms driven by annotated event segments.
//!
//! Equivalence kinds (`insert_silence`, `adjust_volume`) keep event order
//! and durations. Complementary kinds change exactly the property their task
//! asks about: `swap_events` permutes order, `add_event` raises the event
//! count by one, and `replace_extremal_event` relabels the longest (or
//! shortest) event.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;
use std::path::Path;

use rand::Rng;

use super::{rng_for, Modality, TransformKind, TransformSpec};
use crate::error::{FestaError, Result};
use crate::instance::EventSegment;

pub const MAX_SILENCE_S: f64 = 1.0;
pub const MAX_GAIN_DB: f64 = 6.0;
pub const MAX_EVENT_GAP_S: f64 = 1.0;
const DEFAULT_EVENT_GAP_S: f64 = 0.1;

/// Decoded PCM with interleaved samples normalized to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub spec: hound::WavSpec,
    pub samples: Vec<f64>,
}

impl AudioClip {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let reader = hound::WavReader::new(Cursor::new(bytes))
            .map_err(|e| FestaError::Input(format!("malformed WAV: {e}")))?;
        let spec = reader.spec();
        if spec.channels == 0 || spec.sample_rate == 0 {
            return Err(FestaError::Input("malformed WAV: zero channels or rate".into()));
        }
        let samples = match spec.sample_format {
            hound::SampleFormat::Float => reader
                .into_samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<Vec<_>, _>>(),
            hound::SampleFormat::Int => {
                let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
                reader
                    .into_samples::<i32>()
                    .map(|s| s.map(|v| v as f64 / scale))
                    .collect::<std::result::Result<Vec<_>, _>>()
            }
        }
        .map_err(|e| FestaError::Input(format!("malformed WAV samples: {e}")))?;
        Ok(AudioClip { spec, samples })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut buf, self.spec)
                .map_err(|e| FestaError::Input(format!("WAV encoding failed: {e}")))?;
            let err = |e: hound::Error| FestaError::Input(format!("WAV encoding failed: {e}"));
            match self.spec.sample_format {
                hound::SampleFormat::Float => {
                    for &s in &self.samples {
                        w.write_sample(s as f32).map_err(err)?;
                    }
                }
                hound::SampleFormat::Int => {
                    let scale = (1i64 << (self.spec.bits_per_sample - 1)) as f64;
                    let (lo, hi) = (-scale, scale - 1.0);
                    for &s in &self.samples {
                        w.write_sample((s * scale).round().clamp(lo, hi) as i32).map_err(err)?;
                    }
                }
            }
            w.finalize().map_err(err)?;
        }
        Ok(buf.into_inner())
    }

    pub fn channels(&self) -> usize {
        self.spec.channels as usize
    }

    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels()
    }

    pub fn frame_of(&self, seconds: f64) -> usize {
        ((seconds * self.spec.sample_rate as f64).round().max(0.0) as usize).min(self.frames())
    }

    pub fn seconds_of(&self, frames: usize) -> f64 {
        frames as f64 / self.spec.sample_rate as f64
    }

    fn frame_slice(&self, start: usize, end: usize) -> &[f64] {
        let c = self.channels();
        &self.samples[start * c..end * c]
    }

    /// Converts another clip to this clip's channel count and sample rate.
    fn conform(&self, other: &AudioClip) -> Vec<f64> {
        let (src_c, dst_c) = (other.channels(), self.channels());
        let mono_or_mapped: Vec<Vec<f64>> = (0..other.frames())
            .map(|f| {
                let frame = &other.samples[f * src_c..(f + 1) * src_c];
                if src_c == dst_c {
                    frame.to_vec()
                } else if src_c == 1 {
                    vec![frame[0]; dst_c]
                } else {
                    let mean = frame.iter().sum::<f64>() / src_c as f64;
                    vec![mean; dst_c]
                }
            })
            .collect();
        if other.spec.sample_rate == self.spec.sample_rate || mono_or_mapped.is_empty() {
            return mono_or_mapped.concat();
        }
        let ratio = other.spec.sample_rate as f64 / self.spec.sample_rate as f64;
        let out_frames = ((mono_or_mapped.len() as f64) / ratio).round() as usize;
        let mut out = Vec::with_capacity(out_frames * dst_c);
        for f in 0..out_frames {
            let pos = f as f64 * ratio;
            let i0 = (pos.floor() as usize).min(mono_or_mapped.len() - 1);
            let i1 = (i0 + 1).min(mono_or_mapped.len() - 1);
            let t = pos - pos.floor();
            out.extend(mono_or_mapped[i0].iter().zip(&mono_or_mapped[i1]).map(|(a, b)| a * (1.0 - t) + b * t));
        }
        out
    }
}

/// Labeled WAV snippets used as sources of new sound events.
///
/// On disk, every `*.wav` file in one directory is a snippet whose label is the
/// file stem up to an optional `__` suffix (`dog__2.wav` is a `dog` event).
#[derive(Debug, Clone, Default)]
pub struct EventLibrary {
    clips: BTreeMap<String, Vec<Vec<u8>>>,
}

impl EventLibrary {
    pub fn load(dir: &Path) -> Result<Self> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        entries.sort();
        let mut lib = EventLibrary::default();
        for path in entries {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let label = stem.split("__").next().unwrap_or(stem).to_string();
            lib.insert(label, std::fs::read(&path)?);
        }
        Ok(lib)
    }

    pub fn insert(&mut self, label: impl Into<String>, wav: Vec<u8>) {
        self.clips.entry(label.into()).or_default().push(wav);
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.clips.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Seeded-uniform pick of a snippet whose label is not in `exclude`.
    fn pick(&self, exclude: &BTreeSet<&str>, seed: u64) -> Option<(&str, &[u8])> {
        let candidates: Vec<_> = self
            .clips
            .iter()
            .filter(|(l, _)| !exclude.contains(l.as_str()))
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let mut rng = rng_for(seed);
        let (label, clips) = candidates[rng.random_range(0..candidates.len())];
        let clip = &clips[rng.random_range(0..clips.len())];
        Some((label.as_str(), clip.as_slice()))
    }
}

fn check(kind: TransformKind, name: &str, v: f64, lo: f64, hi: f64) -> Result<f64> {
    if !v.is_finite() || v < lo - 1e-12 || v > hi + 1e-12 {
        return Err(FestaError::Config(format!(
            "{kind:?}: parameter {name}={v} outside [{lo}, {hi}]"
        )));
    }
    Ok(v)
}

fn shift_from(segments: &[EventSegment], at_s: f64, by_s: f64) -> Vec<EventSegment> {
    segments
        .iter()
        .map(|s| {
            if s.start_s >= at_s - 1e-12 {
                EventSegment {
                    label: s.label.clone(),
                    start_s: s.start_s + by_s,
                    end_s: s.end_s + by_s,
                }
            } else {
                s.clone()
            }
        })
        .collect()
}

/// Applies one audio transform, returning the new WAV bytes and segment table.
pub fn apply_audio_transform(
    wav_bytes: &[u8],
    segments: &[EventSegment],
    spec: &TransformSpec,
    library: Option<&EventLibrary>,
) -> Result<(Vec<u8>, Vec<EventSegment>)> {
    spec.validate_modality(Modality::Audio)?;
    let kind = spec.kind;
    if kind.is_complementary() && segments.is_empty() {
        return Err(FestaError::Precondition(format!(
            "{kind:?} requires event segment annotations"
        )));
    }
    let clip = AudioClip::decode(wav_bytes)?;
    let c = clip.channels();
    match kind {
        TransformKind::InsertSilence => {
            let d = check(kind, "duration_s", spec.require("duration_s")?, 0.0, MAX_SILENCE_S)?;
            let n = clip.frame_of(d);
            if n == 0 {
                return Ok((wav_bytes.to_vec(), segments.to_vec()));
            }
            let at_frame = if segments.len() >= 2 {
                let gaps = segments.len() - 1;
                let k = match spec.param("gap_index") {
                    Some(k) => k as usize,
                    None => rng_for(spec.seed).random_range(0..gaps),
                };
                if k >= gaps {
                    return Err(FestaError::Config(format!("gap_index {k} out of range")));
                }
                clip.frame_of(segments[k].end_s)
            } else if let Some(first) = segments.first() {
                clip.frame_of(first.end_s)
            } else {
                0
            };
            let mut samples = clip.samples[..at_frame * c].to_vec();
            samples.extend(std::iter::repeat_n(0.0, n * c));
            samples.extend_from_slice(&clip.samples[at_frame * c..]);
            let at_s = clip.seconds_of(at_frame);
            let segs = shift_from(segments, at_s, clip.seconds_of(n));
            let out = AudioClip { spec: clip.spec, samples };
            Ok((out.encode()?, segs))
        }
        TransformKind::AdjustVolume => {
            let max_db = check(kind, "max_gain_db", spec.require("max_gain_db")?, 0.0, MAX_GAIN_DB)?;
            if max_db == 0.0 {
                return Ok((wav_bytes.to_vec(), segments.to_vec()));
            }
            let mut rng = rng_for(spec.seed);
            let mut samples = clip.samples.clone();
            let mut scale = |start: usize, end: usize, db: f64| {
                let g = 10f64.powf(db / 20.0);
                for s in &mut samples[start * c..end * c] {
                    *s = (*s * g).clamp(-1.0, 1.0);
                }
            };
            if segments.is_empty() {
                scale(0, clip.frames(), rng.random_range(-max_db..=max_db));
            } else {
                for seg in segments {
                    let db = rng.random_range(-max_db..=max_db);
                    scale(clip.frame_of(seg.start_s), clip.frame_of(seg.end_s), db);
                }
            }
            let out = AudioClip { spec: clip.spec, samples };
            Ok((out.encode()?, segments.to_vec()))
        }
        TransformKind::SwapEvents => {
            if segments.len() < 2 {
                return Err(FestaError::Precondition("swap_events requires at least two segments".into()));
            }
            let pairs: Vec<(usize, usize)> = (0..segments.len())
                .flat_map(|i| (i + 1..segments.len()).map(move |j| (i, j)))
                .filter(|&(i, j)| segments[i].label != segments[j].label)
                .collect();
            if pairs.is_empty() {
                return Err(FestaError::NotComplementable(
                    "all events share one label; swapping cannot change their order".into(),
                ));
            }
            let (i, j) = match (spec.param("i"), spec.param("j")) {
                (Some(i), Some(j)) => {
                    let (i, j) = (i as usize, j as usize);
                    let (i, j) = (i.min(j), i.max(j));
                    if !pairs.contains(&(i, j)) {
                        return Err(FestaError::Config(format!(
                            "cannot swap segments {i} and {j}: out of range or same label"
                        )));
                    }
                    (i, j)
                }
                _ => pairs[rng_for(spec.seed).random_range(0..pairs.len())],
            };
            // The clip is a sequence of gaps and events; swapping two event
            // pieces keeps every gap in place.
            let bounds: Vec<(usize, usize)> = segments
                .iter()
                .map(|s| (clip.frame_of(s.start_s), clip.frame_of(s.end_s)))
                .collect();
            let mut order: Vec<usize> = (0..segments.len()).collect();
            order.swap(i, j);
            let mut samples = Vec::with_capacity(clip.samples.len());
            let mut new_segs = Vec::with_capacity(segments.len());
            let mut cursor = 0usize;
            for (slot, &src) in order.iter().enumerate() {
                let (gap_start, slot_start) = (cursor, bounds[slot].0);
                samples.extend_from_slice(clip.frame_slice(gap_start, slot_start));
                let (a, b) = bounds[src];
                let start_frame = samples.len() / c;
                samples.extend_from_slice(clip.frame_slice(a, b));
                new_segs.push(EventSegment {
                    label: segments[src].label.clone(),
                    start_s: clip.seconds_of(start_frame),
                    end_s: clip.seconds_of(start_frame + (b - a)),
                });
                cursor = bounds[slot].1;
            }
            samples.extend_from_slice(clip.frame_slice(cursor, clip.frames()));
            let out = AudioClip { spec: clip.spec, samples };
            Ok((out.encode()?, new_segs))
        }
        TransformKind::AddEvent => {
            let gap = check(kind, "gap_s", spec.param("gap_s").unwrap_or(DEFAULT_EVENT_GAP_S), 0.0, MAX_EVENT_GAP_S)?;
            let at_end = spec.param("position").unwrap_or(1.0) >= 0.5;
            let mut rng = rng_for(spec.seed);
            let use_library = spec.param("use_library").unwrap_or(0.0) >= 0.5;
            let (label, snippet) = if use_library {
                let lib = library.filter(|l| !l.is_empty()).ok_or_else(|| {
                    FestaError::Precondition("add_event from library requires an event library".into())
                })?;
                let present: BTreeSet<&str> = BTreeSet::new();
                let (label, bytes) = lib
                    .pick(&present, rng.random())
                    .expect("non-empty library always yields a snippet");
                (label.to_string(), clip.conform(&AudioClip::decode(bytes)?))
            } else {
                let idx = match spec.param("source_index") {
                    Some(v) => v as usize,
                    None => rng.random_range(0..segments.len()),
                };
                let seg = segments.get(idx).ok_or_else(|| {
                    FestaError::Config(format!("source_index {idx} out of range"))
                })?;
                let (a, b) = (clip.frame_of(seg.start_s), clip.frame_of(seg.end_s));
                (seg.label.clone(), clip.frame_slice(a, b).to_vec())
            };
            let gap_frames = clip.frame_of(gap).max(if gap > 0.0 { 1 } else { 0 });
            let snippet_frames = snippet.len() / c;
            if snippet_frames == 0 {
                return Err(FestaError::Input("added event has zero length".into()));
            }
            let mut samples;
            let mut segs;
            if at_end {
                samples = clip.samples.clone();
                samples.extend(std::iter::repeat_n(0.0, gap_frames * c));
                let start = clip.frames() + gap_frames;
                samples.extend_from_slice(&snippet);
                segs = segments.to_vec();
                segs.push(EventSegment {
                    label,
                    start_s: clip.seconds_of(start),
                    end_s: clip.seconds_of(start + snippet_frames),
                });
            } else {
                samples = snippet.clone();
                samples.extend(std::iter::repeat_n(0.0, gap_frames * c));
                samples.extend_from_slice(&clip.samples);
                segs = vec![EventSegment {
                    label,
                    start_s: 0.0,
                    end_s: clip.seconds_of(snippet_frames),
                }];
                segs.extend(shift_from(segments, 0.0, clip.seconds_of(snippet_frames + gap_frames)));
            }
            let out = AudioClip { spec: clip.spec, samples };
            Ok((out.encode()?, segs))
        }
        TransformKind::ReplaceExtremalEvent => {
            let lib = library.filter(|l| !l.is_empty()).ok_or_else(|| {
                FestaError::Precondition("replace_extremal_event requires an event library".into())
            })?;
            let shortest = spec.param("extremal").unwrap_or(0.0) >= 0.5;
            let target = extremal_index(segments, shortest);
            let present: BTreeSet<&str> = segments.iter().map(|s| s.label.as_str()).collect();
            let (label, bytes) = lib.pick(&present, spec.seed).ok_or_else(|| {
                FestaError::NotComplementable(
                    "event library has no label absent from this clip".into(),
                )
            })?;
            let snippet = clip.conform(&AudioClip::decode(bytes)?);
            if snippet.is_empty() {
                return Err(FestaError::Input(format!("library snippet {label} is empty")));
            }
            let (a, b) = (
                clip.frame_of(segments[target].start_s),
                clip.frame_of(segments[target].end_s),
            );
            let mut samples = clip.samples.clone();
            // loop or truncate the snippet to the replaced event's exact length
            for (k, s) in samples[a * c..b * c].iter_mut().enumerate() {
                *s = snippet[k % snippet.len()];
            }
            let mut segs = segments.to_vec();
            segs[target].label = label.to_string();
            let out = AudioClip { spec: clip.spec, samples };
            Ok((out.encode()?, segs))
        }
        other => Err(FestaError::Config(format!("{other:?} is not an audio transform"))),
    }
}

/// Index of the longest (or shortest) event; earliest wins ties.
pub fn extremal_index(segments: &[EventSegment], shortest: bool) -> usize {
    let mut best = 0;
    for (i, s) in segments.iter().enumerate() {
        let (d, bd) = (s.duration(), segments[best].duration());
        if (shortest && d < bd) || (!shortest && d > bd) {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    const SR: u32 = 1000;

    fn spec16() -> hound::WavSpec {
        hound::WavSpec {
            channels: 1,
            sample_rate: SR,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        }
    }

    /// Distinct tone per event so regions can be told apart.
    fn clip_with(events: &[(&str, f64, f64)], total_s: f64) -> (Vec<u8>, Vec<EventSegment>) {
        let frames = (total_s * SR as f64) as usize;
        let mut samples = vec![0.0; frames];
        for (k, &(_, a, b)) in events.iter().enumerate() {
            let (a, b) = ((a * SR as f64) as usize, (b * SR as f64) as usize);
            for (t, s) in samples[a..b].iter_mut().enumerate() {
                *s = 0.5 * ((t as f64) * 0.05 * (k as f64 + 1.0)).sin();
            }
        }
        let bytes = AudioClip { spec: spec16(), samples }.encode().unwrap();
        let segs = events
            .iter()
            .map(|&(l, a, b)| EventSegment { label: l.into(), start_s: a, end_s: b })
            .collect();
        (bytes, segs)
    }

    fn ncc(x: &[f64], y: &[f64]) -> f64 {
        let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        dot / (nx * ny)
    }

    #[test]
    fn zero_silence_is_identity() {
        let (bytes, segs) = clip_with(&[("a", 0.0, 1.0), ("b", 1.0, 2.0)], 2.0);
        let spec = TransformSpec::new(TransformKind::InsertSilence, 1).with("duration_s", 0.0);
        let (out, out_segs) = apply_audio_transform(&bytes, &segs, &spec, None).unwrap();
        assert_eq!(out, bytes);
        assert_eq!(out_segs, segs);
    }

    #[test]
    fn swap_two_events() {
        let (bytes, segs) = clip_with(&[("A", 0.0, 1.0), ("B", 1.0, 2.0)], 2.0);
        let spec = TransformSpec::new(TransformKind::SwapEvents, 3);
        let (out, out_segs) = apply_audio_transform(&bytes, &segs, &spec, None).unwrap();
        assert_eq!(
            out_segs,
            vec![
                EventSegment { label: "B".into(), start_s: 0.0, end_s: 1.0 },
                EventSegment { label: "A".into(), start_s: 1.0, end_s: 2.0 },
            ]
        );
        let orig = AudioClip::decode(&bytes).unwrap().samples;
        let new = AudioClip::decode(&out).unwrap().samples;
        let n = SR as usize;
        assert!((ncc(&new[..n], &orig[n..]) - 1.0).abs() < 1e-9);
        assert!((ncc(&new[n..], &orig[..n]) - 1.0).abs() < 1e-9);
        assert!(ncc(&new[..n], &orig[..n]) < 0.9);
    }

    #[test]
    fn swap_with_gaps_and_unequal_lengths_preserves_length() {
        let (bytes, segs) = clip_with(&[("A", 0.1, 0.3), ("B", 0.5, 1.2), ("C", 1.4, 1.5)], 2.0);
        let spec = TransformSpec::new(TransformKind::SwapEvents, 0).with("i", 0.0).with("j", 2.0);
        let (out, out_segs) = apply_audio_transform(&bytes, &segs, &spec, None).unwrap();
        let labels: Vec<_> = out_segs.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["C", "B", "A"]);
        assert_eq!(AudioClip::decode(&out).unwrap().frames(), 2000);
        for (a, b) in out_segs.iter().zip(&[0.1, 0.4, 1.3]) {
            assert!((a.start_s - b).abs() < 1e-9, "{a:?}");
        }
        assert!((out_segs[0].duration() - 0.1).abs() < 1e-9);
    }

    #[test]
    fn add_event_at_end_keeps_prefix() {
        let (bytes, segs) = clip_with(&[("a", 0.0, 0.5), ("b", 0.6, 1.0), ("c", 1.2, 1.8)], 2.0);
        let spec = TransformSpec::new(TransformKind::AddEvent, 5).with("position", 1.0);
        let (out, out_segs) = apply_audio_transform(&bytes, &segs, &spec, None).unwrap();
        assert_eq!(out_segs.len(), 4);
        assert_eq!(&out_segs[..3], &segs[..]);
        let orig = AudioClip::decode(&bytes).unwrap().samples;
        let new = AudioClip::decode(&out).unwrap().samples;
        assert_eq!(&new[..orig.len()], &orig[..]);
        assert!(out_segs[3].start_s >= 2.0);
    }

    #[test]
    fn add_event_at_start_shifts_segments() {
        let (bytes, segs) = clip_with(&[("a", 0.0, 0.5), ("b", 1.0, 1.5)], 2.0);
        let spec = TransformSpec::new(TransformKind::AddEvent, 5)
            .with("position", 0.0)
            .with("source_index", 1.0);
        let (_, out_segs) = apply_audio_transform(&bytes, &segs, &spec, None).unwrap();
        assert_eq!(out_segs.len(), 3);
        assert_eq!(out_segs[0].label, "b");
        assert!((out_segs[1].start_s - 0.6).abs() < 1e-9);
    }

    #[test]
    fn replace_extremal_changes_longest_label() {
        let (bytes, segs) = clip_with(&[("dog", 0.0, 0.3), ("cat", 0.5, 1.5), ("car", 1.6, 1.8)], 2.0);
        let (snippet, _) = clip_with(&[("bell", 0.0, 0.2)], 0.2);
        let mut lib = EventLibrary::default();
        lib.insert("bell", snippet);
        lib.insert("dog", clip_with(&[("dog", 0.0, 0.1)], 0.1).0);
        let spec = TransformSpec::new(TransformKind::ReplaceExtremalEvent, 9).with("extremal", 0.0);
        let (out, out_segs) = apply_audio_transform(&bytes, &segs, &spec, Some(&lib)).unwrap();
        assert_eq!(out_segs[1].label, "bell");
        assert_eq!(out_segs[0], segs[0]);
        assert_eq!(out_segs[2], segs[2]);
        assert_eq!(AudioClip::decode(&out).unwrap().frames(), 2000);
    }

    #[test]
    fn complementary_kinds_need_segments() {
        let (bytes, _) = clip_with(&[], 1.0);
        for kind in [TransformKind::SwapEvents, TransformKind::AddEvent, TransformKind::ReplaceExtremalEvent] {
            let spec = TransformSpec::new(kind, 0);
            assert!(matches!(
                apply_audio_transform(&bytes, &[], &spec, None),
                Err(FestaError::Precondition(_))
            ));
        }
    }

    #[test]
    fn replace_without_library_is_precondition_error() {
        let (bytes, segs) = clip_with(&[("a", 0.0, 0.5)], 1.0);
        let spec = TransformSpec::new(TransformKind::ReplaceExtremalEvent, 0);
        assert!(matches!(
            apply_audio_transform(&bytes, &segs, &spec, None),
            Err(FestaError::Precondition(_))
        ));
    }

    #[test]
    fn malformed_wav_rejected() {
        let spec = TransformSpec::new(TransformKind::AdjustVolume, 0).with("max_gain_db", 1.0);
        assert!(matches!(
            apply_audio_transform(b"RIFFjunk", &[], &spec, None),
            Err(FestaError::Input(_))
        ));
    }

    #[test]
    fn equivalence_kinds_preserve_order_and_durations() {
        let (bytes, segs) = clip_with(&[("a", 0.0, 0.5), ("b", 0.7, 1.0), ("c", 1.2, 1.9)], 2.0);
        for spec in [
            TransformSpec::new(TransformKind::InsertSilence, 4).with("duration_s", 0.2),
            TransformSpec::new(TransformKind::AdjustVolume, 4).with("max_gain_db", 3.0),
        ] {
            let (out, out_segs) = apply_audio_transform(&bytes, &segs, &spec, None).unwrap();
            assert_eq!(out_segs.len(), segs.len());
            for (a, b) in out_segs.iter().zip(&segs) {
                assert_eq!(a.label, b.label);
                assert!((a.duration() - b.duration()).abs() < 1e-9);
            }
            assert_eq!(AudioClip::decode(&out).unwrap().spec.sample_rate, SR);
        }
    }

    #[test]
    fn stereo_float_round_trip() {
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let clip = AudioClip { spec, samples: vec![0.25, -0.25, 0.5, -0.5] };
        let back = AudioClip::decode(&clip.encode().unwrap()).unwrap();
        assert_eq!(back, clip);
    }
}
