//! Staged pipeline over a run directory.
//!
//! Each stage reads only what earlier stages wrote:
//!
//! ```text
//! generate  -> config.json dataset.jsonl samples.jsonl skips.jsonl media/
//! query     -> responses.jsonl            (plus the response cache)
//! score     -> records.jsonl score_skips.jsonl
//! evaluate  -> report.json report.csv risk_coverage.csv scatter.csv risk_coverage.svg
//! sweep     -> sweep.json sweep.csv sweep.svg
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use futures::StreamExt;
use serde::{Deserialize, Serialize};

use crate::client::{ChatCall, MediaPayload, ModelClient, ParsedAnswer, ResponseCache};
use crate::config::FestaConfig;
use crate::error::{FestaError, Result};
use crate::estimator::{
    bu_uncertainty, calls, entropy_of, predicted_label, score_entropy_ablation, score_festa, vc_uncertainty,
};
use crate::eval::{build_report, sweep_sample_size, write_report, write_sweep, EvalReport, SweepTable};
use crate::instance::{parse_manifest, write_manifest, Dataset, Label, McqInstance, MediaKind};
use crate::record::{Diagnostics, KUsed, Score, UncertaintyRecord};
use crate::transforms::audio::EventLibrary;
use crate::transforms::sampling::{
    generate_media_only_set, generate_text_only_set, load_original_media, stream, MediaBlob,
};
use crate::transforms::{generate_fcs_set, generate_fes_set, ParaphraseProvider, SamplingConfig, TransformedInput};

pub const CONFIG_FILE: &str = "config.json";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const SKIPS_FILE: &str = "skips.jsonl";
pub const RESPONSES_FILE: &str = "responses.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const SCORE_SKIPS_FILE: &str = "score_skips.jsonl";
pub const MEDIA_DIR: &str = "media";

/// Writes `content` unless the file already holds exactly these bytes.
pub fn write_if_changed(path: &Path, content: &[u8]) -> Result<()> {
    if std::fs::read(path).ok().as_deref() == Some(content) {
        return Ok(());
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn to_jsonl<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| FestaError::Usage(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| FestaError::Validation {
                line: i + 1,
                message: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

/// An instance or stream the generate or score stage had to leave out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub instance_id: String,
    pub stream: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub instances: usize,
    pub samples_by_stream: BTreeMap<String, usize>,
    pub skips: usize,
}

fn paraphraser(config: &FestaConfig, client: Option<Arc<ModelClient>>) -> Result<ParaphraseProvider> {
    use crate::config::ParaphraseMode;
    match config.paraphraser.mode {
        ParaphraseMode::Template => Ok(ParaphraseProvider::Template),
        ParaphraseMode::ModelBacked => {
            let client = client.ok_or_else(|| {
                FestaError::Config("model-backed paraphrasing needs a model endpoint".into())
            })?;
            Ok(ParaphraseProvider::ModelBacked {
                client,
                paraphrase_prompt: config.paraphraser.paraphrase_prompt.clone(),
                complement_prompt: config.paraphraser.complement_prompt.clone(),
            })
        }
    }
}

fn skippable(e: &FestaError) -> bool {
    matches!(e, FestaError::NotComplementable(_) | FestaError::Precondition(_))
}

/// Generates and stages every sample set the configured methods need.
/// Rerunning with the same inputs leaves every file untouched.
pub async fn cmd_generate(
    dataset_path: &Path,
    config: &FestaConfig,
    out_dir: &Path,
    client: Option<Arc<ModelClient>>,
) -> Result<GenerateSummary> {
    config.validate()?;
    let dataset = Dataset::load(dataset_path)?;
    if dataset.instances.is_empty() {
        return Err(FestaError::Usage(format!("{} has no instances", dataset_path.display())));
    }
    let media_dir = out_dir.join(MEDIA_DIR);
    std::fs::create_dir_all(&media_dir)?;
    let event_library = match &config.event_library {
        Some(dir) => Some(EventLibrary::load(dir)?),
        None => None,
    };
    let sampling = SamplingConfig {
        ranges: config.ranges.clone(),
        paraphraser: paraphraser(config, client)?,
        fcs_modality: config.fcs_modality,
        fcs_fallback: config.fcs_fallback,
        event_library,
    };
    let seed = config.seed;
    let mut staged_instances = Vec::with_capacity(dataset.instances.len());
    let mut samples: Vec<TransformedInput> = Vec::new();
    let mut skips = Vec::new();
    let mut summary = GenerateSummary { instances: dataset.instances.len(), ..Default::default() };

    for inst in &dataset.instances {
        let k = config.k.for_instance(inst, config.fcs_modality);
        let mut staged = inst.clone();
        if let Some(mut blob) = load_original_media(inst)? {
            blob.stage(&media_dir)?;
            staged.media.path = Some(PathBuf::from(MEDIA_DIR).join(blob.file.as_ref().expect("staged")));
        }
        staged_instances.push(staged);

        let mut sets: Vec<(&str, Result<Vec<TransformedInput>>)> = vec![
            (stream::FES, generate_fes_set(inst, k.k11, k.k12, &sampling, seed).await),
            (stream::FCS, generate_fcs_set(inst, k.k21, k.k22, &sampling, seed).await),
        ];
        if config.wants("ia-i") {
            let n = config.baselines.ia_media_k.unwrap_or(k.k11);
            sets.push((stream::IA_MEDIA, generate_media_only_set(inst, n, &sampling, seed)));
        }
        if config.wants("ia-t") {
            let n = config.baselines.ia_text_k.unwrap_or(k.k12);
            sets.push((stream::IA_TEXT, generate_text_only_set(inst, n, &sampling, seed, stream::IA_TEXT).await));
        }
        if config.wants("ru") {
            let n = config.baselines.ru_k;
            sets.push((stream::RU, generate_text_only_set(inst, n, &sampling, seed, stream::RU).await));
        }
        for (name, set) in sets {
            match set {
                Ok(set) => {
                    *summary.samples_by_stream.entry(name.to_string()).or_default() += set.len();
                    for mut s in set {
                        s.check_family()?;
                        if let Some(blob) = s.media_payload.as_mut() {
                            blob.stage(&media_dir)?;
                            blob.bytes = None;
                        }
                        samples.push(s);
                    }
                }
                Err(e) if skippable(&e) => {
                    tracing::warn!(instance = %inst.id, stream = name, error = %e, "sample set skipped");
                    skips.push(SkipEntry { instance_id: inst.id.clone(), stream: name.into(), reason: e.to_string() });
                }
                Err(e) => return Err(e),
            }
        }
    }
    summary.skips = skips.len();
    let mut cfg_json = serde_json::to_string_pretty(config)?;
    cfg_json.push('\n');
    write_if_changed(&out_dir.join(CONFIG_FILE), cfg_json.as_bytes())?;
    write_if_changed(&out_dir.join(DATASET_FILE), write_manifest(&staged_instances)?.as_bytes())?;
    write_if_changed(&out_dir.join(SAMPLES_FILE), to_jsonl(&samples)?.as_bytes())?;
    write_if_changed(&out_dir.join(SKIPS_FILE), to_jsonl(&skips)?.as_bytes())?;
    Ok(summary)
}

/// Loads the staged dataset with media paths resolved inside the run dir.
pub fn load_run_dataset(run_dir: &Path) -> Result<Vec<McqInstance>> {
    let path = run_dir.join(DATASET_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| FestaError::Usage(format!("cannot read {} (run `generate` first): {e}", path.display())))?;
    let mut instances = parse_manifest(&text)?;
    for inst in &mut instances {
        if let Some(p) = inst.media.path.as_mut() {
            if p.is_relative() {
                *p = run_dir.join(&*p);
            }
        }
    }
    Ok(instances)
}

pub fn load_run_config(run_dir: &Path) -> Result<FestaConfig> {
    FestaConfig::load(&run_dir.join(CONFIG_FILE))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Answer,
    Confidence,
    Topk,
}

/// One stored reply. Latency and cache status are left out so the file is
/// identical across cached and uncached runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRow {
    pub instance_id: String,
    pub stream: String,
    pub grid: (u32, u32),
    pub decode: u32,
    pub kind: RequestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ResponseRow {
    pub fn answer(&self) -> ParsedAnswer {
        match &self.parsed {
            Some(l) => ParsedAnswer::Label(l.clone()),
            None => ParsedAnswer::ParseFailure,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QuerySummary {
    pub requests: usize,
    pub cache_hits: usize,
    pub failures: usize,
    pub parse_failures: usize,
    /// HTTP requests issued, retries included.
    pub network_calls: usize,
}

struct Job {
    instance: usize,
    call: ChatCall,
    kind: RequestKind,
}

fn media_payload(
    cache: &mut HashMap<String, MediaPayload>,
    kind: MediaKind,
    blob: Option<&MediaBlob>,
    media_dir: &Path,
) -> Result<Option<MediaPayload>> {
    let Some(blob) = blob else { return Ok(None) };
    if let Some(p) = cache.get(&blob.sha256) {
        return Ok(Some(p.clone()));
    }
    let mut b = blob.clone();
    let bytes = b.load(media_dir)?;
    let p = MediaPayload { kind, bytes, sha256: blob.sha256.clone() };
    cache.insert(blob.sha256.clone(), p.clone());
    Ok(Some(p))
}

fn original_payload(cache: &mut HashMap<String, MediaPayload>, inst: &McqInstance) -> Result<Option<MediaPayload>> {
    match load_original_media(inst)? {
        None => Ok(None),
        Some(blob) => {
            let p = MediaPayload {
                kind: blob.kind,
                bytes: blob.bytes.clone().expect("freshly loaded"),
                sha256: blob.sha256.clone(),
            };
            cache.entry(blob.sha256).or_insert(p.clone());
            Ok(Some(p))
        }
    }
}

async fn run_jobs(client: &ModelClient, instances: &[McqInstance], jobs: Vec<Job>) -> Vec<(ResponseRow, bool)> {
    let total = jobs.len();
    let limit = client.endpoint().max_in_flight;
    let done = std::sync::atomic::AtomicUsize::new(0);
    futures::stream::iter(jobs)
        .map(|job| {
            let done = &done;
            async move {
                let inst = &instances[job.instance];
                let result = client.chat(&job.call).await;
                let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                if n.is_multiple_of(500) || n == total {
                    tracing::info!(done = n, total, "queries");
                }
                let mut row = ResponseRow {
                    instance_id: inst.id.clone(),
                    stream: job.call.replicate.stream.clone(),
                    grid: job.call.replicate.grid,
                    decode: job.call.replicate.decode,
                    kind: job.kind,
                    raw_text: None,
                    parsed: None,
                    error: None,
                };
                let mut hit = false;
                match result {
                    Ok(reply) => {
                        hit = reply.cache_hit;
                        if job.kind == RequestKind::Answer {
                            row.parsed = crate::client::parse_answer(&reply.raw_text, &inst.labels()).label().cloned();
                        }
                        row.raw_text = Some(reply.raw_text);
                    }
                    Err(e) => row.error = Some(e.to_string()),
                }
                (row, hit)
            }
        })
        .buffered(limit)
        .collect()
        .await
}

/// Issues (or serves from cache) every request for the staged samples and
/// writes `responses.jsonl`. Fails with an upstream-threshold error after
/// writing if too many requests failed.
pub async fn cmd_query(run_dir: &Path, config: &FestaConfig, client: &ModelClient) -> Result<QuerySummary> {
    let instances = load_run_dataset(run_dir)?;
    let samples: Vec<TransformedInput> = read_jsonl(&run_dir.join(SAMPLES_FILE))?;
    let media_dir = run_dir.join(MEDIA_DIR);
    let index: HashMap<&str, usize> = instances.iter().enumerate().map(|(i, x)| (x.id.as_str(), i)).collect();
    let mut by_instance: Vec<Vec<&TransformedInput>> = vec![Vec::new(); instances.len()];
    for s in &samples {
        let i = *index
            .get(s.parent_id.as_str())
            .ok_or_else(|| FestaError::Input(format!("sample for unknown instance {}", s.parent_id)))?;
        by_instance[i].push(s);
    }
    let t = client.endpoint().temperature;
    let mut payloads = HashMap::new();
    let mut jobs = Vec::new();
    let mut originals = Vec::with_capacity(instances.len());
    for (n, inst) in instances.iter().enumerate() {
        let media = original_payload(&mut payloads, inst)?;
        originals.push(media.clone());
        jobs.push(Job { instance: n, call: calls::original_call(inst, media.clone()), kind: RequestKind::Answer });
        for s in &by_instance[n] {
            let m = media_payload(&mut payloads, inst.media.kind, s.media_payload.as_ref(), &media_dir)?;
            for d in 0..config.decodes_per_sample {
                jobs.push(Job { instance: n, call: calls::sample_call(inst, s, m.clone(), t, d), kind: RequestKind::Answer });
            }
        }
        if config.wants("oe") {
            for d in 0..config.baselines.oe_decodes as u32 {
                jobs.push(Job { instance: n, call: calls::oe_call(inst, media.clone(), t, d), kind: RequestKind::Answer });
            }
        }
        if config.wants("bu") {
            for d in 0..config.baselines.bu_samples as u32 {
                let call = calls::bu_call(inst, media.clone(), t, config.baselines.bu_top_k, d);
                jobs.push(Job { instance: n, call, kind: RequestKind::Topk });
            }
        }
    }
    let calls_before = client.network_calls();
    let mut results = run_jobs(client, &instances, jobs).await;

    if config.wants("vc") {
        let mut vc_jobs = Vec::new();
        let mut vc_failed = Vec::new();
        for (row, _) in &results {
            if row.stream != calls::ORIGINAL_STREAM {
                continue;
            }
            let n = index[row.instance_id.as_str()];
            match &row.raw_text {
                Some(first) => vc_jobs.push(Job {
                    instance: n,
                    call: calls::vc_call(&instances[n], originals[n].clone(), first),
                    kind: RequestKind::Confidence,
                }),
                None => vc_failed.push(ResponseRow {
                    instance_id: row.instance_id.clone(),
                    stream: calls::VC_STREAM.into(),
                    grid: (0, 0),
                    decode: 0,
                    kind: RequestKind::Confidence,
                    raw_text: None,
                    parsed: None,
                    error: Some("original query failed".into()),
                }),
            }
        }
        results.extend(run_jobs(client, &instances, vc_jobs).await);
        results.extend(vc_failed.into_iter().map(|r| (r, false)));
    }

    let mut summary = QuerySummary { requests: results.len(), ..Default::default() };
    for (row, hit) in &results {
        summary.cache_hits += *hit as usize;
        summary.failures += row.error.is_some() as usize;
        summary.parse_failures += (row.kind == RequestKind::Answer && row.raw_text.is_some() && row.parsed.is_none()) as usize;
    }
    summary.network_calls = client.network_calls() - calls_before;
    let rows: Vec<ResponseRow> = results.into_iter().map(|(r, _)| r).collect();
    write_if_changed(&run_dir.join(RESPONSES_FILE), to_jsonl(&rows)?.as_bytes())?;
    tracing::info!(
        requests = summary.requests,
        cache_hits = summary.cache_hits,
        failures = summary.failures,
        parse_failures = summary.parse_failures,
        "query stage finished"
    );
    let rate = if summary.requests == 0 { 0.0 } else { summary.failures as f64 / summary.requests as f64 };
    if rate > config.max_failure_rate {
        return Err(FestaError::FailureThreshold {
            failures: summary.failures,
            total: summary.requests,
            rate,
            threshold: config.max_failure_rate,
        });
    }
    Ok(summary)
}

/// Rows of one stream, grid cells in row-major order, keeping only the
/// first `limit` cells when given.
fn grid_rows<'a>(rows: &[&'a ResponseRow], limit: Option<usize>) -> (Vec<&'a ResponseRow>, usize, (u32, u32)) {
    let mut rows: Vec<&ResponseRow> = rows.to_vec();
    rows.sort_by_key(|r| (r.grid, r.decode));
    let mut cells: Vec<(u32, u32)> = rows.iter().map(|r| r.grid).collect();
    cells.dedup();
    let keep = limit.unwrap_or(cells.len()).min(cells.len());
    let kept = &cells[..keep];
    let dims = kept.iter().fold((0, 0), |(a, b), &(i, j)| (a.max(i + 1), b.max(j + 1)));
    let out = rows.into_iter().filter(|r| kept.binary_search(&r.grid).is_ok()).collect();
    (out, cells.len(), dims)
}

fn answers(rows: &[&ResponseRow]) -> Vec<ParsedAnswer> {
    rows.iter().map(|r| r.answer()).collect()
}

/// Scores one instance from its responses. `limit` truncates the FES and
/// FCS grids to their first `limit` cells.
pub fn score_instance(
    inst: &McqInstance,
    rows: &[&ResponseRow],
    config: &FestaConfig,
    limit: Option<usize>,
) -> std::result::Result<UncertaintyRecord, String> {
    let floor = config.floor().map_err(|e| e.to_string())?;
    let labels = inst.labels();
    let by_stream = |name: &str| rows.iter().filter(|r| r.stream == name).copied().collect::<Vec<_>>();
    let original = answers(&by_stream(calls::ORIGINAL_STREAM));
    let predicted = predicted_label(&original).ok_or_else(|| "original prediction missing or unparseable".to_string())?;
    let mut diagnostics = Diagnostics::default();
    let mut baselines = BTreeMap::new();
    let (fes_rows, _, fes_dims) = grid_rows(&by_stream(stream::FES), limit);
    let (fcs_rows, _, fcs_dims) = grid_rows(&by_stream(stream::FCS), limit);
    let fes = answers(&fes_rows);
    let fcs = answers(&fcs_rows);
    let mut record = UncertaintyRecord {
        instance_id: inst.id.clone(),
        correct: predicted == inst.target_label,
        predicted_label: predicted.clone(),
        target_label: inst.target_label.clone(),
        u_fes: None,
        u_fcs: None,
        u_festa: None,
        baselines: BTreeMap::new(),
        k_used: KUsed { k11: fes_dims.0 as usize, k12: fes_dims.1 as usize, k21: fcs_dims.0 as usize, k22: fcs_dims.1 as usize },
        diagnostics: Diagnostics::default(),
    };
    if ["festa", "fes", "fcs"].iter().any(|m| config.wants(m)) {
        if fes.is_empty() {
            diagnostics.notes.push("no FES responses".into());
        } else {
            let fcs_opt = (!fcs.is_empty()).then_some(fcs.as_slice());
            if fcs_opt.is_none() {
                diagnostics.notes.push("no FCS responses; instance not complementable".into());
            }
            match score_festa(inst, &fes, fcs_opt, &predicted, floor) {
                Ok(s) => {
                    record.u_fes = Some(Score(s.u_fes));
                    record.u_fcs = s.u_fcs.map(Score);
                    record.u_festa = s.u_festa.map(Score);
                    diagnostics.fes_parse = Some(s.fes_parse);
                    diagnostics.fcs_parse = s.fcs_parse;
                    diagnostics.fcs_per_label = s.fcs_per_label;
                }
                Err(e) => diagnostics.notes.push(format!("festa: {e}")),
            }
        }
    }
    let mut entropy = |name: &str, rs: &[ParsedAnswer], baselines: &mut BTreeMap<String, Score>| {
        if rs.is_empty() {
            diagnostics.notes.push(format!("{name}: no responses"));
            return;
        }
        match entropy_of(rs, &labels) {
            Ok(h) => {
                baselines.insert(name.to_string(), Score(h));
            }
            Err(e) => diagnostics.notes.push(format!("{name}: {e}")),
        }
    };
    if config.wants("oe") {
        entropy("oe", &answers(&by_stream(calls::OE_STREAM)), &mut baselines);
    }
    if config.wants("ia-i") {
        entropy("ia-i", &answers(&by_stream(stream::IA_MEDIA)), &mut baselines);
    }
    if config.wants("ia-t") {
        entropy("ia-t", &answers(&by_stream(stream::IA_TEXT)), &mut baselines);
    }
    if config.wants("ia-it") {
        entropy("ia-it", &fes, &mut baselines);
    }
    if config.wants("ru") {
        entropy("ru", &answers(&by_stream(stream::RU)), &mut baselines);
    }
    if config.wants("vc") {
        match by_stream(calls::VC_STREAM).first().and_then(|r| r.raw_text.as_deref()).and_then(vc_uncertainty) {
            Some(u) => {
                baselines.insert("vc".into(), Score(u));
            }
            None => diagnostics.notes.push("vc: missing".into()),
        }
    }
    if config.wants("bu") {
        let mut bu_rows = by_stream(calls::BU_STREAM);
        bu_rows.sort_by_key(|r| r.decode);
        let replies: Vec<String> = bu_rows.iter().map(|r| r.raw_text.clone().unwrap_or_default()).collect();
        match bu_uncertainty(&replies, &predicted, &labels) {
            Some(u) => {
                baselines.insert("bu".into(), Score(u));
            }
            None => diagnostics.notes.push("bu: missing".into()),
        }
    }
    if config.wants("entropy-ablation") {
        if fes.is_empty() || fcs.is_empty() {
            diagnostics.notes.push("entropy-ablation: needs FES and FCS responses".into());
        } else {
            match score_entropy_ablation(&fes, &fcs, &predicted, &labels) {
                Ok(e) => {
                    baselines.insert("entropy-fes".into(), Score(e.h_fes));
                    baselines.insert("entropy-fcs".into(), Score(e.h_fcs));
                    baselines.insert("entropy-sum".into(), Score(e.h_sum));
                }
                Err(e) => diagnostics.notes.push(format!("entropy-ablation: {e}")),
            }
        }
    }
    record.baselines = baselines;
    record.diagnostics = diagnostics;
    Ok(record)
}

pub fn load_responses(run_dir: &Path) -> Result<Vec<ResponseRow>> {
    read_jsonl(&run_dir.join(RESPONSES_FILE))
}

/// Scores every instance with responses; instances that cannot be scored
/// are returned as skips.
pub fn score_all(
    instances: &[McqInstance],
    rows: &[ResponseRow],
    config: &FestaConfig,
    limit: Option<usize>,
) -> (Vec<UncertaintyRecord>, Vec<SkipEntry>) {
    let mut grouped: HashMap<&str, Vec<&ResponseRow>> = HashMap::new();
    for r in rows {
        grouped.entry(r.instance_id.as_str()).or_default().push(r);
    }
    let mut records = Vec::new();
    let mut skips = Vec::new();
    for inst in instances {
        let Some(rs) = grouped.get(inst.id.as_str()) else {
            skips.push(SkipEntry { instance_id: inst.id.clone(), stream: "*".into(), reason: "no responses".into() });
            continue;
        };
        match score_instance(inst, rs, config, limit) {
            Ok(r) => records.push(r),
            Err(reason) => {
                tracing::warn!(instance = %inst.id, %reason, "instance skipped");
                skips.push(SkipEntry { instance_id: inst.id.clone(), stream: calls::ORIGINAL_STREAM.into(), reason });
            }
        }
    }
    (records, skips)
}

/// Scores the run and writes `records.jsonl` (to `out` when given).
pub fn cmd_score(run_dir: &Path, config: &FestaConfig, out: Option<&Path>) -> Result<Vec<UncertaintyRecord>> {
    let instances = load_run_dataset(run_dir)?;
    let rows = load_responses(run_dir)?;
    let (records, skips) = score_all(&instances, &rows, config, None);
    for m in &config.methods {
        let m = if m == "entropy-ablation" { "entropy-sum" } else { m.as_str() };
        let carried = records.iter().filter(|r| r.uncertainty(m).is_some()).count();
        if carried < records.len() {
            tracing::warn!(method = m, carried, usable = records.len(), "method missing for some instances");
        }
    }
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join(RECORDS_FILE));
    write_if_changed(&path, to_jsonl(&records)?.as_bytes())?;
    write_if_changed(&run_dir.join(SCORE_SKIPS_FILE), to_jsonl(&skips)?.as_bytes())?;
    Ok(records)
}

pub fn load_records(path: &Path) -> Result<Vec<UncertaintyRecord>> {
    read_jsonl(path)
}

/// Expands `entropy-ablation` into the three record keys it produces.
pub fn report_methods(methods: &[String]) -> Vec<String> {
    methods
        .iter()
        .flat_map(|m| match m.as_str() {
            "entropy-ablation" => vec!["entropy-fes".to_string(), "entropy-fcs".into(), "entropy-sum".into()],
            _ => vec![m.clone()],
        })
        .collect()
}

/// Builds and writes the evaluation report for a records file.
pub fn cmd_evaluate(
    records_path: &Path,
    out_dir: &Path,
    methods: &[String],
    fingerprint: Option<String>,
) -> Result<EvalReport> {
    let records = load_records(records_path)?;
    let report = build_report(&records, &report_methods(methods), fingerprint)?;
    write_report(&report, &records, out_dir)?;
    Ok(report)
}

/// AUROC at each per-grid sample count of the schedule.
pub fn cmd_sweep(run_dir: &Path, config: &FestaConfig, schedule: &[usize], out_dir: &Path) -> Result<SweepTable> {
    let instances = load_run_dataset(run_dir)?;
    let rows = load_responses(run_dir)?;
    let mut cells: HashMap<(&str, &str), std::collections::BTreeSet<(u32, u32)>> = HashMap::new();
    for r in &rows {
        if r.stream == stream::FES || r.stream == stream::FCS {
            cells.entry((r.instance_id.as_str(), r.stream.as_str())).or_default().insert(r.grid);
        }
    }
    let available = cells.values().map(|c| c.len()).min().unwrap_or(0);
    let mut by_k = BTreeMap::new();
    for &k in schedule {
        if k == 0 || k > available {
            tracing::warn!(k, available, "sweep entry omitted: not enough samples per grid");
            continue;
        }
        by_k.insert(k, score_all(&instances, &rows, config, Some(k)).0);
    }
    let methods: Vec<String> = report_methods(&config.methods)
        .into_iter()
        .filter(|m| ["festa", "fes", "fcs", "ia-it", "entropy-fes", "entropy-fcs", "entropy-sum"].contains(&m.as_str()))
        .collect();
    let table = sweep_sample_size(&by_k, &methods);
    write_sweep(&table, out_dir)?;
    Ok(table)
}

/// Opens a client for `config.endpoint` with an optional cache directory.
pub fn open_client(config: &FestaConfig, cache_dir: Option<&Path>) -> Result<ModelClient> {
    let cache = cache_dir.map(ResponseCache::open).transpose()?;
    ModelClient::new(config.endpoint.clone(), cache)
}

/// generate → query → score → evaluate in one call, all artifacts in `run_dir`.
pub async fn run_all(
    dataset: &Path,
    config: &FestaConfig,
    run_dir: &Path,
    client: &ModelClient,
) -> Result<(EvalReport, QuerySummary)> {
    cmd_generate(dataset, config, run_dir, None).await?;
    let summary = cmd_query(run_dir, config, client).await?;
    cmd_score(run_dir, config, None)?;
    let report = cmd_evaluate(&run_dir.join(RECORDS_FILE), run_dir, &config.methods, Some(config.fingerprint()))?;
    Ok((report, summary))
}
