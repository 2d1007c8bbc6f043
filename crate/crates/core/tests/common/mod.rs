#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use festa_core::client::{ModelClient, ModelEndpoint, ResponseCache, RetryPolicy};
use festa_core::config::FestaConfig;
use festa_core::instance::{parse_manifest, McqInstance};
use festa_core::mocks::{serve_mock, MockModel, MockProfile, MockServerHandle};
use festa_core::transforms::audio::AudioClip;
use festa_core::transforms::image::encode_png;
use image::{Rgba, RgbaImage};
use serde_json::json;

pub const LETTERS: [&str; 4] = ["A", "B", "C", "D"];

pub fn write_png(path: &Path, seed: u32) {
    let img = RgbaImage::from_fn(16, 12, |x, y| {
        Rgba([(x * 13 + seed * 7) as u8, (y * 17 + seed) as u8, ((x + y) * 5) as u8, 255])
    });
    std::fs::write(path, encode_png(&img).unwrap()).unwrap();
}

/// Three events: dog 0–0.375 s, cat 0.5–0.875 s, bell 1.0–1.6 s at 800 Hz.
pub fn write_wav(path: &Path) -> serde_json::Value {
    let spec = hound::WavSpec { channels: 1, sample_rate: 800, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let samples = (0..1280)
        .map(|t| if t % 400 < 300 || t >= 800 { 0.3 * ((t as f64) * 0.2).sin() } else { 0.0 })
        .collect();
    std::fs::write(path, AudioClip { spec, samples }.encode().unwrap()).unwrap();
    json!([
        {"label": "dog", "start_s": 0.0, "end_s": 0.375},
        {"label": "cat", "start_s": 0.5, "end_s": 0.875},
        {"label": "bell", "start_s": 1.0, "end_s": 1.6}
    ])
}

fn options(n: usize) -> serde_json::Value {
    json!(LETTERS[..n].iter().map(|l| json!({"label": l, "text": format!("choice {l}")})).collect::<Vec<_>>())
}

pub enum Media {
    None,
    Image,
    Audio,
}

/// Writes a manifest with `n` instances of one media kind under `dir` and
/// returns its path. Targets cycle through the option labels.
pub fn dataset(dir: &Path, n: usize, n_options: usize, media: Media) -> PathBuf {
    std::fs::create_dir_all(dir.join("media")).unwrap();
    let mut lines = Vec::new();
    for i in 0..n {
        let target = LETTERS[i % n_options];
        let mut row = json!({
            "id": format!("q{i:03}"),
            "question": if i % 2 == 0 { "Is the cup to the left of the plate?" } else { "Is the lamp above the table?" },
            "options": options(n_options),
            "answer": target,
            "task": "spatial",
        });
        match media {
            Media::None => {}
            Media::Image => {
                let rel = format!("media/img{i}.png");
                write_png(&dir.join(&rel), i as u32);
                row["media"] = json!({"kind": "image", "path": rel});
            }
            Media::Audio => {
                let rel = format!("media/clip{i}.wav");
                row["events"] = write_wav(&dir.join(&rel));
                row["media"] = json!({"kind": "audio", "path": rel});
                row["task"] = json!("order");
                row["question"] = json!("Which sound comes after the dog?");
            }
        }
        lines.push(row.to_string());
    }
    let path = dir.join("manifest.jsonl");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

pub fn load(path: &Path) -> Vec<McqInstance> {
    let mut v = parse_manifest(&std::fs::read_to_string(path).unwrap()).unwrap();
    for i in &mut v {
        if let Some(p) = i.media.path.as_mut() {
            *p = path.parent().unwrap().join(&*p);
        }
    }
    v
}

pub async fn start(model: MockModel) -> MockServerHandle {
    serve_mock(model, "127.0.0.1:0".parse::<SocketAddr>().unwrap()).await.unwrap()
}

pub fn endpoint(server: &MockServerHandle) -> ModelEndpoint {
    ModelEndpoint {
        base_url: server.base_url(),
        retry: RetryPolicy { max_attempts: 4, backoff_ms: 1 },
        max_in_flight: 32,
        ..ModelEndpoint::default()
    }
}

pub fn client(server: &MockServerHandle, cache: Option<&Path>) -> ModelClient {
    ModelClient::new(endpoint(server), cache.map(|c| ResponseCache::open(c).unwrap())).unwrap()
}

pub fn config(methods: &[&str], seed: u64) -> FestaConfig {
    FestaConfig { seed, methods: methods.iter().map(|m| m.to_string()).collect(), ..FestaConfig::default() }
}

pub fn mock(instances: Vec<McqInstance>, profile: MockProfile) -> MockModel {
    MockModel::new(instances, profile).unwrap()
}
