mod common;

use std::path::Path;

use festa_core::client::{ModelClient, ModelEndpoint, RetryPolicy};
use festa_core::mocks::{MockKind, MockProfile};
use festa_core::pipeline::{self, SkipEntry, RECORDS_FILE, SAMPLES_FILE, SKIPS_FILE};
use festa_core::record::Score;
use festa_core::FestaError;

use common::Media;

fn small_k(cfg: &mut festa_core::config::FestaConfig) {
    cfg.k.k11 = Some(2);
    cfg.k.k12 = Some(2);
    cfg.k.k21 = Some(2);
    cfg.k.k22 = Some(2);
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[tokio::test]
async fn generate_counts_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = common::dataset(&tmp.path().join("data"), 10, 4, Media::Image);
    let mut cfg = common::config(&["festa"], 1);
    small_k(&mut cfg);
    let run = tmp.path().join("run");
    let summary = pipeline::cmd_generate(&manifest, &cfg, &run, None).await.unwrap();
    assert_eq!(summary.instances, 10);
    assert_eq!(summary.samples_by_stream.get("fes"), Some(&40));
    assert_eq!(summary.samples_by_stream.get("fcs"), Some(&40));
    assert_eq!(summary.skips, 0);

    let samples = run.join(SAMPLES_FILE);
    let before = std::fs::read(&samples).unwrap();
    let mtime = std::fs::metadata(&samples).unwrap().modified().unwrap();
    let again = pipeline::cmd_generate(&manifest, &cfg, &run, None).await.unwrap();
    assert_eq!(again, summary);
    assert_eq!(std::fs::read(&samples).unwrap(), before);
    assert_eq!(std::fs::metadata(&samples).unwrap().modified().unwrap(), mtime);
}

#[tokio::test]
async fn uncomplementable_instances_are_logged_and_skipped() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = common::dataset(&tmp.path().join("data"), 4, 2, Media::None);
    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    lines[1]["question"] = "Describe the scene.".into();
    std::fs::write(&manifest, lines.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("\n")).unwrap();

    let mut cfg = common::config(&["festa", "fes", "fcs"], 2);
    small_k(&mut cfg);
    let run = tmp.path().join("run");
    let summary = pipeline::cmd_generate(&manifest, &cfg, &run, None).await.unwrap();
    assert_eq!(summary.skips, 1);
    let skips: Vec<SkipEntry> = read_jsonl(&run.join(SKIPS_FILE));
    assert_eq!(skips.len(), 1);
    assert_eq!(skips[0].instance_id, "q001");
    assert_eq!(skips[0].stream, "fcs");

    let instances = common::load(&manifest);
    let server = common::start(common::mock(instances, MockProfile::new(MockKind::Ideal, 2))).await;
    let client = common::client(&server, None);
    pipeline::run_all(&manifest, &cfg, &run, &client).await.unwrap();
    let records = pipeline::load_records(&run.join(RECORDS_FILE)).unwrap();
    let skipped = records.iter().find(|r| r.instance_id == "q001").expect("FES still scored");
    assert!(skipped.u_fcs.is_none() && skipped.u_festa.is_none());
    assert!(skipped.u_fes.is_some());
    assert_eq!(records.iter().filter(|r| r.u_festa.is_some()).count(), 3);
}

#[tokio::test]
async fn injected_faults_do_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = common::dataset(&tmp.path().join("data"), 6, 4, Media::Image);
    let instances = common::load(&manifest);
    let mut cfg = common::config(&["festa", "fes", "fcs", "oe"], 3);
    small_k(&mut cfg);

    let clean = common::start(common::mock(instances.clone(), MockProfile::noisy(0.7, 3))).await;
    let (clean_report, _) = pipeline::run_all(&manifest, &cfg, &tmp.path().join("clean"), &common::client(&clean, None)).await.unwrap();

    let flaky = common::start(common::mock(instances, MockProfile::noisy(0.7, 3)).with_fault_rate(0.1)).await;
    let (flaky_report, summary) =
        pipeline::run_all(&manifest, &cfg, &tmp.path().join("flaky"), &common::client(&flaky, None)).await.unwrap();
    assert_eq!(summary.failures, 0);
    assert!(summary.network_calls > summary.requests, "some faults should have been retried");
    assert_eq!(serde_json::to_value(&clean_report).unwrap(), serde_json::to_value(&flaky_report).unwrap());
}

#[tokio::test]
async fn noisy_accuracy_within_binomial_interval() {
    let tmp = tempfile::tempdir().unwrap();
    let n = 200;
    let manifest = common::dataset(&tmp.path().join("data"), n, 2, Media::None);
    let instances = common::load(&manifest);
    let server = common::start(common::mock(instances, MockProfile::noisy(0.5, 11))).await;
    let mut cfg = common::config(&["fes"], 11);
    small_k(&mut cfg);
    let (report, _) = pipeline::run_all(&manifest, &cfg, &tmp.path().join("run"), &common::client(&server, None)).await.unwrap();
    // Two-sided 99.9% normal interval for a fair coin at n = 200.
    let half_width = 3.2905 * (0.25 / n as f64).sqrt();
    assert!((report.accuracy - 0.5).abs() <= half_width, "accuracy {}", report.accuracy);
    assert_eq!(report.n_instances, n);
}

#[tokio::test]
async fn mode_collapse_hits_the_floor() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = common::dataset(&tmp.path().join("data"), 4, 4, Media::Image);
    let instances = common::load(&manifest);
    let server = common::start(common::mock(instances, MockProfile::new(MockKind::ModeCollapse, 0))).await;
    let mut cfg = common::config(&["festa", "fes", "fcs", "oe"], 0);
    small_k(&mut cfg);
    let run = tmp.path().join("run");
    pipeline::run_all(&manifest, &cfg, &run, &common::client(&server, None)).await.unwrap();
    let want = -(1e-6f64).ln();
    assert!((want - 13.815511).abs() < 1e-6);
    for r in pipeline::load_records(&run.join(RECORDS_FILE)).unwrap() {
        assert!((r.u_fcs.unwrap().get() - want).abs() < 1e-9, "{r:?}");
        assert_eq!(r.u_fes, Some(Score(0.0)));
        assert_eq!(r.uncertainty("oe"), Some(0.0));
    }
}

#[tokio::test]
async fn exact_mode_serializes_infinity() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = common::dataset(&tmp.path().join("data"), 2, 4, Media::None);
    let instances = common::load(&manifest);
    let server = common::start(common::mock(instances, MockProfile::new(MockKind::ModeCollapse, 0))).await;
    let mut cfg = common::config(&["festa"], 0);
    cfg.floor = 0.0;
    small_k(&mut cfg);
    let run = tmp.path().join("run");
    pipeline::run_all(&manifest, &cfg, &run, &common::client(&server, None)).await.unwrap();
    let raw = std::fs::read_to_string(run.join(RECORDS_FILE)).unwrap();
    assert!(raw.contains("\"u_fcs\":\"inf\""), "{raw}");
    let records = pipeline::load_records(&run.join(RECORDS_FILE)).unwrap();
    assert!(records.iter().all(|r| r.u_festa.unwrap().get() == f64::INFINITY));
}

#[tokio::test]
async fn output_entropy_edge_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = common::dataset(&tmp.path().join("data"), 4, 2, Media::None);
    let instances = common::load(&manifest);

    let consistent = common::start(common::mock(instances.clone(), MockProfile::new(MockKind::Consistent, 5))).await;
    let client = common::client(&consistent, None);
    for inst in &instances {
        assert_eq!(festa_core::estimator::baseline_oe(&client, inst, None, 20).await.unwrap(), 0.0);
    }

    let noisy = common::start(common::mock(instances.clone(), MockProfile::noisy(0.5, 5))).await;
    let client = common::client(&noisy, None);
    assert_eq!(festa_core::estimator::baseline_oe(&client, &instances[0], None, 1).await.unwrap(), 0.0);

    // 400 fair-coin decodes: the empirical rate lies within 3σ = 0.075 of
    // 0.5, and binary entropy over that band stays above h(0.575).
    let n = 400;
    let h = |p: f64| -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
    let lower = h(0.5 + 3.0 * (0.25 / n as f64).sqrt());
    for inst in &instances {
        let oe = festa_core::estimator::baseline_oe(&client, inst, None, n).await.unwrap();
        assert!(oe >= lower && oe <= std::f64::consts::LN_2 + 1e-12, "{oe}");
    }
}

#[tokio::test]
async fn unreachable_endpoint_trips_failure_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = common::dataset(&tmp.path().join("data"), 3, 4, Media::None);
    let mut cfg = common::config(&["festa"], 0);
    small_k(&mut cfg);
    let run = tmp.path().join("run");
    pipeline::cmd_generate(&manifest, &cfg, &run, None).await.unwrap();

    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let endpoint = ModelEndpoint {
        base_url: format!("http://127.0.0.1:{port}/v1"),
        retry: RetryPolicy { max_attempts: 1, backoff_ms: 1 },
        ..ModelEndpoint::default()
    };
    let client = ModelClient::new(endpoint, None).unwrap();
    let err = pipeline::cmd_query(&run, &cfg, &client).await.unwrap_err();
    assert!(matches!(err, FestaError::FailureThreshold { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[tokio::test]
async fn sweep_full_grid_matches_headline() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = common::dataset(&tmp.path().join("data"), 12, 4, Media::Image);
    let instances = common::load(&manifest);
    let server = common::start(common::mock(instances, MockProfile::noisy(0.6, 8))).await;
    let mut cfg = common::config(&["festa", "fes", "fcs"], 8);
    small_k(&mut cfg);
    let run = tmp.path().join("run");
    let (report, _) = pipeline::run_all(&manifest, &cfg, &run, &common::client(&server, None)).await.unwrap();
    let table = pipeline::cmd_sweep(&run, &cfg, &[1, 2, 3, 4, 5], &run).unwrap();
    for m in ["festa", "fes", "fcs"] {
        assert_eq!(table.get(m, 4).unwrap().auroc, report.auroc(m), "{m}");
        assert_eq!(table.get(m, 4).unwrap().k_total, 8);
        assert!(table.get(m, 5).is_none());
    }
    assert!(run.join("sweep.csv").exists() && run.join("sweep.svg").exists());
}
