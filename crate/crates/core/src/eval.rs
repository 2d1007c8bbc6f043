//! Misprediction-detection metrics: AUROC, risk-coverage curves, sample-size
//! sweeps, and report export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FestaError, Result};
use crate::record::{Score, UncertaintyRecord};

/// Display order of known methods; anything else follows alphabetically.
pub const METHOD_ORDER: &[&str] = &[
    "festa", "fes", "fcs", "oe", "vc", "ia-i", "ia-t", "ia-it", "ru", "bu", "entropy-fes", "entropy-fcs", "entropy-sum",
];

/// Methods that compete as baselines in the relative-improvement column.
pub const BASELINES: &[&str] = &["oe", "vc", "ia-i", "ia-t", "ia-it", "ru", "bu"];

/// Higher confidence means more trustworthy. `−u` ranks exactly like `1/u`
/// for positive `u` and stays finite at `u = 0`.
pub fn confidence_from_uncertainty(u: f64) -> f64 {
    -u
}

/// Mann–Whitney AUROC: the fraction of (correct, incorrect) pairs where the
/// correct one has strictly higher confidence, ties counting one half.
/// `Ok(None)` when only one class is present.
pub fn auroc(confidences: &[f64], correct: &[bool]) -> Result<Option<f64>> {
    if confidences.len() != correct.len() {
        return Err(FestaError::Input(format!(
            "{} confidences but {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    if confidences.iter().any(|c| c.is_nan()) {
        return Err(FestaError::Domain("NaN confidence".into()));
    }
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[a].total_cmp(&confidences[b]));
    let (mut wins, mut ties) = (0u128, 0u128);
    let (mut neg_below, mut pos_total, mut neg_total) = (0u128, 0u128, 0u128);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < order.len() && confidences[order[j]] == confidences[order[i]] {
            if correct[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        wins += pos * neg_below;
        ties += pos * neg;
        neg_below += neg;
        pos_total += pos;
        neg_total += neg;
        i = j;
    }
    if pos_total == 0 || neg_total == 0 {
        return Ok(None);
    }
    Ok(Some((2 * wins + ties) as f64 / (2 * pos_total * neg_total) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPoint {
    /// Instances with uncertainty at or below this value are answered.
    pub uncertainty: Score,
    pub coverage: f64,
    pub selective_accuracy: f64,
}

/// Selective accuracy when answering only the most confident instances,
/// one point per distinct uncertainty value, coverage increasing.
pub fn risk_coverage(uncertainties: &[f64], correct: &[bool]) -> Vec<RiskPoint> {
    let n = uncertainties.len().min(correct.len());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| uncertainties[a].total_cmp(&uncertainties[b]));
    let mut out = Vec::new();
    let mut hits = 0usize;
    let mut i = 0;
    while i < n {
        let u = uncertainties[order[i]];
        while i < n && uncertainties[order[i]] == u {
            hits += correct[order[i]] as usize;
            i += 1;
        }
        out.push(RiskPoint {
            uncertainty: Score(u),
            coverage: i as f64 / n as f64,
            selective_accuracy: hits as f64 / i as f64,
        });
    }
    out
}

/// `(festa − best) / best`.
pub fn relative_improvement(festa_auroc: f64, best_baseline_auroc: f64) -> Option<f64> {
    (best_baseline_auroc > 0.0).then(|| (festa_auroc - best_baseline_auroc) / best_baseline_auroc)
}

/// Percentage with one decimal, e.g. `24.6%`.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.1}%", fraction * 100.0)
}

fn method_rank(m: &str) -> (usize, String) {
    (METHOD_ORDER.iter().position(|x| *x == m).unwrap_or(METHOD_ORDER.len()), m.to_string())
}

/// Every method carried by at least one record, in display order.
pub fn methods_present(records: &[UncertaintyRecord]) -> Vec<String> {
    let mut set = std::collections::BTreeSet::new();
    for r in records {
        if r.u_festa.is_some() {
            set.insert("festa".to_string());
        }
        if r.u_fes.is_some() {
            set.insert("fes".to_string());
        }
        if r.u_fcs.is_some() {
            set.insert("fcs".to_string());
        }
        set.extend(r.baselines.keys().cloned());
    }
    let mut v: Vec<String> = set.into_iter().collect();
    v.sort_by_key(|m| method_rank(m));
    v
}

/// Uncertainties and correctness of the records that carry `method`.
pub fn method_scores(records: &[UncertaintyRecord], method: &str) -> (Vec<f64>, Vec<bool>, Vec<String>) {
    let mut u = Vec::new();
    let mut c = Vec::new();
    let mut ids = Vec::new();
    for r in records {
        if let Some(x) = r.uncertainty(method).filter(|x| !x.is_nan()) {
            u.push(x);
            c.push(r.correct);
            ids.push(r.instance_id.clone());
        }
    }
    (u, c, ids)
}

/// AUROC of one method over the records carrying it.
pub fn method_auroc(records: &[UncertaintyRecord], method: &str) -> (Option<f64>, usize) {
    let (u, c, _) = method_scores(records, method);
    let conf: Vec<f64> = u.iter().copied().map(confidence_from_uncertainty).collect();
    (auroc(&conf, &c).expect("lengths match and NaN filtered"), u.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub auroc: Option<f64>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub risk_coverage: Vec<RiskPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub best_baseline: String,
    pub best_baseline_auroc: f64,
    pub festa_auroc: f64,
    pub relative: f64,
    pub display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    /// Samples taken from each of the FES and FCS grids.
    pub k_per_grid: usize,
    pub k_total: usize,
    pub auroc: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn get(&self, method: &str, k_per_grid: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.method == method && r.k_per_grid == k_per_grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_instances: usize,
    pub accuracy: f64,
    pub methods: Vec<MethodReport>,
    pub improvement: Option<Improvement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_fingerprint: Option<String>,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn auroc(&self, name: &str) -> Option<f64> {
        self.method(name).and_then(|m| m.auroc)
    }
}

/// Builds the report for `methods` (all present methods when empty).
pub fn build_report(records: &[UncertaintyRecord], methods: &[String], config_fingerprint: Option<String>) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(FestaError::Usage("no uncertainty records to evaluate".into()));
    }
    let mut methods: Vec<String> = if methods.is_empty() { methods_present(records) } else { methods.to_vec() };
    methods.sort_by_key(|m| method_rank(m));
    methods.dedup();
    let mut out = Vec::with_capacity(methods.len());
    for m in &methods {
        let (u, c, _) = method_scores(records, m);
        let (auc, n) = method_auroc(records, m);
        let note = match (auc, n) {
            (_, 0) => Some("no record carries this method".to_string()),
            (None, n) => Some(format!("AUROC undefined: all {n} records are {}", if c[0] { "correct" } else { "incorrect" })),
            _ => None,
        };
        out.push(MethodReport { method: m.clone(), auroc: auc, n, note, risk_coverage: risk_coverage(&u, &c) });
    }
    let best = out
        .iter()
        .filter(|m| BASELINES.contains(&m.method.as_str()))
        .filter_map(|m| m.auroc.map(|a| (m.method.clone(), a)))
        .fold(None::<(String, f64)>, |acc, (m, a)| match acc {
            Some((_, b)) if b >= a => acc,
            _ => Some((m, a)),
        });
    let festa = out.iter().find(|m| m.method == "festa").and_then(|m| m.auroc);
    let improvement = match (festa, best) {
        (Some(f), Some((name, b))) => relative_improvement(f, b).map(|r| Improvement {
            best_baseline: name,
            best_baseline_auroc: b,
            festa_auroc: f,
            relative: r,
            display: format_percent(r),
        }),
        _ => None,
    };
    let correct = records.iter().filter(|r| r.correct).count();
    Ok(EvalReport {
        n_instances: records.len(),
        accuracy: correct as f64 / records.len() as f64,
        methods: out,
        improvement,
        sweep: None,
        config_fingerprint,
    })
}

/// AUROC per (method, K) from records scored with the first K samples of
/// each grid.
pub fn sweep_sample_size(records_by_k: &BTreeMap<usize, Vec<UncertaintyRecord>>, methods: &[String]) -> SweepTable {
    let mut rows = Vec::new();
    let mut methods = methods.to_vec();
    methods.sort_by_key(|m| method_rank(m));
    for m in &methods {
        for (&k, records) in records_by_k {
            let (auroc, n) = method_auroc(records, m);
            rows.push(SweepRow { method: m.clone(), k_per_grid: k, k_total: 2 * k, auroc, n });
        }
    }
    SweepTable { rows }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_if_changed(path: &Path, content: &str) -> Result<()> {
    if std::fs::read(path).ok().as_deref() != Some(content.as_bytes()) {
        std::fs::write(path, content)?;
    }
    Ok(())
}

pub fn report_csv(report: &EvalReport) -> String {
    let mut s = String::from("method,auroc,n,relative_improvement\n");
    for m in &report.methods {
        let rel = match &report.improvement {
            Some(i) if m.method == "festa" => i.display.clone(),
            _ => String::new(),
        };
        let _ = writeln!(s, "{},{},{},{}", m.method, opt(m.auroc), m.n, rel);
    }
    s
}

pub fn risk_coverage_csv(report: &EvalReport) -> String {
    let mut s = String::from("method,uncertainty,coverage,selective_accuracy\n");
    for m in &report.methods {
        for p in &m.risk_coverage {
            let _ = writeln!(s, "{},{},{},{}", m.method, p.uncertainty.0, p.coverage, p.selective_accuracy);
        }
    }
    s
}

/// Per-instance confidence versus correctness for every method.
pub fn scatter_csv(records: &[UncertaintyRecord], methods: &[String]) -> String {
    let mut s = String::from("instance_id,method,uncertainty,confidence,correct\n");
    for m in methods {
        for r in records {
            if let Some(u) = r.uncertainty(m) {
                let _ = writeln!(s, "{},{},{},{},{}", r.instance_id, m, u, confidence_from_uncertainty(u), r.correct);
            }
        }
    }
    s
}

pub fn sweep_csv(table: &SweepTable) -> String {
    let mut s = String::from("method,k_per_grid,k_total,auroc,n\n");
    for r in &table.rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.method, r.k_per_grid, r.k_total, opt(r.auroc), r.n);
    }
    s
}

const PALETTE: &[&str] = &["#1b6ca8", "#d1495b", "#66a182", "#edae49", "#6a4c93", "#00798c", "#8d6a9f", "#3d405b"];

/// Minimal line chart with both axes on `[x_min, x_max] × [0, 1]`.
pub fn svg_line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, pad) = (640.0, 420.0, 56.0);
    let xs = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)).filter(|x| x.is_finite());
    let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !x0.is_finite() || x0 == x1 {
        x0 = 0.0;
        x1 = x1.max(1.0);
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - y.clamp(0.0, 1.0) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    for t in 0..=4 {
        let y = t as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y:.2}</text>"#, pad - 6.0, sy(y) + 4.0);
        let x = x0 + (x1 - x0) * t as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, sx(x), h - pad + 18.0, (x * 100.0).round() / 100.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{y_label}</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (n, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[n % PALETTE.len()];
        let path: Vec<String> =
            pts.iter().filter(|p| p.0.is_finite()).map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        let ly = pad + 16.0 * n as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{name}</text>"#,
            w - pad - 90.0,
            ly - 9.0,
            w - pad - 75.0,
            ly
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `report.json`, `report.csv`, `risk_coverage.csv`, `scatter.csv`
/// and `risk_coverage.svg` into `dir`. Unchanged files are not rewritten.
pub fn write_report(report: &EvalReport, records: &[UncertaintyRecord], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    write_if_changed(&dir.join("report.json"), &json)?;
    write_if_changed(&dir.join("report.csv"), &report_csv(report))?;
    write_if_changed(&dir.join("risk_coverage.csv"), &risk_coverage_csv(report))?;
    let methods: Vec<String> = report.methods.iter().map(|m| m.method.clone()).collect();
    write_if_changed(&dir.join("scatter.csv"), &scatter_csv(records, &methods))?;
    let series: Vec<(String, Vec<(f64, f64)>)> = report
        .methods
        .iter()
        .map(|m| (m.method.clone(), m.risk_coverage.iter().map(|p| (p.coverage, p.selective_accuracy)).collect()))
        .collect();
    write_if_changed(
        &dir.join("risk_coverage.svg"),
        &svg_line_chart("Risk-coverage", "coverage", "selective accuracy", &series),
    )?;
    Ok(())
}

/// Writes `sweep.json`, `sweep.csv` and `sweep.svg` into `dir`.
pub fn write_sweep(table: &SweepTable, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(table)?;
    json.push('\n');
    write_if_changed(&dir.join("sweep.json"), &json)?;
    write_if_changed(&dir.join("sweep.csv"), &sweep_csv(table))?;
    let mut by_method: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in &table.rows {
        let Some(a) = r.auroc else { continue };
        match by_method.iter_mut().find(|(m, _)| *m == r.method) {
            Some((_, pts)) => pts.push((r.k_total as f64, a)),
            None => by_method.push((r.method.clone(), vec![(r.k_total as f64, a)])),
        }
    }
    write_if_changed(&dir.join("sweep.svg"), &svg_line_chart("AUROC by sample size", "K", "AUROC", &by_method))?;
    Ok(())
}
