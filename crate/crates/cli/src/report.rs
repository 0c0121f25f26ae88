//! Cross-seed summaries, equivalent dataset sizes and plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::config::Method;
use crate::pipeline::{seed_dir, METRICS_CSV_HEADER};
use crate::svg::{line_plot, Series};

/// The columns of one metrics CSV row that reports aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Point {
    pub iteration: usize,
    pub labels: usize,
    pub accuracy: f64,
    pub fnr: f64,
    pub success_rate: f64,
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<Point>> {
    let mut lines = text.lines();
    let header = lines.next().context("empty metrics file")?;
    if header != METRICS_CSV_HEADER {
        bail!("unexpected metrics header: {header}");
    }
    let cols: Vec<&str> = header.split(',').collect();
    let idx = |name: &str| cols.iter().position(|c| *c == name).expect("known column");
    let (ci, cl, ca, cf, cs) = (
        idx("iteration"),
        idx("labels"),
        idx("accuracy"),
        idx("fnr"),
        idx("handle_success"),
    );
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != cols.len() {
                bail!("metrics row has {} fields, expected {}", f.len(), cols.len());
            }
            Ok(Point {
                iteration: f[ci].parse()?,
                labels: f[cl].parse()?,
                accuracy: f[ca].parse()?,
                fnr: f[cf].parse()?,
                success_rate: f[cs].parse()?,
            })
        })
        .collect()
}

/// Reads every `runs/seed-*/<method>/metrics.csv` under `out`.
pub fn load_runs(out: &Path) -> Result<BTreeMap<Method, BTreeMap<u64, Vec<Point>>>> {
    let mut runs: BTreeMap<Method, BTreeMap<u64, Vec<Point>>> = BTreeMap::new();
    let root = out.join("runs");
    let entries = fs::read_dir(&root).with_context(|| format!("reading {}", root.display()))?;
    let mut seeds = Vec::new();
    for e in entries {
        let name = e?.file_name().to_string_lossy().into_owned();
        if let Some(s) = name.strip_prefix("seed-").and_then(|s| s.parse::<u64>().ok()) {
            seeds.push(s);
        }
    }
    seeds.sort();
    for seed in seeds {
        for m in Method::ALL {
            let path = seed_dir(out, seed).join(m.slug()).join("metrics.csv");
            if path.exists() {
                let text = fs::read_to_string(&path)?;
                let pts = parse_metrics_csv(&text).with_context(|| path.display().to_string())?;
                runs.entry(m).or_default().insert(seed, pts);
            }
        }
    }
    if runs.is_empty() {
        bail!("no evaluated runs under {}", root.display());
    }
    Ok(runs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EquivalentSize {
    Size(f64),
    BeyondRange,
}

impl std::fmt::Display for EquivalentSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EquivalentSize::Size(s) => write!(f, "{s:.0}"),
            EquivalentSize::BeyondRange => f.write_str("beyond measured range"),
        }
    }
}

/// Dataset size at which the piecewise-linear `(size, accuracy)` curve first
/// reaches `accuracy`.
pub fn equivalent_size(curve: &[(f64, f64)], accuracy: f64) -> EquivalentSize {
    for w in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        let (lo, hi) = (y0.min(y1), y0.max(y1));
        if accuracy >= lo && accuracy <= hi {
            if y1 == y0 {
                return EquivalentSize::Size(x0);
            }
            return EquivalentSize::Size(x0 + (accuracy - y0) / (y1 - y0) * (x1 - x0));
        }
    }
    match curve {
        [(x, y)] if *y == accuracy => EquivalentSize::Size(*x),
        _ => EquivalentSize::BeyondRange,
    }
}

fn mean_ci(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, 1.96 * (var / n).sqrt())
}

/// Cross-seed mean and 95% half-width per method and iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub iteration: usize,
    pub labels: usize,
    pub seeds: usize,
    pub accuracy: (f64, f64),
    pub fnr: (f64, f64),
    pub success_rate: (f64, f64),
}

pub fn summarize(runs: &BTreeMap<Method, BTreeMap<u64, Vec<Point>>>) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for (&method, seeds) in runs {
        let n_iter = seeds.values().map(Vec::len).min().unwrap_or(0);
        for it in 0..n_iter {
            let pts: Vec<&Point> = seeds.values().map(|p| &p[it]).collect();
            let col = |f: fn(&Point) -> f64| mean_ci(&pts.iter().map(|p| f(p)).collect::<Vec<_>>());
            out.push(SummaryRow {
                method,
                iteration: pts[0].iteration,
                labels: pts[0].labels,
                seeds: pts.len(),
                accuracy: col(|p| p.accuracy),
                fnr: col(|p| p.fnr),
                success_rate: col(|p| p.success_rate),
            });
        }
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(
        "method,iteration,labels,seeds,accuracy_mean,accuracy_ci95,fnr_mean,fnr_ci95,success_mean,success_ci95\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.iteration,
            r.labels,
            r.seeds,
            r.accuracy.0,
            r.accuracy.1,
            r.fnr.0,
            r.fnr.1,
            r.success_rate.0,
            r.success_rate.1
        );
    }
    s
}

/// Final-iteration table in markdown, with equivalent dataset sizes of the
/// active learner against each baseline when both are present.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut last: BTreeMap<Method, &SummaryRow> = BTreeMap::new();
    for r in rows {
        last.insert(r.method, r);
    }
    let mut s = String::from("| method | labels | accuracy | FNR | handling success |\n|---|---|---|---|---|\n");
    for r in last.values() {
        let _ = writeln!(
            s,
            "| {} | {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {:.3} ± {:.3} |",
            r.method, r.labels, r.accuracy.0, r.accuracy.1, r.fnr.0, r.fnr.1, r.success_rate.0, r.success_rate.1
        );
    }
    if let Some(active) = last.get(&Method::ActiveBd) {
        for base in [Method::SupvBd, Method::Supv] {
            let curve: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.method == base)
                .map(|r| (r.labels as f64, r.accuracy.0))
                .collect();
            if curve.is_empty() {
                continue;
            }
            let _ = writeln!(
                s,
                "\nEquivalent {base} dataset size for active+bd's accuracy at {} labels: {}",
                active.labels,
                equivalent_size(&curve, active.accuracy.0)
            );
        }
    }
    s
}

/// Writes `summary.csv`, `summary.md` and one SVG per metric into `dir`.
pub fn write_report(out: &Path, dir: &Path) -> Result<Vec<SummaryRow>> {
    let runs = load_runs(out)?;
    let rows = summarize(&runs);
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.csv"), summary_csv(&rows))?;
    fs::write(dir.join("summary.md"), summary_table(&rows))?;
    let metrics: [(&str, &str, fn(&SummaryRow) -> f64); 3] = [
        ("accuracy", "test accuracy", |r| r.accuracy.0),
        ("fnr", "false negative rate", |r| r.fnr.0),
        ("success_rate", "handling success rate", |r| r.success_rate.0),
    ];
    for (file, label, f) in metrics {
        let series: Vec<Series> = runs
            .keys()
            .map(|&m| Series {
                name: m.to_string(),
                points: rows.iter().filter(|r| r.method == m).map(|r| (r.labels as f64, f(r))).collect(),
            })
            .collect();
        let title = format!("{label} vs. dataset size");
        fs::write(dir.join(format!("{file}.svg")), line_plot(&title, "labeled samples", label, &series))?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_equivalent_size() {
        let curve = [(100.0, 0.8), (200.0, 0.9)];
        match equivalent_size(&curve, 0.85) {
            EquivalentSize::Size(s) => assert!((s - 150.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
        assert_eq!(equivalent_size(&curve, 0.95), EquivalentSize::BeyondRange);
        assert_eq!(equivalent_size(&curve, 0.7).to_string(), "beyond measured range");
    }

    #[test]
    fn single_run_summary_has_no_comparison() {
        let mut runs = BTreeMap::new();
        let pts = vec![Point {
            iteration: 0,
            labels: 100,
            accuracy: 0.9,
            fnr: 0.1,
            success_rate: 0.5,
        }];
        runs.entry(Method::Supv).or_insert_with(BTreeMap::new).insert(0, pts);
        let rows = summarize(&runs);
        assert_eq!(rows.len(), 1);
        let table = summary_table(&rows);
        assert!(!table.contains("Equivalent"));
        assert!(table.contains("| supv | 100 |"));
    }

    #[test]
    fn ci_is_zero_for_one_seed() {
        assert_eq!(mean_ci(&[0.3]), (0.3, 0.0));
        let (m, h) = mean_ci(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((h - 1.96 * (2.0f64 / 2.0).sqrt()).abs() < 1e-12);
    }
}
