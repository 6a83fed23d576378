//! Command implementations behind the `antiflipper` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use toml::Value;

use crate::config::parse_config;
use crate::error::Result;
use crate::harness::{run_configured, run_suite, ExperimentOutcome, SuiteRow};
use crate::metrics::{emit_metrics, fmt_f64, EmitOptions};

/// Everything needed to launch one `run`.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
    pub overrides: Vec<(String, Value)>,
    pub emit: EmitOptions,
}

pub fn cmd_run(manifest: &RunManifest) -> Result<ExperimentOutcome> {
    let cfg = parse_config(&manifest.config_path, &manifest.overrides)?;
    let outcome = run_configured(&cfg)?;
    emit_metrics(&outcome.records, &outcome.report, &cfg, &manifest.out_dir, manifest.emit)?;
    Ok(outcome)
}

pub fn summary_line(outcome: &ExperimentOutcome) -> String {
    let report = &outcome.report;
    format!(
        "final accuracy {:.4}, test error {:.4}, mean aggregation {:.3} ms, detected {:?} (fp {}, fn {})",
        outcome.final_accuracy(),
        outcome.final_test_error(),
        outcome.mean_aggregation_time().as_secs_f64() * 1e3,
        report.detected,
        report.false_positives,
        report.false_negatives,
    )
}

pub const COMPARE_HEADER: [&str; 8] = [
    "name",
    "defense",
    "final_accuracy",
    "final_test_error",
    "mean_aggregation_time_ms",
    "detected",
    "false_positives",
    "false_negatives",
];

/// Runs every config with a shared seed (the first config's unless given),
/// writes `compare.csv` into `out_dir` and returns the rows.
pub fn cmd_compare(
    configs: &[PathBuf],
    overrides: &[(String, Value)],
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<Vec<SuiteRow>> {
    let parsed = configs
        .iter()
        .map(|p| parse_config(p, overrides))
        .collect::<Result<Vec<_>>>()?;
    let shared = seed.or_else(|| parsed.first().map(|c| c.master_seed));
    let rows = run_suite(&parsed, shared)?;
    std::fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_path(out_dir.join("compare.csv"))?;
    w.write_record(COMPARE_HEADER)?;
    for r in &rows {
        w.write_record([
            r.name.clone(),
            r.defense.clone(),
            fmt_f64(r.final_accuracy),
            fmt_f64(r.final_test_error),
            fmt_f64(r.mean_aggregation_time.as_secs_f64() * 1e3),
            r.detected.to_string(),
            r.false_positives.to_string(),
            r.false_negatives.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}

/// Aligned text table of suite rows.
pub fn format_table(rows: &[SuiteRow]) -> String {
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.name.clone(),
                r.defense.clone(),
                format!("{:.2}", r.final_accuracy * 100.0),
                format!("{:.4}", r.final_test_error),
                format!("{:.3}", r.mean_aggregation_time.as_secs_f64() * 1e3),
                format!("{}/{}/{}", r.detected, r.false_positives, r.false_negatives),
            ]
        })
        .collect();
    let header = ["name", "defense", "acc %", "test err", "agg ms", "det/fp/fn"];
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cols: &[&str]| {
        let parts: Vec<String> = cols
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&header);
    for row in &cells {
        let cols: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&cols);
    }
    out
}
