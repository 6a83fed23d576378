//! Serialization of run results: `rounds.csv`, `trust.csv`, `detection.json`,
//! `summary.json` and a `config.toml` echo.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::to_toml;
use crate::error::Result;
use crate::harness::{DetectionReport, ExperimentConfig, RoundRecord};

pub const ROUNDS_HEADER: [&str; 4] = ["round", "global_accuracy", "test_error", "aggregation_time_ns"];

/// Which files to write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmitOptions {
    pub csv: bool,
    pub json: bool,
    pub summary: bool,
}

impl Default for EmitOptions {
    fn default() -> Self {
        Self {
            csv: true,
            json: true,
            summary: true,
        }
    }
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Serialize)]
struct Summary<'a> {
    name: &'a str,
    defense: &'a str,
    rounds: usize,
    final_accuracy: Option<f64>,
    final_test_error: Option<f64>,
    mean_aggregation_time_ms: f64,
    total_aggregation_time_ms: f64,
    detected: usize,
    false_positives: usize,
    false_negatives: usize,
    config: toml::Table,
}

pub fn write_rounds_csv(records: &[RoundRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ROUNDS_HEADER)?;
    for r in records {
        w.write_record([
            r.round.to_string(),
            fmt_f64(r.global_accuracy),
            fmt_f64(r.test_error),
            r.aggregation_time.as_nanos().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per round, one column per client; blank cells when the
/// aggregator keeps no trust.
pub fn write_trust_csv(records: &[RoundRecord], num_clients: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = std::iter::once("round".to_string())
        .chain((0..num_clients).map(|c| format!("client_{c}")))
        .collect();
    w.write_record(&header)?;
    for r in records {
        let row: Vec<String> = std::iter::once(r.round.to_string())
            .chain((0..num_clients).map(|c| r.trust_snapshot.get(&c).map(|&t| fmt_f64(t)).unwrap_or_default()))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_metrics(
    records: &[RoundRecord],
    report: &DetectionReport,
    cfg: &ExperimentConfig,
    dir: &Path,
    opts: EmitOptions,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if opts.csv {
        let rounds = dir.join("rounds.csv");
        write_rounds_csv(records, &rounds)?;
        let trust = dir.join("trust.csv");
        write_trust_csv(records, cfg.num_clients(), &trust)?;
        written.extend([rounds, trust]);
    }
    if opts.json {
        let path = dir.join("detection.json");
        fs::write(&path, serde_json::to_string_pretty(report)? + "\n")?;
        written.push(path);
    }
    if opts.summary {
        let echo = to_toml(cfg);
        let config_path = dir.join("config.toml");
        fs::write(&config_path, &echo)?;

        let total_ns: u128 = records.iter().map(|r| r.aggregation_time.as_nanos()).sum();
        let total_ms = total_ns as f64 / 1e6;
        let summary = Summary {
            name: &cfg.name,
            defense: cfg.defense.name(),
            rounds: records.len(),
            final_accuracy: records.last().map(|r| r.global_accuracy),
            final_test_error: records.last().map(|r| r.test_error),
            mean_aggregation_time_ms: if records.is_empty() {
                0.0
            } else {
                total_ms / records.len() as f64
            },
            total_aggregation_time_ms: total_ms,
            detected: report.detected.len(),
            false_positives: report.false_positives,
            false_negatives: report.false_negatives,
            config: toml::from_str(&echo).expect("echo is valid TOML"),
        };
        let path = dir.join("summary.json");
        fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
        written.extend([config_path, path]);
    }
    Ok(written)
}
