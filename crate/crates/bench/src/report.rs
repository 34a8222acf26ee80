//! `report.json` (nested, versioned) and `summary.csv` (flat) output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Task};
use crate::dataset::Skipped;
use crate::error::{BenchError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// How corruption seeds are derived, recorded verbatim in reports.
pub const CORRUPTION_SEED_RULE: &str = "sha256(global_seed_le || purpose || 0x00 || image_id)[0..8] as u64 le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub global: u64,
    pub optimizer: u64,
    pub noise: u64,
    pub corruption: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub rotation_fill: [f64; 3],
    pub crop_disk: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DatasetCounts {
    pub total: usize,
    pub evaluated: usize,
    pub skipped: usize,
    pub skipped_items: Vec<Skipped>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: u32,
    pub task: Task,
    pub timestamp: String,
    pub config_digest: String,
    pub seeds: Seeds,
    pub prompts: Vec<String>,
    pub prompt_template: String,
    pub backend: String,
    pub policy: Policy,
    pub config: RunConfig,
    pub dataset: DatasetCounts,
    pub warnings: Vec<String>,
    pub metrics: serde_json::Value,
}

/// Flat table for `summary.csv`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Empty cell for a missing value.
pub fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputPaths {
    pub report_json: PathBuf,
    pub summary_csv: PathBuf,
    pub per_image: PathBuf,
}

/// Write `report.json`, `summary.csv` (with `config_digest` and `seed`
/// columns appended to every row) and `per_image.jsonl` into `dir`.
pub fn write_report(
    dir: &Path,
    report: &Report,
    summary: &Table,
    per_image: &[serde_json::Value],
) -> Result<OutputPaths> {
    fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    let report_json = dir.join("report.json");
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&report_json, text + "\n").map_err(|e| BenchError::io(&report_json, e))?;

    let summary_csv = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_csv).map_err(|e| BenchError::io(&summary_csv, e.into()))?;
    let mut header = summary.header.clone();
    header.extend(["config_digest".to_string(), "seed".to_string()]);
    w.write_record(&header).map_err(|e| BenchError::io(&summary_csv, e.into()))?;
    for row in &summary.rows {
        let mut row = row.clone();
        row.push(report.config_digest.clone());
        row.push(report.seeds.global.to_string());
        w.write_record(&row).map_err(|e| BenchError::io(&summary_csv, e.into()))?;
    }
    w.flush().map_err(|e| BenchError::io(&summary_csv, e))?;

    let per_image_path = dir.join("per_image.jsonl");
    let mut lines = String::new();
    for record in per_image {
        lines.push_str(&serde_json::to_string(record).expect("record serializes"));
        lines.push('\n');
    }
    fs::write(&per_image_path, lines).map_err(|e| BenchError::io(&per_image_path, e))?;

    Ok(OutputPaths {
        report_json,
        summary_csv,
        per_image: per_image_path,
    })
}

/// A report as JSON with the timestamp removed, for determinism checks.
pub fn without_timestamp(report_json: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(report_json).expect("report.json is valid JSON");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("timestamp");
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        Report {
            schema: SCHEMA_VERSION,
            task: Task::BenchRotation,
            timestamp: "2026-01-01T00:00:00Z".into(),
            config_digest: "abc".into(),
            seeds: Seeds {
                global: 7,
                optimizer: 7,
                noise: 0,
                corruption: CORRUPTION_SEED_RULE.into(),
            },
            prompts: vec!["a photo of a 0".into()],
            prompt_template: "a photo of a {label}".into(),
            backend: "synthetic:upright".into(),
            policy: Policy {
                rotation_fill: [0.0; 3],
                crop_disk: false,
            },
            config: RunConfig::default(),
            dataset: DatasetCounts::default(),
            warnings: vec![],
            metrics: serde_json::json!({"pose_accuracy": 1.0}),
        }
    }

    #[test]
    fn summary_rows_carry_digest_and_seed() {
        let dir = tempfile::tempdir().unwrap();
        let mut table = Table::new(&["angle", "baseline_acc", "canon_acc"]);
        table.push(vec!["0".into(), "1".into(), "1".into()]);
        let paths = write_report(dir.path(), &sample(), &table, &[]).unwrap();
        let csv = fs::read_to_string(paths.summary_csv).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "angle,baseline_acc,canon_acc,config_digest,seed");
        assert_eq!(lines.next().unwrap(), "0,1,1,abc,7");
        let json = fs::read_to_string(paths.report_json).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["schema"], 1);
        assert_eq!(v["task"], "bench-rotation");
        assert!(without_timestamp(&json).get("timestamp").is_none());
    }
}
