//! Single-image canonicalization, per-image energy evaluation, and
//! uprightness-gate evaluation.

use std::fs;
use std::path::Path;

use canon_core::energy::{evaluate_energy, EnergyBreakdown};
use canon_core::image::{save_png, LabeledImage};
use canon_core::pipeline::{canonicalize, gate_energies, gate_spec, predict, GateEnergies};
use canon_core::transforms::rotate;
use canon_core::{CostCounter, EnergyBackend, EnergySpec, NoiseSchedule, SearchConfig, TransformDomain, TransformPoint};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Skipped;
use crate::error::{BenchError, Result};
use crate::report::{cell, Table};
use crate::rotation::FILL;

type Outcomes<R> = (Vec<R>, Vec<Skipped>);

fn split<R>(items: &[LabeledImage], outcomes: Vec<Result<R>>) -> Outcomes<R> {
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for (item, outcome) in items.iter().zip(outcomes) {
        match outcome {
            Ok(r) => ok.push(r),
            Err(e) => skipped.push(Skipped {
                id: item.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    (ok, skipped)
}

fn fraction(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

// ---- canon ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonRecord {
    pub id: String,
    pub best_point: TransformPoint,
    pub energy_at_input: f64,
    pub energy_at_canonical: f64,
    pub evaluations: usize,
    pub prediction_input: Option<usize>,
    pub prediction_canonical: Option<usize>,
    pub canonical_png: String,
    pub trace_json: String,
    pub cost: CostCounter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonReport {
    pub images: usize,
    pub mean_energy_drop: f64,
    pub cost: CostCounter,
    pub spec_digest: Option<String>,
}

/// Canonicalize each image, writing `canonical/<id>.png` and
/// `traces/<id>.json` under `out_dir`.
#[allow(clippy::too_many_arguments)]
pub fn run_canon(
    items: &[LabeledImage],
    domain: &TransformDomain,
    spec: &EnergySpec,
    schedule: &NoiseSchedule,
    backend: &dyn EnergyBackend,
    search: &SearchConfig,
    prompts: &[String],
    out_dir: &Path,
) -> Result<(CanonReport, Vec<CanonRecord>, Vec<Skipped>)> {
    let canonical_dir = out_dir.join("canonical");
    let trace_dir = out_dir.join("traces");
    for dir in [&canonical_dir, &trace_dir] {
        fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    let outcomes: Vec<Result<(CanonRecord, String)>> = items
        .par_iter()
        .map(|item| {
            let result = canonicalize(&item.image, domain, spec, schedule, backend, search)?;
            let png_name = format!("canonical/{}.png", item.id);
            let trace_name = format!("traces/{}.json", item.id);
            save_png(&result.canonical, out_dir.join(&png_name))?;
            let trace_path = out_dir.join(&trace_name);
            let trace = serde_json::to_string_pretty(&result.trace).expect("trace serializes");
            fs::write(&trace_path, trace + "\n").map_err(|e| BenchError::io(&trace_path, e))?;
            let energy_at_input = evaluate_energy(&item.image, spec, schedule, backend)?.total;
            let (prediction_input, prediction_canonical) = if prompts.is_empty() {
                (None, None)
            } else {
                (
                    Some(predict(&item.image, prompts, backend)?.0),
                    Some(predict(&result.canonical, prompts, backend)?.0),
                )
            };
            Ok((
                CanonRecord {
                    id: item.id.clone(),
                    best_point: result.best_point,
                    energy_at_input,
                    energy_at_canonical: result.trace.best_value,
                    evaluations: result.trace.len(),
                    prediction_input,
                    prediction_canonical,
                    canonical_png: png_name,
                    trace_json: trace_name,
                    cost: result.cost,
                },
                result.spec_digest,
            ))
        })
        .collect();
    let (done, skipped) = split(items, outcomes);
    let mut cost = CostCounter::default();
    for (r, _) in &done {
        cost += r.cost;
    }
    let report = CanonReport {
        images: done.len(),
        mean_energy_drop: if done.is_empty() {
            0.0
        } else {
            done.iter().map(|(r, _)| r.energy_at_input - r.energy_at_canonical).sum::<f64>() / done.len() as f64
        },
        cost,
        spec_digest: done.last().map(|(_, d)| d.clone()),
    };
    Ok((report, done.into_iter().map(|(r, _)| r).collect(), skipped))
}

pub fn canon_table(report: &CanonReport) -> Table {
    let mut t = Table::new(&["images", "mean_energy_drop", "n_transform", "n_logits_calls", "n_denoise_calls"]);
    t.push(vec![
        report.images.to_string(),
        report.mean_energy_drop.to_string(),
        report.cost.n_transform.to_string(),
        report.cost.n_logits_calls.to_string(),
        report.cost.n_denoise_calls.to_string(),
    ]);
    t
}

// ---- energy-eval ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub id: String,
    pub label: usize,
    pub energy: EnergyBreakdown,
    pub prediction: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyEvalReport {
    pub images: usize,
    pub accuracy: Option<f64>,
    pub mean_total: Option<f64>,
    pub mean_classifier: Option<f64>,
    pub mean_diffusion: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn energy_eval(
    items: &[LabeledImage],
    spec: &EnergySpec,
    schedule: &NoiseSchedule,
    backend: &dyn EnergyBackend,
    prompts: &[String],
) -> Result<(EnergyEvalReport, Vec<EnergyRecord>, Vec<Skipped>)> {
    let outcomes: Vec<Result<EnergyRecord>> = items
        .par_iter()
        .map(|item| {
            Ok(EnergyRecord {
                id: item.id.clone(),
                label: item.label,
                energy: evaluate_energy(&item.image, spec, schedule, backend)?,
                prediction: predict(&item.image, prompts, backend)?.0,
            })
        })
        .collect();
    let (records, skipped) = split(items, outcomes);
    let report = EnergyEvalReport {
        images: records.len(),
        accuracy: fraction(records.iter().filter(|r| r.prediction == r.label).count(), records.len()),
        mean_total: mean(records.iter().map(|r| r.energy.total)),
        mean_classifier: mean(records.iter().filter_map(|r| r.energy.classifier)),
        mean_diffusion: mean(records.iter().filter_map(|r| r.energy.diffusion)),
    };
    Ok((report, records, skipped))
}

pub fn energy_table(report: &EnergyEvalReport) -> Table {
    let mut t = Table::new(&["images", "accuracy", "mean_total", "mean_classifier", "mean_diffusion"]);
    t.push(vec![
        report.images.to_string(),
        cell(report.accuracy),
        cell(report.mean_total),
        cell(report.mean_classifier),
        cell(report.mean_diffusion),
    ]);
    t
}

// ---- gate-eval ----

/// Rotations presented to the gate; only 0 degrees counts as upright.
pub const GATE_ROTATIONS: [f64; 4] = [0.0, 90.0, 180.0, 270.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub id: String,
    pub rotation_deg: f64,
    pub energies: GateEnergies,
    pub margin: f64,
    pub fired: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRow {
    pub rotation_deg: f64,
    pub n: usize,
    pub fire_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateEvalReport {
    pub threshold: f64,
    pub samples: usize,
    /// Fraction of samples where "fired" equals "is upright".
    pub accuracy: Option<f64>,
    /// Fire rate on upright inputs.
    pub true_positive_rate: Option<f64>,
    /// Non-fire rate on rotated inputs.
    pub true_negative_rate: Option<f64>,
    pub per_rotation: Vec<GateRow>,
    /// Logits calls per sample (the gate scores three images).
    pub logits_calls_per_sample: usize,
}

pub fn gate_eval(
    items: &[LabeledImage],
    spec: &EnergySpec,
    schedule: &NoiseSchedule,
    backend: &dyn EnergyBackend,
    threshold: f64,
) -> Result<(GateEvalReport, Vec<GateRecord>, Vec<Skipped>)> {
    let gate = gate_spec(spec);
    let outcomes: Vec<Result<Vec<GateRecord>>> = items
        .par_iter()
        .map(|item| {
            GATE_ROTATIONS
                .iter()
                .map(|&deg| {
                    let view = rotate(&item.image, deg, FILL)?;
                    let energies = gate_energies(&view, &gate, schedule, backend)?;
                    let margin = energies.margin();
                    Ok(GateRecord {
                        id: item.id.clone(),
                        rotation_deg: deg,
                        energies,
                        margin,
                        fired: margin >= threshold,
                    })
                })
                .collect()
        })
        .collect();
    let (nested, skipped) = split(items, outcomes);
    let records: Vec<GateRecord> = nested.into_iter().flatten().collect();
    let upright: Vec<_> = records.iter().filter(|r| r.rotation_deg == 0.0).collect();
    let rotated: Vec<_> = records.iter().filter(|r| r.rotation_deg != 0.0).collect();
    let correct = records.iter().filter(|r| r.fired == (r.rotation_deg == 0.0)).count();
    let per_rotation = GATE_ROTATIONS
        .iter()
        .map(|&deg| {
            let rows: Vec<_> = records.iter().filter(|r| r.rotation_deg == deg).collect();
            GateRow {
                rotation_deg: deg,
                n: rows.len(),
                fire_rate: fraction(rows.iter().filter(|r| r.fired).count(), rows.len()),
            }
        })
        .collect();
    let report = GateEvalReport {
        threshold,
        samples: records.len(),
        accuracy: fraction(correct, records.len()),
        true_positive_rate: fraction(upright.iter().filter(|r| r.fired).count(), upright.len()),
        true_negative_rate: fraction(rotated.iter().filter(|r| !r.fired).count(), rotated.len()),
        per_rotation,
        logits_calls_per_sample: if gate.uses_classifier() { 3 } else { 0 },
    };
    Ok((report, records, skipped))
}

pub fn gate_table(report: &GateEvalReport) -> Table {
    let mut t = Table::new(&["rotation_deg", "n", "fire_rate"]);
    for row in &report.per_rotation {
        t.push(vec![row.rotation_deg.to_string(), row.n.to_string(), cell(row.fire_rate)]);
    }
    t
}
