//! C_n rotation benchmark: pose recovery, downstream accuracy on the
//! canonicalized image, and a test-time-augmentation baseline.

use canon_core::image::LabeledImage;
use canon_core::pipeline::{canonicalize, predict};
use canon_core::transforms::{enumerate_cn, rotate};
use canon_core::{CostCounter, EnergyBackend, EnergySpec, Logits, NoiseSchedule, SearchConfig, TransformPoint};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::corruption_seed;
use crate::dataset::Skipped;
use crate::error::{BenchError, Result};
use crate::report::{cell, Table};

pub const FILL: [f64; 3] = [0.0; 3];

#[derive(Clone, Debug)]
pub struct RotationSettings {
    pub n: usize,
    /// Views averaged by the TTA baseline; 0 disables it.
    pub tta_views: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleRow {
    pub angle: f64,
    pub n: usize,
    pub baseline_acc: f64,
    pub canon_acc: f64,
    pub tta_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationReport {
    pub group_order: usize,
    pub pairs: usize,
    pub per_angle: Vec<AngleRow>,
    /// Fraction of (image, rotation) pairs whose recovered rotation index is the applied one.
    pub pose_accuracy: f64,
    /// Mean circular distance between recovered and applied angle.
    pub pose_error_deg: f64,
    pub baseline_acc: f64,
    pub canon_acc: f64,
    pub tta_acc: Option<f64>,
    pub tta_views: usize,
    pub evaluations_per_pair: usize,
    pub cost: CostCounter,
    pub tta_logits_calls: u64,
    pub spec_digest: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationRecord {
    pub id: String,
    pub label: usize,
    pub applied_index: usize,
    pub applied_deg: f64,
    pub recovered_index: usize,
    pub recovered_deg: f64,
    pub pose_error_deg: f64,
    pub canonical_point: TransformPoint,
    pub energy_at_canonical: f64,
    pub baseline_pred: usize,
    pub canon_pred: usize,
    pub tta_pred: Option<usize>,
    pub cost: CostCounter,
}

/// `min(|a - b|, 360 - |a - b|)` after reducing the difference mod 360.
pub fn circular_error_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

fn angle_of(k: usize, n: usize) -> f64 {
    360.0 * k as f64 / n as f64
}

/// Average logits over `views` distinct random C_n rotations of `image`.
fn tta_predict(
    image: &canon_core::Image,
    id: &str,
    k: usize,
    settings: &RotationSettings,
    prompts: &[String],
    backend: &dyn EnergyBackend,
) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(corruption_seed(settings.seed, "tta", &format!("{id}#{k}")));
    let views = sample(&mut rng, settings.n, settings.tta_views);
    let mut sum = vec![0.0; prompts.len()];
    for j in views.iter() {
        let view = rotate(image, angle_of(j, settings.n), FILL)?;
        let l = backend.logits(&view, prompts)?;
        for (s, v) in sum.iter_mut().zip(l.values()) {
            *s += v;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / settings.tta_views as f64).collect();
    Ok(Logits::new(mean)?.argmax())
}

fn run_image(
    item: &LabeledImage,
    settings: &RotationSettings,
    spec: &EnergySpec,
    schedule: &NoiseSchedule,
    backend: &dyn EnergyBackend,
    prompts: &[String],
) -> Result<(Vec<RotationRecord>, String)> {
    let n = settings.n;
    let domain = enumerate_cn(n)?;
    let search = SearchConfig::exhaustive();
    let mut records = Vec::with_capacity(n);
    let mut digest = String::new();
    for k in 0..n {
        let applied = angle_of(k, n);
        let corrupted = rotate(&item.image, applied, FILL)?;
        let result = canonicalize(&corrupted, &domain, spec, schedule, backend, &search)?;
        digest = result.spec_digest.clone();
        let chosen = result.trace.best_index;
        // Undoing a rotation by index j means the input was rotated by index n - j.
        let recovered_index = (n - chosen) % n;
        let recovered_deg = angle_of(recovered_index, n);
        let (baseline_pred, _) = predict(&corrupted, prompts, backend)?;
        let (canon_pred, _) = predict(&result.canonical, prompts, backend)?;
        let tta_pred = if settings.tta_views > 0 {
            Some(tta_predict(&corrupted, &item.id, k, settings, prompts, backend)?)
        } else {
            None
        };
        records.push(RotationRecord {
            id: item.id.clone(),
            label: item.label,
            applied_index: k,
            applied_deg: applied,
            recovered_index,
            recovered_deg,
            pose_error_deg: circular_error_deg(recovered_deg, applied),
            canonical_point: result.best_point,
            energy_at_canonical: result.trace.best_value,
            baseline_pred,
            canon_pred,
            tta_pred,
            cost: result.cost,
        });
    }
    Ok((records, digest))
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Rotate every image by every element of C_n, canonicalize over C_n, and
/// score pose recovery and downstream accuracy. Per-image failures are
/// returned as skipped entries.
pub fn bench_rotation(
    items: &[LabeledImage],
    settings: &RotationSettings,
    spec: &EnergySpec,
    schedule: &NoiseSchedule,
    backend: &dyn EnergyBackend,
    prompts: &[String],
) -> Result<(RotationReport, Vec<RotationRecord>, Vec<Skipped>)> {
    if settings.n == 0 {
        return Err(BenchError::Config("rotation group order n must be >= 1".into()));
    }
    if settings.tta_views > settings.n {
        return Err(BenchError::Config(format!(
            "tta_views {} exceeds the group order {}",
            settings.tta_views, settings.n
        )));
    }
    let outcomes: Vec<_> = items
        .par_iter()
        .map(|item| run_image(item, settings, spec, schedule, backend, prompts))
        .collect();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut digest = None;
    for (item, outcome) in items.iter().zip(outcomes) {
        match outcome {
            Ok((r, d)) => {
                records.extend(r);
                digest = Some(d);
            }
            Err(e) => skipped.push(Skipped {
                id: item.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok((summarize(settings, &records, digest), records, skipped))
}

fn summarize(settings: &RotationSettings, records: &[RotationRecord], spec_digest: Option<String>) -> RotationReport {
    let n = settings.n;
    let tta = settings.tta_views > 0;
    let per_angle = (0..n)
        .map(|k| {
            let rows: Vec<_> = records.iter().filter(|r| r.applied_index == k).collect();
            let count = rows.len();
            AngleRow {
                angle: angle_of(k, n),
                n: count,
                baseline_acc: fraction(rows.iter().filter(|r| r.baseline_pred == r.label).count(), count),
                canon_acc: fraction(rows.iter().filter(|r| r.canon_pred == r.label).count(), count),
                tta_acc: tta.then(|| fraction(rows.iter().filter(|r| r.tta_pred == Some(r.label)).count(), count)),
            }
        })
        .collect();
    let total = records.len();
    let mut cost = CostCounter::default();
    for r in records {
        cost += r.cost;
    }
    RotationReport {
        group_order: n,
        pairs: total,
        per_angle,
        pose_accuracy: fraction(records.iter().filter(|r| r.recovered_index == r.applied_index).count(), total),
        pose_error_deg: if total == 0 {
            0.0
        } else {
            records.iter().map(|r| r.pose_error_deg).sum::<f64>() / total as f64
        },
        baseline_acc: fraction(records.iter().filter(|r| r.baseline_pred == r.label).count(), total),
        canon_acc: fraction(records.iter().filter(|r| r.canon_pred == r.label).count(), total),
        tta_acc: tta.then(|| fraction(records.iter().filter(|r| r.tta_pred == Some(r.label)).count(), total)),
        tta_views: settings.tta_views,
        evaluations_per_pair: n,
        cost,
        tta_logits_calls: (total * settings.tta_views) as u64,
        spec_digest,
    }
}

pub fn rotation_table(report: &RotationReport) -> Table {
    let mut t = Table::new(&["angle", "baseline_acc", "canon_acc", "tta_acc", "n"]);
    for row in &report.per_angle {
        t.push(vec![
            row.angle.to_string(),
            row.baseline_acc.to_string(),
            row.canon_acc.to_string(),
            cell(row.tta_acc),
            row.n.to_string(),
        ]);
    }
    t.push(vec![
        "all".into(),
        report.baseline_acc.to_string(),
        report.canon_acc.to_string(),
        cell(report.tta_acc),
        report.pairs.to_string(),
    ]);
    t
}
