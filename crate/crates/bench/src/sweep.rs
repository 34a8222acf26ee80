//! Color and contrast sweeps: corrupt each image with a seeded random
//! illuminant or gamma, canonicalize over a box, and compare downstream
//! accuracy binned by corruption strength.

use canon_core::image::LabeledImage;
use canon_core::pipeline::{canonicalize, predict};
use canon_core::transforms::{apply_color, apply_gamma};
use canon_core::{
    CostCounter, EnergyBackend, EnergySpec, Image, NoiseSchedule, SearchConfig, TransformDomain, TransformPoint,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::corruption_seed;
use crate::dataset::Skipped;
use crate::error::{BenchError, Result};
use crate::report::{cell, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepFamily {
    Color,
    Contrast,
}

impl SweepFamily {
    fn purpose(self) -> &'static str {
        match self {
            SweepFamily::Color => "color",
            SweepFamily::Contrast => "contrast",
        }
    }

    fn parameter(self) -> &'static str {
        match self {
            SweepFamily::Color => "log_chroma_norm",
            SweepFamily::Contrast => "abs_log_gamma",
        }
    }

    fn corrupt(self, image: &Image, p: &[f64]) -> Image {
        match self {
            SweepFamily::Color => apply_color(image, p[0], p[1]),
            SweepFamily::Contrast => apply_gamma(image, p[0]),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepSettings {
    pub family: SweepFamily,
    pub corruption_lower: Vec<f64>,
    pub corruption_upper: Vec<f64>,
    pub bins: usize,
    pub seed: u64,
    pub search: SearchConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub baseline_acc: Option<f64>,
    pub canon_acc: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub min: usize,
    pub max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub family: SweepFamily,
    pub parameter: String,
    pub corruption_lower: Vec<f64>,
    pub corruption_upper: Vec<f64>,
    pub images: usize,
    pub bins: Vec<BinRow>,
    pub baseline_acc: f64,
    pub canon_acc: f64,
    /// `canon_acc - baseline_acc`.
    pub mean_gain: f64,
    /// Mean distance between the chosen point and the exact inverse of the corruption.
    pub mean_recovery_error: f64,
    pub evaluations_per_image: Option<Span>,
    pub budget: usize,
    pub cost: CostCounter,
    pub spec_digest: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub id: String,
    pub label: usize,
    pub applied: Vec<f64>,
    pub magnitude: f64,
    pub recovered: TransformPoint,
    pub recovery_error: f64,
    pub energy_at_canonical: f64,
    pub baseline_pred: usize,
    pub canon_pred: usize,
    pub evaluations: usize,
    pub cost: CostCounter,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Corruption drawn uniformly from the configured box for image `id`.
pub fn corruption_for(settings: &SweepSettings, id: &str) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(corruption_seed(settings.seed, settings.family.purpose(), id));
    settings
        .corruption_lower
        .iter()
        .zip(&settings.corruption_upper)
        .map(|(lo, hi)| if lo == hi { *lo } else { rng.random_range(*lo..*hi) })
        .collect()
}

/// Largest corruption magnitude the box can produce.
fn max_magnitude(settings: &SweepSettings) -> f64 {
    let corner: Vec<f64> = settings
        .corruption_lower
        .iter()
        .zip(&settings.corruption_upper)
        .map(|(lo, hi)| lo.abs().max(hi.abs()))
        .collect();
    norm(&corner)
}

fn run_image(
    item: &LabeledImage,
    settings: &SweepSettings,
    domain: &TransformDomain,
    spec: &EnergySpec,
    schedule: &NoiseSchedule,
    backend: &dyn EnergyBackend,
    prompts: &[String],
) -> Result<(SweepRecord, String)> {
    let applied = corruption_for(settings, &item.id);
    let corrupted = settings.family.corrupt(&item.image, &applied);
    let result = canonicalize(&corrupted, domain, spec, schedule, backend, &settings.search)?;
    let (baseline_pred, _) = predict(&corrupted, prompts, backend)?;
    let (canon_pred, _) = predict(&result.canonical, prompts, backend)?;
    // Both families compose additively in parameter space, so the exact
    // inverse of `applied` is `-applied`.
    let residual: Vec<f64> = result.best_point.0.iter().zip(&applied).map(|(r, a)| r + a).collect();
    Ok((
        SweepRecord {
            id: item.id.clone(),
            label: item.label,
            magnitude: norm(&applied),
            applied,
            recovery_error: norm(&residual),
            energy_at_canonical: result.trace.best_value,
            recovered: result.best_point,
            baseline_pred,
            canon_pred,
            evaluations: result.trace.len(),
            cost: result.cost,
        },
        result.spec_digest,
    ))
}

pub fn bench_sweep(
    items: &[LabeledImage],
    settings: &SweepSettings,
    domain: &TransformDomain,
    spec: &EnergySpec,
    schedule: &NoiseSchedule,
    backend: &dyn EnergyBackend,
    prompts: &[String],
) -> Result<(SweepReport, Vec<SweepRecord>, Vec<Skipped>)> {
    let dim = match settings.family {
        SweepFamily::Color => 2,
        SweepFamily::Contrast => 1,
    };
    if settings.corruption_lower.len() != dim || settings.corruption_upper.len() != dim {
        return Err(BenchError::Config(format!("corruption range must have {dim} entries")));
    }
    if settings.corruption_lower.iter().zip(&settings.corruption_upper).any(|(l, h)| l.is_nan() || h.is_nan() || l > h) {
        return Err(BenchError::Config("corruption_lower must not exceed corruption_upper".into()));
    }
    if settings.bins == 0 {
        return Err(BenchError::Config("bins must be >= 1".into()));
    }
    if domain.dim() != dim {
        return Err(BenchError::Config(format!("search domain must be {dim}-dimensional")));
    }
    let outcomes: Vec<_> = items
        .par_iter()
        .map(|item| run_image(item, settings, domain, spec, schedule, backend, prompts))
        .collect();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut digest = None;
    for (item, outcome) in items.iter().zip(outcomes) {
        match outcome {
            Ok((r, d)) => {
                records.push(r);
                digest = Some(d);
            }
            Err(e) => skipped.push(Skipped {
                id: item.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    let budget = match domain.points() {
        Some(points) => points.len(),
        None => settings.search.bo.budget(),
    };
    Ok((summarize(settings, &records, budget, digest), records, skipped))
}

fn accuracy(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

fn summarize(settings: &SweepSettings, records: &[SweepRecord], budget: usize, spec_digest: Option<String>) -> SweepReport {
    let top = max_magnitude(settings);
    let width = if top > 0.0 { top / settings.bins as f64 } else { 0.0 };
    let bin_of = |m: f64| -> usize {
        if width == 0.0 {
            0
        } else {
            ((m / width) as usize).min(settings.bins - 1)
        }
    };
    let bins = (0..settings.bins)
        .map(|b| {
            let rows: Vec<_> = records.iter().filter(|r| bin_of(r.magnitude) == b).collect();
            BinRow {
                lo: width * b as f64,
                hi: if b + 1 == settings.bins { top } else { width * (b + 1) as f64 },
                n: rows.len(),
                baseline_acc: accuracy(rows.iter().filter(|r| r.baseline_pred == r.label).count(), rows.len()),
                canon_acc: accuracy(rows.iter().filter(|r| r.canon_pred == r.label).count(), rows.len()),
            }
        })
        .collect();
    let total = records.len();
    let baseline_acc = accuracy(records.iter().filter(|r| r.baseline_pred == r.label).count(), total).unwrap_or(0.0);
    let canon_acc = accuracy(records.iter().filter(|r| r.canon_pred == r.label).count(), total).unwrap_or(0.0);
    let mut cost = CostCounter::default();
    for r in records {
        cost += r.cost;
    }
    let evaluations_per_image = records.iter().map(|r| r.evaluations).fold(None, |acc: Option<Span>, e| {
        Some(match acc {
            None => Span { min: e, max: e },
            Some(s) => Span {
                min: s.min.min(e),
                max: s.max.max(e),
            },
        })
    });
    SweepReport {
        family: settings.family,
        parameter: settings.family.parameter().into(),
        corruption_lower: settings.corruption_lower.clone(),
        corruption_upper: settings.corruption_upper.clone(),
        images: total,
        bins,
        baseline_acc,
        canon_acc,
        mean_gain: canon_acc - baseline_acc,
        mean_recovery_error: if total == 0 {
            0.0
        } else {
            records.iter().map(|r| r.recovery_error).sum::<f64>() / total as f64
        },
        evaluations_per_image,
        budget,
        cost,
        spec_digest,
    }
}

pub fn sweep_table(report: &SweepReport) -> Table {
    let mut t = Table::new(&["bin_lo", "bin_hi", "n", "baseline_acc", "canon_acc"]);
    for b in &report.bins {
        t.push(vec![
            b.lo.to_string(),
            b.hi.to_string(),
            b.n.to_string(),
            cell(b.baseline_acc),
            cell(b.canon_acc),
        ]);
    }
    t.push(vec![
        "all".into(),
        "all".into(),
        report.images.to_string(),
        report.baseline_acc.to_string(),
        report.canon_acc.to_string(),
    ]);
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use canon_core::energy::make_linear_schedule;
    use canon_core::synthetic::{banded_scene, ChromaBackend, GammaProbeBackend};
    use canon_core::{BoConfig, TransformKind};

    fn items(count: usize, bands: usize) -> Vec<LabeledImage> {
        (0..count)
            .map(|i| LabeledImage {
                id: format!("img{i}"),
                label: i % bands,
                image: banded_scene(16, i % bands, bands, i as u64),
            })
            .collect()
    }

    fn prompts(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("band {i}")).collect()
    }

    fn color_settings(lo: Vec<f64>, hi: Vec<f64>) -> SweepSettings {
        SweepSettings {
            family: SweepFamily::Color,
            corruption_lower: lo,
            corruption_upper: hi,
            bins: 4,
            seed: 1,
            search: SearchConfig::bayesian(BoConfig {
                candidate_count: 256,
                ..BoConfig::color_schedule(1)
            }),
        }
    }

    #[test]
    fn corruption_is_keyed_by_id() {
        let s = color_settings(vec![-1.0, -1.0], vec![1.0, 1.0]);
        let a = corruption_for(&s, "x");
        assert_eq!(a, corruption_for(&s, "x"));
        assert_ne!(a, corruption_for(&s, "y"));
        assert!(a.iter().all(|v| (-1.0..1.0).contains(v)));
    }

    #[test]
    fn color_sweep_spends_the_color_budget_and_gains() {
        let schedule = make_linear_schedule(10, 0.01, 0.02).unwrap();
        let spec = EnergySpec {
            prompts: prompts(4),
            ..Default::default()
        };
        let domain = TransformDomain::boxed(TransformKind::ColorLogChroma, vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let backend = ChromaBackend { bands: 4 };
        let (report, records, skipped) = bench_sweep(
            &items(8, 4),
            &color_settings(vec![-1.0, -1.0], vec![1.0, 1.0]),
            &domain,
            &spec,
            &schedule,
            &backend,
            &prompts(4),
        )
        .unwrap();
        assert!(skipped.is_empty());
        assert!(records.iter().all(|r| r.evaluations == 35));
        assert_eq!(report.evaluations_per_image, Some(Span { min: 35, max: 35 }));
        assert_eq!(report.cost.n_logits_calls, 8 * 35);
        assert_eq!(report.budget, 35);
        assert!(report.canon_acc >= report.baseline_acc);
        assert_eq!(report.bins.iter().map(|b| b.n).sum::<usize>(), 8);
        assert_eq!(report.bins.last().unwrap().hi, 2f64.sqrt());
    }

    #[test]
    fn zero_corruption_keeps_baseline_accuracy() {
        let schedule = make_linear_schedule(10, 0.01, 0.02).unwrap();
        let spec = EnergySpec {
            prompts: prompts(4),
            ..Default::default()
        };
        let domain = TransformDomain::boxed(TransformKind::GammaLog, vec![-2.0], vec![2.0]).unwrap();
        let settings = SweepSettings {
            family: SweepFamily::Contrast,
            corruption_lower: vec![0.0],
            corruption_upper: vec![0.0],
            bins: 2,
            seed: 0,
            search: SearchConfig::bayesian(BoConfig::contrast_schedule(0)),
        };
        let (report, records, _) = bench_sweep(
            &items(6, 4),
            &settings,
            &domain,
            &spec,
            &schedule,
            &GammaProbeBackend { bands: 4 },
            &prompts(4),
        )
        .unwrap();
        assert!(records.iter().all(|r| r.applied == vec![0.0] && r.evaluations == 12));
        assert_eq!(report.baseline_acc, 1.0);
        assert_eq!(report.canon_acc, report.baseline_acc);
    }
}
