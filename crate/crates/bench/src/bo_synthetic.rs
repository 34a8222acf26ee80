//! Bayesian optimization on synthetic objectives with known minima,
//! scored against exhaustive or random-search oracles.

use std::fmt;
use std::str::FromStr;

use canon_core::optimize::bo_minimize;
use canon_core::{BoConfig, TransformDomain, TransformKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::corruption_seed;
use crate::config::OptimizerSection;
use crate::error::{BenchError, Result};
use crate::report::Table;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// `|t - c|^2` on `[-1, 1]^2`, random center; color budget.
    #[serde(rename = "bowl-2d")]
    Bowl2d,
    /// `|t + a|` on `[-2, 2]`, random `a`; contrast budget.
    #[serde(rename = "contrast-1d")]
    Contrast1d,
    /// `|t - c|^2` on `[-1, 1]^6`; 450 random points + 150 iterations.
    #[serde(rename = "bowl-6d")]
    Bowl6d,
    /// Deep basin at `c`, basin 0.3 higher at `-c`; color budget.
    #[serde(rename = "two-basin-2d")]
    TwoBasin2d,
}

impl Objective {
    pub const ALL: [Objective; 4] = [
        Objective::Bowl2d,
        Objective::Contrast1d,
        Objective::Bowl6d,
        Objective::TwoBasin2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Bowl2d => "bowl-2d",
            Objective::Contrast1d => "contrast-1d",
            Objective::Bowl6d => "bowl-6d",
            Objective::TwoBasin2d => "two-basin-2d",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Objective::Contrast1d => 1,
            Objective::Bowl6d => 6,
            Objective::Bowl2d | Objective::TwoBasin2d => 2,
        }
    }

    /// Evaluation schedule before config overrides.
    pub fn schedule(self, seed: u64) -> BoConfig {
        match self {
            Objective::Bowl2d | Objective::TwoBasin2d => BoConfig::color_schedule(seed),
            Objective::Contrast1d => BoConfig::contrast_schedule(seed),
            Objective::Bowl6d => BoConfig {
                grid_per_dim: Vec::new(),
                n_random: 450,
                n_iters: 150,
                seed,
                candidate_count: 256,
                ..BoConfig::default()
            },
        }
    }

    /// Success rate a healthy optimizer is expected to reach.
    pub fn target_rate(self) -> f64 {
        match self {
            Objective::Bowl2d | Objective::Contrast1d => 0.95,
            Objective::Bowl6d => 0.90,
            Objective::TwoBasin2d => 0.80,
        }
    }

    pub fn tolerance(self) -> f64 {
        match self {
            Objective::Bowl2d => 1e-2,
            Objective::Contrast1d | Objective::Bowl6d | Objective::TwoBasin2d => 0.05,
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| format!("unknown objective {s:?}"))
    }
}

/// One randomized instance of an objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub objective: Objective,
    pub params: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Instance {
    pub fn draw(objective: Objective, rng: &mut impl Rng) -> Self {
        let params = match objective {
            Objective::Bowl2d | Objective::Bowl6d => (0..objective.dim()).map(|_| rng.random_range(-0.5..0.5)).collect(),
            Objective::Contrast1d => vec![rng.random_range(-2.0..2.0)],
            Objective::TwoBasin2d => {
                let r = rng.random_range(0.4..0.7);
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                vec![r * phi.cos(), r * phi.sin()]
            }
        };
        Self { objective, params }
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.objective.dim();
        match self.objective {
            Objective::Contrast1d => (vec![-2.0], vec![2.0]),
            _ => (vec![-1.0; d], vec![1.0; d]),
        }
    }

    pub fn eval(&self, t: &[f64]) -> f64 {
        match self.objective {
            Objective::Bowl2d | Objective::Bowl6d => sq_dist(t, &self.params),
            Objective::Contrast1d => (t[0] + self.params[0]).abs(),
            Objective::TwoBasin2d => {
                let c = &self.params;
                let mirror = [-c[0], -c[1]];
                sq_dist(t, c).min(sq_dist(t, &mirror) + 0.3)
            }
        }
    }

    /// Oracle minimum `(point, value)`: a 1000-point grid in 1D, a 200x200
    /// grid in 2D, and the best of 10^6 uniform samples in 6D.
    pub fn oracle(&self, seed: u64) -> (Vec<f64>, f64) {
        let (lo, hi) = self.bounds();
        let mut best = (Vec::new(), f64::INFINITY);
        let mut consider = |p: Vec<f64>| {
            let v = self.eval(&p);
            if v < best.1 {
                best = (p, v);
            }
        };
        match self.objective.dim() {
            1 => {
                for i in 0..1000 {
                    consider(vec![lo[0] + (hi[0] - lo[0]) * i as f64 / 999.0]);
                }
            }
            2 => {
                for i in 0..200 {
                    for j in 0..200 {
                        consider(vec![
                            lo[0] + (hi[0] - lo[0]) * i as f64 / 199.0,
                            lo[1] + (hi[1] - lo[1]) * j as f64 / 199.0,
                        ]);
                    }
                }
            }
            d => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..1_000_000 {
                    consider((0..d).map(|k| rng.random_range(lo[k]..hi[k])).collect());
                }
            }
        }
        best
    }

    /// Whether a run that found `(point, value)` counts as a success, with
    /// the gap it is judged on.
    pub fn judge(&self, point: &[f64], value: f64, oracle: &(Vec<f64>, f64)) -> (bool, f64) {
        let tol = self.objective.tolerance();
        match self.objective {
            Objective::Contrast1d => {
                let gap = (point[0] - oracle.0[0]).abs();
                (gap <= tol, gap)
            }
            // Inside the deep basin and converged there.
            Objective::TwoBasin2d => {
                let gap = value - oracle.1;
                (sq_dist(point, &self.params) < 0.15 && gap <= tol, gap)
            }
            Objective::Bowl2d | Objective::Bowl6d => {
                let gap = value - oracle.1;
                (gap <= tol, gap)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub objective: Objective,
    pub trial: usize,
    pub params: Vec<f64>,
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub oracle_value: f64,
    pub gap: f64,
    pub success: bool,
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSummary {
    pub objective: Objective,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub target_rate: f64,
    pub meets_target: bool,
    pub tolerance: f64,
    pub mean_gap: f64,
    pub budget: usize,
    pub evaluations_per_trial: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoSyntheticReport {
    pub objectives: Vec<ObjectiveSummary>,
}

pub fn run_trial(objective: Objective, trial: usize, global_seed: u64, overrides: &OptimizerSection) -> Result<TrialRecord> {
    let key = format!("{}#{trial}", objective.name());
    let mut rng = ChaCha8Rng::seed_from_u64(corruption_seed(global_seed, "bo-instance", &key));
    let instance = Instance::draw(objective, &mut rng);
    let bo_seed = corruption_seed(overrides.seed.unwrap_or(global_seed), "bo-run", &key);
    let mut config = overrides.resolve(objective.schedule(bo_seed), bo_seed);
    config.seed = bo_seed;
    let (lo, hi) = instance.bounds();
    let domain = TransformDomain::boxed(TransformKind::Synthetic { dim: objective.dim() }, lo, hi)?;
    let trace = bo_minimize(&domain, |t| Ok(instance.eval(&t.0)), &config)?;
    let oracle = instance.oracle(corruption_seed(global_seed, "bo-oracle", &key));
    let (success, gap) = instance.judge(&trace.best_point.0, trace.best_value, &oracle);
    Ok(TrialRecord {
        objective,
        trial,
        params: instance.params,
        best_point: trace.best_point.0.clone(),
        best_value: trace.best_value,
        oracle_value: oracle.1,
        gap,
        success,
        evaluations: trace.len(),
    })
}

pub fn default_objectives() -> Vec<Objective> {
    vec![Objective::Bowl2d, Objective::Contrast1d, Objective::TwoBasin2d]
}

pub fn parse_objectives(names: &[String]) -> Result<Vec<Objective>> {
    if names.is_empty() {
        return Ok(default_objectives());
    }
    names.iter().map(|n| n.parse().map_err(BenchError::Config)).collect()
}

pub fn bench_bo_synthetic(
    objectives: &[Objective],
    trials: usize,
    global_seed: u64,
    overrides: &OptimizerSection,
) -> Result<(BoSyntheticReport, Vec<TrialRecord>)> {
    let jobs: Vec<(Objective, usize)> = objectives.iter().flat_map(|&o| (0..trials).map(move |t| (o, t))).collect();
    let records = jobs
        .par_iter()
        .map(|&(o, t)| run_trial(o, t, global_seed, overrides))
        .collect::<Result<Vec<_>>>()?;
    let summaries = objectives
        .iter()
        .map(|&o| {
            let rows: Vec<_> = records.iter().filter(|r| r.objective == o).collect();
            let successes = rows.iter().filter(|r| r.success).count();
            let rate = if rows.is_empty() { 0.0 } else { successes as f64 / rows.len() as f64 };
            let budget = overrides.resolve(o.schedule(0), 0).budget();
            ObjectiveSummary {
                objective: o,
                trials: rows.len(),
                successes,
                success_rate: rate,
                target_rate: o.target_rate(),
                meets_target: rate >= o.target_rate(),
                tolerance: o.tolerance(),
                mean_gap: if rows.is_empty() {
                    0.0
                } else {
                    rows.iter().map(|r| r.gap).sum::<f64>() / rows.len() as f64
                },
                budget,
                evaluations_per_trial: rows.iter().map(|r| r.evaluations).max().unwrap_or(0),
            }
        })
        .collect();
    Ok((BoSyntheticReport { objectives: summaries }, records))
}

pub fn bo_table(report: &BoSyntheticReport) -> Table {
    let mut t = Table::new(&[
        "function",
        "trials",
        "successes",
        "success_rate",
        "target_rate",
        "mean_gap",
        "evaluations",
    ]);
    for s in &report.objectives {
        t.push(vec![
            s.objective.name().into(),
            s.trials.to_string(),
            s.successes.to_string(),
            s.success_rate.to_string(),
            s.target_rate.to_string(),
            s.mean_gap.to_string(),
            s.evaluations_per_trial.to_string(),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracles_find_known_minima() {
        let bowl = Instance {
            objective: Objective::Bowl2d,
            params: vec![0.3, -0.2],
        };
        let (p, v) = bowl.oracle(0);
        assert!(v < 1e-4 && sq_dist(&p, &[0.3, -0.2]) < 1e-4);
        let contrast = Instance {
            objective: Objective::Contrast1d,
            params: vec![0.5],
        };
        let (p, _) = contrast.oracle(0);
        assert!((p[0] + 0.5).abs() <= 2.0 / 999.0);
        let basin = Instance {
            objective: Objective::TwoBasin2d,
            params: vec![0.5, 0.0],
        };
        assert!(basin.eval(&[-0.5, 0.0]) - 0.3 < 1e-12);
        let (p, v) = basin.oracle(0);
        assert!(p[0] > 0.0 && v < 1e-3);
    }

    #[test]
    fn budgets_per_objective() {
        let none = OptimizerSection::default();
        assert_eq!(Objective::Bowl2d.schedule(0).budget(), 35);
        assert_eq!(Objective::Contrast1d.schedule(0).budget(), 12);
        assert_eq!(Objective::Bowl6d.schedule(0).budget(), 600);
        let r = run_trial(Objective::Contrast1d, 0, 1, &none).unwrap();
        assert_eq!(r.evaluations, 12);
    }

    #[test]
    fn trials_are_reproducible() {
        let none = OptimizerSection::default();
        let a = run_trial(Objective::Bowl2d, 3, 9, &none).unwrap();
        let b = run_trial(Objective::Bowl2d, 3, 9, &none).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.evaluations, 35);
    }

    #[test]
    fn objective_names_parse() {
        assert_eq!(
            parse_objectives(&["bowl-6d".into()]).unwrap(),
            vec![Objective::Bowl6d]
        );
        assert!(parse_objectives(&["nope".into()]).is_err());
        assert_eq!(parse_objectives(&[]).unwrap().len(), 3);
    }
}
