//! Black-box minimization over transform domains.
//!
//! Discrete domains are searched exhaustively. Box domains use Bayesian
//! optimization: a Gaussian-process surrogate with an RBF kernel fitted on
//! box-normalized inputs and standardized energies, and an Expected
//! Improvement acquisition maximized over a seeded candidate set.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::transforms::{box_grid, sample_box, BoxBounds, TransformDomain, TransformPoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Grid,
    Random,
    Bo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub point: TransformPoint,
    pub value: f64,
    pub stage: Stage,
}

/// Every evaluation in order, plus the first entry attaining the minimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptTrace {
    pub evaluations: Vec<Evaluation>,
    pub best_index: usize,
    pub best_point: TransformPoint,
    pub best_value: f64,
}

impl OptTrace {
    fn from_evaluations(evaluations: Vec<Evaluation>) -> Result<Self> {
        let first = evaluations
            .first()
            .ok_or_else(|| Error::Argument("optimization produced no evaluations".into()))?;
        let mut best_index = 0;
        let mut best_value = first.value;
        for (i, e) in evaluations.iter().enumerate().skip(1) {
            if e.value < best_value {
                best_index = i;
                best_value = e.value;
            }
        }
        Ok(Self {
            best_point: evaluations[best_index].point.clone(),
            best_index,
            best_value,
            evaluations,
        })
    }

    pub fn len(&self) -> usize {
        self.evaluations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.evaluations.is_empty()
    }

    /// Running minimum of the energy after each evaluation.
    pub fn running_min(&self) -> Vec<f64> {
        self.evaluations
            .iter()
            .scan(f64::INFINITY, |m, e| {
                *m = m.min(e.value);
                Some(*m)
            })
            .collect()
    }
}

fn checked_value(point: &TransformPoint, value: Result<f64>) -> Result<f64> {
    match value {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(Error::Argument(format!("objective returned non-finite value {v}")).at_point(point)),
        Err(e @ Error::Evaluation { .. }) => Err(e),
        Err(e) => Err(e.at_point(point)),
    }
}

fn discrete_points(domain: &TransformDomain) -> Result<&[TransformPoint]> {
    domain
        .points()
        .ok_or_else(|| Error::Argument("exhaustive search requires a discrete domain".into()))
}

/// Evaluate every point of a discrete domain once, in declaration order.
pub fn grid_minimize(
    domain: &TransformDomain,
    mut f: impl FnMut(&TransformPoint) -> Result<f64>,
) -> Result<OptTrace> {
    let points = discrete_points(domain)?;
    let mut evaluations = Vec::with_capacity(points.len());
    for p in points {
        let value = checked_value(p, f(p))?;
        evaluations.push(Evaluation {
            point: p.clone(),
            value,
            stage: Stage::Grid,
        });
    }
    OptTrace::from_evaluations(evaluations)
}

/// [`grid_minimize`] with up to `workers` concurrent evaluations. Results
/// are ordered by candidate index before the argmin, so the trace is the
/// same as the sequential one.
pub fn grid_minimize_parallel(
    domain: &TransformDomain,
    f: impl Fn(&TransformPoint) -> Result<f64> + Sync,
    workers: usize,
) -> Result<OptTrace> {
    if workers <= 1 {
        return grid_minimize(domain, f);
    }
    let points = discrete_points(domain)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Argument(format!("cannot start worker pool: {e}")))?;
    let values: Vec<Result<f64>> = pool.install(|| points.par_iter().map(|p| checked_value(p, f(p))).collect());
    let mut evaluations = Vec::with_capacity(points.len());
    for (p, v) in points.iter().zip(values) {
        evaluations.push(Evaluation {
            point: p.clone(),
            value: v?,
            stage: Stage::Grid,
        });
    }
    OptTrace::from_evaluations(evaluations)
}

/// `signal_var * exp(-|x1 - x2|^2 / (2 lengthscale^2))`.
pub fn rbf_kernel(x1: &[f64], x2: &[f64], lengthscale: f64, signal_var: f64) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            expected: x1.len(),
            actual: x2.len(),
        });
    }
    if lengthscale.is_nan() || lengthscale <= 0.0 {
        return Err(Error::Argument(format!("lengthscale must be positive, got {lengthscale}")));
    }
    Ok(rbf_unchecked(x1, x2, lengthscale, signal_var))
}

#[inline]
fn rbf_unchecked(x1: &[f64], x2: &[f64], lengthscale: f64, signal_var: f64) -> f64 {
    let d2: f64 = x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    signal_var * (-d2 / (2.0 * lengthscale * lengthscale)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpHyper {
    pub lengthscale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl Default for GpHyper {
    fn default() -> Self {
        Self {
            lengthscale: 0.2,
            signal_var: 1.0,
            noise_var: 1e-6,
        }
    }
}

const JITTER_START: f64 = 1e-8;
const JITTER_CAP: f64 = 1e-4;

/// A fitted Gaussian process.
#[derive(Clone, Debug)]
pub struct GpState {
    x: Vec<Vec<f64>>,
    y_standardized: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    hyper: GpHyper,
    jitter: f64,
    /// Lower Cholesky factor of `K + (noise_var + jitter) I`, row-major.
    chol: Vec<f64>,
    /// `(K + noise I)^-1 y_standardized`.
    weights: Vec<f64>,
}

impl GpState {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn hyper(&self) -> GpHyper {
        self.hyper
    }

    /// Jitter added to the diagonal to make the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn standardized_y(&self) -> &[f64] {
        &self.y_standardized
    }

    /// The lower Cholesky factor as a dense row-major `n x n` matrix.
    pub fn chol(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_row_slice(n, n, &self.chol)
    }

    /// `K + (noise_var + jitter) I` on the training inputs.
    pub fn kernel_matrix(&self) -> DMatrix<f64> {
        kernel_matrix(&self.x, self.hyper, self.hyper.noise_var + self.jitter)
    }

    fn forward_solve(&self, rhs: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let row = &self.chol[i * n..i * n + i];
            let s: f64 = row.iter().zip(&rhs[..i]).map(|(l, v)| l * v).sum();
            rhs[i] = (rhs[i] - s) / self.chol[i * n + i];
        }
    }

    /// Posterior mean and variance of the latent function at `x`, on the
    /// original energy scale.
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let mut k: Vec<f64> = self
            .x
            .iter()
            .map(|xi| rbf_unchecked(xi, x, self.hyper.lengthscale, self.hyper.signal_var))
            .collect();
        let mean_std: f64 = k.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
        self.forward_solve(&mut k);
        let var_std = (self.hyper.signal_var - k.iter().map(|v| v * v).sum::<f64>()).max(0.0);
        (
            self.y_mean + self.y_scale * mean_std,
            self.y_scale * self.y_scale * var_std,
        )
    }
}

fn kernel_matrix(x: &[Vec<f64>], hyper: GpHyper, diag: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        let k = rbf_unchecked(&x[i], &x[j], hyper.lengthscale, hyper.signal_var);
        if i == j {
            k + diag
        } else {
            k
        }
    })
}

/// Fit a GP to `(x, y)` with fixed hyperparameters. `y` is standardized
/// internally; the kernel diagonal gets jitter starting at 1e-8 and doubling
/// up to 1e-4 when the factorization fails.
pub fn gp_fit(x: &[Vec<f64>], y: &[f64], hyper: GpHyper) -> Result<GpState> {
    let n = x.len();
    if n == 0 {
        return Err(Error::Argument("GP fit needs at least one observation".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    let d = x[0].len();
    if let Some(bad) = x.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: bad.len(),
        });
    }
    if !(hyper.lengthscale > 0.0 && hyper.signal_var > 0.0 && hyper.noise_var >= 0.0) {
        return Err(Error::Argument(format!("invalid GP hyperparameters {hyper:?}")));
    }

    let y_mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
    let y_scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    let y_standardized: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();

    let mut jitter = 0.0;
    let factor = loop {
        let k = kernel_matrix(x, hyper, hyper.noise_var + jitter);
        if let Some(c) = k.cholesky() {
            break c;
        }
        jitter = if jitter == 0.0 { JITTER_START } else { jitter * 2.0 };
        if jitter > JITTER_CAP {
            return Err(Error::SingularKernel { jitter: jitter / 2.0 });
        }
    };
    let l = factor.l();
    let mut chol = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            chol[i * n + j] = l[(i, j)];
        }
    }
    let weights = factor
        .solve(&nalgebra::DVector::from_column_slice(&y_standardized))
        .iter()
        .copied()
        .collect();
    Ok(GpState {
        x: x.to_vec(),
        y_standardized,
        y_mean,
        y_scale,
        hyper,
        jitter,
        chol,
        weights,
    })
}

pub fn gp_posterior(state: &GpState, x: &[f64]) -> (f64, f64) {
    state.posterior(x)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected Improvement for minimization.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64, xi: f64) -> f64 {
    let gain = best - mu - xi;
    if sigma <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    (gain * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    /// Initial grid counts per dimension; empty for no grid.
    pub grid_per_dim: Vec<usize>,
    pub n_random: usize,
    pub n_iters: usize,
    pub seed: u64,
    pub xi: f64,
    pub candidate_count: usize,
    #[serde(flatten)]
    pub gp: GpHyper,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            grid_per_dim: Vec::new(),
            n_random: 5,
            n_iters: 20,
            seed: 0,
            xi: 0.0,
            candidate_count: 2048,
            gp: GpHyper::default(),
        }
    }
}

impl BoConfig {
    /// 3x3 grid, 6 random points, 20 iterations.
    pub fn color_schedule(seed: u64) -> Self {
        Self {
            grid_per_dim: vec![3, 3],
            n_random: 6,
            n_iters: 20,
            seed,
            ..Self::default()
        }
    }

    /// 3 grid points, 4 random points, 5 iterations.
    pub fn contrast_schedule(seed: u64) -> Self {
        Self {
            grid_per_dim: vec![3],
            n_random: 4,
            n_iters: 5,
            seed,
            ..Self::default()
        }
    }

    pub fn grid_size(&self) -> usize {
        if self.grid_per_dim.is_empty() {
            0
        } else {
            self.grid_per_dim.iter().product()
        }
    }

    /// Total objective evaluations.
    pub fn budget(&self) -> usize {
        self.grid_size() + self.n_random + self.n_iters
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !self.grid_per_dim.is_empty() && self.grid_per_dim.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: self.grid_per_dim.len(),
            });
        }
        if self.grid_per_dim.contains(&0) {
            return Err(Error::Argument("grid counts must be >= 1".into()));
        }
        if self.grid_size() + self.n_random == 0 {
            return Err(Error::Argument("BO needs at least one initial point".into()));
        }
        if self.n_iters > 0 && self.candidate_count == 0 {
            return Err(Error::Argument("candidate_count must be >= 1".into()));
        }
        if self.xi.is_nan() || self.xi < 0.0 {
            return Err(Error::Argument(format!("xi must be >= 0, got {}", self.xi)));
        }
        Ok(())
    }
}

/// Standard deviation, in unit-cube coordinates per lengthscale, of the
/// perturbation applied to midpoint candidates.
const MIDPOINT_SPREAD: f64 = 0.25;

/// Bayesian optimization over a box domain: grid points, then seeded random
/// points, then `n_iters` steps that each refit the GP and evaluate the
/// Expected Improvement maximizer over the candidate set.
pub fn bo_minimize(
    domain: &TransformDomain,
    mut f: impl FnMut(&TransformPoint) -> Result<f64>,
    config: &BoConfig,
) -> Result<OptTrace> {
    let bounds = domain
        .bounds()
        .ok_or_else(|| Error::Argument("Bayesian optimization requires a box domain".into()))?;
    config.validate(bounds.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut initial: Vec<(TransformPoint, Stage)> = Vec::new();
    if !config.grid_per_dim.is_empty() {
        initial.extend(box_grid(bounds, &config.grid_per_dim)?.into_iter().map(|p| (p, Stage::Grid)));
    }
    initial.extend(
        sample_box(bounds, config.n_random, &mut rng)
            .into_iter()
            .map(|p| (p, Stage::Random)),
    );

    let mut evaluations = Vec::with_capacity(config.budget());
    for (point, stage) in initial {
        let value = checked_value(&point, f(&point))?;
        evaluations.push(Evaluation { point, value, stage });
    }

    for _ in 0..config.n_iters {
        let next = propose(bounds, &evaluations, config, &mut rng)?;
        let value = checked_value(&next, f(&next))?;
        evaluations.push(Evaluation {
            point: next,
            value,
            stage: Stage::Bo,
        });
    }
    OptTrace::from_evaluations(evaluations)
}

fn propose(
    bounds: &BoxBounds,
    evaluations: &[Evaluation],
    config: &BoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TransformPoint> {
    let d = bounds.dim();
    let unit_x: Vec<Vec<f64>> = evaluations.iter().map(|e| bounds.to_unit(&e.point)).collect();
    let y: Vec<f64> = evaluations.iter().map(|e| e.value).collect();
    let gp = gp_fit(&unit_x, &y, config.gp)?;

    let mut incumbent = 0;
    for (i, v) in y.iter().enumerate() {
        if *v < y[incumbent] {
            incumbent = i;
        }
    }
    let best = y[incumbent];

    let mut candidates: Vec<Vec<f64>> = (0..config.candidate_count)
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect();
    let spread = Normal::new(0.0, MIDPOINT_SPREAD * config.gp.lengthscale)
        .map_err(|e| Error::Argument(e.to_string()))?;
    for x in &unit_x {
        candidates.push(
            x.iter()
                .zip(&unit_x[incumbent])
                .map(|(a, b)| (0.5 * (a + b) + spread.sample(rng)).clamp(0.0, 1.0))
                .collect(),
        );
    }

    let mut chosen = 0;
    let mut chosen_ei = f64::NEG_INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let (mu, var) = gp.posterior(c);
        let ei = expected_improvement(mu, var.sqrt(), best, config.xi);
        if ei > chosen_ei {
            chosen = i;
            chosen_ei = ei;
        }
    }
    Ok(bounds.from_unit(&candidates[chosen]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::{enumerate_cn, TransformKind};

    #[test]
    fn exhaustive_examples() {
        let c4 = enumerate_cn(4).unwrap();
        let trace = grid_minimize(&c4, |p| Ok((p.0[0] - 180.0).abs())).unwrap();
        assert_eq!(trace.best_point, vec![180.0].into());
        assert_eq!(trace.len(), 4);

        let single = enumerate_cn(1).unwrap();
        let trace = grid_minimize(&single, |_| Ok(3.0)).unwrap();
        assert_eq!(trace.best_point, vec![0.0].into());

        let trace = grid_minimize(&c4, |p| Ok(if p.0[0] == 90.0 || p.0[0] == 270.0 { 1.0 } else { 0.0 })).unwrap();
        assert_eq!(trace.best_index, 0);
    }

    #[test]
    fn exhaustive_errors_carry_the_point() {
        let c4 = enumerate_cn(4).unwrap();
        let err = grid_minimize(&c4, |p| {
            if p.0[0] == 180.0 {
                Err(Error::EmptyLogits)
            } else {
                Ok(0.0)
            }
        })
        .unwrap_err();
        match err {
            Error::Evaluation { point, source } => {
                assert_eq!(point, vec![180.0].into());
                assert!(matches!(*source, Error::EmptyLogits));
            }
            other => panic!("unexpected {other:?}"),
        }
        let boxed = TransformDomain::boxed(TransformKind::GammaLog, vec![0.0], vec![1.0]).unwrap();
        assert!(grid_minimize(&boxed, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn parallel_matches_sequential() {
        let c8 = enumerate_cn(8).unwrap();
        let f = |p: &TransformPoint| Ok(((p.0[0] - 135.0) / 45.0).powi(2));
        assert_eq!(grid_minimize_parallel(&c8, f, 3).unwrap(), grid_minimize(&c8, f).unwrap());
    }

    #[test]
    fn kernel_values() {
        assert_eq!(rbf_kernel(&[0.3, 0.1], &[0.3, 0.1], 0.7, 2.5).unwrap(), 2.5);
        let v = rbf_kernel(&[0.0, 0.0], &[0.6, 0.8], 1.0, 1.0).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.60653).abs() < 1e-5);
        assert!(rbf_kernel(&[0.0], &[100.0], 1.0, 1.0).unwrap() < 1e-300);
        assert!(rbf_kernel(&[0.0], &[0.0, 1.0], 1.0, 1.0).is_err());
        assert!(rbf_kernel(&[0.0], &[1.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn single_point_fit() {
        let hyper = GpHyper {
            lengthscale: 0.3,
            signal_var: 2.0,
            noise_var: 0.5,
        };
        let gp = gp_fit(&[vec![0.4]], &[1.0], hyper).unwrap();
        assert!((gp.chol()[(0, 0)] - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(gp.jitter(), 0.0);
    }

    #[test]
    fn duplicate_points_engage_jitter() {
        let hyper = GpHyper {
            noise_var: 0.0,
            ..GpHyper::default()
        };
        let x = vec![vec![0.5, 0.5], vec![0.5, 0.5], vec![0.1, 0.9]];
        let gp = gp_fit(&x, &[1.0, 1.0, 0.0], hyper).unwrap();
        assert!(gp.jitter() >= JITTER_START);
        assert!(gp.jitter() <= JITTER_CAP);
    }

    #[test]
    fn interpolates_training_points() {
        let hyper = GpHyper {
            noise_var: 0.0,
            ..GpHyper::default()
        };
        let x = vec![vec![0.1], vec![0.45], vec![0.8]];
        let y = [3.0, -1.0, 0.5];
        let gp = gp_fit(&x, &y, hyper).unwrap();
        for (xi, yi) in x.iter().zip(y) {
            let (mu, var) = gp.posterior(xi);
            assert!((mu - yi).abs() < 1e-6);
            assert!(var <= 1e-8);
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let x = vec![vec![0.1, 0.2], vec![0.3, 0.1], vec![0.2, 0.4]];
        let y = [1.0, 2.0, 4.0];
        let gp = gp_fit(&x, &y, GpHyper::default()).unwrap();
        let (mu, var) = gp.posterior(&[5.0, 5.0]);
        let mean = 7.0 / 3.0;
        let scale2 = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
        assert!((mu - mean).abs() < 1e-3);
        assert!((var - scale2).abs() < 1e-3 * scale2);
    }

    #[test]
    fn symmetric_pair_midpoint() {
        // closed form: mu(m) = k(m,a) (y_a + y_b) / (s + n + k(a,b)) after standardization
        let hyper = GpHyper {
            lengthscale: 0.3,
            signal_var: 1.0,
            noise_var: 1e-6,
        };
        let gp = gp_fit(&[vec![0.2], vec![0.8]], &[1.0, 5.0], hyper).unwrap();
        let (mu, _) = gp.posterior(&[0.5]);
        assert!((mu - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ei_values() {
        assert_eq!(expected_improvement(1.0, 0.0, 1.0, 0.0), 0.0);
        assert_eq!(expected_improvement(0.5, 0.0, 1.0, 0.0), 0.5);
        let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((expected_improvement(2.0, 1.0, 2.0, 0.0) - phi0).abs() < 1e-15);
        assert!((phi0 - 0.39894).abs() < 1e-5);
        let mut last = 0.0;
        for s in [0.01, 0.1, 0.5, 1.0, 3.0] {
            let ei = expected_improvement(1.2, s, 1.0, 0.0);
            assert!(ei >= last);
            last = ei;
        }
    }

    fn bowl_domain() -> TransformDomain {
        TransformDomain::boxed(TransformKind::Synthetic { dim: 2 }, vec![-1.0; 2], vec![1.0; 2]).unwrap()
    }

    #[test]
    fn bo_with_no_iterations_is_init_only() {
        let cfg = BoConfig {
            n_iters: 0,
            ..BoConfig::color_schedule(4)
        };
        let trace = bo_minimize(&bowl_domain(), |p| Ok(p.0[0] + p.0[1]), &cfg).unwrap();
        assert_eq!(trace.len(), 15);
        assert!(trace.evaluations.iter().all(|e| e.stage != Stage::Bo));
        assert_eq!(trace.best_point, vec![-1.0, -1.0].into());
    }

    #[test]
    fn bo_budget_exact_on_constant_objective() {
        let cfg = BoConfig::color_schedule(11);
        let mut calls = 0;
        let trace = bo_minimize(
            &bowl_domain(),
            |_| {
                calls += 1;
                Ok(1.0)
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(calls, 35);
        assert_eq!(trace.len(), 35);
        assert_eq!(trace.best_index, 0);
    }

    #[test]
    fn bo_is_deterministic_and_monotone() {
        let cfg = BoConfig::color_schedule(5);
        let f = |p: &TransformPoint| Ok((p.0[0] - 0.3).powi(2) + (p.0[1] + 0.6).powi(2));
        let a = bo_minimize(&bowl_domain(), f, &cfg).unwrap();
        let b = bo_minimize(&bowl_domain(), f, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.running_min().windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*a.running_min().last().unwrap(), a.best_value);
        assert!(a.best_value < 1e-2);
    }

    #[test]
    fn bo_rejects_discrete_and_bad_configs() {
        let c4 = enumerate_cn(4).unwrap();
        assert!(bo_minimize(&c4, |_| Ok(0.0), &BoConfig::default()).is_err());
        let cfg = BoConfig {
            grid_per_dim: vec![3],
            ..BoConfig::default()
        };
        assert!(bo_minimize(&bowl_domain(), |_| Ok(0.0), &cfg).is_err());
        let cfg = BoConfig {
            n_random: 0,
            ..BoConfig::default()
        };
        assert!(bo_minimize(&bowl_domain(), |_| Ok(0.0), &cfg).is_err());
    }
}
