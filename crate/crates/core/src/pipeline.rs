//! Vary-and-rank canonicalization and the checks built on it.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::energy::{combined_energy, CountingBackend, EnergyBackend, EnergySpec, Logits, NoiseSchedule};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::optimize::{bo_minimize, grid_minimize_parallel, BoConfig, OptTrace};
use crate::transforms::{apply_point, rotate, SearchSpace, TransformDomain, TransformPoint};

/// Discrete domains are always searched exhaustively (with up to `workers`
/// concurrent candidates); box domains use Bayesian optimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub workers: usize,
    pub bo: BoConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            bo: BoConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn exhaustive() -> Self {
        Self::default()
    }

    pub fn bayesian(bo: BoConfig) -> Self {
        Self { workers: 1, bo }
    }
}

/// Work done by one canonicalization, in units of the cost model
/// `N x (transform + energy + inference)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostCounter {
    pub n_transform: u64,
    pub n_logits_calls: u64,
    pub n_denoise_calls: u64,
    pub n_inference: u64,
}

impl std::ops::AddAssign for CostCounter {
    fn add_assign(&mut self, rhs: Self) {
        self.n_transform += rhs.n_transform;
        self.n_logits_calls += rhs.n_logits_calls;
        self.n_denoise_calls += rhs.n_denoise_calls;
        self.n_inference += rhs.n_inference;
    }
}

/// Analytic cost of an exhaustive search over `n_candidates`.
pub fn predicted_cost(
    n_candidates: u64,
    timesteps: u64,
    mc_samples: u64,
    use_classifier: bool,
    use_diffusion: bool,
) -> CostCounter {
    CostCounter {
        n_transform: n_candidates,
        n_logits_calls: if use_classifier { n_candidates } else { 0 },
        n_denoise_calls: if use_diffusion {
            n_candidates * timesteps * mc_samples
        } else {
            0
        },
        n_inference: 1,
    }
}

#[derive(Clone, Debug)]
pub struct CanonResult {
    pub best_point: TransformPoint,
    pub canonical: Image,
    pub trace: OptTrace,
    pub cost: CostCounter,
    pub spec_digest: String,
}

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration types serialize to JSON");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct DigestInput<'a> {
    spec: &'a EnergySpec,
    domain: &'a TransformDomain,
    search: &'a SearchConfig,
}

/// Find the transform in `domain` whose output has the lowest combined
/// energy and return it with the transformed image.
///
/// The reported cost counts one downstream inference on the canonical
/// image; the search itself never runs it.
pub fn canonicalize(
    image: &Image,
    domain: &TransformDomain,
    spec: &EnergySpec,
    schedule: &NoiseSchedule,
    backend: &dyn EnergyBackend,
    search: &SearchConfig,
) -> Result<CanonResult> {
    spec.validate()?;
    let kind = &domain.kind;
    let counting = CountingBackend::new(backend);
    let transforms = AtomicU64::new(0);
    let objective = |t: &TransformPoint| -> Result<f64> {
        let candidate = apply_point(kind, t, image)?;
        if kind.acts_on_image() {
            transforms.fetch_add(1, Ordering::Relaxed);
        }
        combined_energy(&candidate, spec, schedule, &counting)
    };
    let trace = match &domain.space {
        SearchSpace::Discrete { .. } => grid_minimize_parallel(domain, objective, search.workers)?,
        SearchSpace::Box { .. } => bo_minimize(domain, objective, &search.bo)?,
    };
    let canonical = apply_point(kind, &trace.best_point, image)?;
    let cost = CostCounter {
        n_transform: transforms.load(Ordering::Relaxed),
        n_logits_calls: counting.logits_calls(),
        n_denoise_calls: counting.denoise_calls(),
        n_inference: 1,
    };
    Ok(CanonResult {
        best_point: trace.best_point.clone(),
        canonical,
        trace,
        cost,
        spec_digest: digest_of(&DigestInput { spec, domain, search }),
    })
}

/// Zero-shot prediction: argmax of the prompt logits, first index on ties.
pub fn predict(image: &Image, prompts: &[String], backend: &dyn EnergyBackend) -> Result<(usize, Logits)> {
    if prompts.is_empty() {
        return Err(Error::Argument("prediction needs at least one prompt".into()));
    }
    let logits = backend.logits(image, prompts)?;
    Ok((logits.argmax(), logits))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InvarianceMode {
    /// Canonical images must be bit-identical.
    Exact,
    /// Mean absolute pixel difference must stay below `tolerance`.
    Approximate { tolerance: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceOutcome {
    pub holds: bool,
    pub canonical_point: Option<TransformPoint>,
    pub canonical_point_transformed: Option<TransformPoint>,
    pub mean_abs_diff: Option<f64>,
    pub error: Option<String>,
}

/// Check that `x` and `t_applied(x)` canonicalize to the same image.
#[allow(clippy::too_many_arguments)]
pub fn invariance_check(
    image: &Image,
    t_applied: &TransformPoint,
    domain: &TransformDomain,
    spec: &EnergySpec,
    schedule: &NoiseSchedule,
    backend: &dyn EnergyBackend,
    search: &SearchConfig,
    mode: InvarianceMode,
) -> InvarianceOutcome {
    let run = || -> Result<(CanonResult, CanonResult)> {
        let moved = apply_point(&domain.kind, t_applied, image)?;
        let a = canonicalize(image, domain, spec, schedule, backend, search)?;
        let b = canonicalize(&moved, domain, spec, schedule, backend, search)?;
        Ok((a, b))
    };
    match run() {
        Err(e) => InvarianceOutcome {
            holds: false,
            canonical_point: None,
            canonical_point_transformed: None,
            mean_abs_diff: None,
            error: Some(e.to_string()),
        },
        Ok((a, b)) => {
            let mad = a.canonical.mean_abs_diff(&b.canonical).ok();
            let holds = match mode {
                InvarianceMode::Exact => a.canonical == b.canonical,
                InvarianceMode::Approximate { tolerance } => mad.is_some_and(|d| d < tolerance),
            };
            InvarianceOutcome {
                holds,
                canonical_point: Some(a.best_point),
                canonical_point_transformed: Some(b.best_point),
                mean_abs_diff: mad,
                error: None,
            }
        }
    }
}

/// The `EnergySpec` the uprightness gate scores with by default: classifier term only.
pub fn gate_spec(spec: &EnergySpec) -> EnergySpec {
    EnergySpec {
        gamma1: if spec.gamma1 == 0.0 { 1.0 } else { spec.gamma1 },
        gamma2: 0.0,
        ..spec.clone()
    }
}

/// Energies of an image and its two quarter-turn neighbours.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateEnergies {
    pub upright: f64,
    pub plus_90: f64,
    pub minus_90: f64,
}

impl GateEnergies {
    pub fn margin(&self) -> f64 {
        self.plus_90.min(self.minus_90) - self.upright
    }
}

pub fn gate_energies(
    image: &Image,
    spec: &EnergySpec,
    schedule: &NoiseSchedule,
    backend: &dyn EnergyBackend,
) -> Result<GateEnergies> {
    Ok(GateEnergies {
        upright: combined_energy(image, spec, schedule, backend)?,
        plus_90: combined_energy(&rotate(image, 90.0, [0.0; 3])?, spec, schedule, backend)?,
        minus_90: combined_energy(&rotate(image, -90.0, [0.0; 3])?, spec, schedule, backend)?,
    })
}

/// True when the image already looks upright: both quarter-turn neighbours
/// score at least `threshold` more energy than the input, so the search can
/// be skipped.
pub fn gate_upright(
    image: &Image,
    spec: &EnergySpec,
    schedule: &NoiseSchedule,
    backend: &dyn EnergyBackend,
    threshold: f64,
) -> Result<bool> {
    Ok(gate_energies(image, spec, schedule, backend)?.margin() >= threshold)
}
