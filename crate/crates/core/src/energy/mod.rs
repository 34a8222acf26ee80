//! Energy functions scored by foundation-model backends.
//!
//! Lower energy means a more typical image. The classifier energy combines
//! the mean and max of zero-shot logits; the diffusion energy averages the
//! denoising residual of a pretrained denoiser over a set of timesteps. The
//! combined energy is their weighted sum.

mod local;

pub use local::{LocalModel, LocalModelBackend};

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{BackendError, Error, Result};
use crate::image::Image;

/// Per-prompt logits returned by a classifier backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyLogits);
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite logit {bad}")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest logit, first index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.0.iter().enumerate() {
            if *v > self.0[best] {
                best = i;
            }
        }
        best
    }

    fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Weights and settings that define the combined energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergySpec {
    pub alpha: f64,
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub prompts: Vec<String>,
    pub normalizing_prompt: Option<String>,
    pub temperature: f64,
    pub timesteps: Vec<usize>,
    pub mc_samples: usize,
    pub noise_seed: u64,
}

impl Default for EnergySpec {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            gamma1: 1.0,
            gamma2: 0.0,
            prompts: Vec::new(),
            normalizing_prompt: None,
            temperature: 1.0,
            timesteps: Vec::new(),
            mc_samples: 1,
            noise_seed: 0,
        }
    }
}

impl EnergySpec {
    pub fn uses_classifier(&self) -> bool {
        self.gamma1 != 0.0
    }

    pub fn uses_diffusion(&self) -> bool {
        self.gamma2 != 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !self.uses_classifier() && !self.uses_diffusion() {
            return Err(Error::BothWeightsZero);
        }
        if self.uses_classifier() && self.prompts.is_empty() {
            return Err(Error::Argument("classifier energy needs at least one prompt".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Argument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.uses_diffusion() {
            if self.timesteps.is_empty() {
                return Err(Error::Argument("diffusion energy needs at least one timestep".into()));
            }
            if self.mc_samples == 0 {
                return Err(Error::Argument("mc_samples must be >= 1".into()));
            }
        }
        if self.timesteps.contains(&0) {
            return Err(Error::Index { index: 0, max: usize::MAX });
        }
        if self.timesteps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument("timesteps must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// `alpha * mean(logits) - beta * max(logits)`.
pub fn classifier_energy(logits: &Logits, alpha: f64, beta: f64) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::EmptyLogits);
    }
    Ok(alpha * logits.mean() - beta * logits.max())
}

/// Classifier energy on `(logit - norm_logit) / temperature`.
pub fn normalized_classifier_energy(logits: &Logits, norm_logit: f64, spec: &EnergySpec) -> Result<f64> {
    if spec.normalizing_prompt.is_none() {
        return Err(Error::MissingNormPrompt);
    }
    let shifted = Logits::new(
        logits
            .values()
            .iter()
            .map(|v| (v - norm_logit) / spec.temperature)
            .collect(),
    )?;
    classifier_energy(&shifted, spec.alpha, spec.beta)
}

/// Linear variance schedule `beta_1..beta_T` with its cumulative products.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    #[serde(skip)]
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Argument("noise schedule must have at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Argument(format!("beta {b} outside (0, 1)")));
        }
        let alpha_bars = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    /// Number of timesteps `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

/// Cumulative product of `1 - beta_i` for `i <= t` (1-indexed).
pub fn alpha_bar(schedule: &NoiseSchedule, t: usize) -> Result<f64> {
    if t == 0 || t > schedule.len() {
        return Err(Error::Index {
            index: t,
            max: schedule.len(),
        });
    }
    Ok(schedule.alpha_bars[t - 1])
}

/// Betas spaced linearly from `beta_start` to `beta_end` inclusive.
pub fn make_linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Argument("schedule needs T >= 1".into()));
    }
    if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Argument(format!(
            "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )));
    }
    let betas = if steps == 1 {
        vec![beta_start]
    } else {
        (0..steps)
            .map(|i| {
                if i == steps - 1 {
                    beta_end
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect()
    };
    NoiseSchedule::new(betas)
}

/// Forward-noised input `sqrt(abar_t) x + sqrt(1 - abar_t) eps`.
pub fn noisy_input(x: &[f64], t: usize, noise: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    if x.len() != noise.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: noise.len(),
        });
    }
    let abar = alpha_bar(schedule, t)?;
    Ok(mix_noise(x, noise, abar))
}

pub(crate) fn mix_noise(x: &[f64], noise: &[f64], abar: f64) -> Vec<f64> {
    let (signal, sigma) = (abar.sqrt(), (1.0 - abar).sqrt());
    x.iter().zip(noise).map(|(x, e)| signal * x + sigma * e).collect()
}

/// Seed of the `sample`-th noise draw at timestep `t`.
///
/// It depends only on the run seed, the sample index, and the timestep, so
/// every candidate in one canonicalization sees the same noise draws.
pub fn noise_seed(base: u64, sample: usize, t: usize) -> u64 {
    let mut z = splitmix(base ^ 0x9e37_79b9_7f4a_7c15);
    z = splitmix(z ^ sample as u64);
    splitmix(z ^ (t as u64).rotate_left(32))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Source of classifier logits and denoising residuals.
///
/// Implementations must be deterministic: identical inputs and seeds give
/// identical outputs. They must also tolerate concurrent calls.
pub trait EnergyBackend: Send + Sync {
    /// One logit per prompt, in prompt order.
    fn logits(&self, image: &Image, prompts: &[String]) -> Result<Logits, BackendError>;

    /// Mean squared residual between the noise drawn from `seed` and the
    /// denoiser's prediction at `timestep`.
    fn denoise_error(&self, image: &Image, timestep: usize, seed: u64) -> Result<f64, BackendError>;

    fn descriptor(&self) -> String;
}

impl<B: EnergyBackend + ?Sized> EnergyBackend for &B {
    fn logits(&self, image: &Image, prompts: &[String]) -> Result<Logits, BackendError> {
        (**self).logits(image, prompts)
    }

    fn denoise_error(&self, image: &Image, timestep: usize, seed: u64) -> Result<f64, BackendError> {
        (**self).denoise_error(image, timestep, seed)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }
}

impl<B: EnergyBackend + ?Sized> EnergyBackend for Box<B> {
    fn logits(&self, image: &Image, prompts: &[String]) -> Result<Logits, BackendError> {
        (**self).logits(image, prompts)
    }

    fn denoise_error(&self, image: &Image, timestep: usize, seed: u64) -> Result<f64, BackendError> {
        (**self).denoise_error(image, timestep, seed)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }
}

impl<B: EnergyBackend + ?Sized> EnergyBackend for std::sync::Arc<B> {
    fn logits(&self, image: &Image, prompts: &[String]) -> Result<Logits, BackendError> {
        (**self).logits(image, prompts)
    }

    fn denoise_error(&self, image: &Image, timestep: usize, seed: u64) -> Result<f64, BackendError> {
        (**self).denoise_error(image, timestep, seed)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }
}

/// Wraps a backend and counts the calls made through it.
pub struct CountingBackend<B> {
    inner: B,
    logits_calls: AtomicU64,
    denoise_calls: AtomicU64,
}

impl<B: EnergyBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            logits_calls: AtomicU64::new(0),
            denoise_calls: AtomicU64::new(0),
        }
    }

    pub fn logits_calls(&self) -> u64 {
        self.logits_calls.load(Ordering::Relaxed)
    }

    pub fn denoise_calls(&self) -> u64 {
        self.denoise_calls.load(Ordering::Relaxed)
    }
}

impl<B: EnergyBackend> EnergyBackend for CountingBackend<B> {
    fn logits(&self, image: &Image, prompts: &[String]) -> Result<Logits, BackendError> {
        self.logits_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.logits(image, prompts)
    }

    fn denoise_error(&self, image: &Image, timestep: usize, seed: u64) -> Result<f64, BackendError> {
        self.denoise_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.denoise_error(image, timestep, seed)
    }

    fn descriptor(&self) -> String {
        self.inner.descriptor()
    }
}

/// Mean denoising residual over the `EnergySpec` timesteps and noise samples.
pub fn diffusion_energy(
    image: &Image,
    spec: &EnergySpec,
    schedule: &NoiseSchedule,
    backend: &dyn EnergyBackend,
) -> Result<f64> {
    if spec.timesteps.is_empty() {
        return Err(Error::Argument("diffusion energy needs at least one timestep".into()));
    }
    if spec.mc_samples == 0 {
        return Err(Error::Argument("mc_samples must be >= 1".into()));
    }
    let mut total = 0.0;
    for &t in &spec.timesteps {
        if t == 0 || t > schedule.len() {
            return Err(Error::Index {
                index: t,
                max: schedule.len(),
            });
        }
        let mut per_t = 0.0;
        for k in 0..spec.mc_samples {
            per_t += backend.denoise_error(image, t, noise_seed(spec.noise_seed, k, t))?;
        }
        total += per_t / spec.mc_samples as f64;
    }
    Ok(total / spec.timesteps.len() as f64)
}

/// Classifier energy of one image, normalized when the `EnergySpec` names a
/// normalizing prompt. The normalizing prompt rides along in the same
/// backend call as the class prompts.
pub fn image_classifier_energy(image: &Image, spec: &EnergySpec, backend: &dyn EnergyBackend) -> Result<f64> {
    if spec.prompts.is_empty() {
        return Err(Error::EmptyLogits);
    }
    match &spec.normalizing_prompt {
        None => {
            let logits = backend.logits(image, &spec.prompts)?;
            check_logit_count(&logits, spec.prompts.len())?;
            classifier_energy(&logits, spec.alpha, spec.beta)
        }
        Some(norm) => {
            let mut prompts = spec.prompts.clone();
            prompts.push(norm.clone());
            let logits = backend.logits(image, &prompts)?;
            check_logit_count(&logits, prompts.len())?;
            let (class_logits, norm_logit) = logits.values().split_at(spec.prompts.len());
            normalized_classifier_energy(&Logits::new(class_logits.to_vec())?, norm_logit[0], spec)
        }
    }
}

fn check_logit_count(logits: &Logits, expected: usize) -> Result<()> {
    if logits.len() != expected {
        return Err(Error::Backend(BackendError::Other(format!(
            "backend returned {} logits for {} prompts",
            logits.len(),
            expected
        ))));
    }
    Ok(())
}

/// Per-term values of one combined-energy evaluation. Terms with zero
/// weight are not evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub classifier: Option<f64>,
    pub diffusion: Option<f64>,
    pub total: f64,
}

pub fn evaluate_energy(
    image: &Image,
    spec: &EnergySpec,
    schedule: &NoiseSchedule,
    backend: &dyn EnergyBackend,
) -> Result<EnergyBreakdown> {
    if !spec.uses_classifier() && !spec.uses_diffusion() {
        return Err(Error::BothWeightsZero);
    }
    let mut out = EnergyBreakdown::default();
    if spec.uses_classifier() {
        let e = image_classifier_energy(image, spec, backend)?;
        out.classifier = Some(e);
        out.total += spec.gamma1 * e;
    }
    if spec.uses_diffusion() {
        let e = diffusion_energy(image, spec, schedule, backend)?;
        out.diffusion = Some(e);
        out.total += spec.gamma2 * e;
    }
    Ok(out)
}

/// `gamma1 * E_classifier + gamma2 * E_diffusion`.
pub fn combined_energy(
    image: &Image,
    spec: &EnergySpec,
    schedule: &NoiseSchedule,
    backend: &dyn EnergyBackend,
) -> Result<f64> {
    evaluate_energy(image, spec, schedule, backend).map(|b| b.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::FnBackend;

    fn logits(v: &[f64]) -> Logits {
        Logits::new(v.to_vec()).unwrap()
    }

    #[test]
    fn classifier_energy_examples() {
        assert_eq!(classifier_energy(&logits(&[1.0, 2.0, 3.0]), 1.0, 0.5).unwrap(), 0.5);
        for c in [-3.0, 0.0, 0.25, 7.0] {
            assert_eq!(classifier_energy(&logits(&[c; 4]), 1.0, 1.0).unwrap(), 0.0);
        }
        assert_eq!(classifier_energy(&logits(&[0.2, 0.9, 0.4]), 0.0, 2.0).unwrap(), -1.8);
        assert!(matches!(Logits::new(vec![]), Err(Error::EmptyLogits)));
    }

    #[test]
    fn normalized_energy() {
        let mut spec = EnergySpec::default();
        let l = logits(&[0.1, 0.3, 0.2]);
        assert!(matches!(
            normalized_classifier_energy(&l, 0.0, &spec),
            Err(Error::MissingNormPrompt)
        ));
        spec.normalizing_prompt = Some("a photo of an object".into());
        assert_eq!(
            normalized_classifier_energy(&l, 0.0, &spec).unwrap(),
            classifier_energy(&l, 1.0, 0.5).unwrap()
        );
        let shifted = logits(&[1.1, 1.3, 1.2]);
        let a = normalized_classifier_energy(&l, 0.05, &spec).unwrap();
        let b = normalized_classifier_energy(&shifted, 1.05, &spec).unwrap();
        assert!((a - b).abs() < 1e-12);

        spec.temperature = 0.5;
        let half = normalized_classifier_energy(&l, 0.0, &spec).unwrap();
        spec.temperature = 1.0;
        let unit = normalized_classifier_energy(&l, 0.0, &spec).unwrap();
        assert!((half - 2.0 * unit).abs() < 1e-15);
    }

    #[test]
    fn schedule_products() {
        let s = NoiseSchedule::new(vec![0.1]).unwrap();
        assert!((alpha_bar(&s, 1).unwrap() - 0.9).abs() < 1e-15);
        let s = NoiseSchedule::new(vec![0.01; 5]).unwrap();
        assert!((alpha_bar(&s, 2).unwrap() - 0.9801).abs() < 1e-15);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(matches!(alpha_bar(&s, 0), Err(Error::Index { .. })));
        assert!(matches!(alpha_bar(&s, 6), Err(Error::Index { .. })));
    }

    #[test]
    fn linear_schedule() {
        assert_eq!(make_linear_schedule(1, 0.3, 0.5).unwrap().betas(), &[0.3]);
        let s = make_linear_schedule(2, 0.1, 0.2).unwrap();
        assert_eq!(s.betas(), &[0.1, 0.2]);
        assert!((s.alpha_bars()[0] - 0.9).abs() < 1e-15);
        assert!((s.alpha_bars()[1] - 0.72).abs() < 1e-15);
        let sd = make_linear_schedule(1000, 0.00085, 0.012).unwrap();
        assert_eq!(sd.len(), 1000);
        assert_eq!(sd.betas()[999], 0.012);
        assert!(make_linear_schedule(0, 0.1, 0.2).is_err());
        assert!(make_linear_schedule(10, 0.2, 0.1).is_err());
        assert!(make_linear_schedule(10, 0.0, 0.1).is_err());
        assert!(make_linear_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn noisy_input_endpoints() {
        let x = [0.3, -0.2, 0.9];
        let eps = [1.0, -1.5, 0.25];
        // abar ~ 1 when beta is tiny
        let clean = NoiseSchedule::new(vec![1e-15]).unwrap();
        let out = noisy_input(&x, 1, &eps, &clean).unwrap();
        for (a, b) in out.iter().zip(&x) {
            assert!((a - b).abs() < 1e-7);
        }
        // abar ~ 0 after many large steps
        let noisy = NoiseSchedule::new(vec![0.999_999; 10]).unwrap();
        let out = noisy_input(&x, 10, &eps, &noisy).unwrap();
        for (a, b) in out.iter().zip(&eps) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(noisy_input(&x, 1, &eps[..2], &clean).is_err());
    }

    #[test]
    fn diffusion_energy_averages() {
        let schedule = make_linear_schedule(1000, 0.00085, 0.012).unwrap();
        let img = Image::filled(2, 2, [0.5; 3]).unwrap();
        let constant = FnBackend::new(|_, p| vec![0.0; p.len()], |_, _, _| 0.7);
        let mut spec = EnergySpec {
            gamma1: 0.0,
            gamma2: 1.0,
            timesteps: vec![1, 10, 500],
            ..Default::default()
        };
        assert!((diffusion_energy(&img, &spec, &schedule, &constant).unwrap() - 0.7).abs() < 1e-12);
        spec.mc_samples = 2;
        assert!((diffusion_energy(&img, &spec, &schedule, &constant).unwrap() - 0.7).abs() < 1e-12);

        let by_t = FnBackend::new(|_, p| vec![0.0; p.len()], |_, t, _| t as f64);
        spec.timesteps = vec![50, 100, 150];
        assert_eq!(diffusion_energy(&img, &spec, &schedule, &by_t).unwrap(), 100.0);
        spec.timesteps = vec![0];
        assert!(diffusion_energy(&img, &spec, &schedule, &by_t).is_err());
    }

    #[test]
    fn noise_seeds_are_shared_and_distinct() {
        assert_eq!(noise_seed(3, 0, 50), noise_seed(3, 0, 50));
        assert_ne!(noise_seed(3, 0, 50), noise_seed(3, 1, 50));
        assert_ne!(noise_seed(3, 0, 50), noise_seed(3, 0, 51));
        assert_ne!(noise_seed(3, 0, 50), noise_seed(4, 0, 50));
    }

    #[test]
    fn combined_energy_gates_terms() {
        let schedule = make_linear_schedule(100, 0.001, 0.02).unwrap();
        let img = Image::filled(2, 2, [0.5; 3]).unwrap();
        let backend = CountingBackend::new(FnBackend::new(|_, p| vec![2.0; p.len()], |_, _, _| 0.3));
        let mut spec = EnergySpec {
            alpha: 1.0,
            beta: 0.5,
            gamma1: 2.0,
            gamma2: 0.0,
            prompts: vec!["a".into(), "b".into()],
            timesteps: vec![10, 20],
            ..Default::default()
        };
        // classifier energy = 2 - 1 = 1
        assert_eq!(combined_energy(&img, &spec, &schedule, &backend).unwrap(), 2.0);
        assert_eq!((backend.logits_calls(), backend.denoise_calls()), (1, 0));

        spec.gamma1 = 0.0;
        spec.gamma2 = 3.0;
        let e = combined_energy(&img, &spec, &schedule, &backend).unwrap();
        assert!((e - 0.9).abs() < 1e-15);
        assert_eq!((backend.logits_calls(), backend.denoise_calls()), (1, 2));

        spec.gamma1 = 1.0;
        spec.gamma2 = 1.0;
        assert!((combined_energy(&img, &spec, &schedule, &backend).unwrap() - 1.3).abs() < 1e-15);

        spec.gamma1 = 0.0;
        spec.gamma2 = 0.0;
        assert!(matches!(
            combined_energy(&img, &spec, &schedule, &backend),
            Err(Error::BothWeightsZero)
        ));
    }

    #[test]
    fn normalizing_prompt_shares_the_logits_call() {
        let schedule = make_linear_schedule(10, 0.01, 0.02).unwrap();
        let img = Image::filled(2, 2, [0.5; 3]).unwrap();
        let backend = CountingBackend::new(FnBackend::new(
            |_, p| (0..p.len()).map(|i| i as f64).collect(),
            |_, _, _| 0.0,
        ));
        let spec = EnergySpec {
            prompts: vec!["a".into(), "b".into()],
            normalizing_prompt: Some("norm".into()),
            temperature: 0.5,
            ..Default::default()
        };
        // logits [0, 1], norm 2 -> [-4, -2]; mean -3, max -2 -> -3 + 1
        let e = combined_energy(&img, &spec, &schedule, &backend).unwrap();
        assert!((e + 2.0).abs() < 1e-15);
        assert_eq!(backend.logits_calls(), 1);
    }

    #[test]
    fn spec_validation() {
        let mut spec = EnergySpec {
            prompts: vec!["x".into()],
            ..Default::default()
        };
        assert!(spec.validate().is_ok());
        spec.timesteps = vec![10, 5];
        assert!(spec.validate().is_err());
        spec.timesteps = vec![];
        spec.gamma2 = 1.0;
        assert!(spec.validate().is_err());
        spec.gamma1 = 0.0;
        spec.gamma2 = 0.0;
        assert!(matches!(spec.validate(), Err(Error::BothWeightsZero)));
    }
}
