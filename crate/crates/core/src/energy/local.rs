use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{alpha_bar, make_linear_schedule, mix_noise, EnergyBackend, Logits, NoiseSchedule};
use crate::error::{BackendError, Error, Result};
use crate::image::{resize_bilinear, Image};

/// Scheduling parameters of the local denoiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalSchedule {
    pub num_timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

/// Isotropic Gaussian pixel prior, in the `[-1, 1]` model range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub mean: f64,
    pub std: f64,
}

/// A small self-contained model file: a linear image embedding matched
/// against stored prompt embeddings, and the exact MMSE denoiser of a
/// Gaussian pixel prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    pub descriptor: String,
    /// Images are resized to `feature_grid x feature_grid` before projection.
    pub feature_grid: usize,
    /// `embedding_dim` rows of `feature_grid^2 * 3` weights.
    pub projection: Vec<Vec<f64>>,
    pub prompt_embeddings: BTreeMap<String, Vec<f64>>,
    /// `(height, width)` the denoiser operates at.
    pub denoise_size: (usize, usize),
    pub prior: GaussianPrior,
    pub schedule: LocalSchedule,
}

impl LocalModel {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: LocalModel = serde_json::from_str(&text)
            .map_err(|e| Error::Argument(format!("invalid model file {}: {e}", path.display())))?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let features = self.feature_grid * self.feature_grid * 3;
        if self.feature_grid == 0 || self.projection.is_empty() {
            return Err(Error::Argument("model needs a non-empty projection".into()));
        }
        if let Some(row) = self.projection.iter().find(|r| r.len() != features) {
            return Err(Error::DimensionMismatch {
                expected: features,
                actual: row.len(),
            });
        }
        let dim = self.projection.len();
        if let Some(e) = self.prompt_embeddings.values().find(|e| e.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: e.len(),
            });
        }
        if self.denoise_size.0 == 0 || self.denoise_size.1 == 0 {
            return Err(Error::Argument("denoise_size must be positive".into()));
        }
        if self.prior.std.is_nan() || self.prior.std <= 0.0 {
            return Err(Error::Argument("prior std must be positive".into()));
        }
        make_linear_schedule(
            self.schedule.num_timesteps,
            self.schedule.beta_start,
            self.schedule.beta_end,
        )?;
        Ok(())
    }
}

pub struct LocalModelBackend {
    model: LocalModel,
    schedule: NoiseSchedule,
}

impl LocalModelBackend {
    pub fn new(model: LocalModel) -> Result<Self> {
        model.validate()?;
        let schedule = make_linear_schedule(
            model.schedule.num_timesteps,
            model.schedule.beta_start,
            model.schedule.beta_end,
        )?;
        Ok(Self { model, schedule })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn embed(&self, image: &Image) -> Vec<f64> {
        let g = self.model.feature_grid;
        let small = resize_bilinear(image, g, g).expect("feature grid is positive");
        let features: Vec<f64> = small.pixels().iter().map(|v| 2.0 * v - 1.0).collect();
        self.model
            .projection
            .iter()
            .map(|row| row.iter().zip(&features).map(|(w, f)| w * f).sum())
            .collect()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

impl EnergyBackend for LocalModelBackend {
    fn logits(&self, image: &Image, prompts: &[String]) -> Result<Logits, BackendError> {
        let embedding = self.embed(image);
        let values = prompts
            .iter()
            .map(|p| {
                self.model
                    .prompt_embeddings
                    .get(p)
                    .map(|text| cosine(&embedding, text))
                    .ok_or_else(|| BackendError::Other(format!("local model has no embedding for prompt {p:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Logits::new(values).map_err(|e| BackendError::Other(e.to_string()))
    }

    fn denoise_error(&self, image: &Image, timestep: usize, seed: u64) -> Result<f64, BackendError> {
        let abar = alpha_bar(&self.schedule, timestep).map_err(|_| BackendError::Range {
            timestep,
            max: self.schedule.len(),
        })?;
        let (h, w) = self.model.denoise_size;
        let resized = resize_bilinear(image, h, w).map_err(|e| BackendError::Other(e.to_string()))?;
        let x: Vec<f64> = resized.pixels().iter().map(|v| 2.0 * v - 1.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let noisy = mix_noise(&x, &noise, abar);
        let GaussianPrior { mean, std } = self.model.prior;
        // E[eps | x_t] under x ~ N(mean, std^2)
        let gain = (1.0 - abar).sqrt() / (abar * std * std + 1.0 - abar);
        let offset = abar.sqrt() * mean;
        let mse = noisy
            .iter()
            .zip(&noise)
            .map(|(xt, e)| {
                let predicted = gain * (xt - offset);
                (e - predicted).powi(2)
            })
            .sum::<f64>()
            / x.len() as f64;
        Ok(mse)
    }

    fn descriptor(&self) -> String {
        format!("local:{}", self.model.descriptor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> LocalModel {
        let g = 2;
        let features = g * g * 3;
        let projection = vec![
            (0..features).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect(),
            (0..features).map(|i| if i % 3 == 2 { 1.0 } else { 0.0 }).collect(),
        ];
        let mut prompt_embeddings = BTreeMap::new();
        prompt_embeddings.insert("red".to_string(), vec![1.0, -1.0]);
        prompt_embeddings.insert("blue".to_string(), vec![-1.0, 1.0]);
        LocalModel {
            descriptor: "tiny".into(),
            feature_grid: g,
            projection,
            prompt_embeddings,
            denoise_size: (4, 4),
            prior: GaussianPrior { mean: 0.0, std: 0.5 },
            schedule: LocalSchedule {
                num_timesteps: 100,
                beta_start: 0.001,
                beta_end: 0.02,
            },
        }
    }

    #[test]
    fn cosine_logits_follow_prompts() {
        let backend = LocalModelBackend::new(tiny_model()).unwrap();
        let red = Image::filled(6, 6, [1.0, 0.2, 0.0]).unwrap();
        let prompts = vec!["red".to_string(), "blue".to_string()];
        let logits = backend.logits(&red, &prompts).unwrap();
        assert_eq!(logits.argmax(), 0);
        assert!(logits.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(backend.logits(&red, &["green".to_string()]).is_err());
        let dup = backend.logits(&red, &["red".to_string(), "red".to_string()]).unwrap();
        assert_eq!(dup.values()[0], dup.values()[1]);
    }

    #[test]
    fn denoise_error_is_deterministic_and_range_checked() {
        let backend = LocalModelBackend::new(tiny_model()).unwrap();
        let img = Image::filled(5, 5, [0.4, 0.5, 0.6]).unwrap();
        let a = backend.denoise_error(&img, 10, 7).unwrap();
        assert_eq!(a, backend.denoise_error(&img, 10, 7).unwrap());
        assert_ne!(a, backend.denoise_error(&img, 10, 8).unwrap());
        assert!(matches!(
            backend.denoise_error(&img, 0, 7),
            Err(BackendError::Range { timestep: 0, max: 100 })
        ));
    }

    #[test]
    fn atypical_images_score_higher() {
        let backend = LocalModelBackend::new(tiny_model()).unwrap();
        // mid-gray is the prior mean; saturated white is far into the tail
        let typical = Image::filled(4, 4, [0.5; 3]).unwrap();
        let atypical = Image::filled(4, 4, [1.0; 3]).unwrap();
        let avg = |img: &Image| (0..16).map(|s| backend.denoise_error(img, 80, s).unwrap()).sum::<f64>() / 16.0;
        assert!(avg(&typical) < avg(&atypical));
    }
}
