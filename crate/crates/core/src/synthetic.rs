//! Deterministic in-process backends and matching scene generators.
//!
//! Each fixture backend reads an analytic cue from the image (orientation of
//! the brightness centroid, gray-world chromaticity, or a calibration pixel)
//! and turns it into logits and denoising errors that are lowest for the
//! canonical view. The scene generators produce images carrying those cues.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::energy::{EnergyBackend, Logits};
use crate::error::BackendError;
use crate::image::Image;

type LogitsFn = dyn Fn(&Image, &[String]) -> Vec<f64> + Send + Sync;
type DenoiseFn = dyn Fn(&Image, usize, u64) -> f64 + Send + Sync;

/// Backend defined by two closures.
pub struct FnBackend {
    logits: Box<LogitsFn>,
    denoise: Box<DenoiseFn>,
    name: String,
}

impl FnBackend {
    pub fn new(
        logits: impl Fn(&Image, &[String]) -> Vec<f64> + Send + Sync + 'static,
        denoise: impl Fn(&Image, usize, u64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            logits: Box::new(logits),
            denoise: Box::new(denoise),
            name: "fn".into(),
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Same logits for every image, constant denoising error.
    pub fn constant(logits: Vec<f64>, denoise: f64) -> Self {
        Self::new(move |_, _| logits.clone(), move |_, _, _| denoise).named("constant")
    }
}

impl EnergyBackend for FnBackend {
    fn logits(&self, image: &Image, prompts: &[String]) -> Result<Logits, BackendError> {
        Logits::new((self.logits)(image, prompts)).map_err(|e| BackendError::Other(e.to_string()))
    }

    fn denoise_error(&self, image: &Image, timestep: usize, seed: u64) -> Result<f64, BackendError> {
        Ok((self.denoise)(image, timestep, seed))
    }

    fn descriptor(&self) -> String {
        format!("synthetic:{}", self.name)
    }
}

/// Standard normal draw keyed by `(seed, timestep)`.
pub fn seeded_normal(seed: u64, timestep: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((timestep as u64) << 40));
    StandardNormal.sample(&mut rng)
}

/// Denoising error `base + sigma * z(seed, t)`; logits are constant zero.
pub struct NoisyBackend {
    pub base: f64,
    pub sigma: f64,
}

impl EnergyBackend for NoisyBackend {
    fn logits(&self, _image: &Image, prompts: &[String]) -> Result<Logits, BackendError> {
        Logits::new(vec![0.0; prompts.len().max(1)]).map_err(|e| BackendError::Other(e.to_string()))
    }

    fn denoise_error(&self, _image: &Image, timestep: usize, seed: u64) -> Result<f64, BackendError> {
        Ok(self.base + self.sigma * seeded_normal(seed, timestep))
    }

    fn descriptor(&self) -> String {
        format!("synthetic:noisy(base={}, sigma={})", self.base, self.sigma)
    }
}

fn luminance(p: [f64; 3]) -> f64 {
    (p[0] + p[1] + p[2]) / 3.0
}

/// Cosine between "up" and the brightness-centroid direction, measured
/// inside the inscribed disk. 1 for an upright scene, -1 upside down,
/// 0 when the image has no dominant direction.
pub fn uprightness(image: &Image) -> f64 {
    let (cy, cx) = image.center();
    let radius = image.height().min(image.width()) as f64 / 2.0 - 1.0;
    let mut inside = Vec::new();
    for y in 0..image.height() {
        for x in 0..image.width() {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            if dx * dx + dy * dy <= radius * radius {
                inside.push((dx, -dy, luminance(image.rgb(y, x))));
            }
        }
    }
    if inside.is_empty() {
        return 0.0;
    }
    let mean = inside.iter().map(|p| p.2).sum::<f64>() / inside.len() as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for (u, v, l) in &inside {
        mx += (l - mean) * u;
        my += (l - mean) * v;
    }
    let norm = (mx * mx + my * my).sqrt();
    if norm < 1e-12 {
        0.0
    } else {
        my / norm
    }
}

/// Index of the channel with the largest mean.
pub fn dominant_channel(image: &Image) -> usize {
    let means = image.channel_means();
    let mut best = 0;
    for c in 1..3 {
        if means[c] > means[best] {
            best = c;
        }
    }
    best
}

/// Index of the brightest of `bands` equal horizontal bands.
pub fn brightest_band(image: &Image, bands: usize) -> usize {
    let bands = bands.max(1);
    let mut sums = vec![0.0; bands];
    let mut counts = vec![0usize; bands];
    for y in 0..image.height() {
        let b = (y * bands / image.height()).min(bands - 1);
        for x in 0..image.width() {
            sums[b] += luminance(image.rgb(y, x));
            counts[b] += 1;
        }
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c.max(1) as f64).collect();
    let mut best = 0;
    for (i, m) in means.iter().enumerate() {
        if *m > means[best] {
            best = i;
        }
    }
    best
}

/// `(ln(R/G), ln(B/G))` of the channel means. Zero for a gray-world image.
pub fn log_chroma_offset(image: &Image) -> (f64, f64) {
    let [r, g, b] = image.channel_means().map(|m| m.max(1e-12));
    ((r / g).ln(), (b / g).ln())
}

/// Value of the calibration pixel every banded scene carries.
pub const PROBE_VALUE: f64 = 0.5;

/// Total log-gamma applied to a banded scene, read from its calibration
/// pixel at `(0, 0)`.
pub fn probe_log_gamma(image: &Image) -> f64 {
    let p = image.get(0, 0, 1).clamp(1e-300, 1.0 - 1e-16);
    (p.ln() / PROBE_VALUE.ln()).ln()
}

/// Logits with `confidence` on the true class and, when `confused`, a
/// decoy logit on the next class.
fn cue_logits(
    prompts: usize,
    class: usize,
    confidence: f64,
    confused: bool,
    decoy: f64,
) -> Vec<f64> {
    let n = prompts.max(1);
    let mut values = vec![0.0; n];
    let k = class % n;
    values[k] = confidence;
    if confused && n > 1 {
        let j = (k + 1) % n;
        values[j] = values[j].max(decoy);
    }
    values
}

/// Rotation fixture. Class = dominant tint channel; confidence grows with
/// uprightness; a decoy class wins when the scene is tilted.
pub struct UprightBackend;

impl EnergyBackend for UprightBackend {
    fn logits(&self, image: &Image, prompts: &[String]) -> Result<Logits, BackendError> {
        let u = uprightness(image);
        let values = cue_logits(prompts.len(), dominant_channel(image), 0.5 + 0.5 * u, u < 0.9, 0.95);
        Logits::new(values).map_err(|e| BackendError::Other(e.to_string()))
    }

    fn denoise_error(&self, image: &Image, timestep: usize, seed: u64) -> Result<f64, BackendError> {
        Ok(0.5 * (1.0 - uprightness(image)) + 0.01 * seeded_normal(seed, timestep))
    }

    fn descriptor(&self) -> String {
        "synthetic:upright".into()
    }
}

/// Color fixture. Class = brightest band of `bands`; confidence decays with
/// the gray-world chroma offset.
pub struct ChromaBackend {
    pub bands: usize,
}

impl EnergyBackend for ChromaBackend {
    fn logits(&self, image: &Image, prompts: &[String]) -> Result<Logits, BackendError> {
        let (a, b) = log_chroma_offset(image);
        let d = (a * a + b * b).sqrt();
        let values = cue_logits(prompts.len(), brightest_band(image, self.bands), 1.0 - d.min(1.0), d > 0.3, 0.8);
        Logits::new(values).map_err(|e| BackendError::Other(e.to_string()))
    }

    fn denoise_error(&self, image: &Image, timestep: usize, seed: u64) -> Result<f64, BackendError> {
        let (a, b) = log_chroma_offset(image);
        Ok((a * a + b * b).sqrt() + 0.01 * seeded_normal(seed, timestep))
    }

    fn descriptor(&self) -> String {
        format!("synthetic:chroma(bands={})", self.bands)
    }
}

/// Contrast fixture. Class = brightest band; confidence decays with the
/// absolute log-gamma read from the calibration pixel.
pub struct GammaProbeBackend {
    pub bands: usize,
}

impl EnergyBackend for GammaProbeBackend {
    fn logits(&self, image: &Image, prompts: &[String]) -> Result<Logits, BackendError> {
        let g = probe_log_gamma(image).abs();
        let values = cue_logits(prompts.len(), brightest_band(image, self.bands), 1.0 - g.min(1.0), g > 0.5, 0.8);
        Logits::new(values).map_err(|e| BackendError::Other(e.to_string()))
    }

    fn denoise_error(&self, image: &Image, timestep: usize, seed: u64) -> Result<f64, BackendError> {
        Ok(probe_log_gamma(image).abs() + 0.01 * seeded_normal(seed, timestep))
    }

    fn descriptor(&self) -> String {
        format!("synthetic:gamma-probe(bands={})", self.bands)
    }
}

/// Smooth random blobs: `count` Gaussian bumps of the given amplitude.
fn blob_field(size: usize, count: usize, amplitude: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let blobs: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            (
                rng.random::<f64>() * size as f64,
                rng.random::<f64>() * size as f64,
                size as f64 * (0.08 + 0.1 * rng.random::<f64>()),
                amplitude * (2.0 * rng.random::<f64>() - 1.0),
            )
        })
        .collect();
    let mut field = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            field[y * size + x] = blobs
                .iter()
                .map(|(by, bx, s, a)| {
                    let d2 = (y as f64 - by).powi(2) + (x as f64 - bx).powi(2);
                    a * (-d2 / (2.0 * s * s)).exp()
                })
                .sum();
        }
    }
    field
}

/// Upright scene: bright top, dark bottom, tinted toward channel
/// `label % 3`, faint random texture, black outside the inscribed disk.
pub fn upright_scene(size: usize, label: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texture = blob_field(size, 6, 0.08, &mut rng);
    let tint = label % 3;
    let img = Image::from_fn(size, size, |y, x| {
        let t = y as f64 / (size - 1).max(1) as f64;
        let base = 0.8 - 0.55 * t + texture[y * size + x];
        let mut p = [base * 0.75; 3];
        p[tint] = base;
        p
    })
    .expect("size is positive");
    img.mask_outside_disk(1.0, [0.0; 3])
}

/// Smooth random disk-cropped scene without a designed orientation.
pub fn smooth_disk_scene(size: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels: Vec<Vec<f64>> = (0..3).map(|_| blob_field(size, 5, 0.35, &mut rng)).collect();
    let img = Image::from_fn(size, size, |y, x| {
        let i = y * size + x;
        [0.5 + channels[0][i], 0.5 + channels[1][i], 0.5 + channels[2][i]]
    })
    .expect("size is positive");
    img.mask_outside_disk(1.0, [0.0; 3])
}

/// Gray banded scene: band `label % bands` is brightest; pixel `(0, 0)` is
/// the calibration value [`PROBE_VALUE`]. Channel means are equal, so the
/// scene is gray-world neutral.
pub fn banded_scene(size: usize, label: usize, bands: usize, seed: u64) -> Image {
    let bands = bands.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texture = blob_field(size, 4, 0.05, &mut rng);
    let bright = label % bands;
    Image::from_fn(size, size, |y, x| {
        if y == 0 && x == 0 {
            return [PROBE_VALUE; 3];
        }
        let band = (y * bands / size).min(bands - 1);
        let base = if band == bright { 0.75 } else { 0.35 };
        [base + texture[y * size + x]; 3]
    })
    .expect("size is positive")
}
