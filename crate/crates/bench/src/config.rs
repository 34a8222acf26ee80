//! Run configuration, read from TOML.
//!
//! ```toml
//! [task]
//! name = "bench-rotation"
//! seed = 0
//! workers = 2
//!
//! [dataset]
//! manifest = "data/manifest.csv"
//! prompts_file = "data/prompts.txt"
//!
//! [transform]
//! kind = "rotation"
//! n = 8
//!
//! [energy]
//! alpha = 1.0
//! beta = 0.5
//! gamma1 = 1.0
//! gamma2 = 1.0
//! timesteps = [100, 300, 500, 700, 900]
//!
//! [optimizer]
//! candidate_count = 1024
//!
//! [backend]
//! type = "synthetic-upright"
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use canon_core::bridge::RemoteBackendConfig;
use canon_core::optimize::GpHyper;
use canon_core::transforms::{enumerate_cn, grid_points};
use canon_core::{BoConfig, EnergySpec, TransformDomain, TransformKind};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Canon,
    BenchRotation,
    BenchColor,
    BenchContrast,
    BenchBoSynthetic,
    EnergyEval,
    GateEval,
}

impl Task {
    pub const ALL: [Task; 7] = [
        Task::Canon,
        Task::BenchRotation,
        Task::BenchColor,
        Task::BenchContrast,
        Task::BenchBoSynthetic,
        Task::EnergyEval,
        Task::GateEval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Canon => "canon",
            Task::BenchRotation => "bench-rotation",
            Task::BenchColor => "bench-color",
            Task::BenchContrast => "bench-contrast",
            Task::BenchBoSynthetic => "bench-bo-synthetic",
            Task::EnergyEval => "energy-eval",
            Task::GateEval => "gate-eval",
        }
    }

    /// Transform family a task searches when the config does not say.
    fn default_kind(self) -> KindName {
        match self {
            Task::BenchColor => KindName::Color,
            Task::BenchContrast => KindName::Contrast,
            Task::BenchBoSynthetic => KindName::Synthetic,
            _ => KindName::Rotation,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| {
            let names: Vec<_> = Task::ALL.iter().map(|t| t.name()).collect();
            format!("unknown task {s:?}; expected one of {}", names.join(", "))
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskSection,
    pub dataset: DatasetSection,
    pub transform: TransformSection,
    pub energy: EnergySpec,
    pub optimizer: OptimizerSection,
    pub backend: BackendSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub name: Option<Task>,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
    /// Score candidates on their inscribed square instead of the full frame.
    pub crop_disk: bool,
    /// Random views averaged by the TTA baseline in bench-rotation; 0 disables it.
    pub tta_views: usize,
    pub gate_threshold: f64,
    /// Corruption-magnitude bins of a sweep report.
    pub bins: usize,
    /// bench-bo-synthetic: objectives and trials per objective.
    pub functions: Vec<String>,
    pub trials: usize,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            name: None,
            seed: 0,
            workers: 1,
            out_dir: None,
            crop_disk: false,
            tta_views: 0,
            gate_threshold: 0.0,
            bins: 5,
            functions: Vec::new(),
            trials: 100,
        }
    }
}

pub const DEFAULT_TEMPLATE: &str = "a photo of a {label}";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// CSV with header `id,path,label`.
    pub manifest: Option<PathBuf>,
    /// A single unlabeled image, for the canon task.
    pub image: Option<PathBuf>,
    /// One prompt per line, indexed by label.
    pub prompts_file: Option<PathBuf>,
    /// Class names substituted into `prompt_template` when no prompts file is given.
    pub class_names: Vec<String>,
    pub prompt_template: String,
    pub limit: Option<usize>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            manifest: None,
            image: None,
            prompts_file: None,
            class_names: Vec::new(),
            prompt_template: DEFAULT_TEMPLATE.into(),
            limit: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindName {
    Rotation,
    Color,
    Contrast,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxPreset {
    /// Search box `[-0.7, -0.3]^2` for color.
    Rcc,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformSection {
    pub kind: Option<KindName>,
    /// Rotation group order.
    pub n: Option<usize>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// Search an exhaustive grid with these per-dimension counts instead of BO.
    pub per_dim: Option<Vec<usize>>,
    pub preset: Option<BoxPreset>,
    /// Range corruption parameters are drawn from; defaults to the search box.
    pub corruption_lower: Option<Vec<f64>>,
    pub corruption_upper: Option<Vec<f64>>,
}

/// Optimizer overrides. Unset keys take the schedule of the transform
/// family (3x3 + 6 + 20 for color, 3 + 4 + 5 for contrast).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub grid_per_dim: Option<Vec<usize>>,
    pub n_random: Option<usize>,
    pub n_iters: Option<usize>,
    pub seed: Option<u64>,
    pub xi: Option<f64>,
    pub candidate_count: Option<usize>,
    pub lengthscale: Option<f64>,
    pub signal_var: Option<f64>,
    pub noise_var: Option<f64>,
}

impl OptimizerSection {
    pub fn resolve(&self, base: BoConfig, global_seed: u64) -> BoConfig {
        let gp = GpHyper {
            lengthscale: self.lengthscale.unwrap_or(base.gp.lengthscale),
            signal_var: self.signal_var.unwrap_or(base.gp.signal_var),
            noise_var: self.noise_var.unwrap_or(base.gp.noise_var),
        };
        BoConfig {
            grid_per_dim: self.grid_per_dim.clone().unwrap_or(base.grid_per_dim),
            n_random: self.n_random.unwrap_or(base.n_random),
            n_iters: self.n_iters.unwrap_or(base.n_iters),
            seed: self.seed.unwrap_or(global_seed),
            xi: self.xi.unwrap_or(base.xi),
            candidate_count: self.candidate_count.unwrap_or(base.candidate_count),
            gp,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendType {
    #[default]
    SyntheticUpright,
    SyntheticChroma,
    SyntheticGamma,
    Local,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    #[serde(rename = "type")]
    pub kind: BackendType,
    /// Band count of the banded synthetic scenes.
    pub bands: usize,
    /// Model file of the local backend.
    pub model: Option<PathBuf>,
    pub url: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub request_image_size: (usize, usize),
    /// Noise schedule of the synthetic backends.
    pub num_timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: BackendType::default(),
            bands: 4,
            model: None,
            url: None,
            timeout_ms: 30_000,
            retries: 0,
            request_image_size: (224, 224),
            num_timesteps: 1000,
            beta_start: 0.00085,
            beta_end: 0.012,
        }
    }
}

impl BackendSection {
    pub fn remote_config(&self) -> Result<RemoteBackendConfig> {
        let url = self
            .url
            .clone()
            .ok_or_else(|| BenchError::Config("[backend] type = \"remote\" needs `url`".into()))?;
        let cfg = RemoteBackendConfig {
            base_url: url,
            timeout_ms: self.timeout_ms,
            retries: self.retries,
            request_image_size: self.request_image_size,
        };
        cfg.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BenchError::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))
}

fn resolve_path(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Parse a config file, resolving relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = read_config(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve_path(base, &mut self.dataset.manifest);
        resolve_path(base, &mut self.dataset.image);
        resolve_path(base, &mut self.dataset.prompts_file);
        resolve_path(base, &mut self.backend.model);
        resolve_path(base, &mut self.task.out_dir);
    }

    /// The task to run: `cli` if given, else the config's; the two must agree.
    pub fn task_for(&self, cli: Option<Task>) -> Result<Task> {
        match (cli, self.task.name) {
            (Some(a), Some(b)) if a != b => Err(BenchError::Config(format!(
                "command line asks for {a} but the config declares {b}"
            ))),
            (Some(t), _) | (None, Some(t)) => Ok(t),
            (None, None) => Err(BenchError::Config("no task given".into())),
        }
    }

    /// Check the parts of the config `task` reads; referenced files must exist.
    pub fn validate(&self, task: Task) -> Result<()> {
        if self.task.workers == 0 {
            return Err(BenchError::Config("workers must be >= 1".into()));
        }
        let needs_data = task != Task::BenchBoSynthetic;
        if needs_data {
            match (&self.dataset.manifest, &self.dataset.image) {
                (Some(m), _) => exists(m, "dataset manifest")?,
                (None, Some(i)) if task == Task::Canon => exists(i, "dataset image")?,
                (None, Some(_)) => {
                    return Err(BenchError::Config(format!("{task} needs a labeled [dataset] manifest")))
                }
                (None, None) => return Err(BenchError::Config("[dataset] needs `manifest` (or `image` for canon)".into())),
            }
            if let Some(p) = &self.dataset.prompts_file {
                exists(p, "prompts file")?;
            }
            if self.backend.kind == BackendType::Local {
                let model = self
                    .backend
                    .model
                    .as_ref()
                    .ok_or_else(|| BenchError::Config("[backend] type = \"local\" needs `model`".into()))?;
                exists(model, "local model")?;
            }
            if self.backend.kind == BackendType::Remote {
                self.backend.remote_config()?;
            }
        }
        let kind = self.kind_name(task);
        let expected = match task {
            Task::BenchRotation | Task::GateEval => Some(KindName::Rotation),
            Task::BenchColor => Some(KindName::Color),
            Task::BenchContrast => Some(KindName::Contrast),
            _ => None,
        };
        if let Some(e) = expected {
            if kind != e {
                return Err(BenchError::Config(format!("{task} searches {e:?} transforms, config says {kind:?}")));
            }
        }
        if needs_data && kind == KindName::Synthetic {
            return Err(BenchError::Config(format!("{task} needs an image transform, not synthetic")));
        }
        if task == Task::BenchRotation && self.transform.per_dim.is_some() {
            return Err(BenchError::Config("per_dim applies to box transforms only".into()));
        }
        if task != Task::BenchBoSynthetic {
            self.domain(task)?;
        }
        Ok(())
    }

    pub fn kind_name(&self, task: Task) -> KindName {
        self.transform.kind.unwrap_or(task.default_kind())
    }

    pub fn transform_kind(&self, task: Task) -> TransformKind {
        match self.kind_name(task) {
            KindName::Rotation => TransformKind::RotationDeg,
            KindName::Color => TransformKind::ColorLogChroma,
            KindName::Contrast => TransformKind::GammaLog,
            KindName::Synthetic => TransformKind::Synthetic {
                dim: self.transform.lower.as_ref().map_or(1, Vec::len),
            },
        }
    }

    /// Search box of a continuous transform family.
    pub fn search_box(&self, task: Task) -> (Vec<f64>, Vec<f64>) {
        let t = &self.transform;
        let (lo, hi) = match (self.kind_name(task), t.preset) {
            (KindName::Color, Some(BoxPreset::Rcc)) => (vec![-0.7, -0.7], vec![-0.3, -0.3]),
            (KindName::Color, None) => (vec![-1.0, -1.0], vec![1.0, 1.0]),
            (KindName::Contrast, _) => (vec![-2.0], vec![2.0]),
            _ => (vec![0.0], vec![1.0]),
        };
        (t.lower.clone().unwrap_or(lo), t.upper.clone().unwrap_or(hi))
    }

    /// Range corruption parameters are drawn from. Defaults to `[-1, 1]^2`
    /// for color and `[-2, 2]` for contrast, independent of any search preset.
    pub fn corruption_box(&self, task: Task) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = match self.kind_name(task) {
            KindName::Color => (vec![-1.0, -1.0], vec![1.0, 1.0]),
            KindName::Contrast => (vec![-2.0], vec![2.0]),
            _ => self.search_box(task),
        };
        (
            self.transform.corruption_lower.clone().unwrap_or(lo),
            self.transform.corruption_upper.clone().unwrap_or(hi),
        )
    }

    pub fn domain(&self, task: Task) -> Result<TransformDomain> {
        let kind = self.transform_kind(task);
        let domain = match self.kind_name(task) {
            KindName::Rotation => enumerate_cn(self.transform.n.unwrap_or(8))?,
            _ => {
                let (lo, hi) = self.search_box(task);
                let boxed = TransformDomain::boxed(kind.clone(), lo, hi)?;
                match &self.transform.per_dim {
                    Some(per_dim) => TransformDomain::discrete(kind, grid_points(&boxed, per_dim)?)?,
                    None => boxed,
                }
            }
        };
        Ok(domain)
    }

    /// BO settings for `task`: the family's schedule with config overrides.
    pub fn bo_config(&self, task: Task) -> BoConfig {
        let base = match self.kind_name(task) {
            KindName::Color => BoConfig::color_schedule(self.task.seed),
            KindName::Contrast => BoConfig::contrast_schedule(self.task.seed),
            _ => BoConfig::default(),
        };
        self.optimizer.resolve(base, self.task.seed)
    }

    /// The config with machine-local settings removed, used for digests.
    pub fn digest_view(&self) -> RunConfig {
        let mut c = self.clone();
        c.task.out_dir = None;
        c.task.workers = 1;
        c
    }
}

fn exists(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(BenchError::Config(format!("{what} not found: {}", path.display())))
    }
}
