//! Task dispatch: config in, report files out.

use std::path::{Path, PathBuf};

use canon_core::pipeline::digest_of;
use canon_core::{EnergySpec, SearchConfig};
use serde::Serialize;

use crate::backend::{build_backend, ScoringSetup};
use crate::bo_synthetic::{bench_bo_synthetic, bo_table, parse_objectives};
use crate::config::{RunConfig, Task};
use crate::dataset::{class_prompts, load_from_config, Dataset};
use crate::error::{BenchError, Result};
use crate::evals::{canon_table, energy_eval, energy_table, gate_eval, gate_table, run_canon};
use crate::report::{write_report, DatasetCounts, OutputPaths, Policy, Report, Seeds, Table, CORRUPTION_SEED_RULE, SCHEMA_VERSION};
use crate::rotation::{bench_rotation, rotation_table, RotationSettings, FILL};
use crate::sweep::{bench_sweep, sweep_table, SweepFamily, SweepSettings};

/// Command-line settings that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub task: Option<Task>,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub crop_disk: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(out) = &self.out_dir {
            cfg.task.out_dir = Some(out.clone());
        }
        if let Some(w) = self.workers {
            cfg.task.workers = w;
        }
        if let Some(s) = self.seed {
            cfg.task.seed = s;
        }
        cfg.task.crop_disk |= self.crop_disk;
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub task: Task,
    pub out_dir: PathBuf,
    pub paths: OutputPaths,
    pub report: Report,
}

/// Load `config_path`, apply `overrides` and run the task.
pub fn run(config_path: &Path, overrides: &Overrides) -> Result<RunOutcome> {
    let mut cfg = RunConfig::load(config_path)?;
    overrides.apply(&mut cfg);
    let task = cfg.task_for(overrides.task)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let out_dir = cfg
        .task
        .out_dir
        .clone()
        .unwrap_or_else(|| base.join("out").join(task.name()));
    run_config(cfg, task, &out_dir)
}

/// Run `task` with an already-parsed config, writing into `out_dir`.
pub fn run_config(mut cfg: RunConfig, task: Task, out_dir: &Path) -> Result<RunOutcome> {
    cfg.task.name = Some(task);
    cfg.validate(task)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.task.workers)
        .build()
        .map_err(|e| BenchError::Config(format!("cannot start {} workers: {e}", cfg.task.workers)))?;
    pool.install(|| execute(cfg, task, out_dir))
}

/// Task output before it is wrapped into a report.
struct TaskOutput {
    metrics: serde_json::Value,
    table: Table,
    per_image: Vec<serde_json::Value>,
    skipped: Vec<crate::dataset::Skipped>,
}

fn output<M: Serialize, R: Serialize>(
    metrics: &M,
    table: Table,
    records: &[R],
    skipped: Vec<crate::dataset::Skipped>,
) -> TaskOutput {
    TaskOutput {
        metrics: serde_json::to_value(metrics).expect("metrics serialize"),
        table,
        per_image: records
            .iter()
            .map(|r| serde_json::to_value(r).expect("records serialize"))
            .collect(),
        skipped,
    }
}

fn execute(mut cfg: RunConfig, task: Task, out_dir: &Path) -> Result<RunOutcome> {
    let mut warnings = Vec::new();
    let seed = cfg.task.seed;
    let (dataset, setup, prompts) = if task == Task::BenchBoSynthetic {
        (Dataset::default(), None, Vec::new())
    } else {
        let dataset = load_from_config(&cfg.dataset)?;
        let prompts = class_prompts(&cfg.dataset, &dataset)?;
        if cfg.energy.prompts.is_empty() {
            cfg.energy.prompts = prompts.clone();
        }
        let setup = build_backend(&cfg.backend, cfg.task.crop_disk)?;
        check_timesteps(&cfg.energy, &setup)?;
        (dataset, Some(setup), prompts)
    };
    for s in &dataset.skipped {
        warnings.push(format!("skipped {}: {}", s.id, s.reason));
    }
    if task != Task::BenchBoSynthetic && dataset.items.is_empty() {
        warnings.push("dataset is empty; nothing was evaluated".into());
    }

    let spec = &cfg.energy;
    let items = &dataset.items;
    let bo = cfg.bo_config(task);
    let out = match (task, &setup) {
        (Task::BenchBoSynthetic, _) => {
            let objectives = parse_objectives(&cfg.task.functions)?;
            let (report, records) = bench_bo_synthetic(&objectives, cfg.task.trials, seed, &cfg.optimizer)?;
            let table = bo_table(&report);
            output(&report, table, &records, Vec::new())
        }
        (Task::BenchRotation, Some(s)) => {
            let settings = RotationSettings {
                n: cfg.transform.n.unwrap_or(8),
                tta_views: cfg.task.tta_views,
                seed,
            };
            let (report, records, skipped) =
                bench_rotation(items, &settings, spec, &s.schedule, s.backend.as_ref(), &prompts)?;
            let table = rotation_table(&report);
            output(&report, table, &records, skipped)
        }
        (Task::BenchColor | Task::BenchContrast, Some(s)) => {
            let (lower, upper) = cfg.corruption_box(task);
            let settings = SweepSettings {
                family: if task == Task::BenchColor {
                    SweepFamily::Color
                } else {
                    SweepFamily::Contrast
                },
                corruption_lower: lower,
                corruption_upper: upper,
                bins: cfg.task.bins,
                seed,
                search: SearchConfig::bayesian(bo.clone()),
            };
            let domain = cfg.domain(task)?;
            let (report, records, skipped) =
                bench_sweep(items, &settings, &domain, spec, &s.schedule, s.backend.as_ref(), &prompts)?;
            let table = sweep_table(&report);
            output(&report, table, &records, skipped)
        }
        (Task::Canon, Some(s)) => {
            let domain = cfg.domain(task)?;
            let search = SearchConfig {
                workers: cfg.task.workers,
                bo: bo.clone(),
            };
            let (report, records, skipped) =
                run_canon(items, &domain, spec, &s.schedule, s.backend.as_ref(), &search, &prompts, out_dir)?;
            let table = canon_table(&report);
            output(&report, table, &records, skipped)
        }
        (Task::EnergyEval, Some(s)) => {
            let (report, records, skipped) = energy_eval(items, spec, &s.schedule, s.backend.as_ref(), &prompts)?;
            let table = energy_table(&report);
            output(&report, table, &records, skipped)
        }
        (Task::GateEval, Some(s)) => {
            let (report, records, skipped) =
                gate_eval(items, spec, &s.schedule, s.backend.as_ref(), cfg.task.gate_threshold)?;
            let table = gate_table(&report);
            output(&report, table, &records, skipped)
        }
        (_, None) => unreachable!("every image task builds a backend"),
    };
    for s in &out.skipped {
        warnings.push(format!("skipped {}: {}", s.id, s.reason));
    }

    let mut skipped_items = dataset.skipped.clone();
    skipped_items.extend(out.skipped.iter().cloned());
    let total = dataset.items.len() + dataset.skipped.len();
    let report = Report {
        schema: SCHEMA_VERSION,
        task,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        config_digest: digest_of(&cfg.digest_view()),
        seeds: Seeds {
            global: seed,
            optimizer: bo.seed,
            noise: cfg.energy.noise_seed,
            corruption: CORRUPTION_SEED_RULE.into(),
        },
        prompts: cfg.energy.prompts.clone(),
        prompt_template: cfg.dataset.prompt_template.clone(),
        backend: setup.as_ref().map_or_else(|| "none".into(), |s| s.backend.descriptor()),
        policy: Policy {
            rotation_fill: FILL,
            crop_disk: cfg.task.crop_disk,
        },
        dataset: DatasetCounts {
            total,
            evaluated: total - skipped_items.len(),
            skipped: skipped_items.len(),
            skipped_items,
        },
        config: cfg,
        warnings,
        metrics: out.metrics,
    };
    let paths = write_report(out_dir, &report, &out.table, &out.per_image)?;
    Ok(RunOutcome {
        task,
        out_dir: out_dir.to_path_buf(),
        paths,
        report,
    })
}

fn check_timesteps(spec: &EnergySpec, setup: &ScoringSetup) -> Result<()> {
    if !spec.uses_diffusion() {
        return Ok(());
    }
    let steps = setup.schedule.len();
    match spec.timesteps.iter().find(|&&t| t == 0 || t > steps) {
        Some(t) => Err(BenchError::Config(format!(
            "[energy] timestep {t} is outside the backend schedule 1..={steps}"
        ))),
        None => Ok(()),
    }
}
