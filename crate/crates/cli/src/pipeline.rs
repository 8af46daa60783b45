//! Generate, identify, label and search for every (instance, run) pair.

use anyhow::{Context, Result};

use igv_ace::ace::{run_ace, AceResult};
use igv_ace::control::{ControllerTheta, DiscretePlant};
use igv_ace::ident::{build_archive, HistorianArchive};
use igv_ace::par::{self, Execution};
use igv_ace::seed;

use crate::config::{ExperimentConfig, Instance};

/// Sub-stream of a run seed used for the historian archive.
const ARCHIVE_STREAM: u64 = 0;
/// Sub-stream of a run seed used for the counterfactual search.
const SEARCH_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub archive_attempts: usize,
    pub archive_passers: usize,
    pub result: AceResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceResult {
    pub instance: Instance,
    pub runs: Vec<RunRecord>,
}

/// Per-instance means over completed runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub instance: String,
    pub validity: f64,
    pub lof: f64,
    pub iters: f64,
    /// Signed mean shift per component.
    pub delta: Vec<f64>,
}

impl RunSummary {
    pub fn from_runs(name: &str, runs: &[RunRecord]) -> Self {
        let n = runs.len().max(1) as f64;
        let dim = runs.first().map_or(0, |r| r.result.delta.len());
        let mut delta = vec![0.0; dim];
        for r in runs {
            for (d, v) in delta.iter_mut().zip(&r.result.delta) {
                *d += v / n;
            }
        }
        Self {
            instance: name.to_string(),
            validity: runs.iter().filter(|r| r.result.valid).count() as f64 / n,
            lof: runs.iter().map(|r| r.result.lof).sum::<f64>() / n,
            iters: runs.iter().map(|r| r.result.tests as f64).sum::<f64>() / n,
            delta,
        }
    }

    /// Component-wise mean of `|delta|`.
    pub fn mean_abs_delta(runs: &[RunRecord]) -> Vec<f64> {
        let n = runs.len().max(1) as f64;
        let dim = runs.first().map_or(0, |r| r.result.delta.len());
        (0..dim).map(|j| runs.iter().map(|r| r.result.delta[j].abs()).sum::<f64>() / n).collect()
    }
}

pub fn archive_for_run(cfg: &ExperimentConfig, plant: &DiscretePlant, inst: &Instance, run: usize) -> Result<HistorianArchive> {
    let s = seed::derive(cfg.run_seed(run), ARCHIVE_STREAM);
    let settings = cfg.archive_settings(inst)?;
    build_archive(plant, &cfg.sim, &cfg.thresholds, &settings, s, Execution::Sequential)
        .with_context(|| format!("instance `{}` run {run}: building the historian archive", inst.name))
}

pub fn one_run(cfg: &ExperimentConfig, plant: &DiscretePlant, inst: &Instance, run: usize) -> Result<RunRecord> {
    let archive = archive_for_run(cfg, plant, inst, run)?;
    let spec = cfg.cost_spec(inst)?;
    let result = run_ace(
        plant,
        &cfg.sim,
        &cfg.thresholds,
        &archive.dataset,
        &spec,
        &cfg.ace_settings(),
        seed::derive(cfg.run_seed(run), SEARCH_STREAM),
        Execution::Sequential,
    )
    .with_context(|| format!("instance `{}` run {run}: counterfactual search", inst.name))?;
    log::debug!("instance `{}` run {run}: valid={} tests={}", inst.name, result.valid, result.tests);
    Ok(RunRecord {
        run,
        seed: cfg.run_seed(run),
        archive_attempts: archive.attempts,
        archive_passers: archive.dataset.count(1),
        result,
    })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().context("starting the worker pool")
}

/// Runs every instance `cfg.n_runs` times on a pool of `cfg.workers`
/// threads. Results are ordered by instance then run, independent of
/// scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<InstanceResult>> {
    let plant = cfg.plant()?;
    let jobs: Vec<(usize, usize)> =
        (0..cfg.instances.len()).flat_map(|i| (0..cfg.n_runs).map(move |r| (i, r))).collect();
    let records = pool(cfg.workers)?.install(|| {
        par::map_slice(Execution::available(), &jobs, |&(i, r)| one_run(cfg, &plant, &cfg.instances[i], r))
    });
    let mut out: Vec<InstanceResult> =
        cfg.instances.iter().map(|inst| InstanceResult { instance: inst.clone(), runs: Vec::new() }).collect();
    for ((i, _), rec) in jobs.iter().zip(records) {
        out[*i].runs.push(rec?);
    }
    Ok(out)
}

pub fn theta_of(v: &[f64]) -> Result<ControllerTheta> {
    Ok(ControllerTheta::from_slice(v)?)
}
