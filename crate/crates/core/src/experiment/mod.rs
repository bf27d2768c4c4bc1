//! Config-driven runs, sweeps and feature-file audits.

pub mod config;
pub mod csv;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{metrics_report, AlphaParams, MetricsOptions, MetricsReport};
use crate::model::{init_state, Labels, ModelState};
use crate::optimizer::{train_observed, Outcome, Record};

pub use config::{ExperimentConfig, Sweep, SweepVariable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub final_metrics: MetricsReport<f64>,
    pub final_objective: f64,
    pub final_grad_inf_norm: f64,
    pub converged: bool,
    pub outcome: Outcome,
    pub steps_taken: usize,
    pub wall_time_secs: f64,
    pub seed: u64,
    pub records: Vec<Record<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub runs: Vec<RunReport>,
}

/// Creates `dir` and checks it accepts writes.
pub fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".nclab-write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn alpha_params(cfg: &ExperimentConfig) -> AlphaParams<f64> {
    AlphaParams::from_hyper(&cfg.hp)
}

/// Trains without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> Result<(RunReport, ModelState<f64>)> {
    cfg.validate()?;
    if cfg.sweep.is_some() {
        return Err(Error::Config("config defines a sweep; run it as a sweep".into()));
    }
    let labels = Labels::class_major(cfg.hp.k, cfg.hp.n);
    let alpha = alpha_params(cfg);
    let state0 = init_state(&cfg.hp, &cfg.init);
    let start = Instant::now();
    let traj = train_observed(&state0, &cfg.hp, cfg.loss, &cfg.train_config(), |_, s| {
        metrics_report(s, &labels, &alpha, &cfg.metrics).map(Some)
    })?;
    let wall_time_secs = start.elapsed().as_secs_f64();

    let final_metrics = match traj.records.last().and_then(|r| r.metrics) {
        Some(m) if !matches!(traj.outcome, Outcome::Diverged { .. }) => m,
        _ => metrics_report(&traj.final_state, &labels, &alpha, &cfg.metrics)?,
    };
    let (final_objective, final_grad_inf_norm) = traj
        .records
        .iter()
        .rev()
        .find(|r| r.objective.is_finite())
        .map_or((f64::NAN, f64::NAN), |r| (r.objective, r.grad_inf_norm));
    let report = RunReport {
        config: cfg.clone(),
        final_metrics,
        final_objective,
        final_grad_inf_norm,
        converged: traj.converged(),
        outcome: traj.outcome,
        steps_taken: traj.steps_taken,
        wall_time_secs,
        seed: cfg.init.seed,
        records: traj.records,
    };
    Ok((report, traj.final_state))
}

fn write_run(dir: &Path, report: &RunReport, state: &ModelState<f64>) -> Result<()> {
    csv::write_trajectory(&dir.join("trajectory.csv"), &report.records)?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Config(format!("serializing report: {e}")))?;
    csv::write_text(&dir.join("report.json"), &(json + "\n"))?;
    let labels = Labels::class_major(report.config.hp.k, report.config.hp.n);
    csv::write_features(&dir.join("features.csv"), &state.h, &labels)?;
    csv::write_classifier(&dir.join("classifier.csv"), &state.w, &state.b)
}

/// Single run: trains and writes `trajectory.csv`, `report.json` and the
/// final `features.csv`/`classifier.csv` into `cfg.output_dir`.
///
/// The output directory is checked before any training starts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    prepare_output_dir(&cfg.output_dir)?;
    let (report, state) = execute(cfg)?;
    write_run(&cfg.output_dir, &report, &state)?;
    Ok(report)
}

pub fn run_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("run_{index:03}"))
}

/// Runs every sweep value in parallel, one `run_NNN` subdirectory each, then
/// writes `summary.csv` in value order.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::Config("config has no sweep".into()))?;
    prepare_output_dir(&cfg.output_dir)?;
    let mut configs = Vec::with_capacity(sweep.values.len());
    for (i, &v) in sweep.values.iter().enumerate() {
        let mut run_cfg = cfg.with_value(sweep.variable, v)?;
        run_cfg.output_dir = run_dir(&cfg.output_dir, i);
        prepare_output_dir(&run_cfg.output_dir)?;
        configs.push(run_cfg);
    }

    let runs = configs
        .par_iter()
        .map(|c| {
            let (report, state) = execute(c)?;
            write_run(&c.output_dir, &report, &state)?;
            Ok(report)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summary = csv::summary_header(sweep.variable.name());
    for (i, (run, &v)) in runs.iter().zip(&sweep.values).enumerate() {
        let outcome = match run.outcome {
            Outcome::Converged => "converged",
            Outcome::StepLimit => "step_limit",
            Outcome::Diverged { .. } => "diverged",
        };
        let last = run.records.iter().rev().find(|r| r.metrics.is_some());
        csv::summary_row(&mut summary, i, v, outcome, run.steps_taken, last);
    }
    csv::write_text(&cfg.output_dir.join("summary.csv"), &summary)?;
    Ok(SweepReport {
        variable: sweep.variable,
        values: sweep.values,
        runs,
    })
}

/// Full metrics for a `(H, W, b)` read from a features and a classifier file.
///
/// `alpha.n` is the effective per-class count used in the bias residual.
pub fn ingest_features(
    features: &Path,
    classifier: &Path,
    alpha: &AlphaParams<f64>,
    opts: &MetricsOptions,
) -> Result<MetricsReport<f64>> {
    let (w, b) = csv::read_classifier(classifier)?;
    let (h, labels) = csv::read_features(features, w.rows())?;
    if h.rows() != w.cols() {
        return Err(Error::DimensionMismatch(format!(
            "features have d = {} but classifier rows have d = {}",
            h.rows(),
            w.cols()
        )));
    }
    let state = ModelState::new(w, h, b)?;
    metrics_report(&state, &labels, alpha, opts)
}

/// Writes `state` as a features file and a classifier file.
pub fn export_state(state: &ModelState<f64>, labels: &Labels, features: &Path, classifier: &Path) -> Result<()> {
    csv::write_features(features, &state.h, labels)?;
    csv::write_classifier(classifier, &state.w, &state.b)
}
