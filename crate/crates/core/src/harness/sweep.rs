//! Seeded Monte Carlo sweeps.
//!
//! Trial `t` at sweep point `k` uses the scenario seed
//! `derive_seed(spec seed, k)` and trial index `t`, so every algorithm sees
//! the same frame. Trials run in parallel and are merged in trial order,
//! which makes the output independent of the worker count.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::config::SweepSpec;
use crate::harness::csv::SweepRow;
use crate::metrics::{MetricsAccumulator, TrialMetrics};
use crate::pipeline::{evaluate, run_algorithm, Algorithm};
use crate::scenario::{derive_seed, generate_instance, SystemConfig};

/// Outcome of one trial for every selected algorithm, in `spec.algorithms` order.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub digest: [u8; 32],
    pub metrics: Vec<TrialMetrics>,
    pub elapsed: Vec<Duration>,
}

/// A sweep point abandoned after a fatal error.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFailure {
    pub value: f64,
    pub trial: u64,
    pub algorithm: Algorithm,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<PointFailure>,
}

/// Scenario configuration for point `index` of the sweep.
pub fn point_config(spec: &SweepSpec, index: usize) -> SystemConfig {
    let mut cfg = spec.variable.apply(&spec.base, spec.values[index]);
    cfg.seed = derive_seed(spec.base.seed, index as u64, "sweep-point");
    cfg
}

/// Runs every selected algorithm on trial `trial` of `cfg`.
pub fn run_trial(spec: &SweepSpec, cfg: &SystemConfig, trial: u64) -> std::result::Result<TrialOutcome, (Algorithm, Error)> {
    let inst = generate_instance(cfg, trial);
    let mut metrics = Vec::with_capacity(spec.algorithms.len());
    let mut elapsed = Vec::with_capacity(spec.algorithms.len());
    for &alg in &spec.algorithms {
        let start = Instant::now();
        let m = run_algorithm(&inst, cfg, &spec.baseline, alg)
            .and_then(|est| evaluate(&inst, &est))
            .map_err(|e| (alg, e))?;
        elapsed.push(start.elapsed());
        metrics.push(m);
    }
    Ok(TrialOutcome { digest: inst.digest(), metrics, elapsed })
}

fn run_point(spec: &SweepSpec, index: usize) -> std::result::Result<Vec<SweepRow>, PointFailure> {
    let cfg = point_config(spec, index);
    let value = spec.values[index];
    let outcomes: Vec<_> = (0..spec.trials_per_point as u64)
        .into_par_iter()
        .map(|t| run_trial(spec, &cfg, t).map_err(|(alg, e)| (t, alg, e)))
        .collect();

    let n_alg = spec.algorithms.len();
    let mut acc = vec![MetricsAccumulator::default(); n_alg];
    let mut wall = vec![Duration::ZERO; n_alg];
    for outcome in outcomes {
        let o = outcome.map_err(|(trial, algorithm, e)| PointFailure { value, trial, algorithm, message: e.to_string() })?;
        for k in 0..n_alg {
            acc[k].push(&o.metrics[k]);
            wall[k] += o.elapsed[k];
        }
    }

    Ok(spec
        .algorithms
        .iter()
        .zip(acc.iter().zip(&wall))
        .map(|(&algorithm, (a, w))| SweepRow {
            sweep_var: spec.variable,
            sweep_value: value,
            algorithm,
            trials: a.trials,
            aer_mean: a.aer.mean(),
            aer_se: a.aer.std_err(),
            nnmse_mean: a.nnmse.mean(),
            nnmse_se: a.nnmse.std_err(),
            nser_mean: a.nser.mean(),
            nser_se: a.nser.std_err(),
            nmse_g_mean: a.nmse_g.mean(),
            nmse_g_se: a.nmse_g.std_err(),
            undefined_trials: a.undefined,
            wall_s: if spec.record_wall_time { w.as_secs_f64() } else { 0.0 },
        })
        .collect())
}

/// Runs the whole sweep on `threads` workers (0 means rayon's default).
///
/// Rows come out ordered by sweep value (in the order listed) and then by
/// algorithm name. A point that hits a fatal error contributes no rows and
/// one entry in `failures`.
pub fn run_sweep(spec: &SweepSpec, threads: usize) -> Result<SweepReport> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Numeric(format!("cannot start worker pool: {e}")))?;
    let mut report = SweepReport::default();
    pool.install(|| {
        for index in 0..spec.values.len() {
            match run_point(spec, index) {
                Ok(rows) => report.rows.extend(rows),
                Err(f) => report.failures.push(f),
            }
        }
    });
    Ok(report)
}

/// Instance digests for the first `trials` trials at point `index`.
pub fn instance_digests(spec: &SweepSpec, index: usize, trials: u64) -> Vec<[u8; 32]> {
    let cfg = point_config(spec, index);
    (0..trials).map(|t| generate_instance(&cfg, t).digest()).collect()
}
