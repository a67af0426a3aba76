//! End-to-end receivers: pilot-phase estimation, activity decisions and
//! data detection for each algorithm, plus per-trial scoring.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::baselines::{amp_estimate, oracle_mmse, omp_estimate, BaselineConfig};
use crate::detection::{detect_active, mmse_data_detect, EstimationResult};
use crate::ep::{run_ep, LikelihoodFactor};
use crate::error::{Error, Result};
use crate::metrics::{aer, nmse_g, nnmse, nser, TrialMetrics};
use crate::scenario::{Instance, SystemConfig};
use crate::C64;

/// Variants are declared in name order, which is also the CSV row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    Amp,
    Ep,
    Omp,
    Oracle,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Amp, Algorithm::Ep, Algorithm::Omp, Algorithm::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Amp => "amp",
            Algorithm::Ep => "ep",
            Algorithm::Omp => "omp",
            Algorithm::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected amp, ep, omp or oracle)"))
    }
}

fn finish(
    inst: &Instance,
    cfg: &SystemConfig,
    g_hat: DVector<C64>,
    var_diag: Option<Vec<f64>>,
    support_hat: Vec<usize>,
    h_hat: Vec<C64>,
    trace: Option<crate::ep::EpTrace>,
) -> Result<EstimationResult> {
    let x_hat = mmse_data_detect(
        &inst.spreading,
        &support_hat,
        &h_hat,
        &inst.y_data,
        inst.noise_var,
        inst.tx_power_lin,
        &cfg.alphabet,
        cfg.regularizer,
    )?;
    Ok(EstimationResult {
        g_hat,
        var_diag,
        support_hat,
        h_hat,
        x_hat,
        trace,
    })
}

/// Runs `alg` on one frame, from pilot observation through data detection.
pub fn run_algorithm(inst: &Instance, cfg: &SystemConfig, baseline: &BaselineConfig, alg: Algorithm) -> Result<EstimationResult> {
    match alg {
        Algorithm::Ep => {
            let lf = LikelihoodFactor::new(inst.phi.clone(), inst.y_pilot.clone(), inst.noise_var)?;
            let out = run_ep(&lf, &cfg.activity_prob, &inst.channel_var, &cfg.ep, Some(&inst.composite))?;
            let (support, h_hat) = detect_active(&out.g_hat, &out.var_diag, &inst.channel_var)?;
            finish(inst, cfg, out.g_hat, Some(out.var_diag), support, h_hat, Some(out.trace))
        }
        Algorithm::Omp => {
            let est = omp_estimate(
                &inst.phi,
                &inst.y_pilot,
                inst.noise_var,
                baseline.max_atoms(&cfg.activity_prob),
                baseline.omp_residual_factor,
            )?;
            let h_hat = est.support.iter().map(|&i| est.g_hat[i]).collect();
            finish(inst, cfg, est.g_hat, None, est.support, h_hat, None)
        }
        Algorithm::Amp => {
            let est = amp_estimate(&inst.phi, &inst.y_pilot, baseline)?;
            let h_hat = est.support.iter().map(|&i| est.g_hat[i]).collect();
            finish(inst, cfg, est.g_hat, None, est.support, h_hat, None)
        }
        Algorithm::Oracle => {
            let support = inst.support();
            let g_hat = oracle_mmse(&inst.phi, &inst.y_pilot, &support, &inst.channel_var, inst.noise_var)?;
            let h_hat = support.iter().map(|&i| g_hat[i]).collect();
            finish(inst, cfg, g_hat, None, support, h_hat, None)
        }
    }
}

/// Scores an estimate against the frame's ground truth.
pub fn evaluate(inst: &Instance, est: &EstimationResult) -> Result<TrialMetrics> {
    let n = inst.activity.len();
    if est.g_hat.len() != n {
        return Err(Error::DimensionMismatch(format!("estimate has {} entries, expected {n}", est.g_hat.len())));
    }
    let truth = inst.support();
    let mut h_dense = DVector::zeros(n);
    for (&i, &h) in est.support_hat.iter().zip(&est.h_hat) {
        h_dense[i] = h;
    }
    Ok(TrialMetrics {
        aer: aer(&inst.activity, &est.activity_hat(n))?,
        nnmse: nnmse(&inst.channels, &h_dense, &truth),
        nser: nser(&inst.data_symbols, &est.x_hat, &truth, &est.support_hat),
        nmse_g: nmse_g(&inst.composite, &est.g_hat),
        n_active: truth.len(),
    })
}
