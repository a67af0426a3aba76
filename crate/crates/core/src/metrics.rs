//! Per-trial performance measures and their Monte Carlo aggregation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::C64;

/// Fraction of devices whose activity decision is wrong (misses plus false alarms over `N`).
pub fn aer(a: &[bool], a_hat: &[bool]) -> Result<f64> {
    if a.len() != a_hat.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} activity flags", a.len(), a_hat.len())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let wrong = a.iter().zip(a_hat).filter(|(x, y)| x != y).count();
    Ok(wrong as f64 / a.len() as f64)
}

/// Channel NMSE restricted to the truly active devices.
///
/// `h_hat` is dense: zero wherever the estimator did not declare the device
/// active. `None` when no device is active.
pub fn nnmse(h: &DVector<C64>, h_hat: &DVector<C64>, true_support: &[usize]) -> Option<f64> {
    if true_support.is_empty() {
        return None;
    }
    let (num, den) = true_support.iter().fold((0.0, 0.0), |(num, den), &i| {
        (num + (h_hat[i] - h[i]).norm_sqr(), den + h[i].norm_sqr())
    });
    (den > 0.0).then(|| num / den)
}

/// Symbol error rate over the truly active devices.
///
/// `x_true` is `N x J`; `x_hat` is `|support_hat| x J`. A missed device
/// contributes `J` errors, false-alarm rows are ignored. `None` when there
/// are no active devices or no data symbols.
pub fn nser(x_true: &DMatrix<C64>, x_hat: &DMatrix<C64>, true_support: &[usize], support_hat: &[usize]) -> Option<f64> {
    let j = x_true.ncols();
    if true_support.is_empty() || j == 0 {
        return None;
    }
    let mut errors = 0usize;
    for &n in true_support {
        match support_hat.iter().position(|&k| k == n) {
            Some(row) => {
                errors += (0..j).filter(|&i| x_hat[(row, i)] != x_true[(n, i)]).count();
            }
            None => errors += j,
        }
    }
    Some(errors as f64 / (true_support.len() * j) as f64)
}

/// `||g_hat - g||^2 / ||g||^2`; `None` for an all-zero `g`.
pub fn nmse_g(g: &DVector<C64>, g_hat: &DVector<C64>) -> Option<f64> {
    let den = g.norm_squared();
    (den > 0.0).then(|| (g_hat - g).norm_squared() / den)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMetrics {
    pub aer: f64,
    pub nnmse: Option<f64>,
    pub nser: Option<f64>,
    pub nmse_g: Option<f64>,
    pub n_active: usize,
}

/// Running count, sum and sum of squares of one metric.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    /// NaN when empty.
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum / self.count as f64
        }
    }

    /// Standard error of the mean; 0 for a single sample, NaN when empty.
    pub fn std_err(&self) -> f64 {
        match self.count {
            0 => f64::NAN,
            1 => 0.0,
            n => {
                let n = n as f64;
                let mean = self.sum / n;
                let var = ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
                (var / n).sqrt()
            }
        }
    }
}

/// Mergeable aggregate over trials. Undefined metric values are excluded
/// from their mean and counted in `undefined`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricsAccumulator {
    pub trials: u64,
    pub undefined: u64,
    pub aer: Moments,
    pub nnmse: Moments,
    pub nser: Moments,
    pub nmse_g: Moments,
}

impl MetricsAccumulator {
    pub fn push(&mut self, m: &TrialMetrics) {
        self.trials += 1;
        self.aer.push(m.aer);
        if m.nnmse.is_none() {
            self.undefined += 1;
        }
        if let Some(x) = m.nnmse {
            self.nnmse.push(x);
        }
        if let Some(x) = m.nser {
            self.nser.push(x);
        }
        if let Some(x) = m.nmse_g {
            self.nmse_g.push(x);
        }
    }

    pub fn merge(&mut self, other: &MetricsAccumulator) {
        self.trials += other.trials;
        self.undefined += other.undefined;
        self.aer.merge(&other.aer);
        self.nnmse.merge(&other.nnmse);
        self.nser.merge(&other.nser);
        self.nmse_g.merge(&other.nmse_g);
    }
}
