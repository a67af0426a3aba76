//! Activity decisions, channel estimates and data detection from a sparse
//! estimate of the composite vector.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::ep::EpTrace;
use crate::error::{Error, Result};
use crate::scenario::Alphabet;
use crate::C64;

/// Regularizer of the linear MMSE data detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Regularizer {
    /// `noise_var / tx_power`, matching symbols of average power `tx_power`.
    #[default]
    Scaled,
    /// `noise_var` as written for unit-power symbols.
    Literal,
}

impl Regularizer {
    pub fn name(self) -> &'static str {
        match self {
            Regularizer::Scaled => "scaled",
            Regularizer::Literal => "literal",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "scaled" => Some(Regularizer::Scaled),
            "literal" => Some(Regularizer::Literal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub g_hat: DVector<C64>,
    /// Posterior variances where the estimator provides them.
    pub var_diag: Option<Vec<f64>>,
    /// Declared-active devices, ascending.
    pub support_hat: Vec<usize>,
    /// Channel estimate for each entry of `support_hat`.
    pub h_hat: Vec<C64>,
    /// `|support_hat| x J` detected symbols, scaled by `sqrt(tx_power)`.
    pub x_hat: DMatrix<C64>,
    pub trace: Option<EpTrace>,
}

impl EstimationResult {
    pub fn empty_support(&self) -> bool {
        self.support_hat.is_empty()
    }

    /// Dense activity decision vector of length `n`.
    pub fn activity_hat(&self, n: usize) -> Vec<bool> {
        let mut a = vec![false; n];
        for &k in &self.support_hat {
            a[k] = true;
        }
        a
    }
}

/// Energy threshold on `|g_n|^2` equivalent to a zero log-likelihood ratio
/// between `CN(0, alpha + v)` (active) and `CN(0, v)` (inactive).
pub fn aud_threshold(alpha: f64, v: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha", format!("must be finite and > 0, got {alpha}")));
    }
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::invalid("v", format!("must be finite and > 0, got {v}")));
    }
    // ln(1 + a/v) / (1/v - 1/(a + v)), with the denominator written as a / (v (a + v)).
    Ok((alpha / v).ln_1p() * v * ((alpha + v) / alpha))
}

/// Thresholds every coordinate; `|g_n|^2 == theta_n` counts as active.
pub fn detect_active(g_hat: &DVector<C64>, var_diag: &[f64], alpha: &[f64]) -> Result<(Vec<usize>, Vec<C64>)> {
    let n = g_hat.len();
    if var_diag.len() != n || alpha.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "g_hat has {n} entries, var_diag {}, alpha {}",
            var_diag.len(),
            alpha.len()
        )));
    }
    let mut support = Vec::new();
    let mut h_hat = Vec::new();
    for i in 0..n {
        let theta = aud_threshold(alpha[i], var_diag[i])?;
        if g_hat[i].norm_sqr() >= theta {
            support.push(i);
            h_hat.push(g_hat[i]);
        }
    }
    Ok((support, h_hat))
}

/// Index of the alphabet point nearest to `z`; ties go to the lowest index.
pub fn quantize_index(z: C64, alphabet: &Alphabet) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, s) in alphabet.points().iter().enumerate() {
        let d = (z - s).norm_sqr();
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

pub fn quantize(z: C64, alphabet: &Alphabet) -> C64 {
    alphabet.points()[quantize_index(z, alphabet)]
}

/// Linear MMSE detection over the declared-active devices followed by
/// per-entry quantization.
///
/// `y_data` is `M x J`. Returns `|support| x J` symbols scaled by `sqrt(tx_power)`;
/// an empty support yields a `0 x J` matrix.
#[allow(clippy::too_many_arguments)]
pub fn mmse_data_detect(
    spreading: &DMatrix<C64>,
    support: &[usize],
    h_hat: &[C64],
    y_data: &DMatrix<C64>,
    noise_var: f64,
    tx_power: f64,
    alphabet: &Alphabet,
    regularizer: Regularizer,
) -> Result<DMatrix<C64>> {
    let k = support.len();
    let j = y_data.ncols();
    if h_hat.len() != k {
        return Err(Error::DimensionMismatch(format!("{k} support entries but {} channels", h_hat.len())));
    }
    if spreading.nrows() != y_data.nrows() {
        return Err(Error::DimensionMismatch("spreading and y_data row counts differ".into()));
    }
    if let Some(&bad) = support.iter().find(|&&s| s >= spreading.ncols()) {
        return Err(Error::DimensionMismatch(format!("support index {bad} out of range")));
    }
    if k == 0 {
        return Ok(DMatrix::zeros(0, j));
    }
    if !(tx_power > 0.0 && noise_var > 0.0) {
        return Err(Error::invalid("tx_power", "tx_power and noise_var must be > 0"));
    }
    let lambda = match regularizer {
        Regularizer::Scaled => noise_var / tx_power,
        Regularizer::Literal => noise_var,
    };
    let mut l = spreading.select_columns(support);
    for (mut col, h) in l.column_iter_mut().zip(h_hat) {
        col *= *h;
    }
    let mut gram = l.ad_mul(&l);
    for i in 0..k {
        gram[(i, i)] += C64::new(lambda, 0.0);
    }
    let chol = Cholesky::new(gram).ok_or_else(|| Error::Numeric("regularized Gram matrix is singular".into()))?;
    let soft = chol.solve(&l.ad_mul(y_data));
    let scale = tx_power.sqrt();
    Ok(soft.map(|z| quantize(z / scale, alphabet) * scale))
}
