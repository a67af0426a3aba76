//! Scalar circularly-symmetric complex Gaussian kernels.
//!
//! `CN(x | m, v)` denotes the density `exp(-|x - m|^2 / v) / (pi v)`: real and
//! imaginary parts are independent with variance `v / 2` each.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::C64;

/// One complex-Gaussian factor: mean and (strictly positive) variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarGaussian {
    pub mean: C64,
    pub var: f64,
}

impl ScalarGaussian {
    pub fn new(mean: C64, var: f64) -> Result<Self> {
        if !(var.is_finite() && var > 0.0) {
            return Err(Error::invalid("variance", format!("must be finite and > 0, got {var}")));
        }
        if !(mean.re.is_finite() && mean.im.is_finite()) {
            return Err(Error::invalid("mean", format!("must be finite, got {mean}")));
        }
        Ok(Self { mean, var })
    }

    /// Density of this Gaussian at `x`.
    pub fn pdf(&self, x: C64) -> f64 {
        ln_cn_pdf_unchecked(x, self.mean, self.var).exp()
    }

    pub fn ln_pdf(&self, x: C64) -> f64 {
        ln_cn_pdf_unchecked(x, self.mean, self.var)
    }
}

#[inline]
pub(crate) fn ln_cn_pdf_unchecked(x: C64, m: C64, v: f64) -> f64 {
    -(PI * v).ln() - (x - m).norm_sqr() / v
}

fn check_var(v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("variance", format!("must be finite and > 0, got {v}")))
    }
}

/// Log-density `ln CN(x | m, v)`.
pub fn ln_cn_pdf(x: C64, m: C64, v: f64) -> Result<f64> {
    check_var(v)?;
    Ok(ln_cn_pdf_unchecked(x, m, v))
}

/// Density `CN(x | m, v)`, evaluated in the log domain and exponentiated last.
pub fn cn_pdf(x: C64, m: C64, v: f64) -> Result<f64> {
    ln_cn_pdf(x, m, v).map(f64::exp)
}

/// Product of two complex Gaussian densities.
///
/// `CN(x | m1, v1) CN(x | m2, v2) = scale * CN(x | m, v)` with
/// `scale = CN(m2 | m1, v1 + v2)`, `m = (m1 v2 + m2 v1) / (v1 + v2)` and
/// `v = v1 v2 / (v1 + v2)`.
pub fn gaussian_product(g1: ScalarGaussian, g2: ScalarGaussian) -> (f64, ScalarGaussian) {
    let (scale_ln, result) = gaussian_product_ln(g1, g2);
    (scale_ln.exp(), result)
}

/// As [`gaussian_product`], returning `ln(scale)`.
pub fn gaussian_product_ln(g1: ScalarGaussian, g2: ScalarGaussian) -> (f64, ScalarGaussian) {
    let total = g1.var + g2.var;
    let scale_ln = ln_cn_pdf_unchecked(g2.mean, g1.mean, total);
    let mean = (g1.mean * g2.var + g2.mean * g1.var) / total;
    // v1 v2 / (v1 + v2) written as a harmonic combination to avoid overflow.
    let var = 1.0 / (1.0 / g1.var + 1.0 / g2.var);
    (scale_ln, ScalarGaussian { mean, var })
}

/// Draws one sample from `CN(m, v)`.
pub fn sample_cn<R: Rng + ?Sized>(m: C64, v: f64, rng: &mut R) -> Result<C64> {
    check_var(v)?;
    Ok(sample_cn_unchecked(m, v, rng))
}

#[inline]
pub(crate) fn sample_cn_unchecked<R: Rng + ?Sized>(m: C64, v: f64, rng: &mut R) -> C64 {
    let s = (v / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    m + C64::new(s * re, s * im)
}
