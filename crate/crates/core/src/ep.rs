//! Expectation propagation for the spike-and-slab composite vector.
//!
//! The posterior `p(y | g) p(g)` is approximated by `CN(g | m, V)`, the product
//! of the exact Gaussian likelihood and one Gaussian site per coordinate that
//! stands in for the Bernoulli-Gaussian prior term. Every iteration computes
//! all cavities against the same global approximation, refines each site by
//! moment matching, damps, and then refreshes the global approximation once.
//!
//! The global refresh never forms an `N x N` inverse. With `B = Phi V2` and
//! `K = s2 I_M + Phi V2 Phi^H = L L^H`,
//!
//! ```text
//! V = V2 - V2 Phi^H K^-1 Phi V2 = V2 - W^H W,   W = L^-1 B
//! m = m2 + V2 Phi^H K^-1 (y - Phi m2)
//! ```
//!
//! which costs `O(M N^2)` for the full covariance and `O(M^2 N)` when only its
//! diagonal is needed.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{ln_cn_pdf_unchecked, ScalarGaussian};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpConfig {
    pub max_iters: usize,
    /// Stop once the relative change of the global mean drops below this.
    pub tol: f64,
    /// Weight of the freshly matched site; 1 means no damping.
    pub damping: f64,
    /// Floor on site variances, relative to each device's channel variance.
    pub min_site_variance: f64,
}

impl Default for EpConfig {
    fn default() -> Self {
        Self {
            max_iters: 10,
            tol: 1e-4,
            damping: 0.9,
            min_site_variance: 1e-12,
        }
    }
}

impl EpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::constraint("ep.max_iters", "must be >= 1"));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::constraint("ep.tol", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.damping) {
            return Err(Error::constraint("ep.damping", "must lie in [0, 1]"));
        }
        if !(self.min_site_variance > 0.0 && self.min_site_variance.is_finite()) {
            return Err(Error::constraint("ep.min_site_variance", "must be > 0"));
        }
        Ok(())
    }
}

/// The Gaussian likelihood `CN(y | Phi g, s2 I)` kept in natural form.
#[derive(Debug, Clone)]
pub struct LikelihoodFactor {
    phi: DMatrix<C64>,
    phi_h: DMatrix<C64>,
    y: DVector<C64>,
    proj: DVector<C64>,
    noise_var: f64,
}

impl LikelihoodFactor {
    pub fn new(phi: DMatrix<C64>, y: DVector<C64>, noise_var: f64) -> Result<Self> {
        if phi.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "phi has {} rows but y has length {}",
                phi.nrows(),
                y.len()
            )));
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::invalid("noise_var", format!("must be finite and > 0, got {noise_var}")));
        }
        let phi_h = phi.adjoint();
        let proj = &phi_h * &y;
        Ok(Self {
            phi,
            phi_h,
            y,
            proj,
            noise_var,
        })
    }

    pub fn phi(&self) -> &DMatrix<C64> {
        &self.phi
    }

    pub fn y(&self) -> &DVector<C64> {
        &self.y
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// `Phi^H y`.
    pub fn proj(&self) -> &DVector<C64> {
        &self.proj
    }

    /// `Phi^H Phi`, formed on demand (`O(M N^2)`).
    pub fn gram(&self) -> DMatrix<C64> {
        &self.phi_h * &self.phi
    }

    pub fn n(&self) -> usize {
        self.phi.ncols()
    }

    pub fn m(&self) -> usize {
        self.phi.nrows()
    }
}

/// Global approximation `CN(m, V)`.
#[derive(Debug, Clone)]
pub struct GlobalPosterior {
    pub mean: DVector<C64>,
    pub cov: DMatrix<C64>,
}

struct Refresh {
    mean: DVector<C64>,
    var_diag: Vec<f64>,
    /// `L^-1 Phi V2`; the covariance is `V2 - W^H W`.
    w: DMatrix<C64>,
    /// Cavity of every coordinate, or `None` where it is improper.
    cavities: Vec<Option<ScalarGaussian>>,
}

fn refresh(lf: &LikelihoodFactor, site_mean: &DVector<C64>, site_var: &[f64]) -> Result<Refresh> {
    let (m, n) = lf.phi.shape();
    if site_mean.len() != n || site_var.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "expected {n} sites, got means {} and variances {}",
            site_mean.len(),
            site_var.len()
        )));
    }
    let mut b = lf.phi.clone();
    for (mut col, &v) in b.column_iter_mut().zip(site_var) {
        col *= C64::new(v, 0.0);
    }
    let mut k = &b * &lf.phi_h;
    for i in 0..m {
        k[(i, i)] += C64::new(lf.noise_var, 0.0);
    }
    // K is Hermitian by construction; rounding can break that bit-for-bit.
    for i in 0..m {
        k[(i, i)].im = 0.0;
        for j in 0..i {
            let avg = (k[(i, j)] + k[(j, i)].conj()) * 0.5;
            k[(i, j)] = avg;
            k[(j, i)] = avg.conj();
        }
    }
    let chol = Cholesky::new(k)
        .ok_or_else(|| Error::Numeric("noise-plus-signal covariance is not positive definite".into()))?;
    let l = chol.l_dirty();
    let w = l
        .solve_lower_triangular(&b)
        .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
    let resid = &lf.y - &lf.phi * site_mean;
    let z = l
        .solve_lower_triangular(&resid)
        .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
    let wz = w.ad_mul(&z);
    let mean = site_mean + &wz;
    let mut var_diag = Vec::with_capacity(n);
    let mut cavities = Vec::with_capacity(n);
    for (i, col) in w.column_iter().enumerate() {
        let v = site_var[i];
        let energy: f64 = col.iter().map(|x| x.norm_sqr()).sum();
        var_diag.push(v - energy);
        // With c = phi_n^H K^-1 phi_n and u = phi_n^H K^-1 r, the cavity is
        // CN(m2_n + u / c, 1 / c - v2_n). This avoids 1/V - 1/v2, which
        // cancels catastrophically once a site variance is tiny.
        let c = energy / (v * v);
        let cav_var = 1.0 / c - v;
        let cav_mean = site_mean[i] + wz[i] / (v * c);
        cavities.push(
            (c > 0.0 && cav_var > 0.0 && cav_var.is_finite() && cav_mean.re.is_finite() && cav_mean.im.is_finite())
                .then_some(ScalarGaussian { mean: cav_mean, var: cav_var }),
        );
    }
    if mean.iter().any(|x| !(x.re.is_finite() && x.im.is_finite())) || var_diag.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("global refresh produced non-finite values".into()));
    }
    Ok(Refresh { mean, var_diag, w, cavities })
}

fn covariance(site_var: &[f64], w: &DMatrix<C64>) -> DMatrix<C64> {
    let mut cov = -w.ad_mul(w);
    let n = site_var.len();
    for (i, &v) in site_var.iter().enumerate() {
        cov[(i, i)] = C64::new(v + cov[(i, i)].re, 0.0);
    }
    for i in 0..n {
        for j in 0..i {
            let avg = (cov[(i, j)] + cov[(j, i)].conj()) * 0.5;
            cov[(i, j)] = avg;
            cov[(j, i)] = avg.conj();
        }
    }
    cov
}

/// Combines the likelihood with diagonal Gaussian sites into the global
/// approximation `V = (Phi^H Phi / s2 + V2^-1)^-1`, `m = V (Phi^H y / s2 + V2^-1 m2)`,
/// evaluated through the Woodbury identity.
pub fn global_update(lf: &LikelihoodFactor, site_mean: &DVector<C64>, site_var: &[f64]) -> Result<GlobalPosterior> {
    if let Some(v) = site_var.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("site_var", format!("must be finite and > 0, got {v}")));
    }
    let r = refresh(lf, site_mean, site_var)?;
    Ok(GlobalPosterior {
        mean: r.mean,
        cov: covariance(site_var, &r.w),
    })
}

/// Divides site `site` out of the global marginal `global`.
///
/// `None` when the cavity precision is not strictly positive. [`run_ep`]
/// obtains the same quantity from the Woodbury factors instead, which stays
/// accurate when the site variance is far below the likelihood's.
pub fn cavity(global: ScalarGaussian, site: ScalarGaussian) -> Option<ScalarGaussian> {
    let prec = 1.0 / global.var - 1.0 / site.var;
    if !(prec > 0.0 && prec.is_finite()) {
        return None;
    }
    let var = 1.0 / prec;
    let mean = (global.mean / global.var - site.mean / site.var) * var;
    if !(var.is_finite() && mean.re.is_finite() && mean.im.is_finite()) {
        return None;
    }
    Some(ScalarGaussian { mean, var })
}

/// Moments of the tilted distribution `f2(g) * CN(g | cavity)`, where
/// `f2(g) = (1 - p) delta(g) + p CN(g | 0, alpha)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteMoments {
    pub ln_g0: f64,
    /// Normalizer.
    pub g0: f64,
    /// Unnormalized first moment.
    pub g1: C64,
    /// Unnormalized second moment `E|g|^2`.
    pub g2: f64,
    /// Tilted mean `G1 / G0`.
    pub mean: C64,
    /// Tilted variance `G2 / G0 - |mean|^2`, clamped at zero.
    pub var: f64,
    /// Posterior probability of the slab component.
    pub slab_prob: f64,
}

/// Closed-form tilted moments for one spike-and-slab site.
///
/// Evaluated in the log domain; `None` only when the normalizer itself is
/// not representable (both mixture components underflow).
pub fn site_moments(cav: ScalarGaussian, p: f64, alpha: f64) -> Option<SiteMoments> {
    if !(0.0..=1.0).contains(&p) || !(alpha > 0.0 && alpha.is_finite()) {
        return None;
    }
    let zero = C64::new(0.0, 0.0);
    let total = alpha + cav.var;
    let ln_slab = p.ln() + ln_cn_pdf_unchecked(zero, cav.mean, total);
    let ln_spike = (1.0 - p).ln() + ln_cn_pdf_unchecked(zero, cav.mean, cav.var);
    let hi = ln_slab.max(ln_spike);
    if !hi.is_finite() {
        return None;
    }
    let ln_g0 = hi + ((ln_slab - hi).exp() + (ln_spike - hi).exp()).ln();
    if !ln_g0.is_finite() {
        return None;
    }
    let slab_prob = (ln_slab - ln_g0).exp();
    let post_mean = cav.mean * (alpha / total);
    let post_var = alpha * cav.var / total;
    let mean = post_mean * slab_prob;
    // r s + r (1 - r) |mu|^2, the mixture variance without the G2/G0 - |E|^2 cancellation.
    let var = (slab_prob * post_var + slab_prob * (1.0 - slab_prob) * post_mean.norm_sqr()).max(0.0);
    let slab_mass = ln_slab.exp();
    Some(SiteMoments {
        ln_g0,
        g0: ln_g0.exp(),
        g1: post_mean * slab_mass,
        g2: slab_mass * (post_mean.norm_sqr() + post_var),
        mean,
        var,
        slab_prob,
    })
}

/// New site such that `site * cavity` has mean `mean` and variance `var`.
///
/// `None` when the implied site precision is not positive (the tilted
/// distribution is wider than the cavity) or not representable. A site
/// variance below `floor` is raised to `floor`, with the site mean chosen so
/// the combined mean still equals `mean`.
pub fn moment_match(mean: C64, var: f64, cav: ScalarGaussian, floor: f64) -> Option<ScalarGaussian> {
    let var = var.max(0.0);
    let prec = if var > 0.0 { 1.0 / var - 1.0 / cav.var } else { f64::INFINITY };
    if prec.is_nan() || prec <= 0.0 {
        return None;
    }
    let site_var = (1.0 / prec).max(floor);
    // Equals site_var * (mean / var - cav.mean / cav.var) whenever no floor applies.
    let site_mean = mean + (mean - cav.mean) * (site_var / cav.var);
    if !(site_var.is_finite() && site_mean.re.is_finite() && site_mean.im.is_finite()) {
        return None;
    }
    Some(ScalarGaussian {
        mean: site_mean,
        var: site_var,
    })
}

/// Convex blend of old and new site parameters, `beta` weighting the new one.
pub fn damp(old: ScalarGaussian, new: ScalarGaussian, beta: f64, floor: f64) -> ScalarGaussian {
    ScalarGaussian {
        mean: new.mean * beta + old.mean * (1.0 - beta),
        var: (beta * new.var + (1.0 - beta) * old.var).max(floor),
    }
}

#[derive(Debug, Clone)]
pub struct EpState {
    pub site_mean: DVector<C64>,
    pub site_var: Vec<f64>,
    pub global_mean: DVector<C64>,
    pub global_var_diag: Vec<f64>,
    /// Full global covariance; refreshed by [`init_state`] and at the end of [`run_ep`].
    pub global_cov: DMatrix<C64>,
    pub iter: usize,
    pub mean_delta: f64,
    pub skipped_sites: usize,
}

fn check_prior(n: usize, p: &[f64], alpha: &[f64]) -> Result<()> {
    if p.len() != n || alpha.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "expected {n} priors, got p of length {} and alpha of length {}",
            p.len(),
            alpha.len()
        )));
    }
    if let Some(x) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::invalid("p", format!("{x} not in [0, 1]")));
    }
    if let Some(x) = alpha.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::invalid("alpha", format!("{x} must be finite and > 0")));
    }
    if p.iter().any(|x| *x == 0.0) {
        return Err(Error::invalid("p", "p * alpha must be > 0 to initialise sites"));
    }
    Ok(())
}

/// Sites start at the prior moments: mean 0, variance `p_n alpha_n`.
pub fn init_state(lf: &LikelihoodFactor, p: &[f64], alpha: &[f64]) -> Result<EpState> {
    Ok(initial(lf, p, alpha, &[])?.0)
}

/// Initial state with site variances raised to `floors` (empty for none),
/// plus the cavities of its global approximation.
fn initial(lf: &LikelihoodFactor, p: &[f64], alpha: &[f64], floors: &[f64]) -> Result<(EpState, Vec<Option<ScalarGaussian>>)> {
    let n = lf.n();
    check_prior(n, p, alpha)?;
    let site_mean = DVector::from_element(n, C64::new(0.0, 0.0));
    let mut site_var: Vec<f64> = p.iter().zip(alpha).map(|(p, a)| p * a).collect();
    for (v, f) in site_var.iter_mut().zip(floors) {
        *v = v.max(*f);
    }
    let r = refresh(lf, &site_mean, &site_var)?;
    let state = EpState {
        global_cov: covariance(&site_var, &r.w),
        site_mean,
        site_var,
        global_mean: r.mean,
        global_var_diag: r.var_diag,
        iter: 0,
        mean_delta: f64::INFINITY,
        skipped_sites: 0,
    };
    Ok((state, r.cavities))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub mean_delta: f64,
    pub skipped_sites: usize,
    /// `||m - g||^2 / ||g||^2` when the true vector was supplied and is nonzero.
    pub nmse: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpTrace {
    pub records: Vec<IterRecord>,
    /// NMSE of the initial global mean, before any site update.
    pub initial_nmse: Option<f64>,
    pub converged: bool,
    /// Set when an iteration skipped every site and the run stopped early.
    pub stalled: bool,
}

#[derive(Debug, Clone)]
pub struct EpOutput {
    pub g_hat: DVector<C64>,
    pub var_diag: Vec<f64>,
    pub trace: EpTrace,
    pub state: EpState,
}

fn nmse_against(truth: Option<&DVector<C64>>, est: &DVector<C64>) -> Option<f64> {
    let g = truth?;
    let denom = g.norm_squared();
    (denom > 0.0).then(|| (est - g).norm_squared() / denom)
}

/// Runs EP to convergence or `cfg.max_iters` iterations.
pub fn run_ep(
    lf: &LikelihoodFactor,
    p: &[f64],
    alpha: &[f64],
    cfg: &EpConfig,
    truth: Option<&DVector<C64>>,
) -> Result<EpOutput> {
    cfg.validate()?;
    if let Some(g) = truth {
        if g.len() != lf.n() {
            return Err(Error::DimensionMismatch(format!("truth has length {}, expected {}", g.len(), lf.n())));
        }
    }
    let floors: Vec<f64> = alpha.iter().map(|a| a * cfg.min_site_variance).collect();
    let (mut state, mut cavities) = initial(lf, p, alpha, &floors)?;
    let n = lf.n();
    let mut trace = EpTrace {
        initial_nmse: nmse_against(truth, &state.global_mean),
        ..EpTrace::default()
    };
    let mut last_w = None;

    for iter in 1..=cfg.max_iters {
        let mut skipped = 0;
        let mut next_mean = state.site_mean.clone();
        let mut next_var = state.site_var.clone();
        for i in 0..n {
            let old = ScalarGaussian {
                mean: state.site_mean[i],
                var: state.site_var[i],
            };
            let updated = cavities[i].and_then(|cav| {
                let mom = site_moments(cav, p[i], alpha[i])?;
                moment_match(mom.mean, mom.var, cav, floors[i])
            });
            match updated {
                Some(new) => {
                    let site = damp(old, new, cfg.damping, floors[i]);
                    next_mean[i] = site.mean;
                    next_var[i] = site.var;
                }
                None => skipped += 1,
            }
        }
        state.skipped_sites = skipped;
        if skipped == n {
            trace.stalled = true;
            break;
        }
        state.site_mean = next_mean;
        state.site_var = next_var;
        let r = refresh(lf, &state.site_mean, &state.site_var)?;
        let change = (&r.mean - &state.global_mean).norm();
        let scale = r.mean.norm().max(state.global_mean.norm());
        state.mean_delta = if scale > 0.0 { change / scale } else { 0.0 };
        state.global_mean = r.mean;
        state.global_var_diag = r.var_diag;
        state.iter = iter;
        last_w = Some(r.w);
        cavities = r.cavities;
        trace.records.push(IterRecord {
            iter,
            mean_delta: state.mean_delta,
            skipped_sites: skipped,
            nmse: nmse_against(truth, &state.global_mean),
        });
        if state.mean_delta < cfg.tol {
            trace.converged = true;
            break;
        }
    }
    if let Some(w) = last_w {
        state.global_cov = covariance(&state.site_var, &w);
    }
    Ok(EpOutput {
        g_hat: state.global_mean.clone(),
        var_diag: state.global_var_diag.clone(),
        trace,
        state,
    })
}
