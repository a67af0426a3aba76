//! Reference estimators for `y = Phi g + w`: greedy OMP, soft-threshold AMP
//! and the support-aware linear MMSE bound.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    /// Atom cap for OMP; `None` means `ceil(3 * sum(p))`.
    pub omp_max_atoms: Option<usize>,
    /// OMP stops once `||r||^2 <= factor * M * noise_var`.
    pub omp_residual_factor: f64,
    pub amp_max_iters: usize,
    /// Soft threshold is `mult * ||r|| / sqrt(M)`.
    pub amp_threshold_mult: f64,
    /// Weight of the new AMP iterate.
    pub amp_damping: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            omp_max_atoms: None,
            omp_residual_factor: 1.0,
            amp_max_iters: 30,
            amp_threshold_mult: 1.4,
            amp_damping: 0.7,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.omp_max_atoms == Some(0) {
            return Err(Error::constraint("baseline.omp_max_atoms", "must be >= 1"));
        }
        if !(self.omp_residual_factor > 0.0 && self.omp_residual_factor.is_finite()) {
            return Err(Error::constraint("baseline.omp_residual_factor", "must be > 0"));
        }
        if self.amp_max_iters < 1 {
            return Err(Error::constraint("baseline.amp_max_iters", "must be >= 1"));
        }
        if !(self.amp_threshold_mult > 0.0 && self.amp_threshold_mult.is_finite()) {
            return Err(Error::constraint("baseline.amp_threshold_mult", "must be > 0"));
        }
        if !(self.amp_damping > 0.0 && self.amp_damping <= 1.0) {
            return Err(Error::constraint("baseline.amp_damping", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn max_atoms(&self, activity_prob: &[f64]) -> usize {
        self.omp_max_atoms
            .unwrap_or_else(|| (3.0 * activity_prob.iter().sum::<f64>()).ceil().max(1.0) as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseEstimate {
    pub g_hat: DVector<C64>,
    /// Nonzero coordinates of `g_hat`, ascending.
    pub support: Vec<usize>,
    pub iterations: usize,
    /// OMP: the selected columns became rank deficient. AMP: the residual diverged.
    pub aborted: bool,
}

fn nonzero_support(g: &DVector<C64>) -> Vec<usize> {
    g.iter().enumerate().filter(|(_, x)| x.norm_sqr() > 0.0).map(|(i, _)| i).collect()
}

fn check_dims(phi: &DMatrix<C64>, y: &DVector<C64>) -> Result<()> {
    if phi.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "phi has {} rows but y has length {}",
            phi.nrows(),
            y.len()
        )));
    }
    Ok(())
}

/// Least squares on the selected columns through the normal equations.
fn refit(phi: &DMatrix<C64>, cols: &[usize], y: &DVector<C64>) -> Option<DVector<C64>> {
    let sub = phi.select_columns(cols);
    let gram = sub.ad_mul(&sub);
    let scale = (0..cols.len()).map(|i| gram[(i, i)].re).fold(0.0, f64::max);
    let chol = Cholesky::new(gram)?;
    // Reject near-singular selections; Cholesky alone accepts tiny pivots.
    let min_pivot = (0..cols.len()).map(|i| chol.l_dirty()[(i, i)].re).fold(f64::INFINITY, f64::min);
    if min_pivot * min_pivot < 1e-12 * scale {
        return None;
    }
    Some(chol.solve(&sub.ad_mul(y)))
}

/// Orthogonal matching pursuit with a residual-power stopping rule.
pub fn omp_estimate(phi: &DMatrix<C64>, y: &DVector<C64>, noise_var: f64, max_atoms: usize, residual_factor: f64) -> Result<SparseEstimate> {
    check_dims(phi, y)?;
    let stop_power = residual_factor * phi.nrows() as f64 * noise_var;
    omp_inner(phi, y, max_atoms, |r| r <= stop_power)
}

/// OMP run for exactly `k` atoms, ignoring the residual; a diagnostic with
/// oracle knowledge of the sparsity.
pub fn omp_fixed_k(phi: &DMatrix<C64>, y: &DVector<C64>, k: usize) -> Result<SparseEstimate> {
    check_dims(phi, y)?;
    omp_inner(phi, y, k, |r| r == 0.0)
}

fn omp_inner(phi: &DMatrix<C64>, y: &DVector<C64>, max_atoms: usize, done: impl Fn(f64) -> bool) -> Result<SparseEstimate> {
    let n = phi.ncols();
    let norms: Vec<f64> = phi.column_iter().map(|c| c.norm()).collect();
    if let Some(i) = norms.iter().position(|x| !(*x > 0.0)) {
        return Err(Error::invalid("phi", format!("column {i} is zero")));
    }
    let mut selected: Vec<usize> = Vec::new();
    let mut in_set = vec![false; n];
    let mut coef = DVector::<C64>::zeros(0);
    let mut resid = y.clone();
    let mut aborted = false;
    let max_atoms = max_atoms.min(n).min(phi.nrows());
    while selected.len() < max_atoms && !done(resid.norm_squared()) {
        let corr = phi.ad_mul(&resid);
        let mut best = None;
        let mut best_val = -1.0;
        for i in 0..n {
            if in_set[i] {
                continue;
            }
            let v = corr[i].norm() / norms[i];
            if v > best_val {
                best_val = v;
                best = Some(i);
            }
        }
        let Some(pick) = best else { break };
        selected.push(pick);
        match refit(phi, &selected, y) {
            Some(c) => {
                in_set[pick] = true;
                coef = c;
                resid = y - phi.select_columns(&selected) * &coef;
            }
            None => {
                selected.pop();
                aborted = true;
                break;
            }
        }
    }
    let mut g_hat = DVector::zeros(n);
    for (k, &i) in selected.iter().enumerate() {
        g_hat[i] = coef[k];
    }
    let support = nonzero_support(&g_hat);
    Ok(SparseEstimate {
        g_hat,
        support,
        iterations: selected.len(),
        aborted,
    })
}

/// Complex soft threshold: shrinks the magnitude by `t`, keeps the phase.
pub fn soft_threshold(z: C64, t: f64) -> C64 {
    let mag = z.norm();
    if mag <= t {
        C64::new(0.0, 0.0)
    } else {
        z * ((mag - t) / mag)
    }
}

/// Soft-threshold AMP with Onsager correction.
///
/// Columns of `phi` are normalized internally and the estimate is mapped
/// back to the original column scaling.
pub fn amp_estimate(phi: &DMatrix<C64>, y: &DVector<C64>, cfg: &BaselineConfig) -> Result<SparseEstimate> {
    check_dims(phi, y)?;
    let (m, n) = phi.shape();
    let norms: Vec<f64> = phi.column_iter().map(|c| c.norm()).collect();
    if let Some(i) = norms.iter().position(|x| !(*x > 0.0)) {
        return Err(Error::invalid("phi", format!("column {i} is zero")));
    }
    let mut a = phi.clone();
    for (mut col, &s) in a.column_iter_mut().zip(&norms) {
        col.unscale_mut(s);
    }
    let sqrt_m = (m as f64).sqrt();
    let beta = cfg.amp_damping;

    let mut x = DVector::<C64>::zeros(n);
    let mut r = y.clone();
    let sigma0 = r.norm() / sqrt_m;
    let mut best = (sigma0, x.clone());
    let mut aborted = false;
    let mut iterations = 0;
    for _ in 0..cfg.amp_max_iters {
        iterations += 1;
        let sigma = r.norm() / sqrt_m;
        let pseudo = &x + a.ad_mul(&r);
        let thresh = cfg.amp_threshold_mult * sigma;
        let fresh = pseudo.map(|z| soft_threshold(z, thresh));
        let next = &fresh * C64::new(beta, 0.0) + &x * C64::new(1.0 - beta, 0.0);
        let active = next.iter().filter(|v| v.norm_sqr() > 0.0).count() as f64;
        let next_r = y - &a * &next + &r * C64::new(active / m as f64, 0.0);
        let step = (&next - &x).norm();
        x = next;
        r = next_r;
        let sigma_next = r.norm() / sqrt_m;
        if !sigma_next.is_finite() || sigma_next > 10.0 * sigma0 {
            aborted = true;
            break;
        }
        if sigma_next <= best.0 {
            best = (sigma_next, x.clone());
        }
        if step <= 1e-12 * x.norm() || sigma_next == 0.0 {
            break;
        }
    }
    let x = if aborted { best.1 } else { x };
    let g_hat = DVector::from_iterator(n, x.iter().zip(&norms).map(|(v, s)| v / *s));
    let support = nonzero_support(&g_hat);
    Ok(SparseEstimate {
        g_hat,
        support,
        iterations,
        aborted,
    })
}

/// Linear MMSE estimate given the true support: `C Phi_S^H (Phi_S C Phi_S^H + s2 I)^-1 y`.
pub fn oracle_mmse(phi: &DMatrix<C64>, y: &DVector<C64>, support: &[usize], alpha: &[f64], noise_var: f64) -> Result<DVector<C64>> {
    check_dims(phi, y)?;
    let (m, n) = phi.shape();
    if alpha.len() != n {
        return Err(Error::DimensionMismatch(format!("alpha has length {}, expected {n}", alpha.len())));
    }
    if let Some(&bad) = support.iter().find(|&&s| s >= n) {
        return Err(Error::DimensionMismatch(format!("support index {bad} out of range")));
    }
    if !(noise_var > 0.0) {
        return Err(Error::invalid("noise_var", "must be > 0"));
    }
    let mut g_hat = DVector::zeros(n);
    if support.is_empty() {
        return Ok(g_hat);
    }
    let sub = phi.select_columns(support);
    let mut b = sub.clone();
    for (mut col, &i) in b.column_iter_mut().zip(support) {
        col *= C64::new(alpha[i], 0.0);
    }
    let mut k = &b * sub.adjoint();
    for i in 0..m {
        k[(i, i)] += C64::new(noise_var, 0.0);
    }
    let chol = Cholesky::new(k).ok_or_else(|| Error::Numeric("oracle covariance not positive definite".into()))?;
    let est = b.ad_mul(&chol.solve(y));
    for (k, &i) in support.iter().enumerate() {
        g_hat[i] = est[k];
    }
    Ok(g_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::sample_cn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn gaussian_phi(m: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
        let mut phi = DMatrix::from_fn(m, n, |_, _| sample_cn(c(0.0, 0.0), 1.0, rng).unwrap());
        for mut col in phi.column_iter_mut() {
            let s = col.norm();
            col.unscale_mut(s);
        }
        phi
    }

    #[test]
    fn omp_one_sparse_orthonormal() {
        let phi = DMatrix::<C64>::identity(6, 6);
        let y = phi.column(3) * c(2.0, 0.0);
        let est = omp_estimate(&phi, &y, 1e-12, 4, 1.0).unwrap();
        assert_eq!(est.support, vec![3]);
        assert_eq!(est.iterations, 1);
        assert!((est.g_hat[3] - c(2.0, 0.0)).norm() < 1e-14);
        assert!(est.g_hat.iter().enumerate().all(|(i, v)| i == 3 || *v == c(0.0, 0.0)));
    }

    #[test]
    fn omp_zero_observation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = gaussian_phi(4, 8, &mut rng);
        let est = omp_estimate(&phi, &DVector::zeros(4), 0.1, 5, 1.0).unwrap();
        assert!(est.support.is_empty());
        assert_eq!(est.g_hat, DVector::zeros(8));
    }

    #[test]
    fn omp_respects_atom_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = gaussian_phi(16, 32, &mut rng);
        let y = DVector::from_fn(16, |_, _| sample_cn(c(0.0, 0.0), 1.0, &mut rng).unwrap());
        let est = omp_estimate(&phi, &y, 1e-6, 3, 1.0).unwrap();
        assert!(est.support.len() <= 3);
        let est = omp_fixed_k(&phi, &y, 5).unwrap();
        assert_eq!(est.support.len(), 5);
    }

    #[test]
    fn omp_recovers_two_sparse_noiseless() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 1000;
        let mut exact = 0;
        for _ in 0..trials {
            let phi = gaussian_phi(16, 32, &mut rng);
            let mut support = [rng.random_range(0..32), rng.random_range(0..32)];
            while support[1] == support[0] {
                support[1] = rng.random_range(0..32);
            }
            support.sort();
            let mut g = DVector::zeros(32);
            for &s in &support {
                g[s] = sample_cn(c(0.0, 0.0), 1.0, &mut rng).unwrap();
            }
            let y = &phi * &g;
            let est = omp_estimate(&phi, &y, 1e-20, 8, 1.0).unwrap();
            exact += (est.support == support.to_vec()) as usize;
        }
        assert!(exact as f64 >= 0.99 * trials as f64, "{exact}");
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(c(0.3, 0.4), 0.5), c(0.0, 0.0));
        assert_eq!(soft_threshold(c(0.3, 0.4), 0.6), c(0.0, 0.0));
        let z = c(0.6, -0.8);
        let out = soft_threshold(z * 2.0, 1.0);
        assert!((out.norm() - 1.0).abs() < 1e-15);
        assert!((out.arg() - z.arg()).abs() < 1e-15);
    }

    #[test]
    fn amp_zero_observation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = gaussian_phi(8, 16, &mut rng);
        let est = amp_estimate(&phi, &DVector::zeros(8), &BaselineConfig::default()).unwrap();
        assert_eq!(est.iterations, 1);
        assert_eq!(est.g_hat, DVector::zeros(16));
        assert!(est.support.is_empty());
    }

    /// For `Phi = I` and `y = c e_k` every AMP quantity lives on coordinate `k`
    /// and is a positive multiple of `c`, so with `e = c - x`:
    /// `e' = e - beta r (1 - tau / sqrt(M))`, `r' = e' + r / M`.
    #[test]
    fn amp_one_sparse_follows_fixed_point_recursion() {
        let m = 16;
        let phi = DMatrix::<C64>::identity(m, m);
        let amp_c = c(1.5, -0.5);
        let mut y = DVector::zeros(m);
        y[5] = amp_c;
        let cfg = BaselineConfig::default();
        let shrink = 1.0 - cfg.amp_threshold_mult / (m as f64).sqrt();
        let (mut e, mut r) = (1.0f64, 1.0f64);
        for iters in 1..=5 {
            let cfg_k = BaselineConfig { amp_max_iters: iters, ..cfg };
            e -= cfg.amp_damping * r * shrink;
            r = e + r / m as f64;
            let est = amp_estimate(&phi, &y, &cfg_k).unwrap();
            assert_eq!(est.support, vec![5]);
            let expected = amp_c * (1.0 - e);
            assert!((est.g_hat[5] - expected).norm() < 1e-12, "iter {iters}");
        }
        let est = amp_estimate(&phi, &y, &cfg).unwrap();
        assert!((est.g_hat[5] - amp_c).norm() < 1e-6);
        assert!(est.g_hat.iter().enumerate().all(|(i, v)| i == 5 || *v == c(0.0, 0.0)));
    }

    #[test]
    fn amp_is_deterministic_and_sparse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi = gaussian_phi(32, 64, &mut rng);
        let mut g = DVector::zeros(64);
        for s in [3, 17, 40] {
            g[s] = sample_cn(c(0.0, 0.0), 1.0, &mut rng).unwrap();
        }
        let noise = DVector::from_fn(32, |_, _| sample_cn(c(0.0, 0.0), 1e-3, &mut rng).unwrap());
        let y = &phi * &g + noise;
        let a = amp_estimate(&phi, &y, &BaselineConfig::default()).unwrap();
        let b = amp_estimate(&phi, &y, &BaselineConfig::default()).unwrap();
        assert_eq!(a, b);
        for i in 0..64 {
            assert_eq!(a.support.contains(&i), a.g_hat[i] != c(0.0, 0.0));
        }
        assert!((&a.g_hat - &g).norm_squared() / g.norm_squared() < 0.1);
    }

    #[test]
    fn oracle_scalar_shrinkage() {
        let phi = DMatrix::from_column_slice(2, 1, &[c(0.6, 0.0), c(0.0, 0.8)]);
        let y = phi.column(0) * c(2.0, 0.0);
        let g = oracle_mmse(&phi, &y, &[0], &[1.0], 1.0).unwrap();
        assert!((g[0] - c(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn oracle_noiseless_limit_is_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let phi = gaussian_phi(6, 10, &mut rng);
        let mut g = DVector::zeros(10);
        for s in [1, 4, 7] {
            g[s] = sample_cn(c(0.0, 0.0), 1.0, &mut rng).unwrap();
        }
        let y = &phi * &g;
        let est = oracle_mmse(&phi, &y, &[1, 4, 7], &[1.0; 10], 1e-14).unwrap();
        assert!((&est - &g).norm() < 1e-6);
        let empty = oracle_mmse(&phi, &y, &[], &[1.0; 10], 1.0).unwrap();
        assert_eq!(empty, DVector::zeros(10));
    }
}
