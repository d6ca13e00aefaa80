//! Scalar and Full BEKK covariance recursions.
//!
//! The full model is `S_t = CC' + A r_{t-1} r_{t-1}' A' + B S_{t-1} B'`; the
//! scalar restriction sets `A = sqrt(alpha) I` and `B = sqrt(beta) I`, giving
//! `S_t = CC' + alpha r_{t-1} r_{t-1}' + beta S_{t-1}`. Estimation is QML with
//! covariance targeting for the intercept; the full BEKK is simulation-only.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::garch::{logit, sigmoid};
use super::{ModelError, LN_2PI};
use crate::matrix::{duplication, duplication_pinv, kron, SymMatrix};
use crate::optimize::{self, bfgs};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SBekkParams {
    /// Lower-triangular intercept factor; the recursion intercept is `CC'`.
    pub c: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl SBekkParams {
    pub fn new(c: DMatrix<f64>, alpha: f64, beta: f64) -> Result<Self, ModelError> {
        validate_lower_triangular(&c)?;
        if alpha < 0.0 || beta < 0.0 {
            return Err(ModelError::InvalidInput(format!(
                "alpha and beta must be >= 0, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { c, alpha, beta })
    }

    pub fn n_assets(&self) -> usize {
        self.c.nrows()
    }

    pub fn persistence(&self) -> f64 {
        self.alpha + self.beta
    }

    pub fn intercept(&self) -> DMatrix<f64> {
        &self.c * self.c.transpose()
    }

    /// Unconditional covariance `CC' / (1 - alpha - beta)`, if stationary.
    pub fn unconditional_covariance(&self) -> Option<SymMatrix> {
        (self.persistence() < 1.0)
            .then(|| SymMatrix::symmetrized(self.intercept() / (1.0 - self.persistence())))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FBekkParams {
    pub c: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl FBekkParams {
    pub fn new(c: DMatrix<f64>, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, ModelError> {
        validate_lower_triangular(&c)?;
        let n = c.nrows();
        if a.nrows() != n || a.ncols() != n || b.nrows() != n || b.ncols() != n {
            return Err(ModelError::InvalidInput("A and B must match C's dimension".into()));
        }
        Ok(Self { c, a, b })
    }

    pub fn n_assets(&self) -> usize {
        self.c.nrows()
    }

    pub fn intercept(&self) -> DMatrix<f64> {
        &self.c * self.c.transpose()
    }

    /// Unconditional covariance solving
    /// `vech(S) = vech(CC') + [P(A(x)A)D + P(B(x)B)D] vech(S)`, if stationary.
    pub fn unconditional_covariance(&self) -> Option<SymMatrix> {
        let n = self.n_assets();
        let m = n * (n + 1) / 2;
        let d = duplication(n).ok()?;
        let p = duplication_pinv(n).ok()?;
        let trans = p.as_ref() * (kron(&self.a, &self.a) + kron(&self.b, &self.b)) * d.as_ref();
        let lhs = DMatrix::identity(m, m) - trans;
        let rhs = SymMatrix::symmetrized(self.intercept()).vech();
        let sol = lhs.lu().solve(rhs.as_vector())?;
        let hv = crate::matrix::HalfVec::new(sol).ok()?;
        Some(hv.to_matrix())
    }
}

fn validate_lower_triangular(c: &DMatrix<f64>) -> Result<(), ModelError> {
    if c.nrows() != c.ncols() {
        return Err(ModelError::InvalidInput("C must be square".into()));
    }
    for j in 0..c.ncols() {
        for i in 0..j {
            if c[(i, j)] != 0.0 {
                return Err(ModelError::InvalidInput(
                    "C must be lower triangular (zero above the diagonal)".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Output of a multivariate covariance filter.
#[derive(Debug, Clone)]
pub struct BekkFilterOutput {
    /// `cov_path[t]` is the conditional covariance of row `t` of the returns
    /// given information through `t-1`; `cov_path[0]` is the initial value.
    pub cov_path: Vec<SymMatrix>,
    /// Marginally standardized innovations `r_{i,t} / sqrt(S_{ii,t})`.
    pub std_residuals: DMatrix<f64>,
    pub loglik: f64,
    /// One-step-ahead covariance for the date after the sample.
    pub next_cov: SymMatrix,
}

pub(crate) fn check_returns_matrix(returns: &DMatrix<f64>, n: usize) -> Result<(), ModelError> {
    if returns.nrows() == 0 {
        return Err(ModelError::InvalidInput("returns must have at least one row".into()));
    }
    if returns.ncols() != n {
        return Err(ModelError::InvalidInput(format!(
            "returns have {} columns but the model has {} assets",
            returns.ncols(),
            n
        )));
    }
    Ok(())
}

fn spd_cholesky(m: &SymMatrix) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.as_matrix().clone())
}

fn gaussian_term(cov: &SymMatrix, r: &DVector<f64>) -> Result<f64, ModelError> {
    let chol = spd_cholesky(cov).ok_or_else(|| {
        ModelError::NumericalFailure("conditional covariance lost positive definiteness".into())
    })?;
    let n = r.len() as f64;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let solved = chol.solve(r);
    Ok(-0.5 * (n * LN_2PI + log_det + r.dot(&solved)))
}

fn bekk_filter_impl(
    intercept: &DMatrix<f64>,
    step: impl Fn(&DMatrix<f64>, &DVector<f64>, &DMatrix<f64>) -> DMatrix<f64>,
    returns: &DMatrix<f64>,
    init_cov: &SymMatrix,
) -> Result<BekkFilterOutput, ModelError> {
    let t_len = returns.nrows();
    let n = returns.ncols();
    if spd_cholesky(init_cov).is_none() {
        return Err(ModelError::InvalidInput(
            "initial covariance must be symmetric positive definite".into(),
        ));
    }

    let mut cov_path = Vec::with_capacity(t_len);
    let mut std_residuals = DMatrix::zeros(t_len, n);
    let mut loglik = 0.0;
    let mut cov = init_cov.clone();
    for t in 0..t_len {
        if t > 0 {
            let r_prev = DVector::from_iterator(n, returns.row(t - 1).iter().cloned());
            cov = SymMatrix::symmetrized(step(intercept, &r_prev, cov.as_matrix()));
        }
        let r = DVector::from_iterator(n, returns.row(t).iter().cloned());
        loglik += gaussian_term(&cov, &r)?;
        for i in 0..n {
            std_residuals[(t, i)] = r[i] / cov[(i, i)].sqrt();
        }
        cov_path.push(cov.clone());
    }
    let r_last = DVector::from_iterator(n, returns.row(t_len - 1).iter().cloned());
    let next_cov = SymMatrix::symmetrized(step(intercept, &r_last, cov.as_matrix()));
    Ok(BekkFilterOutput { cov_path, std_residuals, loglik, next_cov })
}

/// Scalar BEKK filter: `S_t = CC' + alpha r_{t-1} r_{t-1}' + beta S_{t-1}`.
pub fn sbekk_filter(
    params: &SBekkParams,
    returns: &DMatrix<f64>,
    init_cov: &SymMatrix,
) -> Result<BekkFilterOutput, ModelError> {
    check_returns_matrix(returns, params.n_assets())?;
    let (alpha, beta) = (params.alpha, params.beta);
    bekk_filter_impl(
        &params.intercept(),
        move |cc, r, prev| cc + alpha * r * r.transpose() + beta * prev,
        returns,
        init_cov,
    )
}

/// Full BEKK filter: `S_t = CC' + A r_{t-1} r_{t-1}' A' + B S_{t-1} B'`.
pub fn fbekk_filter(
    params: &FBekkParams,
    returns: &DMatrix<f64>,
    init_cov: &SymMatrix,
) -> Result<BekkFilterOutput, ModelError> {
    check_returns_matrix(returns, params.n_assets())?;
    let a = params.a.clone();
    let b = params.b.clone();
    bekk_filter_impl(
        &params.intercept(),
        move |cc, r, prev| {
            let ar = &a * r;
            cc + &ar * ar.transpose() + &b * prev * b.transpose()
        },
        returns,
        init_cov,
    )
}

/// `h`-step-ahead covariance forecast from the one-step-ahead covariance
/// `cov_next = S_{t+1|t}`: iterates `E[S_{t+k}] = CC' + (alpha+beta) E[S_{t+k-1}]`.
pub fn sbekk_forecast(params: &SBekkParams, cov_next: &SymMatrix, horizon: usize) -> Result<SymMatrix, ModelError> {
    if horizon == 0 {
        return Err(ModelError::InvalidInput("horizon must be >= 1".into()));
    }
    let mut cov = cov_next.as_matrix().clone();
    let cc = params.intercept();
    for _ in 1..horizon {
        cov = &cc + params.persistence() * cov;
    }
    Ok(SymMatrix::symmetrized(cov))
}

/// `h`-step-ahead covariance forecast for the full BEKK, iterating the vech
/// transition `vech(E[S_{t+k}]) = vech(CC') + M vech(E[S_{t+k-1}])`.
pub fn fbekk_forecast(params: &FBekkParams, cov_next: &SymMatrix, horizon: usize) -> Result<SymMatrix, ModelError> {
    if horizon == 0 {
        return Err(ModelError::InvalidInput("horizon must be >= 1".into()));
    }
    if horizon == 1 {
        return Ok(cov_next.clone());
    }
    let n = params.n_assets();
    let d = duplication(n).map_err(|e| ModelError::InvalidInput(e.to_string()))?;
    let p = duplication_pinv(n).map_err(|e| ModelError::InvalidInput(e.to_string()))?;
    let m = p.as_ref() * (kron(&params.a, &params.a) + kron(&params.b, &params.b)) * d.as_ref();
    let cc_vech = SymMatrix::symmetrized(params.intercept()).vech();
    let mut v = cov_next.vech().as_vector().clone();
    for _ in 1..horizon {
        v = cc_vech.as_vector() + &m * v;
    }
    Ok(crate::matrix::HalfVec::new(v).expect("triangular length").to_matrix())
}

/// Sample covariance `(1/T) sum r_t r_t'` (returns are assumed de-meaned).
pub fn sample_covariance(returns: &DMatrix<f64>) -> SymMatrix {
    let t_len = returns.nrows() as f64;
    SymMatrix::symmetrized(returns.transpose() * returns / t_len)
}

/// Fits the scalar BEKK by QML with covariance targeting:
/// `CC' = (1 - alpha - beta) * sample covariance`, leaving only
/// `(alpha, beta)` to the optimizer (BFGS on logistic-transformed scales).
pub fn sbekk_fit(returns: &DMatrix<f64>) -> Result<SBekkParams, ModelError> {
    let t_len = returns.nrows();
    if t_len < 100 {
        return Err(ModelError::InvalidInput(format!(
            "need at least 100 observations, got {t_len}"
        )));
    }
    let n = returns.ncols();
    let sample_cov = sample_covariance(returns);
    let sample_chol = spd_cholesky(&sample_cov).ok_or_else(|| {
        ModelError::estimation("sbekk", "sample covariance is not positive definite")
    })?;

    let decode = |x: &[f64]| -> (f64, f64) {
        let persistence = sigmoid(x[0]);
        let frac = sigmoid(x[1]);
        (persistence * frac, persistence * (1.0 - frac))
    };

    let scale = (t_len as f64) * (n as f64);
    let mut objective = |x: &[f64]| -> f64 {
        let (alpha, beta) = decode(x);
        let intercept = sample_cov.as_matrix() * (1.0 - alpha - beta);
        let res = bekk_filter_impl(
            &intercept,
            |cc, r, prev| cc + alpha * r * r.transpose() + beta * prev,
            returns,
            &sample_cov,
        );
        match res {
            Ok(out) if out.loglik.is_finite() => -out.loglik / scale,
            _ => f64::INFINITY,
        }
    };

    let x0 = [logit(0.95), logit(0.15 / 0.95)];
    let res = bfgs(&mut objective, &x0, optimize::MAX_ITER);
    if !res.converged {
        return Err(ModelError::estimation(
            "sbekk",
            format!("no convergence after {} iterations", res.iterations),
        ));
    }
    let (alpha, beta) = decode(&res.x);
    let intercept = sample_cov.as_matrix() * (1.0 - alpha - beta);
    let c = Cholesky::new(intercept)
        .ok_or_else(|| ModelError::estimation("sbekk", "targeted intercept lost definiteness"))?
        .l();
    drop(sample_chol);
    SBekkParams::new(c, alpha, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::garch::{garch11_filter, Garch11Params};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn lower_tri(n: usize, diag: f64, sub: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                diag
            } else if i > j {
                sub
            } else {
                0.0
            }
        })
    }

    pub(crate) fn simulate_sbekk(
        params: &SBekkParams,
        t_len: usize,
        seed: u64,
    ) -> DMatrix<f64> {
        let n = params.n_assets();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut cov = params.unconditional_covariance().unwrap();
        let mut returns = DMatrix::zeros(t_len, n);
        let cc = params.intercept();
        for t in 0..t_len {
            if t > 0 {
                let r_prev = DVector::from_iterator(n, returns.row(t - 1).iter().cloned());
                cov = SymMatrix::symmetrized(
                    &cc + params.alpha * &r_prev * r_prev.transpose()
                        + params.beta * cov.as_matrix(),
                );
            }
            let l = Cholesky::new(cov.as_matrix().clone()).unwrap().l();
            let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let r = l * z;
            for i in 0..n {
                returns[(t, i)] = r[i];
            }
        }
        returns
    }

    #[test]
    fn sbekk_zero_dynamics_constant() {
        let c = lower_tri(3, 0.5, 0.1);
        let p = SBekkParams::new(c.clone(), 0.0, 0.0).unwrap();
        let returns = DMatrix::from_fn(10, 3, |i, j| ((i + j) as f64 * 0.37).sin() * 0.1);
        let init = SymMatrix::symmetrized(&c * c.transpose());
        let out = sbekk_filter(&p, &returns, &init).unwrap();
        for cov in &out.cov_path {
            let diff = cov.as_matrix() - init.as_matrix();
            assert!(diff.iter().all(|x| x.abs() < 1e-14));
        }
    }

    #[test]
    fn sbekk_collapses_to_garch_in_one_dimension() {
        let omega: f64 = 0.04;
        let p = SBekkParams::new(DMatrix::from_element(1, 1, omega.sqrt()), 0.1, 0.8).unwrap();
        let g = Garch11Params::new(omega, 0.1, 0.8).unwrap();
        let r: Vec<f64> = (0..50).map(|i| ((i as f64) * 0.7).sin() * 0.3).collect();
        let r_mat = DMatrix::from_column_slice(50, 1, &r);
        let init = SymMatrix::symmetrized(DMatrix::from_element(1, 1, 0.5));
        let mv = sbekk_filter(&p, &r_mat, &init).unwrap();
        let uv = garch11_filter(&g, &r, 0.5).unwrap();
        for t in 0..50 {
            assert_abs_diff_eq!(mv.cov_path[t][(0, 0)], uv.variance_path[t], epsilon = 1e-14);
        }
        assert_abs_diff_eq!(mv.loglik, uv.loglik, epsilon = 1e-10);
    }

    #[test]
    fn sbekk_matches_matrix_loop_oracle() {
        let p = SBekkParams::new(lower_tri(3, 0.4, 0.05), 0.12, 0.8).unwrap();
        let returns = simulate_sbekk(&p, 200, 3);
        let init = p.unconditional_covariance().unwrap();
        let out = sbekk_filter(&p, &returns, &init).unwrap();
        let mut cov = init.as_matrix().clone();
        let cc = p.intercept();
        for t in 1..200 {
            let r = DVector::from_iterator(3, returns.row(t - 1).iter().cloned());
            cov = &cc + 0.12 * &r * r.transpose() + 0.8 * cov;
            cov = 0.5 * (&cov + cov.transpose());
            let diff = out.cov_path[t].as_matrix() - &cov;
            assert!(diff.iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn sbekk_rejects_non_spd_init() {
        let p = SBekkParams::new(lower_tri(2, 0.4, 0.0), 0.1, 0.8).unwrap();
        let returns = DMatrix::zeros(5, 2);
        let bad = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap();
        assert!(sbekk_filter(&p, &returns, &bad).is_err());
    }

    #[test]
    fn fbekk_scalar_restriction_reproduces_sbekk() {
        let n = 3;
        let c = lower_tri(n, 0.4, 0.05);
        let (alpha, beta): (f64, f64) = (0.1, 0.85);
        let fp = FBekkParams::new(
            c.clone(),
            DMatrix::identity(n, n) * alpha.sqrt(),
            DMatrix::identity(n, n) * beta.sqrt(),
        )
        .unwrap();
        let sp = SBekkParams::new(c, alpha, beta).unwrap();
        let returns = simulate_sbekk(&sp, 100, 5);
        let init = sp.unconditional_covariance().unwrap();
        let full = fbekk_filter(&fp, &returns, &init).unwrap();
        let scalar = sbekk_filter(&sp, &returns, &init).unwrap();
        for t in 0..100 {
            let diff = full.cov_path[t].as_matrix() - scalar.cov_path[t].as_matrix();
            assert!(diff.iter().all(|x| x.abs() < 1e-13));
        }
    }

    #[test]
    fn fbekk_zero_dynamics_constant() {
        let n = 2;
        let c = lower_tri(n, 0.5, 0.1);
        let p = FBekkParams::new(c.clone(), DMatrix::zeros(n, n), DMatrix::zeros(n, n)).unwrap();
        let init = SymMatrix::symmetrized(&c * c.transpose());
        let returns = DMatrix::from_fn(8, n, |i, j| ((i * 2 + j) as f64).cos() * 0.2);
        let out = fbekk_filter(&p, &returns, &init).unwrap();
        for cov in &out.cov_path[1..] {
            let diff = cov.as_matrix() - init.as_matrix();
            assert!(diff.iter().all(|x| x.abs() < 1e-14));
        }
    }

    #[test]
    fn fbekk_matches_hand_recursion() {
        let n = 2;
        let c = lower_tri(n, 0.3, 0.1);
        let a = DMatrix::from_row_slice(n, n, &[0.3, 0.05, 0.02, 0.25]);
        let b = DMatrix::from_row_slice(n, n, &[0.9, 0.01, 0.02, 0.88]);
        let p = FBekkParams::new(c.clone(), a.clone(), b.clone()).unwrap();
        let init = SymMatrix::identity(n);
        let returns = DMatrix::from_fn(50, n, |i, j| ((i + 3 * j) as f64 * 0.41).sin() * 0.5);
        let out = fbekk_filter(&p, &returns, &init).unwrap();
        let mut cov = DMatrix::identity(n, n);
        let cc = &c * c.transpose();
        for t in 1..50 {
            let r = DVector::from_iterator(n, returns.row(t - 1).iter().cloned());
            let ar = &a * &r;
            cov = &cc + &ar * ar.transpose() + &b * cov * b.transpose();
            cov = 0.5 * (&cov + cov.transpose());
            let diff = out.cov_path[t].as_matrix() - &cov;
            assert!(diff.iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn sbekk_fit_recovers_parameters() {
        let truth = SBekkParams::new(lower_tri(3, 0.3, 0.05), 0.15, 0.80).unwrap();
        let returns = simulate_sbekk(&truth, 20_000, 99);
        let fitted = sbekk_fit(&returns).unwrap();
        assert!((fitted.alpha - 0.15).abs() <= 0.05, "alpha {}", fitted.alpha);
        assert!((fitted.beta - 0.80).abs() <= 0.05, "beta {}", fitted.beta);
        assert!(fitted.persistence() < 1.0);
    }

    #[test]
    fn sbekk_fit_agrees_with_garch_fit_in_one_dimension() {
        let omega: f64 = 0.05;
        let truth = SBekkParams::new(DMatrix::from_element(1, 1, omega.sqrt()), 0.1, 0.85).unwrap();
        let returns = simulate_sbekk(&truth, 5_000, 17);
        let fitted_mv = sbekk_fit(&returns).unwrap();
        let series: Vec<f64> = returns.column(0).iter().cloned().collect();
        let fitted_uv = crate::models::garch::garch11_fit(&series).unwrap();
        assert!((fitted_mv.alpha - fitted_uv.alpha).abs() <= 0.02);
        assert!((fitted_mv.beta - fitted_uv.beta).abs() <= 0.02);
    }

    #[test]
    fn forecast_iterates_persistence() {
        let p = SBekkParams::new(lower_tri(2, 0.4, 0.1), 0.1, 0.8).unwrap();
        let next = SymMatrix::identity(2);
        let h3 = sbekk_forecast(&p, &next, 3).unwrap();
        let cc = p.intercept();
        let mut expect = DMatrix::identity(2, 2);
        for _ in 0..2 {
            expect = &cc + 0.9 * expect;
        }
        let diff = h3.as_matrix() - expect;
        assert!(diff.iter().all(|x| x.abs() < 1e-13));

        // full BEKK with scalar matrices agrees
        let fp = FBekkParams::new(
            p.c.clone(),
            DMatrix::identity(2, 2) * (0.1f64).sqrt(),
            DMatrix::identity(2, 2) * (0.8f64).sqrt(),
        )
        .unwrap();
        let h3f = fbekk_forecast(&fp, &next, 3).unwrap();
        let diff = h3f.as_matrix() - h3.as_matrix();
        assert!(diff.iter().all(|x| x.abs() < 1e-12));
    }
}
