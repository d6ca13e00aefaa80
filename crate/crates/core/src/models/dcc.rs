//! DCC-GARCH and its extension with variance spillovers (EDCC).
//!
//! Marginal variances follow GARCH(1,1) per asset (DCC) or the vector
//! recursion `v_t = nu + A r_{t-1}^2 + B v_{t-1}` with nonnegative spillover
//! matrix `A` and diagonal `B` (EDCC). Standardized innovations
//! `eta_{i,t} = r_{i,t} / sigma_{i,t}` drive the correlation recursion
//!
//! `Q_t = (1 - th1 - th2) Gamma + th1 eta_{t-1} eta_{t-1}' + th2 Q_{t-1}`,
//!
//! normalized as `Gamma_t = diag(q_ii)^{-1/2} Q_t diag(q_ii)^{-1/2}` so that
//! `Gamma_t` has unit diagonal by construction.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::garch::{garch11_fit, logit, sigmoid, Garch11Params};
use super::{ModelError, LN_2PI};
use crate::matrix::SymMatrix;
use crate::optimize::{self, bfgs, nelder_mead};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DccParams {
    pub marginals: Vec<Garch11Params>,
    /// Unconditional correlation target; unit diagonal, positive definite.
    pub gamma: SymMatrix,
    pub theta1: f64,
    pub theta2: f64,
}

impl DccParams {
    pub fn new(
        marginals: Vec<Garch11Params>,
        gamma: SymMatrix,
        theta1: f64,
        theta2: f64,
    ) -> Result<Self, ModelError> {
        if marginals.is_empty() || marginals.len() != gamma.dim() {
            return Err(ModelError::InvalidInput(
                "marginals must be nonempty and match Gamma's dimension".into(),
            ));
        }
        validate_correlation_target(&gamma)?;
        validate_thetas(theta1, theta2)?;
        Ok(Self { marginals, gamma, theta1, theta2 })
    }

    pub fn n_assets(&self) -> usize {
        self.marginals.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdccParams {
    /// Variance intercepts, strictly positive.
    pub nu: DVector<f64>,
    /// Nonnegative ARCH loadings; off-diagonal entries are spillovers.
    pub a: DMatrix<f64>,
    /// Nonnegative diagonal GARCH loadings.
    pub b: DMatrix<f64>,
    pub gamma: SymMatrix,
    pub theta1: f64,
    pub theta2: f64,
}

impl EdccParams {
    pub fn new(
        nu: DVector<f64>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        gamma: SymMatrix,
        theta1: f64,
        theta2: f64,
    ) -> Result<Self, ModelError> {
        let n = nu.len();
        if n == 0 || a.nrows() != n || a.ncols() != n || b.nrows() != n || b.ncols() != n {
            return Err(ModelError::InvalidInput("nu, A, B dimensions must agree".into()));
        }
        if nu.iter().any(|&x| x <= 0.0) {
            return Err(ModelError::InvalidInput("all intercepts must be > 0".into()));
        }
        if a.iter().any(|&x| x < 0.0) || b.iter().any(|&x| x < 0.0) {
            return Err(ModelError::InvalidInput("A and B entries must be >= 0".into()));
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && b[(i, j)] != 0.0 {
                    return Err(ModelError::InvalidInput("B must be diagonal".into()));
                }
            }
        }
        if gamma.dim() != n {
            return Err(ModelError::InvalidInput("Gamma dimension must match".into()));
        }
        validate_correlation_target(&gamma)?;
        validate_thetas(theta1, theta2)?;
        Ok(Self { nu, a, b, gamma, theta1, theta2 })
    }

    pub fn n_assets(&self) -> usize {
        self.nu.len()
    }

    /// Unconditional variance vector `(I - A - B)^{-1} nu`, if it exists.
    pub fn unconditional_variances(&self) -> Option<DVector<f64>> {
        let n = self.n_assets();
        let lhs = DMatrix::identity(n, n) - &self.a - &self.b;
        let sol = lhs.lu().solve(&self.nu)?;
        sol.iter().all(|&v| v > 0.0).then_some(sol)
    }
}

fn validate_correlation_target(gamma: &SymMatrix) -> Result<(), ModelError> {
    for i in 0..gamma.dim() {
        if (gamma[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(ModelError::InvalidInput("Gamma must have unit diagonal".into()));
        }
    }
    if gamma.min_eigenvalue() <= 0.0 {
        return Err(ModelError::InvalidInput("Gamma must be positive definite".into()));
    }
    Ok(())
}

fn validate_thetas(theta1: f64, theta2: f64) -> Result<(), ModelError> {
    if theta1 < 0.0 || theta2 < 0.0 || theta1 + theta2 >= 1.0 {
        return Err(ModelError::InvalidInput(format!(
            "need theta1, theta2 >= 0 with theta1 + theta2 < 1, got ({theta1}, {theta2})"
        )));
    }
    Ok(())
}

/// Initial state for the DCC-type filters.
#[derive(Debug, Clone)]
pub struct CorrInit {
    /// Conditional variances assigned to the first observation.
    pub variances: DVector<f64>,
    /// Initial value of the Q recursion.
    pub q0: SymMatrix,
}

impl CorrInit {
    /// Sample variances of the data columns paired with the model's
    /// correlation target.
    pub fn from_sample(returns: &DMatrix<f64>, gamma: &SymMatrix) -> Result<Self, ModelError> {
        let t_len = returns.nrows();
        if t_len == 0 {
            return Err(ModelError::InvalidInput("returns must not be empty".into()));
        }
        let n = returns.ncols();
        let mut variances = DVector::zeros(n);
        for i in 0..n {
            let col = returns.column(i);
            let mean = col.sum() / t_len as f64;
            let var = col.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / t_len as f64;
            if !(var > 0.0) {
                return Err(ModelError::InvalidInput(format!(
                    "column {i} has nonpositive sample variance"
                )));
            }
            variances[i] = var;
        }
        Ok(Self { variances, q0: gamma.clone() })
    }

    /// Unconditional variances implied by the parameters.
    pub fn unconditional_dcc(params: &DccParams) -> Result<Self, ModelError> {
        let mut variances = DVector::zeros(params.n_assets());
        for (i, g) in params.marginals.iter().enumerate() {
            variances[i] = g.unconditional_variance().ok_or_else(|| {
                ModelError::InvalidInput(format!("marginal {i} is not stationary"))
            })?;
        }
        Ok(Self { variances, q0: params.gamma.clone() })
    }

    pub fn unconditional_edcc(params: &EdccParams) -> Result<Self, ModelError> {
        let variances = params.unconditional_variances().ok_or_else(|| {
            ModelError::InvalidInput("EDCC variance recursion is not stationary".into())
        })?;
        Ok(Self { variances, q0: params.gamma.clone() })
    }
}

/// Output of a DCC-type filter. Paths follow the crate convention:
/// index `t` holds the quantity conditional on information through `t-1`.
#[derive(Debug, Clone)]
pub struct CorrFilterOutput {
    pub cov_path: Vec<SymMatrix>,
    /// `T x n` marginal conditional variances.
    pub variance_path: DMatrix<f64>,
    /// `T x n` standardized innovations `r_{i,t} / sigma_{i,t}`.
    pub eta: DMatrix<f64>,
    /// The `Q_t` path of the correlation recursion.
    pub q_path: Vec<SymMatrix>,
    pub loglik: f64,
    pub next_variances: DVector<f64>,
    pub next_q: SymMatrix,
    pub next_cov: SymMatrix,
}

fn normalize_q(q: &SymMatrix) -> Result<SymMatrix, ModelError> {
    let n = q.dim();
    let mut d = DVector::zeros(n);
    for i in 0..n {
        let qii = q[(i, i)];
        if qii <= 0.0 {
            return Err(ModelError::NumericalFailure(format!(
                "Q recursion produced nonpositive diagonal entry {qii:.3e}"
            )));
        }
        d[i] = qii.sqrt();
    }
    let mut r = DMatrix::identity(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = q[(i, j)] / (d[i] * d[j]);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(SymMatrix::symmetrized(r))
}

fn compose_cov(variances: &DVector<f64>, corr: &SymMatrix) -> SymMatrix {
    let n = variances.len();
    let s = variances.map(|v| v.sqrt());
    SymMatrix::from_fn(n, |i, j| corr[(i, j)] * s[i] * s[j])
}

/// Shared correlation machinery: given the marginal variance update rule,
/// runs the full filter and the Gaussian quasi log-likelihood.
fn corr_filter_impl(
    gamma: &SymMatrix,
    theta1: f64,
    theta2: f64,
    update_variances: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
    returns: &DMatrix<f64>,
    init: &CorrInit,
) -> Result<CorrFilterOutput, ModelError> {
    let t_len = returns.nrows();
    let n = returns.ncols();
    if t_len == 0 {
        return Err(ModelError::InvalidInput("returns must not be empty".into()));
    }
    if init.variances.len() != n || init.q0.dim() != n || gamma.dim() != n {
        return Err(ModelError::InvalidInput("initial state dimensions must match".into()));
    }
    if init.variances.iter().any(|&v| v <= 0.0) {
        return Err(ModelError::InvalidInput("initial variances must be > 0".into()));
    }

    let mut variance_path = DMatrix::zeros(t_len, n);
    let mut eta = DMatrix::zeros(t_len, n);
    let mut q_path = Vec::with_capacity(t_len);
    let mut cov_path = Vec::with_capacity(t_len);
    let mut loglik = 0.0;

    let intercept = gamma.as_matrix() * (1.0 - theta1 - theta2);
    let mut v = init.variances.clone();
    let mut q = init.q0.clone();
    let mut eta_prev = DVector::<f64>::zeros(n);
    for t in 0..t_len {
        if t > 0 {
            let r_prev = DVector::from_iterator(n, returns.row(t - 1).iter().cloned());
            v = update_variances(&v, &r_prev);
            if v.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(ModelError::NumericalFailure(
                    "marginal variance recursion left the positive domain".into(),
                ));
            }
            q = SymMatrix::symmetrized(
                &intercept + theta1 * &eta_prev * eta_prev.transpose() + theta2 * q.as_matrix(),
            );
        }
        let corr = normalize_q(&q)?;
        let cov = compose_cov(&v, &corr);

        let r = DVector::from_iterator(n, returns.row(t).iter().cloned());
        let chol = Cholesky::new(cov.as_matrix().clone()).ok_or_else(|| {
            ModelError::NumericalFailure("conditional covariance lost positive definiteness".into())
        })?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let solved = chol.solve(&r);
        loglik += -0.5 * ((n as f64) * LN_2PI + log_det + r.dot(&solved));

        for i in 0..n {
            variance_path[(t, i)] = v[i];
            eta[(t, i)] = r[i] / v[i].sqrt();
        }
        eta_prev = DVector::from_iterator(n, eta.row(t).iter().cloned());
        q_path.push(q.clone());
        cov_path.push(cov);
    }

    let r_last = DVector::from_iterator(n, returns.row(t_len - 1).iter().cloned());
    let next_variances = update_variances(&v, &r_last);
    let next_q = SymMatrix::symmetrized(
        &intercept + theta1 * &eta_prev * eta_prev.transpose() + theta2 * q.as_matrix(),
    );
    let next_cov = compose_cov(&next_variances, &normalize_q(&next_q)?);

    Ok(CorrFilterOutput {
        cov_path,
        variance_path,
        eta,
        q_path,
        loglik,
        next_variances,
        next_q,
        next_cov,
    })
}

/// DCC filter: GARCH(1,1) marginals plus the correlation recursion.
pub fn dcc_filter(
    params: &DccParams,
    returns: &DMatrix<f64>,
    init: &CorrInit,
) -> Result<CorrFilterOutput, ModelError> {
    super::bekk::check_returns_matrix(returns, params.n_assets())?;
    let marginals = params.marginals.clone();
    corr_filter_impl(
        &params.gamma,
        params.theta1,
        params.theta2,
        move |v, r_prev| {
            DVector::from_fn(v.len(), |i, _| {
                let g = &marginals[i];
                g.omega + g.alpha * r_prev[i] * r_prev[i] + g.beta * v[i]
            })
        },
        returns,
        init,
    )
}

/// EDCC filter: vector variance recursion `v_t = nu + A r_{t-1}^2 + B v_{t-1}`
/// plus the correlation recursion.
pub fn edcc_filter(
    params: &EdccParams,
    returns: &DMatrix<f64>,
    init: &CorrInit,
) -> Result<CorrFilterOutput, ModelError> {
    super::bekk::check_returns_matrix(returns, params.n_assets())?;
    let a = params.a.clone();
    let b_diag = params.b.diagonal();
    let nu = params.nu.clone();
    corr_filter_impl(
        &params.gamma,
        params.theta1,
        params.theta2,
        move |v, r_prev| {
            let r2 = r_prev.component_mul(r_prev);
            &nu + &a * r2 + b_diag.component_mul(v)
        },
        returns,
        init,
    )
}

fn corr_forecast(
    gamma: &SymMatrix,
    theta1: f64,
    theta2: f64,
    v_next: &DVector<f64>,
    q_next: &SymMatrix,
    horizon: usize,
    iterate_variance: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> Result<SymMatrix, ModelError> {
    if horizon == 0 {
        return Err(ModelError::InvalidInput("horizon must be >= 1".into()));
    }
    let mut v = v_next.clone();
    for _ in 1..horizon {
        v = iterate_variance(&v);
    }
    // Multi-step correlations iterate Q in expectation and normalize at the
    // target horizon: E[Q_{t+h}] = Gamma + (th1+th2)^{h-1} (Q_{t+1} - Gamma).
    let decay = (theta1 + theta2).powi(horizon as i32 - 1);
    let q = SymMatrix::symmetrized(
        gamma.as_matrix() + decay * (q_next.as_matrix() - gamma.as_matrix()),
    );
    Ok(compose_cov(&v, &normalize_q(&q)?))
}

/// `h`-step-ahead covariance forecast from the one-step-ahead state
/// `(v_{t+1|t}, Q_{t+1|t})`.
pub fn dcc_forecast(
    params: &DccParams,
    v_next: &DVector<f64>,
    q_next: &SymMatrix,
    horizon: usize,
) -> Result<SymMatrix, ModelError> {
    let marginals = params.marginals.clone();
    corr_forecast(&params.gamma, params.theta1, params.theta2, v_next, q_next, horizon, move |v| {
        DVector::from_fn(v.len(), |i, _| {
            let g = &marginals[i];
            g.omega + (g.alpha + g.beta) * v[i]
        })
    })
}

pub fn edcc_forecast(
    params: &EdccParams,
    v_next: &DVector<f64>,
    q_next: &SymMatrix,
    horizon: usize,
) -> Result<SymMatrix, ModelError> {
    let ab = &params.a + &params.b;
    let nu = params.nu.clone();
    corr_forecast(&params.gamma, params.theta1, params.theta2, v_next, q_next, horizon, move |v| {
        &nu + &ab * v
    })
}

/// Sample correlation matrix of the columns of `x` (no demeaning; the inputs
/// are standardized innovations).
fn sample_correlation(x: &DMatrix<f64>) -> SymMatrix {
    let n = x.ncols();
    let gram = x.transpose() * x;
    let d: Vec<f64> = (0..n).map(|i| gram[(i, i)].sqrt()).collect();
    SymMatrix::from_fn(n, |i, j| if i == j { 1.0 } else { gram[(i, j)] / (d[i] * d[j]) })
}

/// Gaussian quasi log-likelihood of the correlation step:
/// `-1/2 sum_t [ log det Gamma_t + eta_t' Gamma_t^{-1} eta_t - eta_t' eta_t ]`.
fn correlation_loglik(
    gamma: &SymMatrix,
    eta: &DMatrix<f64>,
    theta1: f64,
    theta2: f64,
) -> Option<f64> {
    let t_len = eta.nrows();
    let n = eta.ncols();
    let intercept = gamma.as_matrix() * (1.0 - theta1 - theta2);
    let mut q = gamma.clone();
    let mut ll = 0.0;
    for t in 0..t_len {
        if t > 0 {
            let e_prev = DVector::from_iterator(n, eta.row(t - 1).iter().cloned());
            q = SymMatrix::symmetrized(
                &intercept + theta1 * &e_prev * e_prev.transpose() + theta2 * q.as_matrix(),
            );
        }
        let corr = normalize_q(&q).ok()?;
        let chol = Cholesky::new(corr.as_matrix().clone())?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let e = DVector::from_iterator(n, eta.row(t).iter().cloned());
        let solved = chol.solve(&e);
        ll += -0.5 * (log_det + e.dot(&solved) - e.dot(&e));
    }
    ll.is_finite().then_some(ll)
}

fn fit_thetas(
    gamma: &SymMatrix,
    eta: &DMatrix<f64>,
    stage: &str,
) -> Result<(f64, f64), ModelError> {
    let t_len = eta.nrows() as f64;
    let decode = |x: &[f64]| -> (f64, f64) {
        let s = sigmoid(x[0]);
        let f = sigmoid(x[1]);
        (s * f, s * (1.0 - f))
    };
    let mut objective = |x: &[f64]| -> f64 {
        let (t1, t2) = decode(x);
        match correlation_loglik(gamma, eta, t1, t2) {
            Some(ll) => -ll / t_len,
            None => f64::INFINITY,
        }
    };
    let x0 = [logit(0.95), logit(0.05 / 0.95)];
    let res = nelder_mead(&mut objective, &x0, 0.5, optimize::MAX_ITER);
    if !res.converged {
        return Err(ModelError::estimation(
            stage,
            format!("correlation step did not converge after {} iterations", res.iterations),
        ));
    }
    Ok(decode(&res.x))
}

fn column_vec(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.column(i).iter().cloned().collect()
}

/// Multi-step DCC estimation: per-asset GARCH(1,1) QML, then the sample
/// correlation of the standardized innovations as `Gamma`, then QML for
/// `(theta1, theta2)` on the correlation likelihood.
pub fn dcc_fit(returns: &DMatrix<f64>) -> Result<DccParams, ModelError> {
    let t_len = returns.nrows();
    if t_len < 100 {
        return Err(ModelError::InvalidInput(format!(
            "need at least 100 observations, got {t_len}"
        )));
    }
    let n = returns.ncols();
    let mut marginals = Vec::with_capacity(n);
    let mut eta = DMatrix::zeros(t_len, n);
    for i in 0..n {
        let series = column_vec(returns, i);
        let fitted = garch11_fit(&series).map_err(|e| {
            ModelError::estimation(format!("dcc marginal asset {i}"), e.to_string())
        })?;
        let var0 = series.iter().map(|&x| x * x).sum::<f64>() / t_len as f64;
        let filt = super::garch::garch11_filter(&fitted, &series, var0)?;
        for t in 0..t_len {
            eta[(t, i)] = filt.std_residuals[t];
        }
        marginals.push(fitted);
    }
    let gamma = sample_correlation(&eta);
    if gamma.min_eigenvalue() <= 0.0 {
        return Err(ModelError::estimation(
            "dcc correlation target",
            "sample correlation of standardized residuals is singular",
        ));
    }
    let (theta1, theta2) = fit_thetas(&gamma, &eta, "dcc")?;
    DccParams::new(marginals, gamma, theta1, theta2)
}

/// Joint QML for the EDCC variance recursion `(nu, A, B)` with nonnegativity
/// enforced by squared transforms, followed by the DCC correlation steps.
pub fn edcc_fit(returns: &DMatrix<f64>) -> Result<EdccParams, ModelError> {
    let t_len = returns.nrows();
    if t_len < 100 {
        return Err(ModelError::InvalidInput(format!(
            "need at least 100 observations, got {t_len}"
        )));
    }
    let n = returns.ncols();

    // Initial values from independent GARCH(1,1) fits.
    let mut init_omega = vec![0.0; n];
    let mut init_alpha = vec![0.0; n];
    let mut init_beta = vec![0.0; n];
    for i in 0..n {
        let series = column_vec(returns, i);
        match garch11_fit(&series) {
            Ok(g) => {
                init_omega[i] = g.omega;
                init_alpha[i] = g.alpha.max(1e-4);
                init_beta[i] = g.beta.max(0.1);
            }
            Err(_) => {
                let var = series.iter().map(|&x| x * x).sum::<f64>() / t_len as f64;
                init_omega[i] = 0.1 * var;
                init_alpha[i] = 0.05;
                init_beta[i] = 0.85;
            }
        }
    }

    // Parameter layout: [ln nu_i; s_a (n*n, row-major, a = s^2); s_b (n, b = s^2)]
    let dim = n + n * n + n;
    let mut x0 = vec![0.0; dim];
    for i in 0..n {
        x0[i] = init_omega[i].ln();
        x0[n + i * n + i] = init_alpha[i].sqrt();
        x0[n + n * n + i] = init_beta[i].sqrt();
    }
    for i in 0..n {
        for j in 0..n {
            if i != j {
                x0[n + i * n + j] = 0.05;
            }
        }
    }

    let decode = |x: &[f64]| -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
        let nu = DVector::from_fn(n, |i, _| x[i].exp());
        let a = DMatrix::from_fn(n, n, |i, j| {
            let s = x[n + i * n + j];
            s * s
        });
        let b = DVector::from_fn(n, |i, _| {
            let s = x[n + n * n + i];
            s * s
        });
        (nu, a, b)
    };

    let sample_var: Vec<f64> = (0..n)
        .map(|i| returns.column(i).iter().map(|&x| x * x).sum::<f64>() / t_len as f64)
        .collect();
    if sample_var.iter().any(|&v| !(v > 0.0)) {
        return Err(ModelError::estimation("edcc variance", "a column has zero variance"));
    }
    let v0 = DVector::from_row_slice(&sample_var);

    // First-stage QML: Gaussian likelihood with identity correlation,
    // i.e. the sum of marginal variance likelihoods.
    let scale = (t_len * n) as f64;
    let mut objective = |x: &[f64]| -> f64 {
        let (nu, a, b) = decode(x);
        let mut v = v0.clone();
        let mut ll = 0.0;
        for t in 0..t_len {
            if t > 0 {
                let r_prev = returns.row(t - 1);
                let r2 = DVector::from_fn(n, |i, _| r_prev[i] * r_prev[i]);
                v = &nu + &a * r2 + b.component_mul(&v);
            }
            for i in 0..n {
                let vi = v[i];
                if !(vi > 0.0) || !vi.is_finite() {
                    return f64::INFINITY;
                }
                let r = returns[(t, i)];
                ll += -0.5 * (LN_2PI + vi.ln() + r * r / vi);
            }
        }
        if ll.is_finite() {
            -ll / scale
        } else {
            f64::INFINITY
        }
    };

    let res = bfgs(&mut objective, &x0, optimize::MAX_ITER);
    if !res.converged {
        return Err(ModelError::estimation(
            "edcc variance",
            format!("no convergence after {} iterations", res.iterations),
        ));
    }
    let (nu, a, b_diag) = decode(&res.x);

    // Standardized innovations from the fitted variance recursion.
    let mut eta = DMatrix::zeros(t_len, n);
    {
        let mut v = v0.clone();
        for t in 0..t_len {
            if t > 0 {
                let r_prev = returns.row(t - 1);
                let r2 = DVector::from_fn(n, |i, _| r_prev[i] * r_prev[i]);
                v = &nu + &a * r2 + b_diag.component_mul(&v);
            }
            for i in 0..n {
                eta[(t, i)] = returns[(t, i)] / v[i].sqrt();
            }
        }
    }
    let gamma = sample_correlation(&eta);
    if gamma.min_eigenvalue() <= 0.0 {
        return Err(ModelError::estimation(
            "edcc correlation target",
            "sample correlation of standardized residuals is singular",
        ));
    }
    let (theta1, theta2) = fit_thetas(&gamma, &eta, "edcc")?;
    EdccParams::new(nu, a, DMatrix::from_diagonal(&b_diag), gamma, theta1, theta2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::garch::garch11_filter;
    use approx::assert_abs_diff_eq;

    fn toy_gamma(n: usize, rho: f64) -> SymMatrix {
        SymMatrix::from_fn(n, |i, j| if i == j { 1.0 } else { rho })
    }

    fn toy_dcc(n: usize) -> DccParams {
        let marginals =
            (0..n).map(|_| Garch11Params::new(0.05, 0.08, 0.85).unwrap()).collect::<Vec<_>>();
        DccParams::new(marginals, toy_gamma(n, 0.4), 0.1, 0.8).unwrap()
    }

    fn toy_returns(t_len: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(t_len, n, |t, i| ((t * (i + 2)) as f64 * 0.31).sin() * 0.4)
    }

    #[test]
    fn dcc_zero_thetas_gives_constant_correlation() {
        let n = 3;
        let marginals =
            (0..n).map(|_| Garch11Params::new(0.05, 0.08, 0.85).unwrap()).collect::<Vec<_>>();
        let params = DccParams::new(marginals, toy_gamma(n, 0.35), 0.0, 0.0).unwrap();
        let returns = toy_returns(60, n);
        let init = CorrInit::from_sample(&returns, &params.gamma).unwrap();
        let out = dcc_filter(&params, &returns, &init).unwrap();
        for t in 0..60 {
            let cov = &out.cov_path[t];
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        let implied =
                            cov[(i, j)] / (cov[(i, i)].sqrt() * cov[(j, j)].sqrt());
                        assert_abs_diff_eq!(implied, 0.35, epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn dcc_unit_diagonal_of_correlation_path() {
        let params = toy_dcc(3);
        let returns = toy_returns(80, 3);
        let init = CorrInit::from_sample(&returns, &params.gamma).unwrap();
        let out = dcc_filter(&params, &returns, &init).unwrap();
        for t in 0..80 {
            for i in 0..3 {
                // implied correlation diagonal = cov_ii / (s_i s_i) = 1
                let cov = &out.cov_path[t];
                let implied = cov[(i, i)] / out.variance_path[(t, i)];
                assert_abs_diff_eq!(implied, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dcc_marginals_match_univariate_filter() {
        let params = toy_dcc(2);
        let returns = toy_returns(50, 2);
        let init = CorrInit::from_sample(&returns, &params.gamma).unwrap();
        let out = dcc_filter(&params, &returns, &init).unwrap();
        for i in 0..2 {
            let series = column_vec(&returns, i);
            let uv = garch11_filter(&params.marginals[i], &series, init.variances[i]).unwrap();
            for t in 0..50 {
                assert_abs_diff_eq!(out.variance_path[(t, i)], uv.variance_path[t], epsilon = 1e-13);
                assert_abs_diff_eq!(out.eta[(t, i)], uv.std_residuals[t], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn edcc_diagonal_a_matches_dcc_marginals() {
        let n = 2;
        let nu = DVector::from_element(n, 0.05);
        let a = DMatrix::from_diagonal(&DVector::from_element(n, 0.08));
        let b = DMatrix::from_diagonal(&DVector::from_element(n, 0.85));
        let edcc = EdccParams::new(nu, a, b, toy_gamma(n, 0.4), 0.1, 0.8).unwrap();
        let dcc = toy_dcc(n);
        let returns = toy_returns(60, n);
        let init = CorrInit::from_sample(&returns, &edcc.gamma).unwrap();
        let out_e = edcc_filter(&edcc, &returns, &init).unwrap();
        let out_d = dcc_filter(&dcc, &returns, &init).unwrap();
        for t in 0..60 {
            for i in 0..n {
                assert_abs_diff_eq!(
                    out_e.variance_path[(t, i)],
                    out_d.variance_path[(t, i)],
                    epsilon = 1e-13
                );
            }
        }
    }

    #[test]
    fn edcc_spillover_raises_next_period_variance() {
        let n = 2;
        let nu = DVector::from_element(n, 0.05);
        let mut a = DMatrix::from_diagonal(&DVector::from_element(n, 0.08));
        a[(1, 0)] = 0.02; // asset-1 shocks spill into asset 2
        let b = DMatrix::from_diagonal(&DVector::from_element(n, 0.85));
        let edcc = EdccParams::new(nu, a, b, toy_gamma(n, 0.2), 0.05, 0.9).unwrap();
        let base = EdccParams::new(
            DVector::from_element(n, 0.05),
            DMatrix::from_diagonal(&DVector::from_element(n, 0.08)),
            DMatrix::from_diagonal(&DVector::from_element(n, 0.85)),
            toy_gamma(n, 0.2),
            0.05,
            0.9,
        )
        .unwrap();
        let mut returns = DMatrix::zeros(3, n);
        returns[(1, 0)] = 2.0; // shock to asset 1 at t = 1
        let init = CorrInit { variances: DVector::from_element(n, 1.0), q0: toy_gamma(n, 0.2) };
        let with = edcc_filter(&edcc, &returns, &init).unwrap();
        let without = edcc_filter(&base, &returns, &init).unwrap();
        let bump = with.variance_path[(2, 1)] - without.variance_path[(2, 1)];
        assert_abs_diff_eq!(bump, 0.02 * 4.0, epsilon = 1e-12);
    }

    #[test]
    fn edcc_matches_vector_loop_oracle() {
        let n = 3;
        let nu = DVector::from_column_slice(&[0.04, 0.05, 0.06]);
        let a = DMatrix::from_row_slice(
            n,
            n,
            &[0.10, 0.01, 0.02, 0.015, 0.09, 0.01, 0.0, 0.02, 0.12],
        );
        let b = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.8, 0.78, 0.75]));
        let params = EdccParams::new(nu.clone(), a.clone(), b.clone(), toy_gamma(n, 0.3), 0.1, 0.8)
            .unwrap();
        let returns = toy_returns(40, n);
        let init = CorrInit { variances: DVector::from_element(n, 0.5), q0: toy_gamma(n, 0.3) };
        let out = edcc_filter(&params, &returns, &init).unwrap();
        let mut v = DVector::from_element(n, 0.5);
        for t in 1..40 {
            let mut v_new = nu.clone();
            for i in 0..n {
                for j in 0..n {
                    v_new[i] += a[(i, j)] * returns[(t - 1, j)] * returns[(t - 1, j)];
                }
                v_new[i] += b[(i, i)] * v[i];
            }
            v = v_new;
            for i in 0..n {
                assert_abs_diff_eq!(out.variance_path[(t, i)], v[i], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn forecast_h1_matches_next_cov() {
        let params = toy_dcc(3);
        let returns = toy_returns(70, 3);
        let init = CorrInit::from_sample(&returns, &params.gamma).unwrap();
        let out = dcc_filter(&params, &returns, &init).unwrap();
        let f1 = dcc_forecast(&params, &out.next_variances, &out.next_q, 1).unwrap();
        let diff = f1.as_matrix() - out.next_cov.as_matrix();
        assert!(diff.iter().all(|x| x.abs() < 1e-13));
    }

    #[test]
    fn dcc_fit_on_iid_data_finds_no_correlation_dynamics() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(55);
        let returns = DMatrix::from_fn(10_000, 3, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.5 * z
        });
        let fit = dcc_fit(&returns).unwrap();
        assert!(fit.theta1 <= 0.05, "theta1 = {}", fit.theta1);
        for i in 0..3 {
            assert_abs_diff_eq!(fit.gamma[(i, i)], 1.0, epsilon = 0.0);
        }
    }

    #[test]
    fn edcc_fit_shrinks_absent_spillovers() {
        // data from a diagonal-dynamics DGP: fitted spillovers must stay
        // near zero on average
        let n = 3;
        let mut total_offdiag = 0.0;
        let mut count = 0usize;
        for seed in 0..4u64 {
            let marginals = (0..n)
                .map(|_| Garch11Params::new(0.05, 0.10, 0.80).unwrap())
                .collect::<Vec<_>>();
            let truth =
                DccParams::new(marginals, toy_gamma(n, 0.3), 0.1, 0.8).unwrap();
            let sim = crate::models::simulate(
                &crate::models::ModelParams::Dcc(truth),
                10_000,
                700 + seed,
            )
            .unwrap();
            let fit = edcc_fit(&sim.returns).unwrap();
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        total_offdiag += fit.a[(i, j)];
                        count += 1;
                    }
                }
            }
        }
        let mean = total_offdiag / count as f64;
        assert!(mean <= 0.01, "mean fitted spillover {mean}");
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(DccParams::new(
            vec![Garch11Params::new(0.1, 0.1, 0.8).unwrap()],
            SymMatrix::identity(1),
            0.5,
            0.6
        )
        .is_err());
        let bad_gamma = SymMatrix::from_fn(2, |i, j| if i == j { 2.0 } else { 0.0 });
        assert!(DccParams::new(
            vec![
                Garch11Params::new(0.1, 0.1, 0.8).unwrap(),
                Garch11Params::new(0.1, 0.1, 0.8).unwrap()
            ],
            bad_gamma,
            0.1,
            0.8
        )
        .is_err());
        // off-diagonal B rejected
        let b = DMatrix::from_row_slice(2, 2, &[0.8, 0.1, 0.0, 0.8]);
        assert!(EdccParams::new(
            DVector::from_element(2, 0.1),
            DMatrix::zeros(2, 2),
            b,
            SymMatrix::identity(2),
            0.1,
            0.8
        )
        .is_err());
    }
}
