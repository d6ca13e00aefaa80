//! Forecast reconciliation of portfolio variance.
//!
//! Stacks the univariate portfolio-variance forecast on top of the
//! half-vectorized covariance forecast, estimates the forecast-error
//! covariance by shrinkage, projects onto the aggregation-coherent subspace
//! (shr), and repairs invalid implied correlations either by nonlinear
//! constrained optimization (shr_A) or by reconciling on the correlation
//! scale (shr_B).

mod corr;
mod nonlinear;
mod qp;

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::matrix::{aggregation_vector, cov_to_cor, HalfVec, SymMatrix};
use corr::{solve_corr_qp, CorrQp, CorrQpError};

#[derive(Debug, Error)]
pub enum ReconcileError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("singular projection: {0}")]
    SingularProjection(String),
    #[error("degenerate errors: {0}")]
    DegenerateErrors(String),
    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),
    #[error("infeasible reconciliation: {0}")]
    InfeasibleReconciliation(String),
}

/// Base forecasts for one target date: the univariate portfolio-variance
/// forecast and the half-vectorized multivariate covariance forecast.
#[derive(Debug, Clone)]
pub struct BaseForecastSet {
    pub sigma_p2_hat: f64,
    pub sigma_hat: HalfVec,
}

impl BaseForecastSet {
    pub fn n_assets(&self) -> usize {
        self.sigma_hat.dim()
    }
}

/// Stacked variance vector `(sigma_p^2, vech(Sigma))`, portfolio first.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedVector {
    n_assets: usize,
    values: DVector<f64>,
}

impl StackedVector {
    pub fn new(n_assets: usize, values: DVector<f64>) -> Result<Self, ReconcileError> {
        let m = n_assets * (n_assets + 1) / 2;
        if values.len() != m + 1 {
            return Err(ReconcileError::InvalidInput(format!(
                "stacked vector needs length {} for {} assets, got {}",
                m + 1,
                n_assets,
                values.len()
            )));
        }
        Ok(Self { n_assets, values })
    }

    pub fn from_parts(sigma_p2: f64, sigma: &HalfVec) -> Self {
        let mut values = DVector::zeros(sigma.len() + 1);
        values[0] = sigma_p2;
        values.rows_mut(1, sigma.len()).copy_from(sigma.as_vector());
        Self { n_assets: sigma.dim(), values }
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn portfolio_variance(&self) -> f64 {
        self.values[0]
    }

    pub fn vech_part(&self) -> HalfVec {
        HalfVec::new(self.values.rows(1, self.values.len() - 1).into_owned())
            .expect("length is triangular by construction")
    }

    pub fn covariance(&self) -> SymMatrix {
        self.vech_part().to_matrix()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }
}

/// Shrunk covariance of the stacked forecast errors.
#[derive(Debug, Clone)]
pub struct ErrorCovariance {
    pub omega: DMatrix<f64>,
    pub shrinkage_intensity: f64,
    pub n_obs: usize,
}

/// The aggregation constraint `c = (1, -a')'` with `a = D'(w (x) w)`.
#[derive(Debug, Clone)]
pub struct ConstraintVector {
    c: DVector<f64>,
    a: DVector<f64>,
}

impl ConstraintVector {
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn aggregation(&self) -> &DVector<f64> {
        &self.a
    }
}

pub fn build_constraint(weights: &DVector<f64>) -> ConstraintVector {
    let a = aggregation_vector(weights);
    let mut c = DVector::zeros(a.len() + 1);
    c[0] = 1.0;
    for k in 0..a.len() {
        c[k + 1] = -a[k];
    }
    ConstraintVector { c, a }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodUsed {
    Shr,
    ShrA,
    ShrB,
}

impl MethodUsed {
    pub fn label(&self) -> &'static str {
        match self {
            MethodUsed::Shr => "shr",
            MethodUsed::ShrA => "shr_a",
            MethodUsed::ShrB => "shr_b",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Whether the reconciled covariance is positive semidefinite (not
    /// repaired when false, only recorded).
    pub psd: bool,
    /// Nonpositive base variances clamped to the floor on entry.
    pub clamped_inputs: usize,
    /// Correlation anchors clamped into [-1, 1] (shr_B).
    pub clamped_anchors: usize,
    pub used_fallback: bool,
}

#[derive(Debug, Clone)]
pub struct ReconciliationResult {
    pub y_tilde: StackedVector,
    pub sigma_tilde: SymMatrix,
    pub method_used: MethodUsed,
    pub correlation_ok: bool,
    pub diagnostics: SolverDiagnostics,
}

/// Whether the implied correlations of a covariance-like matrix are all
/// inside `[-1, 1]` (within 1e-12). Nonpositive diagonals are an error.
pub fn correlation_valid(sigma: &SymMatrix) -> Result<bool, ReconcileError> {
    let n = sigma.dim();
    for i in 0..n {
        if sigma[(i, i)] <= 0.0 {
            return Err(ReconcileError::DegenerateCovariance(format!(
                "nonpositive variance {:.3e} at index {i}",
                sigma[(i, i)]
            )));
        }
    }
    for j in 0..n {
        for i in (j + 1)..n {
            let rho = sigma[(i, j)] / (sigma[(i, i)] * sigma[(j, j)]).sqrt();
            if rho.abs() > 1.0 + 1e-12 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// One-step in-sample forecast errors, stacked as
/// `(proxy_p - sigma_p2_hat, vech(proxy) - vech(cov_hat))` per date, where
/// the portfolio proxy is the weight quadratic form of the covariance proxy.
pub fn insample_errors(
    fitted_univariate_path: &[f64],
    fitted_cov_path: &[SymMatrix],
    proxy_path: &[SymMatrix],
    weights: &DVector<f64>,
) -> Result<DMatrix<f64>, ReconcileError> {
    let t_len = fitted_univariate_path.len();
    if fitted_cov_path.len() != t_len || proxy_path.len() != t_len {
        return Err(ReconcileError::InvalidInput(format!(
            "misaligned path lengths: {t_len} / {} / {}",
            fitted_cov_path.len(),
            proxy_path.len()
        )));
    }
    if t_len == 0 {
        return Err(ReconcileError::InvalidInput("paths must not be empty".into()));
    }
    let n = weights.len();
    let m = n * (n + 1) / 2;
    let mut errors = DMatrix::zeros(t_len, m + 1);
    for t in 0..t_len {
        if fitted_cov_path[t].dim() != n || proxy_path[t].dim() != n {
            return Err(ReconcileError::InvalidInput(format!(
                "dimension mismatch at date {t}"
            )));
        }
        let proxy_p = proxy_path[t].quad_form(weights);
        errors[(t, 0)] = proxy_p - fitted_univariate_path[t];
        let pv = proxy_path[t].vech();
        let fv = fitted_cov_path[t].vech();
        for k in 0..m {
            errors[(t, k + 1)] = pv.as_vector()[k] - fv.as_vector()[k];
        }
    }
    Ok(errors)
}

/// Shrinkage estimate of the forecast-error covariance: the sample
/// covariance shrunk toward its diagonal, with the intensity
/// `lambda = sum var(r_ij) / sum r_ij^2` over off-diagonal correlations.
/// The intensity is raised further if needed to keep the result positive
/// definite.
pub fn shrink_cov(errors: &DMatrix<f64>) -> Result<ErrorCovariance, ReconcileError> {
    let t_len = errors.nrows();
    let p = errors.ncols();
    if t_len < 2 {
        return Err(ReconcileError::InvalidInput(format!(
            "need at least 2 error rows, got {t_len}"
        )));
    }
    let tf = t_len as f64;
    let covm = errors.transpose() * errors / tf;
    for i in 0..p {
        if covm[(i, i)] <= 0.0 {
            return Err(ReconcileError::DegenerateErrors(format!(
                "error column {i} has zero variance (constant forecasts)"
            )));
        }
    }
    let sd: Vec<f64> = (0..p).map(|i| covm[(i, i)].sqrt()).collect();
    // standardized errors and the variance of their correlation entries
    let xs = DMatrix::from_fn(t_len, p, |t, i| errors[(t, i)] / sd[i]);
    let mut sum_v = 0.0;
    let mut sum_d = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let mut w_sum = 0.0;
            let mut w2_sum = 0.0;
            for t in 0..t_len {
                let w = xs[(t, i)] * xs[(t, j)];
                w_sum += w;
                w2_sum += w * w;
            }
            let v = (tf / (tf - 1.0).powi(3)) * (w2_sum - w_sum * w_sum / tf);
            sum_v += v;
            let r = covm[(i, j)] / (sd[i] * sd[j]);
            sum_d += r * r;
        }
    }
    let mut lambda = if sum_d > 0.0 { (sum_v / sum_d).clamp(0.0, 1.0) } else { 1.0 };

    let assemble = |lambda: f64| -> DMatrix<f64> {
        let mut om = &covm * (1.0 - lambda);
        for i in 0..p {
            om[(i, i)] = covm[(i, i)];
        }
        om
    };
    let mut omega = assemble(lambda);
    let mut guard = 0;
    while Cholesky::new(omega.clone()).is_none() {
        guard += 1;
        if guard > 60 || lambda >= 1.0 {
            lambda = 1.0;
            omega = assemble(1.0);
            break;
        }
        lambda = 1.0 - 0.5 * (1.0 - lambda);
        if 1.0 - lambda < 1e-12 {
            lambda = 1.0;
        }
        omega = assemble(lambda);
    }
    Ok(ErrorCovariance { omega, shrinkage_intensity: lambda, n_obs: t_len })
}

fn psd_flag(sigma: &SymMatrix) -> bool {
    let scale = sigma.as_matrix().iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1e-300);
    sigma.min_eigenvalue() >= -1e-10 * scale
}

/// Linear shrinkage reconciliation: the GLS projection
/// `y_tilde = [I - Omega c (c' Omega c)^{-1} c'] y_hat`.
pub fn reconcile_shr(
    y_hat: &StackedVector,
    omega: &ErrorCovariance,
    c: &ConstraintVector,
) -> Result<ReconciliationResult, ReconcileError> {
    let dim = y_hat.as_vector().len();
    if omega.omega.nrows() != dim || c.c.len() != dim {
        return Err(ReconcileError::InvalidInput(format!(
            "dimension mismatch: y {dim}, omega {}, c {}",
            omega.omega.nrows(),
            c.c.len()
        )));
    }
    let omega_c = &omega.omega * &c.c;
    let cwc = c.c.dot(&omega_c);
    let scale = omega.omega.iter().fold(0.0f64, |a, x| a.max(x.abs())) * c.c.norm_squared();
    if !(cwc > 1e-14 * scale.max(1e-300)) {
        return Err(ReconcileError::SingularProjection(format!(
            "c' Omega c = {cwc:.3e} too small relative to scale {scale:.3e}"
        )));
    }
    let adjustment = c.c.dot(y_hat.as_vector()) / cwc;
    let y_tilde_vec = y_hat.as_vector() - omega_c * adjustment;
    let y_tilde = StackedVector::new(y_hat.n_assets, y_tilde_vec)?;
    let sigma_tilde = y_tilde.covariance();
    let correlation_ok = correlation_valid(&sigma_tilde).unwrap_or(false);
    let diagnostics = SolverDiagnostics { psd: psd_flag(&sigma_tilde), ..Default::default() };
    Ok(ReconciliationResult {
        y_tilde,
        sigma_tilde,
        method_used: MethodUsed::Shr,
        correlation_ok,
        diagnostics,
    })
}

fn normalized_inverse(omega: &DMatrix<f64>) -> Result<DMatrix<f64>, ReconcileError> {
    let p = omega.nrows();
    let tau = omega.diagonal().sum() / p as f64;
    if !(tau > 0.0) {
        return Err(ReconcileError::InvalidInput("omega has nonpositive trace".into()));
    }
    let chol = Cholesky::new(omega / tau).ok_or_else(|| {
        ReconcileError::InvalidInput("omega is not positive definite".into())
    })?;
    Ok(chol.inverse())
}

/// Nonlinear constrained reconciliation: the GLS objective under the
/// aggregation equality plus correlation-bound inequalities, solved by SQP
/// from the shr solution (augmented-Lagrangian fallback).
pub fn reconcile_shr_a(
    y_hat: &StackedVector,
    omega: &ErrorCovariance,
    c: &ConstraintVector,
) -> Result<ReconciliationResult, ReconcileError> {
    let shr = reconcile_shr(y_hat, omega, c)?;
    let omega_inv = normalized_inverse(&omega.omega)?;
    let sol = nonlinear::solve_shr_a(
        y_hat.as_vector(),
        &omega_inv,
        &c.c,
        y_hat.n_assets,
        shr.y_tilde.as_vector(),
    )
    .map_err(|e| ReconcileError::InfeasibleReconciliation(e.message))?;
    let mut y = sol.y;
    snap_residual_violations(&mut y, y_hat.n_assets, &c.c);
    let y_tilde = StackedVector::new(y_hat.n_assets, y)?;
    let sigma_tilde = y_tilde.covariance();
    let correlation_ok = correlation_valid(&sigma_tilde).unwrap_or(false);
    let diagnostics = SolverDiagnostics {
        iterations: sol.iterations,
        kkt_residual: sol.kkt_residual,
        psd: psd_flag(&sigma_tilde),
        used_fallback: sol.used_fallback,
        ..Default::default()
    };
    Ok(ReconciliationResult {
        y_tilde,
        sigma_tilde,
        method_used: MethodUsed::ShrA,
        correlation_ok,
        diagnostics,
    })
}

/// The nonlinear solver stops at a small KKT tolerance, so a converged point
/// can sit a hair outside the strict correlation box. Any residual
/// violations are snapped onto the boundary and the portfolio component is
/// recomputed from the aggregation identity, keeping both contracts exact.
fn snap_residual_violations(y: &mut DVector<f64>, n: usize, c: &DVector<f64>) {
    let mut snapped = false;
    for j in 0..n {
        for i in (j + 1)..n {
            let ij = 1 + HalfVec::index_of(n, i, j);
            let ii = 1 + HalfVec::index_of(n, i, i);
            let jj = 1 + HalfVec::index_of(n, j, j);
            let bound = y[ii].max(0.0) * y[jj].max(0.0);
            if y[ij] * y[ij] > bound {
                y[ij] = y[ij].signum() * bound.sqrt() * (1.0 - 1e-12);
                snapped = true;
            }
        }
    }
    if snapped {
        // restore c'y = 0 exactly through the portfolio component
        let mut agg = 0.0;
        for k in 1..y.len() {
            agg += -c[k] * y[k];
        }
        y[0] = agg;
    }
}

/// Weighting for the correlation-scale reconciliation: identity on the
/// correlation block, this variance on the portfolio component. Zero pins
/// the portfolio variance to its anchor.
#[derive(Debug, Clone, Copy)]
pub struct ShrBWeights {
    pub portfolio_error_var: f64,
}

impl ShrBWeights {
    pub fn from_error_covariance(omega: &ErrorCovariance) -> Self {
        Self { portfolio_error_var: omega.omega[(0, 0)] }
    }
}

/// Correlation-decomposition reconciliation: keeps the reconciled standard
/// deviations from the shr stage, rebuilds the aggregation vector on the
/// correlation scale, and solves the box-constrained quadratic program for
/// the correlations (and the portfolio variance linked through the
/// aggregation equality).
///
/// The portfolio-variance component is anchored at the shr-stage value
/// `w' Sigma_shr w` (the coherent GLS-combined forecast); the correlation
/// components are anchored at `rho_hat`. A zero portfolio error variance
/// pins the portfolio component to its anchor exactly.
pub fn reconcile_shr_b(
    y_hat: &StackedVector,
    sigma_tilde_from_shr: &SymMatrix,
    rho_hat: &HalfVec,
    w: &ShrBWeights,
    weights: &DVector<f64>,
) -> Result<ReconciliationResult, ReconcileError> {
    let n = y_hat.n_assets();
    if sigma_tilde_from_shr.dim() != n || rho_hat.dim() != n || weights.len() != n {
        return Err(ReconcileError::InvalidInput("dimension mismatch".into()));
    }
    if w.portfolio_error_var < 0.0 {
        return Err(ReconcileError::InvalidInput("portfolio error variance must be >= 0".into()));
    }

    // standard deviations from the shr covariance; nonpositive variances
    // are clamped to a tiny floor and counted
    let scale = sigma_tilde_from_shr
        .diagonal()
        .iter()
        .fold(1.0f64, |a, x| a.max(x.abs()));
    let floor = 1e-12 * scale;
    let mut clamped_inputs = 0;
    let s = DVector::from_fn(n, |i, _| {
        let v = sigma_tilde_from_shr[(i, i)];
        if v < floor {
            clamped_inputs += 1;
            floor.sqrt()
        } else {
            v.sqrt()
        }
    });

    // modified aggregation vector a = D'(S (x) S)(w (x) w) = agg(s .* w)
    let sw = s.component_mul(weights);
    let a_sigma = aggregation_vector(&sw);

    // split into pinned-diagonal and free off-diagonal parts
    let m = n * (n + 1) / 2;
    let mut diag_sum = 0.0;
    let mut b_entries = Vec::with_capacity(m - n);
    let mut rho0_entries = Vec::with_capacity(m - n);
    let mut clamped_anchors = 0;
    let mut off_positions = Vec::with_capacity(m - n);
    {
        let rv = rho_hat.as_vector();
        let mut k = 0;
        for j in 0..n {
            for i in j..n {
                if i == j {
                    diag_sum += a_sigma[k];
                } else {
                    b_entries.push(a_sigma[k]);
                    let raw = rv[k];
                    let clamped = raw.clamp(-1.0, 1.0);
                    if clamped != raw {
                        clamped_anchors += 1;
                    }
                    rho0_entries.push(clamped);
                    off_positions.push((i, j));
                }
                k += 1;
            }
        }
    }
    let b = DVector::from_vec(b_entries);
    let rho0 = DVector::from_vec(rho0_entries);

    let target = sigma_tilde_from_shr.quad_form(weights);
    let sol = solve_corr_qp(&CorrQp {
        b: &b,
        rho0: &rho0,
        diag_sum,
        target,
        w00: w.portfolio_error_var,
    })
    .map_err(|e| match e {
        CorrQpError::Infeasible { target, lo, hi } => ReconcileError::InfeasibleReconciliation(
            format!("portfolio variance {target:.6e} outside attainable range [{lo:.6e}, {hi:.6e}]"),
        ),
    })?;

    // rebuild the correlation matrix with the unit diagonal pinned
    let mut corr = DMatrix::identity(n, n);
    for (k, &(i, j)) in off_positions.iter().enumerate() {
        corr[(i, j)] = sol.rho_off[k];
        corr[(j, i)] = sol.rho_off[k];
    }
    let r_tilde = SymMatrix::symmetrized(corr);
    let sigma_tilde = SymMatrix::from_fn(n, |i, j| r_tilde[(i, j)] * s[i] * s[j]);
    let y_tilde = StackedVector::from_parts(sol.sigma_p2, &sigma_tilde.vech());
    let diagnostics = SolverDiagnostics {
        iterations: sol.iterations,
        psd: psd_flag(&sigma_tilde),
        clamped_inputs,
        clamped_anchors,
        ..Default::default()
    };
    let correlation_ok = correlation_valid(&sigma_tilde).unwrap_or(false);
    Ok(ReconciliationResult {
        y_tilde,
        sigma_tilde,
        method_used: MethodUsed::ShrB,
        correlation_ok,
        diagnostics,
    })
}

/// Correlation anchors (vech of the implied correlation matrix) of a
/// covariance forecast.
pub fn cov_to_cor_rho(sigma: &SymMatrix) -> Result<HalfVec, ReconcileError> {
    let (r, _) = cov_to_cor(sigma).map_err(|e| match e {
        crate::matrix::MatrixError::DegenerateCovariance(msg) => {
            ReconcileError::DegenerateCovariance(msg)
        }
        crate::matrix::MatrixError::InvalidInput(msg) => ReconcileError::InvalidInput(msg),
    })?;
    Ok(r.vech())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconcileOption {
    A,
    B,
    Auto,
}

/// The full reconciliation pipeline for one base-forecast set: the linear
/// projection first, then (only when the implied correlations are invalid)
/// the nonlinear route A or the correlation-scale route B. `Auto` prefers B.
pub fn algorithm1(
    base: &BaseForecastSet,
    omega: &ErrorCovariance,
    weights: &DVector<f64>,
    option: ReconcileOption,
) -> Result<ReconciliationResult, ReconcileError> {
    let n = base.n_assets();
    if weights.len() != n {
        return Err(ReconcileError::InvalidInput("weights dimension mismatch".into()));
    }

    // degenerate base forecasts are clamped to a tiny floor, not rejected
    let mut clamped_inputs = 0;
    let sigma_p2 = if base.sigma_p2_hat > 0.0 {
        base.sigma_p2_hat
    } else {
        clamped_inputs += 1;
        1e-12
    };
    let mut sigma_hat_mat = base.sigma_hat.to_matrix().into_matrix();
    for i in 0..n {
        if sigma_hat_mat[(i, i)] <= 0.0 {
            sigma_hat_mat[(i, i)] = 1e-12;
            clamped_inputs += 1;
        }
    }
    let sigma_hat = SymMatrix::symmetrized(sigma_hat_mat);
    let y_hat = StackedVector::from_parts(sigma_p2, &sigma_hat.vech());

    let c = build_constraint(weights);
    let shr = reconcile_shr(&y_hat, omega, &c)?;
    if shr.correlation_ok {
        let mut out = shr;
        out.diagnostics.clamped_inputs += clamped_inputs;
        return Ok(out);
    }

    let run_b = |shr: &ReconciliationResult| -> Result<ReconciliationResult, ReconcileError> {
        let rho_hat = cov_to_cor_rho(&sigma_hat)?;
        reconcile_shr_b(
            &y_hat,
            &shr.sigma_tilde,
            &rho_hat,
            &ShrBWeights::from_error_covariance(omega),
            weights,
        )
    };

    let mut out = match option {
        ReconcileOption::A => match reconcile_shr_a(&y_hat, omega, &c) {
            Ok(res) => res,
            // route B is the designated fallback when A cannot produce a
            // feasible point
            Err(ReconcileError::InfeasibleReconciliation(_)) => run_b(&shr)?,
            Err(e) => return Err(e),
        },
        ReconcileOption::B | ReconcileOption::Auto => run_b(&shr)?,
    };
    out.diagnostics.clamped_inputs += clamped_inputs;
    Ok(out)
}

#[cfg(test)]
pub(crate) fn gls_objective(y: &DVector<f64>, y_hat: &DVector<f64>, omega: &DMatrix<f64>) -> f64 {
    let d = y - y_hat;
    let solved = Cholesky::new(omega.clone()).expect("SPD omega").solve(&d);
    d.dot(&solved)
}

#[cfg(test)]
mod tests;
