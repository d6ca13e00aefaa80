//! Conditional-(co)variance models: GARCH(1,1), Scalar/Full BEKK, DCC and
//! EDCC. Each model exposes filtering (variance/covariance paths given
//! parameters), forecasting, and quasi-maximum-likelihood estimation where
//! feasible (the Full BEKK is simulation-only).

mod bekk;
mod dcc;
mod garch;
mod sim;

pub use bekk::{
    fbekk_filter, fbekk_forecast, sample_covariance, sbekk_filter, sbekk_fit, sbekk_forecast,
    BekkFilterOutput, FBekkParams, SBekkParams,
};
pub use dcc::{
    dcc_filter, dcc_fit, dcc_forecast, edcc_filter, edcc_fit, edcc_forecast, CorrFilterOutput,
    CorrInit, DccParams, EdccParams,
};
pub use garch::{garch11_filter, garch11_fit, garch11_forecast, Garch11Params, UvFilterOutput};
pub use sim::{simulate, simulate_with_rng, Simulated};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::matrix::{duplication, duplication_pinv, kron};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("estimation failure [{stage}]: {message}")]
    EstimationFailure { stage: String, message: String },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

impl ModelError {
    pub(crate) fn estimation(stage: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::EstimationFailure { stage: stage.into(), message: message.into() }
    }
}

/// Parameters of any supported model, as drawn by the DGP samplers or
/// returned by the fitting routines.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelParams {
    Garch11(Garch11Params),
    #[serde(rename = "sbekk")]
    SBekk(SBekkParams),
    #[serde(rename = "fbekk")]
    FBekk(FBekkParams),
    Dcc(DccParams),
    Edcc(EdccParams),
}

impl ModelParams {
    pub fn n_assets(&self) -> usize {
        match self {
            ModelParams::Garch11(_) => 1,
            ModelParams::SBekk(p) => p.c.nrows(),
            ModelParams::FBekk(p) => p.c.nrows(),
            ModelParams::Dcc(p) => p.marginals.len(),
            ModelParams::Edcc(p) => p.nu.len(),
        }
    }
}

/// Outcome of a stationarity check: the binding quantity is a persistence sum
/// for scalar-dynamics models and a spectral radius for matrix dynamics.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StationarityReport {
    pub ok: bool,
    pub binding_value: f64,
    pub condition: String,
}

/// Checks the covariance-stationarity condition of the given parameters and
/// reports the binding quantity.
pub fn stationarity_check(params: &ModelParams) -> StationarityReport {
    match params {
        ModelParams::Garch11(p) => {
            let s = p.alpha + p.beta;
            StationarityReport { ok: s < 1.0, binding_value: s, condition: "alpha + beta < 1".into() }
        }
        ModelParams::SBekk(p) => {
            let s = p.alpha + p.beta;
            StationarityReport { ok: s < 1.0, binding_value: s, condition: "alpha + beta < 1".into() }
        }
        ModelParams::FBekk(p) => {
            let rho = fbekk_spectral_radius(&p.a, &p.b);
            StationarityReport {
                ok: rho < 1.0,
                binding_value: rho,
                condition: "max |eig(P(A(x)A)D + P(B(x)B)D)| < 1".into(),
            }
        }
        ModelParams::Dcc(p) => {
            let theta = p.theta1 + p.theta2;
            let marg = p
                .marginals
                .iter()
                .map(|g| g.alpha + g.beta)
                .fold(f64::NEG_INFINITY, f64::max);
            let binding = theta.max(marg);
            StationarityReport {
                ok: binding < 1.0,
                binding_value: binding,
                condition: "theta1 + theta2 < 1 and alpha_i + beta_i < 1".into(),
            }
        }
        ModelParams::Edcc(p) => {
            let rho = spectral_radius(&(&p.a + &p.b));
            let theta = p.theta1 + p.theta2;
            let binding = rho.max(theta);
            StationarityReport {
                ok: binding < 1.0,
                binding_value: binding,
                condition: "max |eig(A + B)| < 1 and theta1 + theta2 < 1".into(),
            }
        }
    }
}

/// Spectral radius of a general square matrix.
pub(crate) fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Perron root of an entrywise nonnegative matrix by power iteration on the
/// shifted matrix `M + s I` (the shift separates the dominant eigenvalue
/// from complex ties on the spectral circle).
fn perron_root(m: &DMatrix<f64>) -> f64 {
    let dim = m.nrows();
    let shift = 0.05;
    let shifted = m + DMatrix::identity(dim, dim) * shift;
    let mut v = nalgebra::DVector::from_element(dim, 1.0 / (dim as f64).sqrt());
    let mut lambda_prev = 0.0;
    for _ in 0..50_000 {
        let w = &shifted * &v;
        let lambda = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (lambda - lambda_prev).abs() <= 1e-13 * lambda.abs().max(1.0) {
            return lambda - shift;
        }
        lambda_prev = lambda;
    }
    lambda_prev - shift
}

/// Spectral radius of the vech-space BEKK transition
/// `P (A(x)A) D + P (B(x)B) D`.
///
/// For nonnegative coefficient matrices (every sampler and fixed design in
/// this crate) the transition is entrywise nonnegative and the exact Perron
/// power iteration is used; otherwise a dense eigensolve.
pub(crate) fn fbekk_spectral_radius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let d = duplication(n).expect("n >= 1");
    let p = duplication_pinv(n).expect("n >= 1");
    let m = p.as_ref() * (kron(a, a) + kron(b, b)) * d.as_ref();
    if m.iter().all(|&x| x >= 0.0) {
        perron_root(&m)
    } else {
        spectral_radius(&m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    #[test]
    fn stationarity_garch_examples() {
        let ok = Garch11Params::new(0.1, 0.1, 0.8).unwrap();
        let rep = stationarity_check(&ModelParams::Garch11(ok));
        assert!(rep.ok);
        assert_abs_diff_eq!(rep.binding_value, 0.9, epsilon = 1e-15);

        let bad = Garch11Params::new(0.1, 0.3, 0.8).unwrap();
        let rep = stationarity_check(&ModelParams::Garch11(bad));
        assert!(!rep.ok);
        assert_abs_diff_eq!(rep.binding_value, 1.1, epsilon = 1e-15);
    }

    #[test]
    fn stationarity_sbekk_paper_design() {
        let p = SBekkParams::new(DMatrix::identity(3, 3), 0.15, 0.80).unwrap();
        let rep = stationarity_check(&ModelParams::SBekk(p));
        assert!(rep.ok);
        assert_abs_diff_eq!(rep.binding_value, 0.95, epsilon = 1e-15);
    }

    #[test]
    fn stationarity_fbekk_zero_dynamics() {
        let n = 3;
        let p = FBekkParams::new(
            DMatrix::identity(n, n),
            DMatrix::zeros(n, n),
            DMatrix::zeros(n, n),
        )
        .unwrap();
        let rep = stationarity_check(&ModelParams::FBekk(p));
        assert!(rep.ok);
        assert_abs_diff_eq!(rep.binding_value, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fbekk_scalar_restriction_matches_sum() {
        // A = sqrt(alpha) I, B = sqrt(beta) I collapses the eigenvalue
        // condition to alpha + beta.
        let (alpha, beta): (f64, f64) = (0.15, 0.8);
        let n = 3;
        let a = DMatrix::identity(n, n) * alpha.sqrt();
        let b = DMatrix::identity(n, n) * beta.sqrt();
        assert_abs_diff_eq!(fbekk_spectral_radius(&a, &b), alpha + beta, epsilon = 1e-12);
    }

    #[test]
    fn stationarity_edcc_spillover() {
        let n = 2;
        let gamma = crate::matrix::SymMatrix::identity(n);
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 0.02, 0.02, 0.1]);
        let b = DMatrix::from_diagonal(&DVector::from_element(2, 0.8));
        let p = EdccParams::new(DVector::from_element(2, 0.05), a, b, gamma, 0.05, 0.9).unwrap();
        let rep = stationarity_check(&ModelParams::Edcc(p));
        assert!(rep.ok);
        assert_abs_diff_eq!(rep.binding_value, 0.95, epsilon = 1e-12);
    }
}
