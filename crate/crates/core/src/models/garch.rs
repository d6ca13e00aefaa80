//! Univariate GARCH(1,1): filter, forecast and QML fit.

use serde::{Deserialize, Serialize};

use super::{ModelError, LN_2PI};
use crate::optimize::{self, nelder_mead};

/// GARCH(1,1) parameters: `v_t = omega + alpha r_{t-1}^2 + beta v_{t-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Garch11Params {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Garch11Params {
    pub fn new(omega: f64, alpha: f64, beta: f64) -> Result<Self, ModelError> {
        if !(omega > 0.0) {
            return Err(ModelError::InvalidInput(format!("omega must be > 0, got {omega}")));
        }
        if alpha < 0.0 || beta < 0.0 {
            return Err(ModelError::InvalidInput(format!(
                "alpha and beta must be >= 0, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { omega, alpha, beta })
    }

    pub fn persistence(&self) -> f64 {
        self.alpha + self.beta
    }

    pub fn is_stationary(&self) -> bool {
        self.persistence() < 1.0
    }

    /// Unconditional variance `omega / (1 - alpha - beta)`, if stationary.
    pub fn unconditional_variance(&self) -> Option<f64> {
        self.is_stationary().then(|| self.omega / (1.0 - self.persistence()))
    }
}

/// Output of a univariate variance filter.
#[derive(Debug, Clone)]
pub struct UvFilterOutput {
    /// `variance_path[t]` is the conditional variance of `returns[t]` given
    /// information through `t-1`; `variance_path[0]` is the supplied initial
    /// value.
    pub variance_path: Vec<f64>,
    /// Standardized innovations `returns[t] / sqrt(variance_path[t])`.
    pub std_residuals: Vec<f64>,
    /// Gaussian quasi log-likelihood over all observations.
    pub loglik: f64,
    /// One-step-ahead variance for the date after the sample.
    pub next_variance: f64,
}

/// Runs the GARCH(1,1) recursion over `returns` starting from `init_var`.
pub fn garch11_filter(
    params: &Garch11Params,
    returns: &[f64],
    init_var: f64,
) -> Result<UvFilterOutput, ModelError> {
    if returns.is_empty() {
        return Err(ModelError::InvalidInput("returns must not be empty".into()));
    }
    if !(init_var > 0.0) {
        return Err(ModelError::InvalidInput(format!("init_var must be > 0, got {init_var}")));
    }
    let t_len = returns.len();
    let mut variance_path = Vec::with_capacity(t_len);
    let mut std_residuals = Vec::with_capacity(t_len);
    let mut loglik = 0.0;
    let mut v = init_var;
    for (t, &r) in returns.iter().enumerate() {
        if t > 0 {
            let r_prev = returns[t - 1];
            v = params.omega + params.alpha * r_prev * r_prev + params.beta * v;
        }
        variance_path.push(v);
        std_residuals.push(r / v.sqrt());
        loglik += -0.5 * (LN_2PI + v.ln() + r * r / v);
    }
    let last = returns[t_len - 1];
    let next_variance = params.omega + params.alpha * last * last + params.beta * v;
    Ok(UvFilterOutput { variance_path, std_residuals, loglik, next_variance })
}

/// `h`-step-ahead variance forecast given the last observed return and the
/// last conditional variance. `h = 1` gives the exact one-step recursion;
/// longer horizons iterate the expectation.
pub fn garch11_forecast(
    params: &Garch11Params,
    last_return: f64,
    last_var: f64,
    horizon: usize,
) -> Result<f64, ModelError> {
    if horizon == 0 {
        return Err(ModelError::InvalidInput("horizon must be >= 1".into()));
    }
    let mut v = params.omega + params.alpha * last_return * last_return + params.beta * last_var;
    for _ in 1..horizon {
        v = params.omega + params.persistence() * v;
    }
    Ok(v)
}

fn sample_variance(data: &[f64]) -> f64 {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    data.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Maps unconstrained optimizer coordinates to valid GARCH parameters:
/// positivity via exp, `alpha + beta < 1` via a logistic persistence split.
fn decode(x: &[f64]) -> Garch11Params {
    let omega = x[0].exp();
    let persistence = sigmoid(x[1]);
    let frac = sigmoid(x[2]);
    Garch11Params { omega, alpha: persistence * frac, beta: persistence * (1.0 - frac) }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Fits GARCH(1,1) by Gaussian QML with a Nelder-Mead search over
/// transformed parameters.
pub fn garch11_fit(returns: &[f64]) -> Result<Garch11Params, ModelError> {
    if returns.len() < 50 {
        return Err(ModelError::InvalidInput(format!(
            "need at least 50 observations, got {}",
            returns.len()
        )));
    }
    let var = sample_variance(returns);
    if !(var > 0.0) || !var.is_finite() {
        return Err(ModelError::estimation(
            "garch11",
            "degenerate likelihood: returns have zero sample variance",
        ));
    }

    let t_len = returns.len() as f64;
    let mut neg_avg_loglik = |x: &[f64]| -> f64 {
        let p = decode(x);
        match garch11_filter(&p, returns, var) {
            Ok(out) if out.loglik.is_finite() => -out.loglik / t_len,
            _ => f64::INFINITY,
        }
    };

    // start at alpha = 0.10, beta = 0.80, omega matching the sample variance
    let x0 = [(var * 0.1).ln(), logit(0.90), logit(0.10 / 0.90)];
    let res = nelder_mead(&mut neg_avg_loglik, &x0, 0.25, optimize::MAX_ITER);
    if !res.converged {
        return Err(ModelError::estimation(
            "garch11",
            format!("no convergence after {} iterations (objective {:.6e})", res.iterations, res.value),
        ));
    }
    Ok(decode(&res.x))
}
