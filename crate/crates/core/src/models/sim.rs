//! Path simulation for every supported model: `r_t = S_t^{1/2} z_t` with
//! standard normal `z_t`, starting from the unconditional state.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{stationarity_check, ModelError, ModelParams};
use crate::matrix::SymMatrix;

/// Simulated returns together with the exact conditional covariance path
/// used to generate them (`cov_path[t]` is the covariance of row `t`).
#[derive(Debug, Clone)]
pub struct Simulated {
    pub returns: DMatrix<f64>,
    pub cov_path: Vec<SymMatrix>,
}

/// Simulates `t_total` observations with a fresh ChaCha stream seeded from
/// `seed`. Identical inputs produce bit-identical output.
pub fn simulate(params: &ModelParams, t_total: usize, seed: u64) -> Result<Simulated, ModelError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    simulate_with_rng(params, t_total, &mut rng)
}

/// Simulation driven by a caller-owned RNG stream (used by the replication
/// harness to derive substreams).
pub fn simulate_with_rng(
    params: &ModelParams,
    t_total: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Simulated, ModelError> {
    if t_total == 0 {
        return Err(ModelError::InvalidInput("t_total must be >= 1".into()));
    }
    let report = stationarity_check(params);
    if !report.ok {
        return Err(ModelError::InvalidInput(format!(
            "nonstationary parameters: {} = {:.6}",
            report.condition, report.binding_value
        )));
    }

    match params {
        ModelParams::Garch11(p) => {
            let mut returns = DMatrix::zeros(t_total, 1);
            let mut cov_path = Vec::with_capacity(t_total);
            let mut v = p.unconditional_variance().expect("checked stationary");
            let mut prev = 0.0;
            for t in 0..t_total {
                if t > 0 {
                    v = p.omega + p.alpha * prev * prev + p.beta * v;
                }
                let z: f64 = StandardNormal.sample(rng);
                prev = v.sqrt() * z;
                returns[(t, 0)] = prev;
                cov_path.push(SymMatrix::symmetrized(DMatrix::from_element(1, 1, v)));
            }
            Ok(Simulated { returns, cov_path })
        }
        ModelParams::SBekk(p) => {
            let cc = p.intercept();
            let init = p.unconditional_covariance().expect("checked stationary");
            simulate_cov_recursion(p.n_assets(), t_total, init, rng, move |prev, r| {
                &cc + p.alpha * r * r.transpose() + p.beta * prev
            })
        }
        ModelParams::FBekk(p) => {
            let cc = p.intercept();
            let init = p.unconditional_covariance().ok_or_else(|| {
                ModelError::NumericalFailure("full BEKK unconditional covariance solve failed".into())
            })?;
            let a = p.a.clone();
            let b = p.b.clone();
            simulate_cov_recursion(p.n_assets(), t_total, init, rng, move |prev, r| {
                let ar = &a * r;
                &cc + &ar * ar.transpose() + &b * prev * b.transpose()
            })
        }
        ModelParams::Dcc(p) => {
            let v0 = DVector::from_fn(p.n_assets(), |i, _| {
                p.marginals[i].unconditional_variance().expect("checked stationary")
            });
            let marginals = p.marginals.clone();
            simulate_corr_recursion(
                t_total,
                v0,
                &p.gamma,
                p.theta1,
                p.theta2,
                rng,
                move |v, r_prev| {
                    DVector::from_fn(v.len(), |i, _| {
                        let g = &marginals[i];
                        g.omega + g.alpha * r_prev[i] * r_prev[i] + g.beta * v[i]
                    })
                },
            )
        }
        ModelParams::Edcc(p) => {
            let v0 = p.unconditional_variances().ok_or_else(|| {
                ModelError::NumericalFailure("EDCC unconditional variance solve failed".into())
            })?;
            let a = p.a.clone();
            let b_diag = p.b.diagonal();
            let nu = p.nu.clone();
            simulate_corr_recursion(
                t_total,
                v0,
                &p.gamma,
                p.theta1,
                p.theta2,
                rng,
                move |v, r_prev| {
                    let r2 = r_prev.component_mul(r_prev);
                    &nu + &a * r2 + b_diag.component_mul(v)
                },
            )
        }
    }
}

fn draw_normal_vec(n: usize, rng: &mut ChaCha12Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn cov_sqrt_draw(cov: &SymMatrix, rng: &mut ChaCha12Rng) -> Result<DVector<f64>, ModelError> {
    let chol = Cholesky::new(cov.as_matrix().clone()).ok_or_else(|| {
        ModelError::NumericalFailure("simulated covariance lost positive definiteness".into())
    })?;
    let z = draw_normal_vec(cov.dim(), rng);
    Ok(chol.l_dirty().lower_triangle() * z)
}

fn simulate_cov_recursion(
    n: usize,
    t_total: usize,
    init: SymMatrix,
    rng: &mut ChaCha12Rng,
    step: impl Fn(&DMatrix<f64>, &DVector<f64>) -> DMatrix<f64>,
) -> Result<Simulated, ModelError> {
    let mut returns = DMatrix::zeros(t_total, n);
    let mut cov_path = Vec::with_capacity(t_total);
    let mut cov = init;
    let mut prev = DVector::zeros(n);
    for t in 0..t_total {
        if t > 0 {
            cov = SymMatrix::symmetrized(step(cov.as_matrix(), &prev));
        }
        prev = cov_sqrt_draw(&cov, rng)?;
        for i in 0..n {
            returns[(t, i)] = prev[i];
        }
        cov_path.push(cov.clone());
    }
    Ok(Simulated { returns, cov_path })
}

fn simulate_corr_recursion(
    t_total: usize,
    v0: DVector<f64>,
    gamma: &SymMatrix,
    theta1: f64,
    theta2: f64,
    rng: &mut ChaCha12Rng,
    update_variances: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
) -> Result<Simulated, ModelError> {
    let n = v0.len();
    let mut returns = DMatrix::zeros(t_total, n);
    let mut cov_path = Vec::with_capacity(t_total);
    let intercept = gamma.as_matrix() * (1.0 - theta1 - theta2);
    let mut v = v0;
    let mut q = gamma.clone();
    let mut eta_prev = DVector::<f64>::zeros(n);
    let mut r_prev = DVector::<f64>::zeros(n);
    for t in 0..t_total {
        if t > 0 {
            v = update_variances(&v, &r_prev);
            q = SymMatrix::symmetrized(
                &intercept + theta1 * &eta_prev * eta_prev.transpose() + theta2 * q.as_matrix(),
            );
        }
        if v.iter().any(|&x| !(x > 0.0)) {
            return Err(ModelError::NumericalFailure(
                "simulated variance left the positive domain".into(),
            ));
        }
        let mut d = DVector::zeros(n);
        for i in 0..n {
            let qii = q[(i, i)];
            if qii <= 0.0 {
                return Err(ModelError::NumericalFailure(
                    "simulated Q lost a positive diagonal".into(),
                ));
            }
            d[i] = qii.sqrt();
        }
        let s = v.map(|x| x.sqrt());
        let cov = SymMatrix::from_fn(n, |i, j| {
            let corr = if i == j { 1.0 } else { q[(i, j)] / (d[i] * d[j]) };
            corr * s[i] * s[j]
        });
        r_prev = cov_sqrt_draw(&cov, rng)?;
        for i in 0..n {
            returns[(t, i)] = r_prev[i];
            eta_prev[i] = r_prev[i] / s[i];
        }
        cov_path.push(cov);
    }
    Ok(Simulated { returns, cov_path })
}
