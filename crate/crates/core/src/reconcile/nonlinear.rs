//! Nonlinear constrained reconciliation (the "shr_A" route).
//!
//! Minimizes the GLS distance to the base forecasts subject to the
//! aggregation equality and the correlation bounds, written as quadratic
//! inequalities `sigma_ij^2 <= kappa * sigma_ii * sigma_jj` per pair (plus
//! tiny diagonal floors so the implied correlations stay defined). `kappa`
//! sits just inside 1 so converged boundary points still pass the strict
//! correlation check.
//!
//! The search is sequential quadratic programming started from the linear
//! (shr) solution, with an augmented-Lagrangian fallback when the SQP
//! working sets stall.

use nalgebra::{DMatrix, DVector};

use super::qp::{solve_qp, QpProblem};
use crate::matrix::HalfVec;
use crate::optimize::bfgs_with_grad;

/// Correlation-bound tightening: constraints enforce `rho^2 <= KAPPA`.
pub(crate) const KAPPA: f64 = 1.0 - 1e-10;
const KKT_TOL: f64 = 1e-6;
const MAX_SQP_ITER: usize = 200;

#[derive(Debug, Clone)]
pub(crate) struct ShrASolution {
    pub y: DVector<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub used_fallback: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct ShrAFailure {
    pub message: String,
}

struct Constraints {
    /// (position of sigma_ij, position of sigma_ii, position of sigma_jj)
    pairs: Vec<(usize, usize, usize)>,
    /// positions of the diagonal entries within y
    diag: Vec<usize>,
    floor: f64,
}

impl Constraints {
    fn build(n: usize, y_hat: &DVector<f64>) -> Self {
        let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
        let mut diag = Vec::with_capacity(n);
        for j in 0..n {
            diag.push(1 + HalfVec::index_of(n, j, j));
            for i in (j + 1)..n {
                pairs.push((
                    1 + HalfVec::index_of(n, i, j),
                    1 + HalfVec::index_of(n, i, i),
                    1 + HalfVec::index_of(n, j, j),
                ));
            }
        }
        let scale = y_hat.iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
        Constraints { pairs, diag, floor: 1e-12 * scale }
    }

    fn n_rows(&self) -> usize {
        self.pairs.len() + self.diag.len()
    }

    /// Constraint values h_k(y) <= 0.
    fn values(&self, y: &DVector<f64>) -> Vec<f64> {
        let mut h = Vec::with_capacity(self.n_rows());
        for &(ij, ii, jj) in &self.pairs {
            h.push(y[ij] * y[ij] - KAPPA * y[ii] * y[jj]);
        }
        for &ii in &self.diag {
            h.push(self.floor - y[ii]);
        }
        h
    }

    /// Unitless violation measure (correlation scale for the pair rows).
    fn violation(&self, y: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        for &(ij, ii, jj) in &self.pairs {
            let denom = (y[ii] * y[jj]).abs().max(self.floor * self.floor);
            worst = worst.max((y[ij] * y[ij] - KAPPA * y[ii] * y[jj]) / denom);
        }
        for &ii in &self.diag {
            worst = worst.max((self.floor - y[ii]) / self.floor.max(1e-300));
        }
        worst
    }

    fn gradient_rows(&self, y: &DVector<f64>, dim: usize) -> Vec<DVector<f64>> {
        let mut rows = Vec::with_capacity(self.n_rows());
        for &(ij, ii, jj) in &self.pairs {
            let mut row = DVector::zeros(dim);
            row[ij] = 2.0 * y[ij];
            row[ii] = -KAPPA * y[jj];
            row[jj] = -KAPPA * y[ii];
            rows.push(row);
        }
        for &ii in &self.diag {
            let mut row = DVector::zeros(dim);
            row[ii] = -1.0;
            rows.push(row);
        }
        rows
    }
}

/// Stationarity residual projected onto the equality-feasible subspace,
/// normalized by the gradient scale.
fn kkt_residual(
    grad_f: &DVector<f64>,
    rows: &[DVector<f64>],
    lambdas: &[f64],
    h: &[f64],
    c: &DVector<f64>,
    viol: f64,
) -> f64 {
    let mut resid = grad_f.clone();
    let mut comp = 0.0f64;
    for (k, row) in rows.iter().enumerate() {
        if lambdas[k] != 0.0 {
            resid += row * lambdas[k];
            comp = comp.max((lambdas[k] * h[k]).abs());
        }
    }
    let cc = c.dot(c);
    if cc > 0.0 {
        let proj = resid.dot(c) / cc;
        resid -= c * proj;
    }
    let scale = 1.0 + grad_f.amax();
    (resid.amax() / scale).max(viol).max(comp / scale)
}

pub(crate) fn solve_shr_a(
    y_hat: &DVector<f64>,
    omega_inv: &DMatrix<f64>,
    c: &DVector<f64>,
    n_assets: usize,
    start: &DVector<f64>,
) -> Result<ShrASolution, ShrAFailure> {
    let dim = y_hat.len();
    let cons = Constraints::build(n_assets, y_hat);
    let h_mat = omega_inv * 2.0;

    let mut y = start.clone();
    // restore the equality exactly in case the start drifted
    let cc = c.dot(c);
    if cc > 0.0 {
        let drift = c.dot(&y) / cc;
        y -= c * drift;
    }

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut stalled = false;
    while iterations < MAX_SQP_ITER {
        iterations += 1;
        let grad_f = &h_mat * (&y - y_hat);
        let h = cons.values(&y);
        let rows = cons.gradient_rows(&y, dim);
        let ineq: Vec<(DVector<f64>, f64)> =
            rows.iter().cloned().zip(h.iter().map(|&hk| -hk)).collect();
        let eq = [(c.clone(), -c.dot(&y))];
        let qp = match solve_qp(&QpProblem { h: &h_mat, g: &grad_f, eq: &eq, ineq: &ineq }) {
            Ok(sol) => sol,
            Err(_) => {
                stalled = true;
                break;
            }
        };

        let viol = cons.violation(&y).max(0.0);
        residual = kkt_residual(&grad_f, &rows, &qp.ineq_multipliers, &h, c, viol);
        let step_scale = qp.p.amax() / (1.0 + y.amax());
        if residual <= KKT_TOL && step_scale <= 1e-9 {
            return Ok(ShrASolution { y, iterations, kkt_residual: residual, used_fallback: false });
        }

        // l1 merit line search
        let penalty = 10.0 * (1.0 + qp.ineq_multipliers.iter().fold(0.0f64, |a, &l| a.max(l)));
        let merit = |yv: &DVector<f64>| -> f64 {
            let d = yv - y_hat;
            let f = d.dot(&(omega_inv * &d));
            let vh: f64 = cons.values(yv).iter().map(|&x| x.max(0.0)).sum();
            f + penalty * (vh + c.dot(yv).abs())
        };
        let m0 = merit(&y);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &y + &qp.p * alpha;
            if merit(&trial) <= m0 - 1e-8 * alpha * qp.p.norm_squared() {
                y = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            if residual <= KKT_TOL {
                return Ok(ShrASolution {
                    y,
                    iterations,
                    kkt_residual: residual,
                    used_fallback: false,
                });
            }
            stalled = true;
            break;
        }
    }

    if !stalled && residual <= KKT_TOL {
        return Ok(ShrASolution { y, iterations, kkt_residual: residual, used_fallback: false });
    }

    // Augmented-Lagrangian fallback in the null space of the equality; the
    // feasible set is convex (2x2 principal-minor cones), so a log-barrier
    // interior-point pass is the final safety net when the multiplier
    // method stalls too.
    match augmented_lagrangian(y_hat, omega_inv, c, &cons, &y, iterations) {
        Ok(sol) => Ok(sol),
        Err(_) => barrier_solve(y_hat, omega_inv, c, &cons, iterations),
    }
}

/// Interior-point solve of the nonlinear reconciliation: path-following on
/// `t F(y) - sum log(slack_k)` over the aggregation hyperplane with Newton
/// steps in the null space.
fn barrier_solve(
    y_hat: &DVector<f64>,
    omega_inv: &DMatrix<f64>,
    c: &DVector<f64>,
    cons: &Constraints,
    prior_iterations: usize,
) -> Result<ShrASolution, ShrAFailure> {
    let dim = y_hat.len();
    let z = nullspace_basis(c);
    let n_slack = cons.n_rows();

    // strictly interior start: a scaled identity covariance with the
    // portfolio component set by the aggregation identity
    let diag_scale = cons
        .diag
        .iter()
        .map(|&ii| y_hat[ii].abs())
        .fold(0.0f64, f64::max)
        .max(cons.floor * 1e6)
        .max(1e-6);
    let mut y0 = DVector::zeros(dim);
    for &ii in &cons.diag {
        y0[ii] = diag_scale;
    }
    let mut agg = 0.0;
    for k in 1..dim {
        agg += -c[k] * y0[k];
    }
    y0[0] = agg;

    let slacks = |y: &DVector<f64>| -> Vec<f64> {
        cons.values(y).iter().map(|&h| -h).collect()
    };
    debug_assert!(slacks(&y0).iter().all(|&s| s > 0.0));

    let h_f = omega_inv * 2.0;
    let mut v = DVector::<f64>::zeros(dim - 1);
    let mut t = 1.0;
    let mut iterations = prior_iterations;
    let y_of = |v: &DVector<f64>| -> DVector<f64> { &y0 + &z * v };

    for _outer in 0..64 {
        // Newton centering for the current t
        for _inner in 0..80 {
            iterations += 1;
            let y = y_of(&v);
            let s = slacks(&y);
            if s.iter().any(|&x| !(x > 0.0)) {
                return Err(ShrAFailure { message: "barrier iterate left the interior".into() });
            }
            // gradient and Hessian of t*F + B in y-space
            let mut grad = (omega_inv * (&y - y_hat)) * (2.0 * t);
            let mut hess = &h_f * t;
            for (k, &(ij, ii, jj)) in cons.pairs.iter().enumerate() {
                let sk = s[k];
                // slack = kappa*y_ii*y_jj - y_ij^2
                let gs = {
                    let mut g = DVector::zeros(dim);
                    g[ij] = -2.0 * y[ij];
                    g[ii] = KAPPA * y[jj];
                    g[jj] = KAPPA * y[ii];
                    g
                };
                grad += &gs * (-1.0 / sk);
                // outer product term + curvature of the slack
                for (r, &gr) in gs.iter().enumerate() {
                    if gr == 0.0 {
                        continue;
                    }
                    for (cc, &gc) in gs.iter().enumerate() {
                        if gc != 0.0 {
                            hess[(r, cc)] += gr * gc / (sk * sk);
                        }
                    }
                }
                hess[(ij, ij)] += 2.0 / sk;
                hess[(ii, jj)] += -KAPPA / sk;
                hess[(jj, ii)] += -KAPPA / sk;
            }
            for (k, &ii) in cons.diag.iter().enumerate() {
                let sk = s[n_slack - cons.diag.len() + k];
                grad[ii] += -1.0 / sk;
                hess[(ii, ii)] += 1.0 / (sk * sk);
            }

            let gv = z.transpose() * &grad;
            let hv = z.transpose() * &hess * &z;
            let step = match nalgebra::Cholesky::new(hv.clone()) {
                Some(chol) => chol.solve(&gv),
                None => match hv.lu().solve(&gv) {
                    Some(sol) => sol,
                    None => return Err(ShrAFailure { message: "singular barrier Hessian".into() }),
                },
            };
            let decrement = gv.dot(&step);
            // backtrack to stay strictly interior with sufficient decrease
            let phi = |vv: &DVector<f64>| -> Option<f64> {
                let yy = y_of(vv);
                let ss = slacks(&yy);
                if ss.iter().any(|&x| !(x > 0.0)) {
                    return None;
                }
                let d = &yy - y_hat;
                let f = d.dot(&(omega_inv * &d));
                Some(t * f - ss.iter().map(|&x| x.ln()).sum::<f64>())
            };
            let phi0 = phi(&v).expect("current iterate interior");
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial = &v - &step * alpha;
                if let Some(val) = phi(&trial) {
                    if val <= phi0 - 0.25 * alpha * decrement {
                        v = trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted || decrement.abs() <= 1e-12 * (1.0 + phi0.abs()) {
                break;
            }
        }

        // duality gap of the barrier: (number of constraints) / t
        let y = y_of(&v);
        let d = &y - y_hat;
        let f_scale = 1.0 + d.dot(&(omega_inv * &d)).abs();
        if (n_slack as f64) / t <= 1e-10 * f_scale {
            let s = slacks(&y);
            let lambdas: Vec<f64> = s.iter().map(|&sk| 1.0 / (t * sk)).collect();
            let grad_f = (omega_inv * &d) * 2.0;
            let rows = cons.gradient_rows(&y, dim);
            let h = cons.values(&y);
            let viol = cons.violation(&y).max(0.0);
            let residual = kkt_residual(&grad_f, &rows, &lambdas, &h, c, viol);
            return Ok(ShrASolution { y, iterations, kkt_residual: residual, used_fallback: true });
        }
        t *= 10.0;
    }
    Err(ShrAFailure { message: "barrier path-following exhausted its budget".into() })
}

/// Orthonormal basis of the null space of `c'` from a Householder reflector.
fn nullspace_basis(c: &DVector<f64>) -> DMatrix<f64> {
    let dim = c.len();
    let u = c / c.norm();
    let mut v = u.clone();
    v[0] += u[0].signum();
    let vtv = v.dot(&v);
    let mut z = DMatrix::zeros(dim, dim - 1);
    for k in 1..dim {
        // column k of H = I - 2 vv'/v'v
        for i in 0..dim {
            let e = if i == k { 1.0 } else { 0.0 };
            z[(i, k - 1)] = e - 2.0 * v[i] * v[k] / vtv;
        }
    }
    z
}

fn augmented_lagrangian(
    y_hat: &DVector<f64>,
    omega_inv: &DMatrix<f64>,
    c: &DVector<f64>,
    cons: &Constraints,
    start: &DVector<f64>,
    sqp_iterations: usize,
) -> Result<ShrASolution, ShrAFailure> {
    let dim = y_hat.len();
    let z = nullspace_basis(c);
    let cc = c.dot(c);
    let mut y0 = start.clone();
    if cc > 0.0 {
        let drift = c.dot(&y0) / cc;
        y0 -= c * drift;
    }

    let n_rows = cons.n_rows();
    let mut lambdas = vec![0.0f64; n_rows];
    let mut mu = 10.0;
    let mut v = vec![0.0f64; dim - 1];
    let mut iterations = sqp_iterations;

    for _outer in 0..60 {
        iterations += 1;
        let assemble = |vv: &[f64]| -> DVector<f64> {
            let vvec = DVector::from_row_slice(vv);
            &y0 + &z * vvec
        };
        let lam = lambdas.clone();
        let mut f = |vv: &[f64]| -> f64 {
            let y = assemble(vv);
            let d = &y - y_hat;
            let base = d.dot(&(omega_inv * &d));
            let pen: f64 = cons
                .values(&y)
                .iter()
                .zip(&lam)
                .map(|(&h, &l)| {
                    let t = (l / mu + h).max(0.0);
                    0.5 * mu * t * t
                })
                .sum();
            base + pen
        };
        let lam2 = lambdas.clone();
        let mut grad = |vv: &[f64]| -> Vec<f64> {
            let y = assemble(vv);
            let mut g_full = (omega_inv * (&y - y_hat)) * 2.0;
            let h = cons.values(&y);
            let rows = cons.gradient_rows(&y, dim);
            for (k, row) in rows.iter().enumerate() {
                let t = (lam2[k] / mu + h[k]).max(0.0);
                if t > 0.0 {
                    g_full += row * (mu * t);
                }
            }
            (z.transpose() * g_full).iter().cloned().collect()
        };
        let res = bfgs_with_grad(&mut f, &mut grad, &v, 400);
        v = res.x;
        let y = assemble(&v);
        let h = cons.values(&y);
        for k in 0..n_rows {
            lambdas[k] = (lambdas[k] + mu * h[k]).max(0.0);
        }
        let viol = cons.violation(&y).max(0.0);
        if viol <= 1e-9 {
            let grad_f = (omega_inv * (&y - y_hat)) * 2.0;
            let rows = cons.gradient_rows(&y, dim);
            let residual = kkt_residual(&grad_f, &rows, &lambdas, &h, c, viol);
            if residual <= KKT_TOL {
                return Ok(ShrASolution { y, iterations, kkt_residual: residual, used_fallback: true });
            }
        }
        mu = (mu * 10.0).min(1e14);
    }

    Err(ShrAFailure {
        message: "no feasible KKT point met the tolerance within the iteration budget".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nullspace_basis_is_orthonormal_complement() {
        let c = DVector::from_row_slice(&[1.0, -0.25, -0.5, -0.25]);
        let z = nullspace_basis(&c);
        let ztz = z.transpose() * &z;
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((ztz[(i, j)] - expect).abs() < 1e-12);
            }
        }
        let cz = c.transpose() * &z;
        assert!(cz.iter().all(|x| x.abs() < 1e-12));
    }
}
