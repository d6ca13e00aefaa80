//! Correlation-decomposition reconciliation (the "shr_B" route).
//!
//! With the reconciled standard deviations held fixed, the portfolio
//! variance decomposes over correlations as `sigma_p^2 = a' rho` with the
//! modified aggregation vector `a = D'(S(x)S)(w(x)w)`. The box-constrained
//! quadratic program
//!
//! `min (x - x_hat)' W^-1 (x - x_hat)  s.t.  sigma_p^2 = a' rho,
//!  rho_diag = 1, -1 <= rho_offdiag <= 1`
//!
//! has a diagonal-plus-rank-one structure that reduces to a scalar root
//! find: the stationarity conditions give `rho = clamp(rho_hat - s b)` for a
//! scalar `s` fixed by the aggregation constraint, which is monotone in `s`.
//! The solve below is exact up to bisection tolerance.

use nalgebra::DVector;

/// Inputs in reduced form: only the off-diagonal correlations are free.
pub(crate) struct CorrQp<'a> {
    /// Off-diagonal entries of the modified aggregation vector (nonnegative).
    pub b: &'a DVector<f64>,
    /// Off-diagonal correlation anchors, already clamped into [-1, 1].
    pub rho0: &'a DVector<f64>,
    /// Contribution of the pinned unit diagonal: sum of diagonal entries of
    /// the aggregation vector.
    pub diag_sum: f64,
    /// Portfolio-variance anchor.
    pub target: f64,
    /// Error variance of the portfolio component; 0 pins the portfolio
    /// variance to `target` exactly.
    pub w00: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct CorrQpSolution {
    pub rho_off: DVector<f64>,
    pub sigma_p2: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum CorrQpError {
    /// Pinned target outside the attainable range of `a' rho` over the box.
    Infeasible { target: f64, lo: f64, hi: f64 },
}

fn clamp_vec(rho0: &DVector<f64>, b: &DVector<f64>, s: f64) -> DVector<f64> {
    DVector::from_fn(rho0.len(), |k, _| (rho0[k] - s * b[k]).clamp(-1.0, 1.0))
}

pub(crate) fn solve_corr_qp(qp: &CorrQp) -> Result<CorrQpSolution, CorrQpError> {
    debug_assert!(qp.b.iter().all(|&x| x >= 0.0));
    debug_assert!(qp.w00 >= 0.0);
    let b_sum: f64 = qp.b.sum();

    // phi(s) is strictly decreasing whenever w00 > 0 or b has a nonzero
    // entry; its root gives the KKT multiplier of the aggregation constraint.
    let phi = |s: f64| -> f64 {
        qp.diag_sum + qp.b.dot(&clamp_vec(qp.rho0, qp.b, s)) - qp.target - s * qp.w00
    };

    if qp.w00 == 0.0 {
        let t_star = qp.target - qp.diag_sum;
        let tol = 1e-9 * (1.0 + qp.target.abs());
        if t_star > b_sum + tol || t_star < -b_sum - tol {
            return Err(CorrQpError::Infeasible {
                target: qp.target,
                lo: qp.diag_sum - b_sum,
                hi: qp.diag_sum + b_sum,
            });
        }
        if b_sum == 0.0 {
            // no free correlations affect the portfolio variance
            return Ok(CorrQpSolution {
                rho_off: qp.rho0.clone(),
                sigma_p2: qp.diag_sum,
                iterations: 0,
            });
        }
    } else if b_sum == 0.0 {
        // correlations decouple entirely; the variance takes its only
        // attainable value
        return Ok(CorrQpSolution {
            rho_off: qp.rho0.clone(),
            sigma_p2: qp.diag_sum,
            iterations: 0,
        });
    }

    // bracket the root of the monotone decreasing phi
    let mut lo = -1.0;
    let mut hi = 1.0;
    let mut guard = 0;
    while phi(lo) < 0.0 {
        lo *= 2.0;
        guard += 1;
        if guard > 200 {
            break;
        }
    }
    guard = 0;
    while phi(hi) > 0.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            break;
        }
    }

    let mut iterations = 0;
    for _ in 0..200 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if phi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= f64::EPSILON * (1.0 + mid.abs()) {
            break;
        }
    }
    let s = 0.5 * (lo + hi);
    let rho_off = clamp_vec(qp.rho0, qp.b, s);
    let sigma_p2 = qp.diag_sum + qp.b.dot(&rho_off);
    Ok(CorrQpSolution { rho_off, sigma_p2, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pinned_single_variable_closed_form() {
        // a = (0.25, 0.5, 0.25) over (diag, off, diag); target 0.9, anchor 0.5
        let b = DVector::from_row_slice(&[0.5]);
        let rho0 = DVector::from_row_slice(&[0.5]);
        let sol = solve_corr_qp(&CorrQp { b: &b, rho0: &rho0, diag_sum: 0.5, target: 0.9, w00: 0.0 })
            .unwrap();
        assert_abs_diff_eq!(sol.rho_off[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.sigma_p2, 0.9, epsilon = 1e-12);
    }

    #[test]
    fn coherent_anchor_is_fixed_point() {
        let b = DVector::from_row_slice(&[0.3, 0.2, 0.1]);
        let rho0 = DVector::from_row_slice(&[0.4, -0.2, 0.6]);
        let target = 1.0 + b.dot(&rho0);
        for w00 in [0.0, 0.5] {
            let sol =
                solve_corr_qp(&CorrQp { b: &b, rho0: &rho0, diag_sum: 1.0, target, w00 }).unwrap();
            for k in 0..3 {
                assert_abs_diff_eq!(sol.rho_off[k], rho0[k], epsilon = 1e-10);
            }
            assert_abs_diff_eq!(sol.sigma_p2, target, epsilon = 1e-10);
        }
    }

    #[test]
    fn infeasible_pinned_target() {
        let b = DVector::from_row_slice(&[0.5]);
        let rho0 = DVector::from_row_slice(&[0.0]);
        let res =
            solve_corr_qp(&CorrQp { b: &b, rho0: &rho0, diag_sum: 0.5, target: 2.0, w00: 0.0 });
        assert!(matches!(res, Err(CorrQpError::Infeasible { .. })));
    }

    #[test]
    fn soft_portfolio_weight_interpolates() {
        // single off-diagonal: analytic optimum u = (rho0 + b(t - d)/w00) / (1 + b^2/w00)
        let b = DVector::from_row_slice(&[0.5]);
        let rho0 = DVector::from_row_slice(&[0.5]);
        let (d, t, w00) = (0.5, 0.9, 1.0);
        let expect = (0.5 + 0.5 * (t - d) / w00) / (1.0 + 0.25 / w00);
        let sol =
            solve_corr_qp(&CorrQp { b: &b, rho0: &rho0, diag_sum: d, target: t, w00 }).unwrap();
        assert_abs_diff_eq!(sol.rho_off[0], expect, epsilon = 1e-10);
    }

    #[test]
    fn box_activates_at_unit_correlation() {
        let b = DVector::from_row_slice(&[0.4, 0.4]);
        let rho0 = DVector::from_row_slice(&[0.9, 0.1]);
        // pinned target forces rho near the upper bound
        let sol = solve_corr_qp(&CorrQp {
            b: &b,
            rho0: &rho0,
            diag_sum: 0.2,
            target: 0.2 + 0.4 + 0.4 * 0.9,
            w00: 0.0,
        })
        .unwrap();
        assert!(sol.rho_off.iter().all(|&x| x.abs() <= 1.0));
        assert_abs_diff_eq!(
            sol.sigma_p2,
            0.2 + b.dot(&sol.rho_off),
            epsilon = 1e-12
        );
    }
}
