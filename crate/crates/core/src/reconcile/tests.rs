use super::*;
use approx::assert_abs_diff_eq;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn vec64(v: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(v)
}

fn random_spd(d: usize, rng: &mut StdRng) -> DMatrix<f64> {
    let l = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &l * l.transpose() + DMatrix::identity(d, d) * rng.random_range(0.1..1.0)
}

fn random_weights(n: usize, rng: &mut StdRng) -> DVector<f64> {
    let raw = DVector::from_fn(n, |_, _| rng.random_range(0.05..1.0));
    let s = raw.sum();
    raw / s
}

fn random_cov(n: usize, rng: &mut StdRng) -> SymMatrix {
    SymMatrix::symmetrized(random_spd(n, rng))
}

fn identity_error_cov(dim: usize) -> ErrorCovariance {
    ErrorCovariance { omega: DMatrix::identity(dim, dim), shrinkage_intensity: 0.0, n_obs: 0 }
}

// ---------------------------------------------------------------- constraint

#[test]
fn constraint_examples() {
    let c = build_constraint(&vec64(&[0.5, 0.5]));
    assert_eq!(c.as_vector().as_slice(), &[1.0, -0.25, -0.5, -0.25]);
    let c = build_constraint(&vec64(&[1.0]));
    assert_eq!(c.as_vector().as_slice(), &[1.0, -1.0]);
}

#[test]
fn constraint_annihilates_coherent_stacks() {
    let mut rng = StdRng::seed_from_u64(1);
    for n in [2usize, 5, 9] {
        let w = random_weights(n, &mut rng);
        let sigma = random_cov(n, &mut rng);
        let c = build_constraint(&w);
        let y = StackedVector::from_parts(sigma.quad_form(&w), &sigma.vech());
        let dot = c.as_vector().dot(y.as_vector());
        assert!(dot.abs() < 1e-12 * (1.0 + sigma.quad_form(&w).abs()));
    }
}

// ------------------------------------------------------------------- errors

#[test]
fn insample_errors_perfect_fit_is_zero() {
    let mut rng = StdRng::seed_from_u64(2);
    let n = 3;
    let w = random_weights(n, &mut rng);
    let covs: Vec<SymMatrix> = (0..5).map(|_| random_cov(n, &mut rng)).collect();
    let univ: Vec<f64> = covs.iter().map(|s| s.quad_form(&w)).collect();
    let e = insample_errors(&univ, &covs, &covs, &w).unwrap();
    assert!(e.iter().all(|&x| x.abs() < 1e-12));
}

#[test]
fn insample_errors_single_asset() {
    let w = vec64(&[1.0]);
    let proxy: Vec<SymMatrix> = [4.0, 9.0]
        .iter()
        .map(|&v| SymMatrix::symmetrized(DMatrix::from_element(1, 1, v)))
        .collect();
    let fitted: Vec<SymMatrix> = [1.0, 1.0]
        .iter()
        .map(|&v| SymMatrix::symmetrized(DMatrix::from_element(1, 1, v)))
        .collect();
    let univ = vec![1.0, 1.0];
    let e = insample_errors(&univ, &fitted, &proxy, &w).unwrap();
    // portfolio column equals the covariance column for a single asset
    assert_eq!(e[(0, 0)], 3.0);
    assert_eq!(e[(0, 1)], 3.0);
    assert_eq!(e[(1, 0)], 8.0);
    assert_eq!(e[(1, 1)], 8.0);
}

#[test]
fn insample_errors_spot_check_and_misalignment() {
    let w = vec64(&[0.5, 0.5]);
    let proxy = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0])).unwrap();
    let fitted = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.2, 1.5])).unwrap();
    let e = insample_errors(&[0.9], &[fitted.clone()], &[proxy.clone()], &w).unwrap();
    assert_abs_diff_eq!(e[(0, 0)], proxy.quad_form(&w) - 0.9, epsilon = 1e-15);
    assert_abs_diff_eq!(e[(0, 1)], 0.2, epsilon = 1e-15);
    assert_abs_diff_eq!(e[(0, 2)], 0.3, epsilon = 1e-15);
    assert_abs_diff_eq!(e[(0, 3)], 0.5, epsilon = 1e-15);

    assert!(insample_errors(&[0.9, 1.0], &[fitted], &[proxy], &w).is_err());
}

// --------------------------------------------------------------- shrink_cov

#[test]
fn shrink_cov_independent_columns_shrinks_offdiagonals() {
    let mut rng = StdRng::seed_from_u64(3);
    let t_len = 4000;
    let e = DMatrix::from_fn(t_len, 4, |_, _| rng.random_range(-1.0..1.0));
    let out = shrink_cov(&e).unwrap();
    assert!(out.shrinkage_intensity > 0.0 && out.shrinkage_intensity <= 1.0);
    let covm = e.transpose() * &e / t_len as f64;
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                assert!(out.omega[(i, j)].abs() <= covm[(i, j)].abs() + 1e-15);
            } else {
                assert_abs_diff_eq!(out.omega[(i, i)], covm[(i, i)], epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn shrink_cov_collinear_rows_stays_spd() {
    // two rows, second collinear with first: sample covariance is singular
    let e = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, -1.0, 2.0, 4.0, -2.0]);
    let out = shrink_cov(&e).unwrap();
    assert!(Cholesky::new(out.omega.clone()).is_some());
}

#[test]
fn shrink_cov_zero_variance_column_rejected() {
    let e = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 0.0, 0.5, 0.0]);
    assert!(matches!(shrink_cov(&e), Err(ReconcileError::DegenerateErrors(_))));
}

#[test]
fn shrink_cov_matches_scripted_intensity_oracle() {
    // independent from-scratch implementation of the intensity formula on a
    // small 3-column panel
    let e = DMatrix::from_row_slice(
        6,
        3,
        &[
            0.3, -0.1, 0.2, //
            -0.4, 0.2, 0.1, //
            0.1, 0.1, -0.3, //
            0.5, -0.2, 0.4, //
            -0.2, 0.3, -0.1, //
            0.1, -0.4, 0.2,
        ],
    );
    let t = 6.0;
    // oracle
    let mut covm = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for row in 0..6 {
                s += e[(row, i)] * e[(row, j)];
            }
            covm[i][j] = s / t;
        }
    }
    let mut sum_v = 0.0;
    let mut sum_d = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                continue;
            }
            let (si, sj) = (covm[i][i].sqrt(), covm[j][j].sqrt());
            let mut w_sum = 0.0;
            let mut w2_sum = 0.0;
            for row in 0..6 {
                let w = (e[(row, i)] / si) * (e[(row, j)] / sj);
                w_sum += w;
                w2_sum += w * w;
            }
            sum_v += t / (t - 1.0).powi(3) * (w2_sum - w_sum * w_sum / t);
            let r = covm[i][j] / (si * sj);
            sum_d += r * r;
        }
    }
    let lambda_oracle = (sum_v / sum_d).clamp(0.0, 1.0);
    let out = shrink_cov(&e).unwrap();
    assert_abs_diff_eq!(out.shrinkage_intensity, lambda_oracle, epsilon = 1e-12);
    for i in 0..3 {
        for j in 0..3 {
            let expect = if i == j {
                covm[i][i]
            } else {
                (1.0 - lambda_oracle) * covm[i][j]
            };
            assert_abs_diff_eq!(out.omega[(i, j)], expect, epsilon = 1e-12);
        }
    }
}

// ------------------------------------------------------------ reconcile_shr

#[test]
fn shr_hand_example_single_asset() {
    // Omega = I, y_hat = (2, 1), c = (1, -1): equal split projection
    let y_hat = StackedVector::new(1, vec64(&[2.0, 1.0])).unwrap();
    let omega = identity_error_cov(2);
    let c = build_constraint(&vec64(&[1.0]));
    let res = reconcile_shr(&y_hat, &omega, &c).unwrap();
    assert_abs_diff_eq!(res.y_tilde.as_vector()[0], 1.5, epsilon = 1e-14);
    assert_abs_diff_eq!(res.y_tilde.as_vector()[1], 1.5, epsilon = 1e-14);
}

#[test]
fn shr_fixes_coherent_points() {
    let mut rng = StdRng::seed_from_u64(4);
    let n = 3;
    let w = random_weights(n, &mut rng);
    let sigma = random_cov(n, &mut rng);
    let y_hat = StackedVector::from_parts(sigma.quad_form(&w), &sigma.vech());
    let dim = y_hat.as_vector().len();
    let omega = ErrorCovariance {
        omega: random_spd(dim, &mut rng),
        shrinkage_intensity: 0.0,
        n_obs: 0,
    };
    let c = build_constraint(&w);
    let res = reconcile_shr(&y_hat, &omega, &c).unwrap();
    for k in 0..dim {
        assert_abs_diff_eq!(res.y_tilde.as_vector()[k], y_hat.as_vector()[k], epsilon = 1e-10);
    }
}

#[test]
fn shr_matches_kkt_oracle() {
    let mut rng = StdRng::seed_from_u64(5);
    for _ in 0..200 {
        let n = *[2usize, 3, 5].iter().nth(rng.random_range(0..3)).unwrap();
        let w = random_weights(n, &mut rng);
        let c = build_constraint(&w);
        let dim = n * (n + 1) / 2 + 1;
        let omega_mat = random_spd(dim, &mut rng);
        let y_hat_vec = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
        let y_hat = StackedVector::new(n, y_hat_vec.clone()).unwrap();
        let omega =
            ErrorCovariance { omega: omega_mat.clone(), shrinkage_intensity: 0.0, n_obs: 0 };
        let res = reconcile_shr(&y_hat, &omega, &c).unwrap();

        // generic equality-constrained KKT solve:
        // [2 Omega^-1, c; c', 0] (y, mu) = (2 Omega^-1 y_hat, 0)
        let omega_inv = Cholesky::new(omega_mat.clone()).unwrap().inverse();
        let mut kkt = DMatrix::zeros(dim + 1, dim + 1);
        kkt.view_mut((0, 0), (dim, dim)).copy_from(&(&omega_inv * 2.0));
        for i in 0..dim {
            kkt[(dim, i)] = c.as_vector()[i];
            kkt[(i, dim)] = c.as_vector()[i];
        }
        let mut rhs = DVector::zeros(dim + 1);
        rhs.rows_mut(0, dim).copy_from(&(&omega_inv * &y_hat_vec * 2.0));
        let sol = kkt.lu().solve(&rhs).unwrap();
        let scale = (0..dim).fold(0.0f64, |a, i| a.max(sol[i].abs())).max(1.0);
        for k in 0..dim {
            let err = (res.y_tilde.as_vector()[k] - sol[k]).abs() / scale;
            assert!(err <= 1e-10, "relative error {err}");
        }
    }
}

#[test]
fn shr_invariant_to_omega_scaling() {
    let mut rng = StdRng::seed_from_u64(6);
    let n = 4;
    let w = random_weights(n, &mut rng);
    let c = build_constraint(&w);
    let dim = n * (n + 1) / 2 + 1;
    let base = random_spd(dim, &mut rng);
    let y_hat = StackedVector::new(n, DVector::from_fn(dim, |_, _| rng.random_range(-1.0..2.0)))
        .unwrap();
    let a = reconcile_shr(
        &y_hat,
        &ErrorCovariance { omega: base.clone(), shrinkage_intensity: 0.0, n_obs: 0 },
        &c,
    )
    .unwrap();
    let b = reconcile_shr(
        &y_hat,
        &ErrorCovariance { omega: base * 7.3, shrinkage_intensity: 0.0, n_obs: 0 },
        &c,
    )
    .unwrap();
    for k in 0..dim {
        assert_abs_diff_eq!(a.y_tilde.as_vector()[k], b.y_tilde.as_vector()[k], epsilon = 1e-11);
    }
}

#[test]
fn shr_idempotent_and_gls_optimal() {
    let mut rng = StdRng::seed_from_u64(7);
    let n = 3;
    let w = random_weights(n, &mut rng);
    let c = build_constraint(&w);
    let dim = n * (n + 1) / 2 + 1;
    let omega_mat = random_spd(dim, &mut rng);
    let omega = ErrorCovariance { omega: omega_mat.clone(), shrinkage_intensity: 0.0, n_obs: 0 };
    let y_hat =
        StackedVector::new(n, DVector::from_fn(dim, |_, _| rng.random_range(-1.0..2.0))).unwrap();
    let first = reconcile_shr(&y_hat, &omega, &c).unwrap();
    let second = reconcile_shr(&first.y_tilde, &omega, &c).unwrap();
    for k in 0..dim {
        assert_abs_diff_eq!(
            first.y_tilde.as_vector()[k],
            second.y_tilde.as_vector()[k],
            epsilon = 1e-12
        );
    }

    // optimality against random coherent perturbations
    let f_star = gls_objective(first.y_tilde.as_vector(), y_hat.as_vector(), &omega_mat);
    let cvec = c.as_vector();
    let cc = cvec.norm_squared();
    for _ in 0..100 {
        let raw = DVector::from_fn(dim, |_, _| rng.random_range(-0.5..0.5));
        let coherent_dir = &raw - cvec * (cvec.dot(&raw) / cc);
        let candidate = first.y_tilde.as_vector() + coherent_dir;
        let f = gls_objective(&candidate, y_hat.as_vector(), &omega_mat);
        assert!(f >= f_star - 1e-10 * f_star.abs().max(1.0));
    }
}

#[test]
fn shr_singular_projection_detected() {
    let y_hat = StackedVector::new(1, vec64(&[1.0, 2.0])).unwrap();
    let omega = ErrorCovariance {
        omega: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
        shrinkage_intensity: 0.0,
        n_obs: 0,
    };
    // c = (1, -1) is in the null space of this omega
    let c = build_constraint(&vec64(&[1.0]));
    assert!(matches!(
        reconcile_shr(&y_hat, &omega, &c),
        Err(ReconcileError::SingularProjection(_))
    ));
}

// -------------------------------------------------------- correlation_valid

#[test]
fn correlation_valid_cases() {
    let mut rng = StdRng::seed_from_u64(8);
    assert!(correlation_valid(&random_cov(4, &mut rng)).unwrap());

    let bad = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 1.0])).unwrap();
    assert!(!correlation_valid(&bad).unwrap());

    let boundary = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).unwrap();
    assert!(correlation_valid(&boundary).unwrap());

    let degenerate =
        SymMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0])).unwrap();
    assert!(matches!(
        correlation_valid(&degenerate),
        Err(ReconcileError::DegenerateCovariance(_))
    ));
}

// ------------------------------------------------------------------- shr_A

/// A 2-asset setup whose shr projection pushes the implied correlation far
/// beyond 1.
fn violating_case() -> (StackedVector, ErrorCovariance, ConstraintVector, DVector<f64>) {
    let w = vec64(&[0.5, 0.5]);
    let c = build_constraint(&w);
    let y_hat = StackedVector::new(2, vec64(&[3.0, 1.0, 0.9, 1.0])).unwrap();
    let omega = ErrorCovariance {
        omega: DMatrix::from_diagonal(&vec64(&[0.001, 1.0, 5.0, 1.0])),
        shrinkage_intensity: 0.0,
        n_obs: 0,
    };
    (y_hat, omega, c, w)
}

#[test]
fn shr_a_matches_shr_when_constraints_inactive() {
    let mut rng = StdRng::seed_from_u64(9);
    let n = 3;
    let w = random_weights(n, &mut rng);
    let c = build_constraint(&w);
    let sigma = random_cov(n, &mut rng);
    // mildly incoherent portfolio component only: projection stays valid
    let y_hat = StackedVector::from_parts(sigma.quad_form(&w) * 1.1, &sigma.vech());
    let dim = y_hat.as_vector().len();
    let omega = identity_error_cov(dim);
    let shr = reconcile_shr(&y_hat, &omega, &c).unwrap();
    assert!(shr.correlation_ok, "test setup expects a valid shr output");
    let a = reconcile_shr_a(&y_hat, &omega, &c).unwrap();
    for k in 0..dim {
        assert_abs_diff_eq!(
            a.y_tilde.as_vector()[k],
            shr.y_tilde.as_vector()[k],
            epsilon = 1e-6
        );
    }
}

#[test]
fn shr_a_activates_boundary_on_crafted_violation() {
    let (y_hat, omega, c, _w) = violating_case();
    let shr = reconcile_shr(&y_hat, &omega, &c).unwrap();
    assert!(!shr.correlation_ok, "setup must violate");
    let st = &shr.sigma_tilde;
    let rho_shr = st[(0, 1)] / (st[(0, 0)] * st[(1, 1)]).sqrt();
    assert!(rho_shr > 1.0);

    let res = reconcile_shr_a(&y_hat, &omega, &c).unwrap();
    assert!(res.correlation_ok);
    assert!(res.diagnostics.kkt_residual <= 1e-6);
    let sa = &res.sigma_tilde;
    let rho = sa[(0, 1)] / (sa[(0, 0)] * sa[(1, 1)]).sqrt();
    assert!((rho.abs() - 1.0).abs() <= 1e-6, "boundary activation, got rho = {rho}");
    assert!(rho.abs() <= 1.0 + 1e-12);
    // coherence of the nonlinear solution
    let resid = c.as_vector().dot(res.y_tilde.as_vector());
    assert!(resid.abs() <= 1e-8);
}

#[test]
fn shr_a_objective_dominates_shr_objective() {
    let mut rng = StdRng::seed_from_u64(10);
    let mut violations = 0;
    for _ in 0..60 {
        let n = 2 + rng.random_range(0..3);
        let w = random_weights(n, &mut rng);
        let c = build_constraint(&w);
        let dim = n * (n + 1) / 2 + 1;
        let sigma = random_cov(n, &mut rng);
        let mut y_vec = StackedVector::from_parts(0.0, &sigma.vech()).as_vector().clone();
        y_vec[0] = sigma.quad_form(&w) * rng.random_range(2.0..6.0);
        let y_hat = StackedVector::new(n, y_vec).unwrap();
        let omega_mat = random_spd(dim, &mut rng);
        let omega =
            ErrorCovariance { omega: omega_mat.clone(), shrinkage_intensity: 0.0, n_obs: 0 };
        let shr = reconcile_shr(&y_hat, &omega, &c).unwrap();
        if shr.correlation_ok {
            continue;
        }
        violations += 1;
        let a = reconcile_shr_a(&y_hat, &omega, &c).unwrap();
        assert!(a.correlation_ok);
        let f_shr = gls_objective(shr.y_tilde.as_vector(), y_hat.as_vector(), &omega_mat);
        let f_a = gls_objective(a.y_tilde.as_vector(), y_hat.as_vector(), &omega_mat);
        assert!(
            f_a >= f_shr - 1e-8 * f_shr.abs().max(1.0),
            "adding constraints cannot improve: {f_a} < {f_shr}"
        );
    }
    assert!(violations >= 5, "only {violations} violating cases generated");
}

// ------------------------------------------------------------------- shr_B

#[test]
fn shr_b_fixed_point_at_feasible_coherent_anchor() {
    let mut rng = StdRng::seed_from_u64(11);
    let n = 3;
    let w = random_weights(n, &mut rng);
    let sigma = random_cov(n, &mut rng);
    let (r_hat, _) = cov_to_cor(&sigma).unwrap();
    // anchor portfolio variance exactly coherent with the anchors
    let sw = DVector::from_fn(n, |i, _| sigma[(i, i)].sqrt() * w[i]);
    let a_sigma = aggregation_vector(&sw);
    let target = a_sigma.dot(r_hat.vech().as_vector());
    let y_hat = StackedVector::from_parts(target, &sigma.vech());
    let res = reconcile_shr_b(
        &y_hat,
        &sigma,
        &r_hat.vech(),
        &ShrBWeights { portfolio_error_var: 0.5 },
        &w,
    )
    .unwrap();
    let (r_out, _) = cov_to_cor(&res.sigma_tilde).unwrap();
    for j in 0..n {
        for i in j..n {
            assert_abs_diff_eq!(r_out[(i, j)], r_hat[(i, j)], epsilon = 1e-9);
        }
    }
    assert_abs_diff_eq!(res.y_tilde.portfolio_variance(), target, epsilon = 1e-9);
}

#[test]
fn shr_b_pinned_two_asset_closed_form() {
    // S = I, w = (1/2, 1/2), anchors rho = (1, 0.5, 1); the shr stage
    // carries the pinned portfolio target w' Sigma w = 0.9, so
    // 0.25 + 0.5 rho + 0.25 = 0.9  =>  rho = 0.8
    let w = vec64(&[0.5, 0.5]);
    let sigma_shr =
        SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0])).unwrap();
    assert_abs_diff_eq!(sigma_shr.quad_form(&w), 0.9, epsilon = 1e-15);
    let rho_hat = HalfVec::from_slice(&[1.0, 0.5, 1.0]).unwrap();
    let y_hat = StackedVector::new(2, vec64(&[0.9, 1.0, 0.5, 1.0])).unwrap();
    let res = reconcile_shr_b(
        &y_hat,
        &sigma_shr,
        &rho_hat,
        &ShrBWeights { portfolio_error_var: 0.0 },
        &w,
    )
    .unwrap();
    assert_abs_diff_eq!(res.sigma_tilde[(0, 1)], 0.8, epsilon = 1e-10);
    assert_abs_diff_eq!(res.y_tilde.portfolio_variance(), 0.9, epsilon = 1e-12);
    // exact unit diagonal of the implied correlation
    let (r, _) = cov_to_cor(&res.sigma_tilde).unwrap();
    assert_eq!(r[(0, 0)], 1.0);
    assert_eq!(r[(1, 1)], 1.0);
}

#[test]
fn shr_b_reconstruction_coherence() {
    let mut rng = StdRng::seed_from_u64(12);
    for _ in 0..50 {
        let n = 2 + rng.random_range(0..4);
        let w = random_weights(n, &mut rng);
        let sigma_shr = random_cov(n, &mut rng);
        let anchor_cov = random_cov(n, &mut rng);
        let (r_hat, _) = cov_to_cor(&anchor_cov).unwrap();
        let y_hat = StackedVector::from_parts(
            rng.random_range(0.1..3.0),
            &anchor_cov.vech(),
        );
        let res = reconcile_shr_b(
            &y_hat,
            &sigma_shr,
            &r_hat.vech(),
            &ShrBWeights { portfolio_error_var: rng.random_range(0.0..2.0) },
            &w,
        )
        .unwrap();
        assert!(res.correlation_ok);
        // omega' Sigma omega equals the reconciled portfolio variance
        let direct = res.sigma_tilde.quad_form(&w);
        let scale = 1.0 + direct.abs();
        assert!(
            (direct - res.y_tilde.portfolio_variance()).abs() <= 1e-8 * scale,
            "coherence violated: {direct} vs {}",
            res.y_tilde.portfolio_variance()
        );
        // exact unit diagonal after decomposition
        let (r, _) = cov_to_cor(&res.sigma_tilde).unwrap();
        for i in 0..n {
            assert_eq!(r[(i, i)], 1.0);
        }
    }
}

#[test]
fn shr_b_infeasible_pinned_target() {
    // the shr covariance implies rho = 1.5, so its portfolio variance 1.25
    // exceeds the maximum 1.0 attainable with |rho| <= 1 and unit
    // variances; pinning must report infeasibility
    let w = vec64(&[0.5, 0.5]);
    let sigma_shr =
        SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 1.0])).unwrap();
    let rho_hat = HalfVec::from_slice(&[1.0, 0.0, 1.0]).unwrap();
    let y_hat = StackedVector::new(2, vec64(&[1.25, 1.0, 0.0, 1.0])).unwrap();
    let res = reconcile_shr_b(
        &y_hat,
        &sigma_shr,
        &rho_hat,
        &ShrBWeights { portfolio_error_var: 0.0 },
        &w,
    );
    assert!(matches!(res, Err(ReconcileError::InfeasibleReconciliation(_))));
    // a soft portfolio anchor always admits a solution (correlations
    // saturate and the variance meets the attainable boundary)
    let soft = reconcile_shr_b(
        &y_hat,
        &sigma_shr,
        &rho_hat,
        &ShrBWeights { portfolio_error_var: 0.01 },
        &w,
    )
    .unwrap();
    assert!(soft.correlation_ok);
    assert_abs_diff_eq!(soft.sigma_tilde[(0, 1)], 1.0, epsilon = 1e-9);
}

// -------------------------------------------------------------- algorithm 1

#[test]
fn algorithm1_returns_plain_shr_when_valid() {
    let mut rng = StdRng::seed_from_u64(13);
    let n = 3;
    let w = random_weights(n, &mut rng);
    let sigma = random_cov(n, &mut rng);
    let base = BaseForecastSet {
        sigma_p2_hat: sigma.quad_form(&w) * 1.05,
        sigma_hat: sigma.vech(),
    };
    let dim = n * (n + 1) / 2 + 1;
    let res = algorithm1(&base, &identity_error_cov(dim), &w, ReconcileOption::Auto).unwrap();
    assert_eq!(res.method_used, MethodUsed::Shr);
    assert!(res.correlation_ok);
}

#[test]
fn algorithm1_option_b_on_crafted_violation() {
    let (y_hat, omega, _c, w) = violating_case();
    let base = BaseForecastSet {
        sigma_p2_hat: y_hat.portfolio_variance(),
        sigma_hat: y_hat.vech_part(),
    };
    let res = algorithm1(&base, &omega, &w, ReconcileOption::B).unwrap();
    assert_eq!(res.method_used, MethodUsed::ShrB);
    assert!(res.correlation_ok);
    let (r, _) = cov_to_cor(&res.sigma_tilde).unwrap();
    assert!(r[(0, 1)].abs() <= 1.0);
}

#[test]
fn algorithm1_both_options_satisfy_contracts() {
    let (y_hat, omega, c, w) = violating_case();
    let base = BaseForecastSet {
        sigma_p2_hat: y_hat.portfolio_variance(),
        sigma_hat: y_hat.vech_part(),
    };
    let res_a = algorithm1(&base, &omega, &w, ReconcileOption::A).unwrap();
    let res_b = algorithm1(&base, &omega, &w, ReconcileOption::B).unwrap();
    assert_eq!(res_a.method_used, MethodUsed::ShrA);
    assert_eq!(res_b.method_used, MethodUsed::ShrB);
    for res in [&res_a, &res_b] {
        assert!(res.correlation_ok);
        assert!(correlation_valid(&res.sigma_tilde).unwrap());
    }
    // route A keeps the aggregation identity in the covariance scale
    let resid = c.as_vector().dot(res_a.y_tilde.as_vector());
    assert!(resid.abs() <= 1e-8);
    // route B keeps it through the correlation decomposition
    let direct = res_b.sigma_tilde.quad_form(&w);
    assert!((direct - res_b.y_tilde.portfolio_variance()).abs() <= 1e-8);
}

#[test]
fn algorithm1_auto_prefers_b_and_clamps_degenerate_inputs() {
    let (y_hat, omega, _c, w) = violating_case();
    let base = BaseForecastSet {
        sigma_p2_hat: -1.0, // degenerate portfolio forecast
        sigma_hat: y_hat.vech_part(),
    };
    let res = algorithm1(&base, &omega, &w, ReconcileOption::Auto).unwrap();
    assert!(res.diagnostics.clamped_inputs >= 1);
    assert!(res.correlation_ok);
}
