//! Unconstrained minimizers used by the QML fitting routines.
//!
//! All model estimation runs through parameter transforms that make the
//! search space unconstrained, so two plain minimizers suffice: a
//! Nelder-Mead simplex for low-dimensional problems and a BFGS quasi-Newton
//! method with forward-difference gradients for the larger ones.

/// Relative objective-change tolerance shared by both minimizers.
pub(crate) const REL_TOL: f64 = 1e-8;
pub(crate) const MAX_ITER: usize = 500;

#[derive(Debug, Clone)]
pub(crate) struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder-Mead downhill simplex with standard coefficients
/// (reflection 1, expansion 2, contraction 0.5, shrink 0.5).
pub(crate) fn nelder_mead(
    f: &mut impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    initial_step: f64,
    max_iter: usize,
) -> OptimResult {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if v[i].abs() > 1e-8 { initial_step * v[i].abs() } else { initial_step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        // order ascending by value
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        let spread = (values[worst] - values[best]).abs();
        if spread <= REL_TOL * (values[best].abs() + 1e-12) {
            converged = true;
            break;
        }

        // centroid of all but the worst
        let mut centroid = vec![0.0; n];
        for (k, v) in simplex.iter().enumerate() {
            if k == worst {
                continue;
            }
            for i in 0..n {
                centroid[i] += v[i] / n as f64;
            }
        }

        let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(&ai, &bi)| ai + t * (bi - ai)).collect()
        };

        let reflected = lerp(&centroid, &simplex[worst], -1.0);
        let f_ref = f(&reflected);
        if f_ref < values[best] {
            let expanded = lerp(&centroid, &simplex[worst], -2.0);
            let f_exp = f(&expanded);
            if f_exp < f_ref {
                simplex[worst] = expanded;
                values[worst] = f_exp;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_ref;
            }
        } else if f_ref < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = f_ref;
        } else {
            let contracted = if f_ref < values[worst] {
                lerp(&centroid, &simplex[worst], -0.5)
            } else {
                lerp(&centroid, &simplex[worst], 0.5)
            };
            let f_con = f(&contracted);
            if f_con < values[worst].min(f_ref) {
                simplex[worst] = contracted;
                values[worst] = f_con;
            } else {
                // shrink toward the best vertex
                let best_point = simplex[best].clone();
                for k in 0..=n {
                    if k == best {
                        continue;
                    }
                    simplex[k] = lerp(&best_point, &simplex[k], 0.5);
                    values[k] = f(&simplex[k]);
                }
            }
        }
    }

    let (argmin, _) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap();
    OptimResult { x: simplex[argmin].clone(), value: values[argmin], iterations, converged }
}

pub(crate) fn forward_diff_gradient(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], fx: f64) -> Vec<f64> {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut xh = x.to_vec();
    for i in 0..n {
        let h = 1e-7 * (1.0 + x[i].abs());
        xh[i] = x[i] + h;
        g[i] = (f(&xh) - fx) / h;
        xh[i] = x[i];
    }
    g
}

/// BFGS with forward-difference gradients and a backtracking Armijo line
/// search. The inverse Hessian approximation starts at the identity.
pub(crate) fn bfgs(
    f: &mut impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    max_iter: usize,
) -> OptimResult {
    bfgs_impl(f, None::<&mut fn(&[f64]) -> Vec<f64>>, x0, max_iter)
}

/// BFGS with a caller-supplied analytic gradient.
pub(crate) fn bfgs_with_grad(
    f: &mut impl FnMut(&[f64]) -> f64,
    grad: &mut impl FnMut(&[f64]) -> Vec<f64>,
    x0: &[f64],
    max_iter: usize,
) -> OptimResult {
    bfgs_impl(f, Some(grad), x0, max_iter)
}

fn bfgs_impl(
    f: &mut impl FnMut(&[f64]) -> f64,
    mut grad: Option<&mut impl FnMut(&[f64]) -> Vec<f64>>,
    x0: &[f64],
    max_iter: usize,
) -> OptimResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut g = match grad.as_mut() {
        Some(gr) => gr(&x),
        None => forward_diff_gradient(f, &x, fx),
    };
    // inverse Hessian approximation, row-major
    let mut h_inv = vec![0.0; n * n];
    for i in 0..n {
        h_inv[i * n + i] = 1.0;
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        // p = -H g
        let mut p = vec![0.0; n];
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += h_inv[i * n + j] * g[j];
            }
            p[i] = -s;
        }
        let gdotp: f64 = g.iter().zip(&p).map(|(a, b)| a * b).sum();
        if gdotp >= 0.0 {
            // not a descent direction: reset to steepest descent
            for i in 0..n {
                for j in 0..n {
                    h_inv[i * n + j] = if i == j { 1.0 } else { 0.0 };
                }
                p[i] = -g[i];
            }
        }
        let gdotp: f64 = g.iter().zip(&p).map(|(a, b)| a * b).sum();

        // backtracking line search
        let mut step = 1.0;
        let mut x_new = x.clone();
        let mut f_new = f64::INFINITY;
        let mut ok = false;
        for _ in 0..40 {
            for i in 0..n {
                x_new[i] = x[i] + step * p[i];
            }
            f_new = f(&x_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * gdotp {
                ok = true;
                break;
            }
            step *= 0.5;
        }
        if !ok {
            converged = (0..n).all(|i| g[i].abs() <= 1e-6 * (1.0 + fx.abs()));
            break;
        }

        let g_new = match grad.as_mut() {
            Some(gr) => gr(&x_new),
            None => forward_diff_gradient(f, &x_new, f_new),
        };
        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();

        let rel_change = (fx - f_new).abs() / (fx.abs() + 1e-12);
        x = x_new.clone();
        let f_prev = fx;
        fx = f_new;
        g = g_new;
        if rel_change < REL_TOL && f_new <= f_prev {
            converged = true;
            break;
        }

        if sy > 1e-12 {
            // BFGS inverse update: H <- (I - r s y')H(I - r y s') + r s s'
            let r = 1.0 / sy;
            let mut hy = vec![0.0; n];
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += h_inv[i * n + j] * y[j];
                }
                hy[i] = acc;
            }
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h_inv[i * n + j] += -r * (s[i] * hy[j] + hy[i] * s[j])
                        + r * r * yhy * s[i] * s[j]
                        + r * s[i] * s[j];
                }
            }
        }
    }

    OptimResult { x, value: fx, iterations, converged }
}
