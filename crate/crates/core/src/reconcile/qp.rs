//! Dense strictly-convex quadratic programming by a working-set method.
//!
//! Solves `min 1/2 p'Hp + g'p` subject to `E p = b_eq` and `A p <= b_in`
//! with SPD `H`. Each working set is solved exactly through its KKT system;
//! constraints enter on violation and leave on negative multipliers.
//! Intended for the small subproblems of the reconciliation solvers
//! (dimension up to a few hundred).

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub(crate) struct QpSolution {
    pub p: DVector<f64>,
    /// Lagrange multipliers of the inequality constraints (0 when inactive).
    pub ineq_multipliers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum QpError {
    /// The working-set loop failed to terminate; the linearized constraints
    /// are inconsistent or nearly so.
    Stalled,
}

pub(crate) struct QpProblem<'a> {
    pub h: &'a DMatrix<f64>,
    pub g: &'a DVector<f64>,
    /// Equality rows `(a, b)`: `a'p = b`.
    pub eq: &'a [(DVector<f64>, f64)],
    /// Inequality rows `(a, b)`: `a'p <= b`.
    pub ineq: &'a [(DVector<f64>, f64)],
}

pub(crate) fn solve_qp(prob: &QpProblem) -> Result<QpSolution, QpError> {
    let dim = prob.g.len();
    let n_eq = prob.eq.len();
    let n_in = prob.ineq.len();
    let mut working: Vec<usize> = Vec::new();
    let mut banned: Option<usize> = None;

    let max_iter = 6 * (n_in + n_eq + 2);
    for _iter in 1..=max_iter {
        // KKT system for the current working set
        let k = n_eq + working.len();
        let size = dim + k;
        let mut kkt = DMatrix::zeros(size, size);
        let mut rhs = DVector::zeros(size);
        kkt.view_mut((0, 0), (dim, dim)).copy_from(prob.h);
        for i in 0..dim {
            rhs[i] = -prob.g[i];
        }
        for (r, (a, b)) in prob
            .eq
            .iter()
            .map(|e| (&e.0, e.1))
            .chain(working.iter().map(|&w| (&prob.ineq[w].0, prob.ineq[w].1)))
            .enumerate()
        {
            for i in 0..dim {
                kkt[(dim + r, i)] = a[i];
                kkt[(i, dim + r)] = a[i];
            }
            rhs[dim + r] = b;
        }

        let sol = match kkt.lu().solve(&rhs) {
            Some(s) => s,
            None => {
                // dependent working set: drop the most recent addition
                match working.pop() {
                    Some(last) => {
                        banned = Some(last);
                        continue;
                    }
                    None => return Err(QpError::Stalled),
                }
            }
        };
        let p = DVector::from_iterator(dim, sol.iter().take(dim).cloned());

        // multipliers of working inequalities; drop the most negative
        let mut drop_idx: Option<(usize, f64)> = None;
        for pos in 0..working.len() {
            let lambda = sol[dim + n_eq + pos];
            if lambda < -1e-11 && drop_idx.map_or(true, |(_, best)| lambda < best) {
                drop_idx = Some((pos, lambda));
            }
        }
        if let Some((pos, _)) = drop_idx {
            banned = Some(working.remove(pos));
            continue;
        }

        // feasibility of the remaining inequalities; add the most violated
        let mut add_idx: Option<(usize, f64)> = None;
        for (i, (a, b)) in prob.ineq.iter().enumerate() {
            if working.contains(&i) || banned == Some(i) {
                continue;
            }
            let viol = a.dot(&p) - b;
            let tol = 1e-10 * (1.0 + b.abs());
            if viol > tol && add_idx.map_or(true, |(_, best)| viol > best) {
                add_idx = Some((i, viol));
            }
        }
        banned = None;
        match add_idx {
            Some((i, _)) => {
                if working.len() >= dim {
                    return Err(QpError::Stalled);
                }
                working.push(i);
            }
            None => {
                let mut ineq_multipliers = vec![0.0; n_in];
                for (pos, &w) in working.iter().enumerate() {
                    ineq_multipliers[w] = sol[dim + n_eq + pos].max(0.0);
                }
                return Ok(QpSolution { p, ineq_multipliers });
            }
        }
    }
    Err(QpError::Stalled)
}
