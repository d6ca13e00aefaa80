//! The replicated simulation study: simulate, estimate, forecast one step
//! ahead across the test window, reconcile, and score against the true
//! portfolio variance and its noisy proxies.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::store::{LossRecord, ReplicationFailure, ResultStore, RunManifest};
use super::{Approach, FittedModel, HarnessError, StudyConfig};
use crate::dgp::build_dataset_with_rng;
use crate::eval::loss_series;
use crate::matrix::SymMatrix;
use crate::models::{
    dcc_filter, dcc_fit, edcc_filter, edcc_fit, garch11_filter, garch11_fit, sbekk_filter,
    sbekk_fit, CorrInit,
};
use crate::reconcile::{
    build_constraint, cov_to_cor_rho, insample_errors, reconcile_shr, reconcile_shr_a,
    reconcile_shr_b, shrink_cov, ConstraintVector, ErrorCovariance, ReconcileError, ShrBWeights,
    StackedVector,
};
use crate::rng::substream;

/// Floor applied to nonpositive variance forecasts before scoring.
pub(crate) const FORECAST_FLOOR: f64 = 1e-12;

pub(crate) struct ReplicationOutput {
    pub records: Vec<LossRecord>,
    pub clamped: usize,
}

/// Per-approach portfolio-variance forecasts for one base-forecast pair,
/// sharing the linear projection stage across the reconciliation columns.
pub(crate) fn reconcile_forecasts(
    sigma_p2_hat: f64,
    sigma_hat: &SymMatrix,
    omega: &ErrorCovariance,
    constraint: &ConstraintVector,
    weights: &DVector<f64>,
    approaches: &[Approach],
) -> Result<(BTreeMap<Approach, f64>, usize), HarnessError> {
    let n = sigma_hat.dim();
    let mut clamped = 0;
    let sp2 = if sigma_p2_hat > 0.0 {
        sigma_p2_hat
    } else {
        clamped += 1;
        FORECAST_FLOOR
    };
    let mut mat = sigma_hat.as_matrix().clone();
    for i in 0..n {
        if mat[(i, i)] <= 0.0 {
            mat[(i, i)] = FORECAST_FLOOR;
            clamped += 1;
        }
    }
    let sigma_hat = SymMatrix::symmetrized(mat);
    let y_hat = StackedVector::from_parts(sp2, &sigma_hat.vech());

    let mut out = BTreeMap::new();
    for &a in approaches {
        match a {
            Approach::Base => {
                out.insert(a, sp2);
            }
            Approach::Bu => {
                out.insert(a, sigma_hat.quad_form(weights));
            }
            _ => {}
        }
    }

    let wants_reconciliation = approaches
        .iter()
        .any(|a| matches!(a, Approach::Shr | Approach::ShrA | Approach::ShrB));
    if wants_reconciliation {
        let shr = reconcile_shr(&y_hat, omega, constraint)?;
        let shr_value = shr.y_tilde.portfolio_variance();
        let run_b = || -> Result<f64, ReconcileError> {
            let rho_hat = cov_to_cor_rho(&sigma_hat)?;
            let res = reconcile_shr_b(
                &y_hat,
                &shr.sigma_tilde,
                &rho_hat,
                &ShrBWeights::from_error_covariance(omega),
                weights,
            )?;
            Ok(res.y_tilde.portfolio_variance())
        };
        for &a in approaches {
            match a {
                Approach::Shr => {
                    out.insert(a, shr_value);
                }
                Approach::ShrA => {
                    let value = if shr.correlation_ok {
                        shr_value
                    } else {
                        match reconcile_shr_a(&y_hat, omega, constraint) {
                            Ok(res) => res.y_tilde.portfolio_variance(),
                            // route B is the designated fallback
                            Err(ReconcileError::InfeasibleReconciliation(_)) => run_b()?,
                            Err(e) => return Err(e.into()),
                        }
                    };
                    out.insert(a, value);
                }
                Approach::ShrB => {
                    let value = if shr.correlation_ok { shr_value } else { run_b()? };
                    out.insert(a, value);
                }
                _ => {}
            }
        }
    }
    Ok((out, clamped))
}

fn vstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

fn sample_variance(data: &[f64]) -> f64 {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    data.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n
}

fn fit_and_filter(
    model: FittedModel,
    train: &DMatrix<f64>,
    full: &DMatrix<f64>,
) -> Result<Vec<SymMatrix>, HarnessError> {
    let cov_path = match model {
        FittedModel::SBekk => {
            let params = sbekk_fit(train)?;
            let init = crate::models::sample_covariance(train);
            sbekk_filter(&params, full, &init)?.cov_path
        }
        FittedModel::Dcc => {
            let params = dcc_fit(train)?;
            let init = CorrInit::from_sample(train, &params.gamma)?;
            dcc_filter(&params, full, &init)?.cov_path
        }
        FittedModel::Edcc => {
            let params = edcc_fit(train)?;
            let init = CorrInit::from_sample(train, &params.gamma)?;
            edcc_filter(&params, full, &init)?.cov_path
        }
    };
    Ok(cov_path)
}


fn run_replication(config: &StudyConfig, q: usize) -> Result<ReplicationOutput, HarnessError> {
    #[cfg(test)]
    if test_hooks::FAIL_REPLICATION.load(std::sync::atomic::Ordering::Relaxed) == q {
        return Err(HarnessError::Model(crate::models::ModelError::estimation(
            "injected",
            "forced estimation failure",
        )));
    }
    let mut rng = substream(config.master_seed, q as u64);
    let ds = build_dataset_with_rng(&config.dgp, &mut rng)?;
    let t_train = config.dgp.t_train;
    let t_test = config.dgp.t_test;
    let full_returns = vstack(&ds.train_returns, &ds.test_returns);
    let mut full_portfolio = ds.portfolio_train.clone();
    full_portfolio.extend_from_slice(&ds.portfolio_test);

    // univariate base model on portfolio returns
    let garch = garch11_fit(&ds.portfolio_train)?;
    let pvar0 = sample_variance(&ds.portfolio_train);
    let base_filter = garch11_filter(&garch, &full_portfolio, pvar0)?;

    // The error covariance is estimated against the target series itself:
    // in simulation the true conditional covariance path is available, and
    // squared-return proxies would drown the forecast-error structure in
    // proxy noise.
    let proxy_in: &[SymMatrix] = &ds.train_cov_path;

    let constraint = build_constraint(&ds.weights);
    let truth: Vec<f64> = (0..t_test).map(|t| ds.true_cov_path[t].quad_form(&ds.weights)).collect();

    let mut records = Vec::new();
    let mut clamped = 0usize;
    for &model in &config.fitted_models {
        let cov_path = fit_and_filter(model, &ds.train_returns, &full_returns)?;
        let errors = insample_errors(
            &base_filter.variance_path[..t_train],
            &cov_path[..t_train],
            proxy_in,
            &ds.weights,
        )?;
        let omega = shrink_cov(&errors)?;

        // per-approach forecast series over the test window
        let mut forecasts: BTreeMap<Approach, Vec<f64>> = config
            .approaches
            .iter()
            .map(|&a| (a, Vec::with_capacity(t_test)))
            .collect();
        for t in 0..t_test {
            let idx = t_train + t;
            let (values, n_clamped) = reconcile_forecasts(
                base_filter.variance_path[idx],
                &cov_path[idx],
                &omega,
                &constraint,
                &ds.weights,
                &config.approaches,
            )?;
            clamped += n_clamped;
            for (&a, series) in forecasts.iter_mut() {
                let mut v = values[&a];
                if v <= 0.0 {
                    v = FORECAST_FLOOR;
                    clamped += 1;
                }
                series.push(v);
            }
        }

        // targets: true variance (delta = 0) plus each noisy-proxy level
        let mut targets: Vec<(f64, Vec<f64>)> = vec![(0.0, truth.clone())];
        for &delta in &config.delta_grid {
            let series: Vec<f64> = (0..t_test)
                .map(|t| {
                    let r = ds.test_returns.row(t).transpose();
                    let rp = r.dot(&ds.weights);
                    let proxy = delta * rp * rp + (1.0 - delta) * truth[t];
                    proxy.max(1e-300)
                })
                .collect();
            targets.push((delta, series));
        }

        for &approach in &config.approaches {
            let series = &forecasts[&approach];
            for (delta, target) in &targets {
                for &kind in &config.loss_kinds {
                    let losses = loss_series(target, series, kind)?;
                    for (t, &value) in losses.iter().enumerate() {
                        records.push(LossRecord {
                            replication: q,
                            delta: *delta,
                            approach,
                            model,
                            date: t.to_string(),
                            loss_kind: kind,
                            value,
                            horizon: 1,
                        });
                    }
                }
            }
        }
    }
    Ok(ReplicationOutput { records, clamped })
}

/// Runs the whole study: replications in parallel over independent RNG
/// substreams, merged in replication order so results are bit-identical for
/// any thread count. Per-replication failures are recorded and skipped.
pub fn run_simulation_study(config: &StudyConfig) -> Result<ResultStore, HarnessError> {
    config.validate()?;
    let started = Instant::now();
    let outcomes: Vec<Result<ReplicationOutput, String>> = (0..config.q_replications)
        .into_par_iter()
        .map(|q| run_replication(config, q).map_err(|e| e.to_string()))
        .collect();

    let mut manifest =
        RunManifest::new("study", serde_json::to_value(config)?, config.master_seed);
    let mut records = Vec::new();
    for (q, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(out) => {
                records.extend(out.records);
                manifest.clamped_forecasts += out.clamped;
            }
            Err(message) => {
                manifest.failures.push(ReplicationFailure { replication: q, message });
            }
        }
    }
    manifest.wall_time_secs = started.elapsed().as_secs_f64();
    let store = ResultStore { records, manifest };
    if let Some(dir) = &config.output_dir {
        store.write_all(dir)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{DgpSpec, ModelClass, WeightScheme};

    fn tiny_config() -> StudyConfig {
        StudyConfig {
            dgp: DgpSpec {
                model_class: ModelClass::SBekk,
                n_assets: 2,
                t_train: 150,
                t_test: 40,
                burn_in: 20,
                weight_scheme: WeightScheme::Equal,
                seed: 0,
            },
            fitted_models: vec![FittedModel::SBekk],
            approaches: Approach::all().to_vec(),
            q_replications: 2,
            delta_grid: vec![0.5],
            loss_kinds: crate::eval::LossKind::all().to_vec(),
            master_seed: 7,
            output_dir: None,
        }
    }

    #[test]
    fn study_is_deterministic_and_complete() {
        let config = tiny_config();
        let a = run_simulation_study(&config).unwrap();
        let b = run_simulation_study(&config).unwrap();
        assert!(a.manifest.failures.is_empty(), "failures: {:?}", a.manifest.failures);
        // 40 dates x 5 approaches x 3 kinds x 2 deltas x 1 model x 2 reps
        assert_eq!(a.records.len(), 40 * 5 * 3 * 2 * 2);
        assert_eq!(a.records.len(), b.records.len());
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.value.to_bits(), y.value.to_bits());
            assert_eq!(x.date, y.date);
        }
    }

    #[test]
    fn study_rejects_bad_delta() {
        let mut config = tiny_config();
        config.delta_grid = vec![1.5];
        let err = run_simulation_study(&config).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("delta_grid[0]"), "message: {msg}");
    }
}


#[cfg(test)]
mod dcc_family_tests {
    use super::*;
    use crate::dgp::{DgpSpec, ModelClass, WeightScheme};

    #[test]
    fn study_runs_dcc_and_edcc_fits_end_to_end() {
        let config = StudyConfig {
            dgp: DgpSpec {
                model_class: ModelClass::Edcc,
                n_assets: 2,
                t_train: 200,
                t_test: 30,
                burn_in: 20,
                weight_scheme: WeightScheme::Equal,
                seed: 0,
            },
            fitted_models: vec![FittedModel::Dcc, FittedModel::Edcc],
            approaches: Approach::all().to_vec(),
            q_replications: 1,
            delta_grid: vec![],
            loss_kinds: vec![crate::eval::LossKind::Mse],
            master_seed: 5,
            output_dir: None,
        };
        let store = run_simulation_study(&config).unwrap();
        assert!(store.manifest.failures.is_empty(), "{:?}", store.manifest.failures);
        assert_eq!(store.records.len(), 30 * 5 * 2);
        assert!(store.records.iter().all(|r| r.value.is_finite()));
    }
}
