//! The rolling-window real-data experiment: monthly re-estimation on the
//! most recent observations, daily multi-horizon forecasts with a fixed
//! parameter set inside each month, reconciliation, and scoring against
//! realized covariances (or squared returns when none are supplied).

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::ingest::{ingest_realized_cov, ingest_returns, RealizedCovSet, ReturnsTable};
use super::store::{LossRecord, ReplicationFailure, ResultStore, RunManifest};
use super::study::{reconcile_forecasts, FORECAST_FLOOR};
use super::{FittedModel, HarnessError, RealDataConfig};
use crate::dgp::make_weights;
use crate::eval::loss_series;
use crate::matrix::SymMatrix;
use crate::models::{
    dcc_filter, dcc_fit, dcc_forecast, edcc_filter, edcc_fit, edcc_forecast, garch11_filter,
    garch11_fit, garch11_forecast, sbekk_filter, sbekk_fit, sbekk_forecast, CorrInit,
};
use crate::reconcile::{build_constraint, insample_errors, shrink_cov, ErrorCovariance};
use crate::rng::substream;

/// One estimation block: parameters fixed from the window ending at
/// `origin_start`, used for every forecast origin in
/// `origin_start..origin_end`.
#[derive(Debug, Clone, Copy)]
struct EstimationBlock {
    origin_start: usize,
    origin_end: usize,
}

/// The first block starts at the first date with a full window behind it;
/// later blocks start at the first trading day of each subsequent month.
fn estimation_schedule(dates: &[String], window: usize) -> Vec<EstimationBlock> {
    let t_total = dates.len();
    let mut blocks = Vec::new();
    if window >= t_total {
        return blocks;
    }
    let mut start = window;
    let mut d = window;
    while d < t_total {
        let month = &dates[d][..7];
        let mut end = d;
        while end < t_total && &dates[end][..7] == month {
            end += 1;
        }
        blocks.push(EstimationBlock { origin_start: start, origin_end: end });
        d = end;
        start = end;
    }
    blocks
}

/// Per-model h-step forecast machinery: filters once over
/// `window + month` rows and iterates forward from the one-step state of
/// each origin.
enum ModelStates {
    Bekk { params: crate::models::SBekkParams, covs: Vec<SymMatrix> },
    Dcc { params: crate::models::DccParams, vars: Vec<DVector<f64>>, qs: Vec<SymMatrix> },
    Edcc { params: crate::models::EdccParams, vars: Vec<DVector<f64>>, qs: Vec<SymMatrix> },
}

impl ModelStates {
    /// `one_step[k]` is the state for the date `filter_start + k` given
    /// information through the previous date.
    fn fit(
        model: FittedModel,
        train: &DMatrix<f64>,
        filtered: &DMatrix<f64>,
    ) -> Result<(Self, Vec<SymMatrix>), HarnessError> {
        match model {
            FittedModel::SBekk => {
                let params = sbekk_fit(train)?;
                let init = crate::models::sample_covariance(train);
                let out = sbekk_filter(&params, filtered, &init)?;
                let mut covs = out.cov_path;
                covs.push(out.next_cov);
                Ok((ModelStates::Bekk { params, covs: covs.clone() }, covs))
            }
            FittedModel::Dcc => {
                let params = dcc_fit(train)?;
                let init = CorrInit::from_sample(train, &params.gamma)?;
                let out = dcc_filter(&params, filtered, &init)?;
                let mut covs = out.cov_path;
                covs.push(out.next_cov.clone());
                let t_len = filtered.nrows();
                let mut vars: Vec<DVector<f64>> = (0..t_len)
                    .map(|t| out.variance_path.row(t).transpose())
                    .collect();
                vars.push(out.next_variances);
                let mut qs = out.q_path;
                qs.push(out.next_q);
                Ok((ModelStates::Dcc { params, vars, qs }, covs))
            }
            FittedModel::Edcc => {
                let params = edcc_fit(train)?;
                let init = CorrInit::from_sample(train, &params.gamma)?;
                let out = edcc_filter(&params, filtered, &init)?;
                let mut covs = out.cov_path;
                covs.push(out.next_cov.clone());
                let t_len = filtered.nrows();
                let mut vars: Vec<DVector<f64>> = (0..t_len)
                    .map(|t| out.variance_path.row(t).transpose())
                    .collect();
                vars.push(out.next_variances);
                let mut qs = out.q_path;
                qs.push(out.next_q);
                Ok((ModelStates::Edcc { params, vars, qs }, covs))
            }
        }
    }

    /// Forecast `h` steps ahead from the one-step state at path position
    /// `pos + 1` (information through position `pos`).
    fn forecast(&self, pos: usize, horizon: usize) -> Result<SymMatrix, HarnessError> {
        Ok(match self {
            ModelStates::Bekk { params, covs } => {
                sbekk_forecast(params, &covs[pos + 1], horizon)?
            }
            ModelStates::Dcc { params, vars, qs } => {
                dcc_forecast(params, &vars[pos + 1], &qs[pos + 1], horizon)?
            }
            ModelStates::Edcc { params, vars, qs } => {
                edcc_forecast(params, &vars[pos + 1], &qs[pos + 1], horizon)?
            }
        })
    }
}

fn proxy_for_date(
    table: &ReturnsTable,
    realized: Option<&RealizedCovSet>,
    t: usize,
) -> Result<SymMatrix, HarnessError> {
    match realized {
        Some(set) => set
            .by_date
            .get(&table.dates[t])
            .cloned()
            .ok_or_else(|| {
                super::ingest::IngestError::MissingDates(table.dates[t].clone()).into()
            }),
        None => {
            let r = table.returns.row(t).transpose();
            Ok(SymMatrix::symmetrized(&r * r.transpose()))
        }
    }
}

pub fn run_real_data(config: &RealDataConfig) -> Result<ResultStore, HarnessError> {
    config.validate()?;
    let started = Instant::now();
    let table = ingest_returns(&config.returns_path, config.demean)?;
    let t_total = table.dates.len();
    let n = table.asset_names.len();
    if config.window_length >= t_total {
        return Err(HarnessError::config(
            "window_length",
            format!("{} exceeds the available history of {t_total} observations", config.window_length),
        ));
    }
    let realized = match &config.realized_cov_path {
        Some(p) => {
            let set = ingest_realized_cov(p)?;
            for (_, m) in set.by_date.iter() {
                if m.dim() != n {
                    return Err(super::ingest::IngestError::Dimension(format!(
                        "realized covariance is {}x{} but returns have {n} assets",
                        m.dim(),
                        m.dim()
                    ))
                    .into());
                }
            }
            Some(set)
        }
        None => None,
    };

    let mut rng = substream(config.master_seed, 0);
    let weights = make_weights(config.weight_scheme, n, &mut rng);
    let portfolio: Vec<f64> = (0..t_total)
        .map(|t| table.returns.row(t).iter().zip(weights.iter()).map(|(r, w)| r * w).sum())
        .collect();
    let constraint = build_constraint(&weights);

    let blocks = estimation_schedule(&table.dates, config.window_length);
    if blocks.is_empty() {
        return Err(HarnessError::config("window_length", "no estimation points available"));
    }

    // when realized covariances are supplied, require full coverage of the
    // evaluation dates up front
    if let Some(set) = &realized {
        let mut missing = Vec::new();
        for b in &blocks {
            for d in b.origin_start..b.origin_end {
                for &h in &config.horizons {
                    let target = d + h;
                    if target < t_total && !set.by_date.contains_key(&table.dates[target]) {
                        missing.push(table.dates[target].clone());
                    }
                }
            }
        }
        if !missing.is_empty() {
            missing.dedup();
            let preview: Vec<String> = missing.iter().take(10).cloned().collect();
            let more = if missing.len() > 10 {
                format!(" (+{} more)", missing.len() - 10)
            } else {
                String::new()
            };
            return Err(super::ingest::IngestError::MissingDates(format!(
                "{}{}",
                preview.join(", "),
                more
            ))
            .into());
        }
    }

    let mut manifest =
        RunManifest::new("realdata", serde_json::to_value(config)?, config.master_seed);
    let mut records = Vec::new();

    for (block_idx, block) in blocks.iter().enumerate() {
        let window_start = block.origin_start - config.window_length;
        let train = table
            .returns
            .rows(window_start, config.window_length)
            .into_owned();
        let train_portfolio = &portfolio[window_start..block.origin_start];

        // filter range covers the window plus the month so every origin has
        // a one-step state
        let filter_len = block.origin_end - window_start;
        let filtered = table.returns.rows(window_start, filter_len).into_owned();
        let filtered_portfolio = &portfolio[window_start..block.origin_end];

        let garch = match garch11_fit(train_portfolio) {
            Ok(g) => g,
            Err(e) => {
                manifest.failures.push(ReplicationFailure {
                    replication: block_idx,
                    message: format!("{}: base fit failed: {e}", table.dates[block.origin_start]),
                });
                continue;
            }
        };
        let pvar0 = {
            let mean = train_portfolio.iter().sum::<f64>() / train_portfolio.len() as f64;
            train_portfolio.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>()
                / train_portfolio.len() as f64
        };
        let base_filter = garch11_filter(&garch, filtered_portfolio, pvar0)?;

        // the error covariance is estimated against the best available
        // observation of the target: realized covariances when they cover
        // the whole window, squared returns otherwise
        let realized_covers_window = realized.as_ref().map_or(false, |set| {
            (window_start..block.origin_start)
                .all(|t| set.by_date.contains_key(&table.dates[t]))
        });
        let proxy_in: Vec<SymMatrix> = (0..config.window_length)
            .map(|t| {
                if realized_covers_window {
                    realized.as_ref().expect("checked").by_date[&table.dates[window_start + t]]
                        .clone()
                } else {
                    let r = train.row(t).transpose();
                    SymMatrix::symmetrized(&r * r.transpose())
                }
            })
            .collect();

        for &model in &config.fitted_models {
            let (states, covs) = match ModelStates::fit(model, &train, &filtered) {
                Ok(x) => x,
                Err(e) => {
                    manifest.failures.push(ReplicationFailure {
                        replication: block_idx,
                        message: format!(
                            "{}: {} fit failed: {e}",
                            table.dates[block.origin_start],
                            model.label()
                        ),
                    });
                    continue;
                }
            };
            let errors = insample_errors(
                &base_filter.variance_path[..config.window_length],
                &covs[..config.window_length],
                &proxy_in,
                &weights,
            )?;
            let omega: ErrorCovariance = shrink_cov(&errors)?;

            for d in block.origin_start..block.origin_end {
                let pos = d - window_start;
                for &h in &config.horizons {
                    let target = d + h;
                    if target >= t_total {
                        continue;
                    }
                    // iterated forecasts with information through day d
                    let base_fc = garch11_forecast(
                        &garch,
                        filtered_portfolio[pos],
                        base_filter.variance_path[pos],
                        h,
                    )?;
                    let cov_fc = states.forecast(pos, h)?;
                    let (values, clamped) = reconcile_forecasts(
                        base_fc,
                        &cov_fc,
                        &omega,
                        &constraint,
                        &weights,
                        &config.approaches,
                    )?;
                    manifest.clamped_forecasts += clamped;

                    let proxy = proxy_for_date(&table, realized.as_ref(), target)?;
                    let truth = proxy.quad_form(&weights).max(1e-300);
                    for &approach in &config.approaches {
                        let forecast = values[&approach].max(FORECAST_FLOOR);
                        for &kind in &config.loss_kinds {
                            let loss = loss_series(&[truth], &[forecast], kind)?[0];
                            records.push(LossRecord {
                                replication: 0,
                                delta: 0.0,
                                approach,
                                model,
                                date: table.dates[target].clone(),
                                loss_kind: kind,
                                value: loss,
                                horizon: h,
                            });
                        }
                    }
                }
            }
        }
    }

    manifest.wall_time_secs = started.elapsed().as_secs_f64();
    if let Some(set) = &realized {
        for w in &set.warnings {
            manifest.failures.push(ReplicationFailure {
                replication: usize::MAX,
                message: format!("realized covariance warning: {w}"),
            });
        }
    }
    let store = ResultStore { records, manifest };
    if let Some(dir) = &config.output_dir {
        store.write_all(dir)?;
    }
    Ok(store)
}
