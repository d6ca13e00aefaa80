//! Forecast evaluation: pointwise loss functions, relative-accuracy
//! aggregation across replications, Diebold-Mariano tests with a Bartlett
//! HAC variance and Bonferroni correction, the Model Confidence Set via
//! moving-block bootstrap, and the noisy covariance proxy.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::matrix::SymMatrix;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Mae,
    Qlike,
}

impl LossKind {
    pub fn label(&self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
            LossKind::Qlike => "qlike",
        }
    }

    pub fn all() -> [LossKind; 3] {
        [LossKind::Mse, LossKind::Mae, LossKind::Qlike]
    }
}

/// Pointwise losses of a variance forecast against the (proxy) truth:
/// squared error, absolute error, or `q/h - log(q/h) - 1`.
pub fn loss_series(
    truth: &[f64],
    forecast: &[f64],
    kind: LossKind,
) -> Result<Vec<f64>, EvalError> {
    if truth.len() != forecast.len() {
        return Err(EvalError::InvalidInput(format!(
            "length mismatch: {} vs {}",
            truth.len(),
            forecast.len()
        )));
    }
    if kind == LossKind::Qlike {
        if let Some(t) = truth.iter().position(|&x| !(x > 0.0)) {
            return Err(EvalError::InvalidInput(format!(
                "QLIKE needs positive truth, got {} at index {t}",
                truth[t]
            )));
        }
        if let Some(t) = forecast.iter().position(|&x| !(x > 0.0)) {
            return Err(EvalError::InvalidInput(format!(
                "QLIKE needs positive forecasts, got {} at index {t}",
                forecast[t]
            )));
        }
    }
    Ok(truth
        .iter()
        .zip(forecast)
        .map(|(&q, &h)| match kind {
            LossKind::Mse => (q - h) * (q - h),
            LossKind::Mae => (q - h).abs(),
            LossKind::Qlike => {
                let r = q / h;
                r - r.ln() - 1.0
            }
        })
        .collect())
}

pub fn average_loss(series: &[f64]) -> f64 {
    series.iter().sum::<f64>() / series.len() as f64
}

/// Geometric-mean relative accuracy across replications.
#[derive(Debug, Clone)]
pub struct AvgRel {
    /// `values[j] = (prod_q IND_jq / IND_ref,q)^(1/Q)`, exactly 1 at the
    /// reference.
    pub values: Vec<f64>,
    /// Zero losses floored to 1e-300 before taking logs (a degenerate
    /// replication worth surfacing).
    pub floored: usize,
}

pub fn avg_rel(ind_by_replication: &DMatrix<f64>, reference: usize) -> Result<AvgRel, EvalError> {
    let q = ind_by_replication.nrows();
    let j = ind_by_replication.ncols();
    if q == 0 || reference >= j {
        return Err(EvalError::InvalidInput("empty panel or reference out of range".into()));
    }
    let mut floored = 0;
    let mut log_means = vec![0.0f64; j];
    let mut logs = DMatrix::zeros(q, j);
    for r in 0..q {
        for c in 0..j {
            let x = ind_by_replication[(r, c)];
            let x = if x > 0.0 {
                x
            } else {
                floored += 1;
                1e-300
            };
            logs[(r, c)] = x.ln();
        }
    }
    for c in 0..j {
        let mut acc = 0.0;
        for r in 0..q {
            acc += logs[(r, c)] - logs[(r, reference)];
        }
        log_means[c] = acc / q as f64;
    }
    let mut values: Vec<f64> = log_means.iter().map(|&x| x.exp()).collect();
    values[reference] = 1.0;
    Ok(AvgRel { values, floored })
}

#[derive(Debug, Clone, Copy)]
pub struct DmResult {
    pub stat: f64,
    pub pvalue_raw: f64,
    pub pvalue_bonferroni: f64,
}

/// Bartlett-kernel long-run variance of a series (lag window `lags`).
fn bartlett_lrv(d: &[f64], lags: usize) -> f64 {
    let m = d.len() as f64;
    let mean = d.iter().sum::<f64>() / m;
    let gamma = |k: usize| -> f64 {
        let mut acc = 0.0;
        for t in k..d.len() {
            acc += (d[t] - mean) * (d[t - k] - mean);
        }
        acc / m
    };
    let mut lrv = gamma(0);
    for k in 1..=lags.min(d.len().saturating_sub(1)) {
        let weight = 1.0 - k as f64 / (lags as f64 + 1.0);
        lrv += 2.0 * weight * gamma(k);
    }
    lrv
}

/// Diebold-Mariano test of equal predictive accuracy between two pointwise
/// loss series. The p-value is two-sided normal; the Bonferroni-corrected
/// value multiplies by the number of pairwise comparisons.
pub fn dm_test(
    loss_a: &[f64],
    loss_b: &[f64],
    hac_lags: usize,
    n_comparisons: usize,
) -> Result<DmResult, EvalError> {
    let m = loss_a.len();
    if m != loss_b.len() {
        return Err(EvalError::InvalidInput("length mismatch".into()));
    }
    if m < 10 {
        return Err(EvalError::InvalidInput(format!("need at least 10 dates, got {m}")));
    }
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(&a, &b)| a - b).collect();
    let scale = d.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
    if scale == 0.0 {
        return Err(EvalError::DegenerateVariance("identical loss series".into()));
    }
    let lrv = bartlett_lrv(&d, hac_lags);
    if !(lrv > 0.0) {
        return Err(EvalError::DegenerateVariance(format!(
            "HAC long-run variance {lrv:.3e} is not positive"
        )));
    }
    let mean = d.iter().sum::<f64>() / m as f64;
    let stat = mean / (lrv / m as f64).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let pvalue_raw = 2.0 * (1.0 - normal.cdf(stat.abs()));
    let pvalue_bonferroni = (pvalue_raw * n_comparisons as f64).min(1.0);
    Ok(DmResult { stat, pvalue_raw, pvalue_bonferroni })
}

/// Per-date losses of J competing approaches.
#[derive(Debug, Clone)]
pub struct LossPanel {
    /// `M x J`: rows are dates, columns are approaches.
    pub losses: DMatrix<f64>,
    pub approach_names: Vec<String>,
    pub loss_kind: LossKind,
}

impl LossPanel {
    pub fn new(
        losses: DMatrix<f64>,
        approach_names: Vec<String>,
        loss_kind: LossKind,
    ) -> Result<Self, EvalError> {
        if losses.ncols() != approach_names.len() {
            return Err(EvalError::InvalidInput("column/name count mismatch".into()));
        }
        if losses.iter().any(|x| !x.is_finite()) {
            return Err(EvalError::InvalidInput("losses must be finite".into()));
        }
        if loss_kind == LossKind::Qlike && losses.iter().any(|&x| x < 0.0) {
            return Err(EvalError::InvalidInput("QLIKE losses must be nonnegative".into()));
        }
        Ok(Self { losses, approach_names, loss_kind })
    }
}

#[derive(Debug, Clone)]
pub struct McsOutcome {
    /// MCS p-value per approach (monotone along the elimination order; the
    /// surviving best approach has p-value 1).
    pub pvalues: Vec<f64>,
    /// Included approach indices per confidence level: at level `c`, the
    /// approaches with p-value >= 1 - c.
    pub included: Vec<(f64, Vec<usize>)>,
}

/// Model Confidence Set with the range statistic over pairwise mean-loss
/// differences and a moving-block bootstrap for its null distribution
/// (sequential elimination, Hansen-style).
pub fn mcs(
    panel: &LossPanel,
    confidence_levels: &[f64],
    n_bootstrap: usize,
    block_length: usize,
    seed: u64,
) -> Result<McsOutcome, EvalError> {
    let m = panel.losses.nrows();
    let j = panel.losses.ncols();
    if j < 2 {
        return Err(EvalError::InvalidInput("need at least 2 approaches".into()));
    }
    if m < 30 {
        return Err(EvalError::InvalidInput(format!("need at least 30 dates, got {m}")));
    }
    if block_length == 0 || n_bootstrap == 0 {
        return Err(EvalError::InvalidInput("bootstrap parameters must be positive".into()));
    }
    for (level, _) in confidence_levels.iter().map(|&l| (l, ())) {
        if !(0.0 < level && level < 1.0) {
            return Err(EvalError::InvalidInput(format!("confidence level {level} out of range")));
        }
    }

    // fixed bootstrap index draws, shared across elimination rounds
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let block = block_length.min(m);
    let n_blocks = m.div_ceil(block);
    let mut boot_indices = Vec::with_capacity(n_bootstrap);
    for _ in 0..n_bootstrap {
        let mut idx = Vec::with_capacity(n_blocks * block);
        for _ in 0..n_blocks {
            let start = rng.random_range(0..=(m - block));
            idx.extend(start..start + block);
        }
        idx.truncate(m);
        boot_indices.push(idx);
    }

    // bootstrap column means per draw
    let col_means: Vec<f64> = (0..j).map(|c| panel.losses.column(c).sum() / m as f64).collect();
    let mut boot_means = DMatrix::zeros(n_bootstrap, j);
    for (b, idx) in boot_indices.iter().enumerate() {
        for c in 0..j {
            let mut acc = 0.0;
            for &t in idx {
                acc += panel.losses[(t, c)];
            }
            boot_means[(b, c)] = acc / m as f64;
        }
    }

    let mut pvalues = vec![1.0f64; j];
    let mut surviving: Vec<usize> = (0..j).collect();
    let mut running_max_p = 0.0f64;

    while surviving.len() > 1 {
        // pairwise statistics over the surviving set
        let mut var_pair = vec![vec![0.0f64; surviving.len()]; surviving.len()];
        for (ai, &a) in surviving.iter().enumerate() {
            for (bi, &b) in surviving.iter().enumerate() {
                if bi <= ai {
                    continue;
                }
                let d_bar = col_means[a] - col_means[b];
                let mut acc = 0.0;
                for draw in 0..n_bootstrap {
                    let z = (boot_means[(draw, a)] - boot_means[(draw, b)]) - d_bar;
                    acc += z * z;
                }
                var_pair[ai][bi] = acc / n_bootstrap as f64;
                var_pair[bi][ai] = var_pair[ai][bi];
            }
        }
        let tstat = |ai: usize, bi: usize| -> f64 {
            let a = surviving[ai];
            let b = surviving[bi];
            let d_bar = col_means[a] - col_means[b];
            let v = var_pair[ai][bi];
            if v > 0.0 {
                d_bar / v.sqrt()
            } else if d_bar == 0.0 {
                0.0
            } else {
                d_bar.signum() * f64::INFINITY
            }
        };

        let mut t_range = 0.0f64;
        for ai in 0..surviving.len() {
            for bi in (ai + 1)..surviving.len() {
                t_range = t_range.max(tstat(ai, bi).abs());
            }
        }
        if t_range == 0.0 {
            // identical losses across the surviving set: retain everything
            break;
        }

        // bootstrap distribution of the range statistic
        let mut exceed = 0usize;
        for draw in 0..n_bootstrap {
            let mut t_star = 0.0f64;
            for (ai, &a) in surviving.iter().enumerate() {
                for (bi, &b) in surviving.iter().enumerate().skip(ai + 1) {
                    let v = var_pair[ai][bi];
                    if v > 0.0 {
                        let d_bar = col_means[a] - col_means[b];
                        let z = ((boot_means[(draw, a)] - boot_means[(draw, b)]) - d_bar).abs()
                            / v.sqrt();
                        t_star = t_star.max(z);
                    }
                }
            }
            if t_star >= t_range {
                exceed += 1;
            }
        }
        let p_round = exceed as f64 / n_bootstrap as f64;
        running_max_p = running_max_p.max(p_round);

        // eliminate the model with the worst standardized relative loss
        let mut worst = 0usize;
        let mut worst_score = f64::NEG_INFINITY;
        for ai in 0..surviving.len() {
            let mut score = f64::NEG_INFINITY;
            for bi in 0..surviving.len() {
                if bi != ai {
                    score = score.max(tstat(ai, bi));
                }
            }
            if score > worst_score {
                worst_score = score;
                worst = ai;
            }
        }
        pvalues[surviving[worst]] = running_max_p;
        surviving.remove(worst);
    }
    for &s in &surviving {
        pvalues[s] = 1.0;
    }

    let included = confidence_levels
        .iter()
        .map(|&level| {
            let alpha = 1.0 - level;
            let set: Vec<usize> =
                (0..j).filter(|&c| pvalues[c] >= alpha - 1e-15).collect();
            (level, set)
        })
        .collect();
    Ok(McsOutcome { pvalues, included })
}

/// The noisy covariance proxy `delta r r' + (1 - delta) Sigma`.
pub fn noisy_proxy(
    returns_t: &DVector<f64>,
    true_cov_t: &SymMatrix,
    delta: f64,
) -> Result<SymMatrix, EvalError> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(EvalError::InvalidInput(format!("delta {delta} outside [0, 1]")));
    }
    if returns_t.len() != true_cov_t.dim() {
        return Err(EvalError::InvalidInput("dimension mismatch".into()));
    }
    let outer = returns_t * returns_t.transpose();
    Ok(SymMatrix::symmetrized(outer * delta + true_cov_t.as_matrix() * (1.0 - delta)))
}
