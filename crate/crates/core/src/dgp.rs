//! Data-generating-process samplers and dataset construction for the
//! simulation studies: random parameter draws for small cross-sections,
//! fixed designs for 24 assets, stationarity-gated rejection sampling,
//! portfolio weights, and the burn-in/train/test split.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::SymMatrix;
use crate::models::{
    simulate_with_rng, stationarity_check, DccParams, EdccParams, FBekkParams, Garch11Params,
    ModelError, ModelParams, SBekkParams,
};
use crate::rng::substream;

/// Bound on rejection-sampling attempts so pathological configurations fail
/// loudly instead of spinning.
pub const REJECTION_CAP: usize = 10_000;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("sampler exhausted after {attempts} attempts: {what}")]
    SamplerExhausted { what: String, attempts: usize },
    #[error("configuration error: {0}")]
    ConfigurationError(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelClass {
    #[serde(rename = "sbekk")]
    SBekk,
    #[serde(rename = "fbekk")]
    FBekk,
    Dcc,
    Edcc,
}

impl ModelClass {
    pub fn label(&self) -> &'static str {
        match self {
            ModelClass::SBekk => "sbekk",
            ModelClass::FBekk => "fbekk",
            ModelClass::Dcc => "dcc",
            ModelClass::Edcc => "edcc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Equal,
    Random,
}

fn default_t_test() -> usize {
    250
}
fn default_burn_in() -> usize {
    100
}

/// Specification of one data-generating process for the study harness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    pub model_class: ModelClass,
    pub n_assets: usize,
    pub t_train: usize,
    #[serde(default = "default_t_test")]
    pub t_test: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub weight_scheme: WeightScheme,
    #[serde(default)]
    pub seed: u64,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.n_assets == 0 {
            return Err(SamplerError::ConfigurationError("n_assets must be >= 1".into()));
        }
        if self.t_train == 0 {
            return Err(SamplerError::ConfigurationError("t_train must be >= 1".into()));
        }
        if self.t_test == 0 {
            return Err(SamplerError::ConfigurationError("t_test must be >= 1".into()));
        }
        if self.model_class == ModelClass::FBekk && self.n_assets % 3 != 0 {
            return Err(SamplerError::ConfigurationError(
                "the full BEKK block design needs n_assets divisible by 3".into(),
            ));
        }
        Ok(())
    }
}

/// One simulated dataset: burn-in already discarded, train/test split done,
/// portfolio returns derived from the drawn weights.
#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub train_returns: DMatrix<f64>,
    pub test_returns: DMatrix<f64>,
    /// True conditional covariance for each training date (drives the
    /// error-covariance estimation of the reconciliation stage).
    pub train_cov_path: Vec<SymMatrix>,
    /// True conditional covariance for each test date.
    pub true_cov_path: Vec<SymMatrix>,
    pub weights: DVector<f64>,
    pub portfolio_train: Vec<f64>,
    pub portfolio_test: Vec<f64>,
    pub dgp_params: ModelParams,
}

fn rejection_sample<T>(
    what: &str,
    mut draw: impl FnMut() -> Option<T>,
) -> Result<T, SamplerError> {
    for _ in 0..REJECTION_CAP {
        if let Some(v) = draw() {
            return Ok(v);
        }
    }
    Err(SamplerError::SamplerExhausted { what: what.into(), attempts: REJECTION_CAP })
}

/// Random lower-triangular intercept factor: diagonal entries U(0.05, 0.30),
/// sub-diagonal entries N(0, 0.05^2), giving a full-rank `CC'` with positive
/// diagonal.
fn sample_intercept_factor(n: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
    let normal = Normal::new(0.0, 0.05).expect("valid std dev");
    let mut c = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            c[(i, j)] = if i == j { rng.random_range(0.05..0.30) } else { normal.sample(rng) };
        }
    }
    c
}

/// Scalar BEKK draw: `alpha ~ U(0.05, 0.20)`, `beta ~ U(0.70, 0.95)`,
/// redrawn until `alpha + beta < 1`.
pub fn sample_sbekk_params(n: usize, rng: &mut ChaCha12Rng) -> Result<SBekkParams, SamplerError> {
    let (alpha, beta) = rejection_sample("scalar BEKK (alpha, beta)", || {
        let alpha = rng.random_range(0.05..0.20);
        let beta = rng.random_range(0.70..0.95);
        (alpha + beta < 1.0).then_some((alpha, beta))
    })?;
    let c = sample_intercept_factor(n, rng);
    Ok(SBekkParams::new(c, alpha, beta)?)
}

/// Full BEKK draw for the block design: `B` is block diagonal with 3x3
/// blocks (diagonal U(0.70, 0.95), within-block off-diagonal U(0, 0.10)),
/// `A` is unrestricted with entries U(0, 0.10); draws are rejected until the
/// vech-transition eigenvalues lie inside the unit circle.
pub fn sample_fbekk_params(n: usize, rng: &mut ChaCha12Rng) -> Result<FBekkParams, SamplerError> {
    if n % 3 != 0 {
        return Err(SamplerError::ConfigurationError(
            "the full BEKK block design needs n divisible by 3".into(),
        ));
    }
    let (a, b) = rejection_sample("full BEKK (A, B)", || {
        let mut b = DMatrix::zeros(n, n);
        for blk in 0..n / 3 {
            let o = 3 * blk;
            for i in 0..3 {
                for j in 0..3 {
                    b[(o + i, o + j)] = if i == j {
                        rng.random_range(0.70..0.95)
                    } else {
                        rng.random_range(0.0..0.10)
                    };
                }
            }
        }
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..0.10));
        (crate::models::fbekk_spectral_radius(&a, &b) < 1.0).then_some((a, b))
    })?;
    let c = sample_intercept_factor(n, rng);
    Ok(FBekkParams::new(c, a, b)?)
}

/// Unconditional correlation target: a normalized Gram matrix of Normal
/// draws with mean -0.15 and standard deviation 0.6, kept only if the
/// smallest eigenvalue exceeds 1e-10.
pub fn gen_gamma(n: usize, rng: &mut ChaCha12Rng) -> Result<SymMatrix, SamplerError> {
    let normal = Normal::new(-0.15, 0.6).expect("valid std dev");
    rejection_sample("correlation target Gamma", || {
        let a = DMatrix::from_fn(n, n, |_, _| normal.sample(rng));
        let q: DMatrix<f64> = a.transpose() * &a;
        let d: Vec<f64> = (0..n).map(|i| q[(i, i)].sqrt()).collect();
        if d.iter().any(|&x| !(x > 0.0)) {
            return None;
        }
        let gamma =
            SymMatrix::from_fn(n, |i, j| if i == j { 1.0 } else { q[(i, j)] / (d[i] * d[j]) });
        (gamma.min_eigenvalue() > 1e-10).then_some(gamma)
    })
}

fn sample_thetas(rng: &mut ChaCha12Rng) -> Result<(f64, f64), SamplerError> {
    rejection_sample("correlation dynamics (theta1, theta2)", || {
        let t1 = rng.random_range(0.05..0.30);
        let t2 = rng.random_range(0.70..0.85);
        (t1 + t2 < 1.0).then_some((t1, t2))
    })
}

// The paper fixes the marginal dynamics ranges but never states the variance
// intercepts; they are drawn U(0.01, 0.05).
fn sample_intercept(rng: &mut ChaCha12Rng) -> f64 {
    rng.random_range(0.01..0.05)
}

/// DCC draw: marginals with `alpha_i ~ U(0.05, 0.15)`, `beta_i ~ U(0.7, 0.85)`,
/// correlation dynamics `theta1 ~ U(0.05, 0.30)`, `theta2 ~ U(0.70, 0.85)`
/// (redrawn until `theta1 + theta2 < 1`), and `Gamma` from [`gen_gamma`].
pub fn sample_dcc_params(n: usize, rng: &mut ChaCha12Rng) -> Result<DccParams, SamplerError> {
    let mut marginals = Vec::with_capacity(n);
    for _ in 0..n {
        let (alpha, beta) = rejection_sample("DCC marginal (alpha, beta)", || {
            let alpha = rng.random_range(0.05..0.15);
            let beta = rng.random_range(0.70..0.85);
            (alpha + beta < 1.0).then_some((alpha, beta))
        })?;
        marginals.push(Garch11Params::new(sample_intercept(rng), alpha, beta)?);
    }
    let (theta1, theta2) = sample_thetas(rng)?;
    let gamma = gen_gamma(n, rng)?;
    Ok(DccParams::new(marginals, gamma, theta1, theta2)?)
}

/// EDCC draw: diagonal `A` entries U(0, 0.2), spillovers U(0, 0.02),
/// diagonal `B` entries U(0.7, 0.85), redrawn until the eigenvalues of
/// `A + B` are all inside the unit circle.
pub fn sample_edcc_params(n: usize, rng: &mut ChaCha12Rng) -> Result<EdccParams, SamplerError> {
    let (a, b) = rejection_sample("EDCC (A, B)", || {
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..0.02));
        for i in 0..n {
            a[(i, i)] = rng.random_range(0.0..0.2);
        }
        let b = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(0.70..0.85)));
        (crate::models::spectral_radius(&(&a + &b)) < 1.0).then_some((a, b))
    })?;
    let nu = DVector::from_fn(n, |_, _| sample_intercept(rng));
    let (theta1, theta2) = sample_thetas(rng)?;
    let gamma = gen_gamma(n, rng)?;
    Ok(EdccParams::new(nu, a, b, gamma, theta1, theta2)?)
}

/// Uniform correlation matrix used where the fixed 24-asset designs leave the
/// unconditional level unspecified.
fn uniform_correlation(n: usize, rho: f64) -> SymMatrix {
    SymMatrix::from_fn(n, |i, j| if i == j { 1.0 } else { rho })
}

/// The fixed 24-asset designs. Coefficient matrices follow the displayed
/// values entry-for-entry; quantities the design leaves open (intercept
/// factors, the correlation target, variance intercepts) use deterministic
/// defaults: unconditional correlation 0.4 and unit-scale intercepts.
pub fn fixed_params_24(model_class: ModelClass) -> Result<ModelParams, SamplerError> {
    let n = 24;
    let params = match model_class {
        ModelClass::SBekk => {
            let (alpha, beta) = (0.15, 0.80);
            let sigma_bar = uniform_correlation(n, 0.4);
            let cc = sigma_bar.as_matrix() * (1.0 - alpha - beta);
            let c = nalgebra::Cholesky::new(cc)
                .ok_or_else(|| {
                    SamplerError::ConfigurationError("fixed SBEKK intercept not SPD".into())
                })?
                .l();
            ModelParams::SBekk(SBekkParams::new(c, alpha, beta)?)
        }
        ModelClass::FBekk => {
            let block = DMatrix::from_row_slice(
                3,
                3,
                &[0.80, 0.05, 0.05, 0.05, 0.80, 0.05, 0.05, 0.05, 0.80],
            );
            let b = DMatrix::identity(8, 8).kronecker(&block);
            let coeffs = [
                [0.025, 0.0125, 0.0],
                [0.0125, 0.0187, 0.025],
                [0.0187, 0.0125, 0.0312],
            ];
            let ones = DMatrix::from_element(8, 8, 1.0);
            let mut a = DMatrix::zeros(n, n);
            for bi in 0..3 {
                for bj in 0..3 {
                    let scaled = &ones * coeffs[bi][bj];
                    a.view_mut((8 * bi, 8 * bj), (8, 8)).copy_from(&scaled);
                }
            }
            let c = DMatrix::identity(n, n) * 0.1;
            let params = FBekkParams::new(c, a, b)?;
            let report = stationarity_check(&ModelParams::FBekk(params.clone()));
            if !report.ok {
                // would indicate a transcription bug in the fixed matrices
                return Err(SamplerError::ConfigurationError(format!(
                    "fixed full BEKK design is nonstationary ({} = {:.4})",
                    report.condition, report.binding_value
                )));
            }
            ModelParams::FBekk(params)
        }
        ModelClass::Dcc => {
            let marginals = vec![Garch11Params::new(0.05, 0.15, 0.80)?; n];
            ModelParams::Dcc(DccParams::new(marginals, uniform_correlation(n, 0.4), 0.15, 0.80)?)
        }
        ModelClass::Edcc => {
            let mut a = DMatrix::from_element(n, n, 0.05);
            for i in 0..n {
                a[(i, i)] = 0.08;
            }
            let b = DMatrix::from_diagonal(&DVector::from_element(n, 0.80));
            let nu = DVector::from_element(n, 0.02);
            ModelParams::Edcc(EdccParams::new(
                nu,
                a,
                b,
                uniform_correlation(n, 0.4),
                0.15,
                0.80,
            )?)
        }
    };
    Ok(params)
}

/// Draws DGP parameters: the fixed design at 24 assets, random draws
/// otherwise.
pub fn draw_params(
    model_class: ModelClass,
    n: usize,
    rng: &mut ChaCha12Rng,
) -> Result<ModelParams, SamplerError> {
    if n == 24 {
        return fixed_params_24(model_class);
    }
    Ok(match model_class {
        ModelClass::SBekk => ModelParams::SBekk(sample_sbekk_params(n, rng)?),
        ModelClass::FBekk => ModelParams::FBekk(sample_fbekk_params(n, rng)?),
        ModelClass::Dcc => ModelParams::Dcc(sample_dcc_params(n, rng)?),
        ModelClass::Edcc => ModelParams::Edcc(sample_edcc_params(n, rng)?),
    })
}

/// Portfolio weights: exactly `1/n` each, or positive random draws
/// normalized to sum to one.
pub fn make_weights(scheme: WeightScheme, n: usize, rng: &mut ChaCha12Rng) -> DVector<f64> {
    match scheme {
        WeightScheme::Equal => DVector::from_element(n, 1.0 / n as f64),
        WeightScheme::Random => loop {
            let raw = DVector::from_fn(n, |_, _| rng.random::<f64>());
            let sum = raw.sum();
            if sum > 0.0 {
                let w = raw / sum;
                if w.iter().all(|&x| x > 1e-12) {
                    break w;
                }
            }
        },
    }
}

pub(crate) fn portfolio_series(returns: &DMatrix<f64>, weights: &DVector<f64>) -> Vec<f64> {
    (0..returns.nrows())
        .map(|t| returns.row(t).iter().zip(weights.iter()).map(|(r, w)| r * w).sum())
        .collect()
}

/// Builds one dataset from its own seed (standalone use; the study harness
/// drives [`build_dataset_with_rng`] through per-replication substreams).
pub fn build_dataset(spec: &DgpSpec) -> Result<SimulatedDataset, SamplerError> {
    let mut rng = substream(spec.seed, 0);
    build_dataset_with_rng(spec, &mut rng)
}

pub fn build_dataset_with_rng(
    spec: &DgpSpec,
    rng: &mut ChaCha12Rng,
) -> Result<SimulatedDataset, SamplerError> {
    spec.validate()?;
    let params = draw_params(spec.model_class, spec.n_assets, rng)?;
    let weights = make_weights(spec.weight_scheme, spec.n_assets, rng);
    let total = spec.burn_in + spec.t_train + spec.t_test;
    let sim = simulate_with_rng(&params, total, rng)?;

    let n = spec.n_assets;
    let train_rows = spec.burn_in..spec.burn_in + spec.t_train;
    let test_rows = spec.burn_in + spec.t_train..total;
    let train_returns = sim.returns.rows(train_rows.start, spec.t_train).into_owned();
    let test_returns = sim.returns.rows(test_rows.start, spec.t_test).into_owned();
    let train_cov_path = sim.cov_path[train_rows.start..test_rows.start].to_vec();
    let true_cov_path = sim.cov_path[test_rows.start..].to_vec();
    debug_assert_eq!(true_cov_path.len(), spec.t_test);
    debug_assert_eq!(train_returns.ncols(), n);

    let portfolio_train = portfolio_series(&train_returns, &weights);
    let portfolio_test = portfolio_series(&test_returns, &weights);
    Ok(SimulatedDataset {
        train_returns,
        test_returns,
        train_cov_path,
        true_cov_path,
        weights,
        portfolio_train,
        portfolio_test,
        dgp_params: params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::fbekk_spectral_radius;
    use approx::assert_abs_diff_eq;

    fn rng(seed: u64) -> ChaCha12Rng {
        substream(seed, 0)
    }

    #[test]
    fn sbekk_draws_stay_in_stated_ranges() {
        let mut r = rng(1);
        for _ in 0..1000 {
            let p = sample_sbekk_params(4, &mut r).unwrap();
            assert!((0.05..=0.20).contains(&p.alpha));
            assert!((0.70..=0.95).contains(&p.beta));
            assert!(p.alpha + p.beta < 1.0);
        }
    }

    #[test]
    fn sbekk_intercept_full_rank() {
        let mut r = rng(2);
        for _ in 0..1000 {
            let p = sample_sbekk_params(5, &mut r).unwrap();
            let cc = SymMatrix::symmetrized(p.intercept());
            assert!(cc.min_eigenvalue() > 0.0);
        }
    }

    #[test]
    fn sbekk_seed_determinism() {
        let a = sample_sbekk_params(3, &mut rng(9)).unwrap();
        let b = sample_sbekk_params(3, &mut rng(9)).unwrap();
        assert_eq!(a.alpha, b.alpha);
        assert_eq!(a.beta, b.beta);
        assert_eq!(a.c, b.c);
    }

    #[test]
    fn fbekk_draws_pass_eigen_check_and_block_structure() {
        let mut r = rng(3);
        for _ in 0..10 {
            let p = sample_fbekk_params(9, &mut r).unwrap();
            assert!(fbekk_spectral_radius(&p.a, &p.b) < 1.0);
            // off-diagonal blocks of B untouched (zero)
            for i in 0..9 {
                for j in 0..9 {
                    if i / 3 != j / 3 {
                        assert_eq!(p.b[(i, j)], 0.0);
                    }
                }
            }
        }
        assert!(sample_fbekk_params(7, &mut r).is_err());
    }

    #[test]
    fn gamma_has_unit_diagonal_floor_and_bounded_entries() {
        let mut r = rng(4);
        for _ in 0..200 {
            let g = gen_gamma(9, &mut r).unwrap();
            for i in 0..9 {
                assert_eq!(g[(i, i)], 1.0);
                for j in 0..i {
                    assert!(g[(i, j)].abs() <= 1.0 + 1e-12);
                }
            }
            assert!(g.min_eigenvalue() > 1e-10);
        }
    }

    // The displayed recipe (Normal mean -0.15, sd 0.6 into a normalized Gram
    // matrix) centers the off-diagonal correlations near 0.05; the frozen
    // band below is the recipe's actual Monte Carlo behavior.
    #[test]
    fn gamma_mean_offdiagonal_level() {
        let mut r = rng(5);
        let mut total = 0.0;
        let mut count = 0usize;
        for _ in 0..200 {
            let g = gen_gamma(9, &mut r).unwrap();
            for i in 0..9 {
                for j in 0..i {
                    total += g[(i, j)];
                    count += 1;
                }
            }
        }
        let mean = total / count as f64;
        assert!((0.0..0.15).contains(&mean), "mean off-diagonal {mean}");
    }

    #[test]
    fn dcc_draws_stay_in_stated_ranges() {
        let mut r = rng(6);
        for _ in 0..200 {
            let p = sample_dcc_params(3, &mut r).unwrap();
            assert!((0.05..=0.30).contains(&p.theta1));
            assert!((0.70..=0.85).contains(&p.theta2));
            assert!(p.theta1 + p.theta2 < 1.0);
            for g in &p.marginals {
                assert!((0.05..=0.15).contains(&g.alpha));
                assert!((0.70..=0.85).contains(&g.beta));
            }
        }
    }

    #[test]
    fn edcc_draws_pass_eigen_check_and_spillover_bounds() {
        let mut r = rng(7);
        for _ in 0..200 {
            let p = sample_edcc_params(4, &mut r).unwrap();
            assert!(crate::models::spectral_radius(&(&p.a + &p.b)) < 1.0);
            for i in 0..4 {
                for j in 0..4 {
                    if i != j {
                        assert!(p.a[(i, j)] <= 0.02);
                    }
                }
            }
        }
    }

    #[test]
    fn accepted_draws_pass_stationarity_check() {
        let mut r = rng(8);
        for _ in 0..50 {
            let p = ModelParams::SBekk(sample_sbekk_params(5, &mut r).unwrap());
            assert!(stationarity_check(&p).ok);
            let p = ModelParams::Dcc(sample_dcc_params(5, &mut r).unwrap());
            assert!(stationarity_check(&p).ok);
            let p = ModelParams::Edcc(sample_edcc_params(5, &mut r).unwrap());
            assert!(stationarity_check(&p).ok);
        }
    }

    #[test]
    fn fixed_24_sbekk_and_fbekk() {
        let ModelParams::SBekk(p) = fixed_params_24(ModelClass::SBekk).unwrap() else {
            panic!("wrong class")
        };
        assert_abs_diff_eq!(p.alpha, 0.15, epsilon = 0.0);
        assert_abs_diff_eq!(p.beta, 0.80, epsilon = 0.0);
        assert!(stationarity_check(&ModelParams::SBekk(p)).ok);

        let ModelParams::FBekk(p) = fixed_params_24(ModelClass::FBekk).unwrap() else {
            panic!("wrong class")
        };
        // first diagonal block of B
        assert_eq!(p.b[(0, 1)], 0.05);
        assert_eq!(p.b[(0, 0)], 0.80);
        // off-diagonal blocks of B are zero
        assert_eq!(p.b[(0, 3)], 0.0);
        // A block values as displayed
        assert_eq!(p.a[(0, 0)], 0.025);
        assert_eq!(p.a[(0, 8)], 0.0125);
        assert_eq!(p.a[(0, 16)], 0.0);
        assert_eq!(p.a[(8, 16)], 0.025);
        assert_eq!(p.a[(16, 0)], 0.0187);
        assert_eq!(p.a[(16, 16)], 0.0312);
        assert!(stationarity_check(&ModelParams::FBekk(p)).ok);
    }

    #[test]
    fn fixed_24_dcc_and_edcc() {
        let ModelParams::Dcc(p) = fixed_params_24(ModelClass::Dcc).unwrap() else {
            panic!("wrong class")
        };
        assert_eq!((p.theta1, p.theta2), (0.15, 0.80));
        assert!(p.marginals.iter().all(|g| g.alpha == 0.15 && g.beta == 0.80));

        let ModelParams::Edcc(p) = fixed_params_24(ModelClass::Edcc).unwrap() else {
            panic!("wrong class")
        };
        for i in 0..24 {
            for j in 0..24 {
                let expected = if i == j { 0.08 } else { 0.05 };
                assert_eq!(p.a[(i, j)], expected);
            }
        }
        // As displayed, the design violates the eigenvalue condition; the
        // stationarity report carries that.
        let report = stationarity_check(&ModelParams::Edcc(p));
        assert!(!report.ok);
        assert!(report.binding_value > 1.0);
    }

    #[test]
    fn weights_examples() {
        let mut r = rng(10);
        let w = make_weights(WeightScheme::Equal, 4, &mut r);
        assert_eq!(w.as_slice(), &[0.25; 4]);
        let w = make_weights(WeightScheme::Equal, 9, &mut r);
        for x in w.iter() {
            assert_abs_diff_eq!(*x, 1.0 / 9.0, epsilon = 0.0);
        }
        for _ in 0..100 {
            let w = make_weights(WeightScheme::Random, 6, &mut r);
            assert!((w.sum() - 1.0).abs() <= 1e-12);
            assert!(w.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn dataset_split_and_portfolio_identity() {
        let spec = DgpSpec {
            model_class: ModelClass::SBekk,
            n_assets: 3,
            t_train: 500,
            t_test: 250,
            burn_in: 100,
            weight_scheme: WeightScheme::Random,
            seed: 11,
        };
        let ds = build_dataset(&spec).unwrap();
        assert_eq!(ds.train_returns.nrows(), 500);
        assert_eq!(ds.test_returns.nrows(), 250);
        assert_eq!(ds.true_cov_path.len(), 250);
        assert!((ds.weights.sum() - 1.0).abs() <= 1e-12);
        for t in 0..250 {
            let direct: f64 = ds
                .test_returns
                .row(t)
                .iter()
                .zip(ds.weights.iter())
                .map(|(r, w)| r * w)
                .sum();
            assert_abs_diff_eq!(ds.portfolio_test[t], direct, epsilon = 1e-12);
        }

        // same seed, bit-identical dataset
        let ds2 = build_dataset(&spec).unwrap();
        assert_eq!(ds.train_returns, ds2.train_returns);
        assert_eq!(ds.test_returns, ds2.test_returns);
        assert_eq!(ds.weights, ds2.weights);
    }

    #[test]
    fn burn_in_does_not_leak() {
        // fewer simulated rows than burn_in + splits would panic or leak;
        // verify alignment by checking the covariance path matches the
        // regenerated full simulation.
        let spec = DgpSpec {
            model_class: ModelClass::Dcc,
            n_assets: 2,
            t_train: 60,
            t_test: 40,
            burn_in: 30,
            weight_scheme: WeightScheme::Equal,
            seed: 5,
        };
        let ds = build_dataset(&spec).unwrap();
        let mut r = substream(5, 0);
        let params = draw_params(spec.model_class, 2, &mut r).unwrap();
        let _w = make_weights(spec.weight_scheme, 2, &mut r);
        let sim = simulate_with_rng(&params, 130, &mut r).unwrap();
        assert_eq!(ds.test_returns[(0, 0)], sim.returns[(90, 0)]);
        assert_eq!(
            ds.true_cov_path[0].as_matrix(),
            sim.cov_path[90].as_matrix()
        );
    }
}
