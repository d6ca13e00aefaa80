//! Symmetric-matrix kernels: half-vectorization, duplication matrices,
//! Kronecker products and covariance/correlation conversion.
//!
//! Every covariance-like object in this crate flows through [`SymMatrix`] and
//! [`HalfVec`]. The vech ordering is fixed once, crate-wide, to the
//! column-major lower triangle: for a 3x3 matrix the order is
//! `(s11, s21, s31, s22, s32, s33)`.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Absolute tolerance under which a nearly-symmetric matrix is silently
/// symmetrized on construction; larger asymmetry is rejected.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),
}

/// A square matrix guaranteed symmetric (entries within [`SYMMETRY_TOL`] are
/// averaged on construction).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    mat: DMatrix<f64>,
}

impl SymMatrix {
    /// Builds from a square matrix, rejecting asymmetry beyond [`SYMMETRY_TOL`].
    pub fn new(mat: DMatrix<f64>) -> Result<Self, MatrixError> {
        if mat.nrows() != mat.ncols() {
            return Err(MatrixError::InvalidInput(format!(
                "expected square matrix, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let mut max_asym = 0.0f64;
        for j in 0..mat.ncols() {
            for i in (j + 1)..mat.nrows() {
                max_asym = max_asym.max((mat[(i, j)] - mat[(j, i)]).abs());
            }
        }
        if max_asym > SYMMETRY_TOL {
            return Err(MatrixError::InvalidInput(format!(
                "asymmetry {max_asym:.3e} exceeds tolerance {SYMMETRY_TOL:.0e}"
            )));
        }
        Ok(Self::symmetrized(mat))
    }

    /// Builds by forcing symmetry as `(M + M')/2`, without a tolerance check.
    ///
    /// Intended for matrices that are symmetric by construction up to
    /// floating-point noise (outer products, filter recursions).
    pub fn symmetrized(mat: DMatrix<f64>) -> Self {
        assert_eq!(mat.nrows(), mat.ncols(), "symmetrized() needs a square matrix");
        let mut m = mat;
        for j in 0..m.ncols() {
            for i in (j + 1)..m.nrows() {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        Self { mat: m }
    }

    pub fn identity(n: usize) -> Self {
        Self { mat: DMatrix::identity(n, n) }
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self::symmetrized(DMatrix::from_fn(n, n, f))
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.mat
    }

    /// Half-vectorization in the crate-wide column-major lower-triangle order.
    pub fn vech(&self) -> HalfVec {
        let n = self.dim();
        let mut values = Vec::with_capacity(n * (n + 1) / 2);
        for j in 0..n {
            for i in j..n {
                values.push(self.mat[(i, j)]);
            }
        }
        HalfVec { n, values: DVector::from_vec(values) }
    }

    /// Quadratic form `w' M w`.
    pub fn quad_form(&self, w: &DVector<f64>) -> f64 {
        (w.transpose() * &self.mat * w)[(0, 0)]
    }

    /// Smallest eigenvalue (symmetric eigendecomposition).
    pub fn min_eigenvalue(&self) -> f64 {
        self.mat
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.mat.diagonal()
    }
}

impl serde::Serialize for SymMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.mat.serialize(serializer)
    }
}

impl<'de> serde::Deserialize<'de> for SymMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let mat = DMatrix::<f64>::deserialize(deserializer)?;
        SymMatrix::new(mat).map_err(serde::de::Error::custom)
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.mat[idx]
    }
}

/// Half-vectorization of an `n x n` symmetric matrix: `n(n+1)/2` values in
/// column-major lower-triangle order.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfVec {
    n: usize,
    values: DVector<f64>,
}

impl HalfVec {
    /// Builds from a raw vector; the length must be a triangular number.
    pub fn new(values: DVector<f64>) -> Result<Self, MatrixError> {
        let m = values.len();
        let n = side_from_triangular(m).ok_or_else(|| {
            MatrixError::InvalidInput(format!("length {m} is not n(n+1)/2 for any integer n"))
        })?;
        Ok(Self { n, values })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self, MatrixError> {
        Self::new(DVector::from_row_slice(values))
    }

    /// Matrix dimension n.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Vector length m = n(n+1)/2.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }

    /// Position of entry (i, j), i >= j, within the vech ordering.
    pub fn index_of(n: usize, i: usize, j: usize) -> usize {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        // offset of column j = n + (n-1) + ... + (n-j+1)
        j * n - j * (j + 1) / 2 + i
    }

    /// Inverse of vech: reconstructs the symmetric matrix exactly.
    pub fn to_matrix(&self) -> SymMatrix {
        let n = self.n;
        let mut mat = DMatrix::zeros(n, n);
        let mut k = 0;
        for j in 0..n {
            for i in j..n {
                mat[(i, j)] = self.values[k];
                mat[(j, i)] = self.values[k];
                k += 1;
            }
        }
        SymMatrix { mat }
    }
}

fn side_from_triangular(m: usize) -> Option<usize> {
    // n(n+1)/2 = m  =>  n = (sqrt(8m+1)-1)/2
    let n = ((((8 * m + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (n * (n + 1) / 2 == m && n > 0).then_some(n)
}

// Duplication matrices are rebuilt thousands of times per study; cache them
// per dimension. Entries are immutable after construction.
static DUPLICATION_CACHE: RwLock<Option<HashMap<usize, Arc<DMatrix<f64>>>>> = RwLock::new(None);
static DUPLICATION_PINV_CACHE: RwLock<Option<HashMap<usize, Arc<DMatrix<f64>>>>> =
    RwLock::new(None);

fn cached(
    cache: &RwLock<Option<HashMap<usize, Arc<DMatrix<f64>>>>>,
    n: usize,
    build: impl FnOnce(usize) -> DMatrix<f64>,
) -> Arc<DMatrix<f64>> {
    if let Some(m) = cache.read().unwrap().as_ref().and_then(|c| c.get(&n)) {
        return Arc::clone(m);
    }
    let built = Arc::new(build(n));
    let mut guard = cache.write().unwrap();
    let map = guard.get_or_insert_with(HashMap::new);
    Arc::clone(map.entry(n).or_insert(built))
}

/// The `n^2 x n(n+1)/2` duplication matrix `D` with `vec(M) = D vech(M)` for
/// symmetric `M`. Each row holds exactly one 1.
pub fn duplication(n: usize) -> Result<Arc<DMatrix<f64>>, MatrixError> {
    if n == 0 {
        return Err(MatrixError::InvalidInput("duplication matrix needs n >= 1".into()));
    }
    Ok(cached(&DUPLICATION_CACHE, n, |n| {
        let m = n * (n + 1) / 2;
        let mut d = DMatrix::zeros(n * n, m);
        for c in 0..n {
            for r in 0..n {
                d[(c * n + r, HalfVec::index_of(n, r, c))] = 1.0;
            }
        }
        d
    }))
}

/// Moore-Penrose inverse of the duplication matrix, computed as
/// `(D'D)^-1 D'`. Since the columns of `D` are orthogonal, `D'D` is diagonal
/// with entries 1 (diagonal positions) or 2 (off-diagonal positions).
pub fn duplication_pinv(n: usize) -> Result<Arc<DMatrix<f64>>, MatrixError> {
    if n == 0 {
        return Err(MatrixError::InvalidInput("duplication matrix needs n >= 1".into()));
    }
    Ok(cached(&DUPLICATION_PINV_CACHE, n, |n| {
        let d = duplication(n).expect("n >= 1");
        let mut p = d.transpose();
        for r in 0..p.nrows() {
            let count: f64 = p.row(r).sum();
            for c in 0..p.ncols() {
                p[(r, c)] /= count;
            }
        }
        p
    }))
}

/// Kronecker product `a (x) b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Splits a covariance matrix into `(R, s)` where `R` is the correlation
/// matrix with exact unit diagonal and `s` the vector of standard deviations,
/// so that `diag(s) R diag(s)` reconstructs the input.
///
/// The input need not be positive semidefinite (reconciled "covariances" can
/// violate that); only strictly positive diagonal entries are required.
pub fn cov_to_cor(sigma: &SymMatrix) -> Result<(SymMatrix, DVector<f64>), MatrixError> {
    let n = sigma.dim();
    let mut s = DVector::zeros(n);
    for i in 0..n {
        let v = sigma[(i, i)];
        if v <= 0.0 {
            return Err(MatrixError::DegenerateCovariance(format!(
                "nonpositive diagonal entry {v:.3e} at index {i}"
            )));
        }
        s[i] = v.sqrt();
    }
    let mut r = DMatrix::identity(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = sigma[(i, j)] / (s[i] * s[j]);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok((SymMatrix { mat: r }, s))
}

/// The aggregation vector `a = D_n' (w (x) w)`, satisfying
/// `a' vech(S) = w' S w` for every symmetric `S`.
pub fn aggregation_vector(weights: &DVector<f64>) -> DVector<f64> {
    let n = weights.len();
    let m = n * (n + 1) / 2;
    let mut a = DVector::zeros(m);
    // D' (w (x) w) sums w_i w_j over the vec positions mapping to each vech
    // slot: w_i^2 on the diagonal, 2 w_i w_j off it.
    for j in 0..n {
        for i in j..n {
            let k = HalfVec::index_of(n, i, j);
            a[k] = if i == j { weights[i] * weights[i] } else { 2.0 * weights[i] * weights[j] };
        }
    }
    a
}
