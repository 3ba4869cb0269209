//! Dense symmetric-matrix utilities: PSD classification, Loewner comparison,
//! symmetric square roots, block assembly and ellipse export.
//!
//! Every covariance handled by this crate is stored as a [`SymMatrix`]:
//! symmetrized on construction and guaranteed finite. Matrices are small
//! (state dimensions up to ~10^2), so symmetric eigendecompositions are used
//! freely instead of sparse or pivoted factorizations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Relative eigenvalue tolerance for PSD checks: eigenvalues above
/// `-tol * max(1, spectral norm)` count as non-negative.
pub const DEFAULT_PSD_TOL: f64 = 1e-9;

/// Condition-number limit above which SPD inversion refuses to proceed.
pub const SPD_CONDITION_LIMIT: f64 = 1e12;

/// Maximum absolute asymmetry accepted when decoding a matrix from JSON.
pub const JSON_ASYMMETRY_TOL: f64 = 1e-12;

/// A symmetric real matrix with finite entries.
///
/// Construction symmetrizes the input as `(A + A^T) / 2`; the fusion formulas
/// compound rounding asymmetry otherwise. Values are immutable after
/// construction and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    /// Build from a square matrix, symmetrizing `(A + A^T)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "expected square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::DimensionMismatch("dimension must be >= 1".into()));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(Self { m: sym })
    }

    /// Build from row-major nested slices.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(
                "rows must form a non-empty square matrix".into(),
            ));
        }
        let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        Self::new(m)
    }

    pub fn identity(d: usize) -> Self {
        Self {
            m: DMatrix::identity(d, d),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            m: DMatrix::zeros(d, d),
        }
    }

    /// `s * I_d`.
    pub fn scaled_identity(d: usize, s: f64) -> Self {
        Self {
            m: DMatrix::identity(d, d) * s,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.m.diagonal()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.m.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues().last().unwrap()
    }

    /// Spectral norm (largest absolute eigenvalue).
    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues().iter().fold(0.0, |a, &x| a.max(x.abs()))
    }

    /// PSD within the relative eigenvalue tolerance `tol`.
    pub fn is_psd(&self, tol: f64) -> bool {
        let ev = self.eigenvalues();
        let norm = ev.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        ev[0] >= -tol * norm.max(1.0)
    }

    /// SPD check: strictly positive eigenvalues and condition number within
    /// [`SPD_CONDITION_LIMIT`].
    pub fn is_spd(&self) -> bool {
        let ev = self.eigenvalues();
        ev[0] > 0.0 && ev[ev.len() - 1] / ev[0] <= SPD_CONDITION_LIMIT
    }

    /// Unique symmetric PSD square root, via eigendecomposition.
    ///
    /// Eigenvalues in `[-tol * norm, 0)` are clamped to zero; anything more
    /// negative is a [`Error::NotPsd`].
    pub fn psd_sqrt_tol(&self, tol: f64) -> Result<SymMatrix> {
        let eig = SymmetricEigen::new(self.m.clone());
        let norm = eig.eigenvalues.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        let floor = -tol * norm.max(1.0);
        let mut vals = eig.eigenvalues.clone();
        for v in vals.iter_mut() {
            if *v < floor {
                return Err(Error::NotPsd(*v));
            }
            *v = v.max(0.0).sqrt();
        }
        let root = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        SymMatrix::new(root)
    }

    /// Symmetric PSD square root with the default tolerance.
    pub fn psd_sqrt(&self) -> Result<SymMatrix> {
        self.psd_sqrt_tol(DEFAULT_PSD_TOL)
    }

    /// Inverse of an SPD matrix via symmetric eigendecomposition.
    ///
    /// Fails with [`Error::SingularMatrix`] on non-positive eigenvalues or a
    /// condition number above [`SPD_CONDITION_LIMIT`]; never falls back to a
    /// pseudo-inverse.
    pub fn spd_inverse(&self) -> Result<SymMatrix> {
        let eig = SymmetricEigen::new(self.m.clone());
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if min <= 0.0 {
            return Err(Error::SingularMatrix(format!("min eigenvalue {min:.3e}")));
        }
        if max / min > SPD_CONDITION_LIMIT {
            return Err(Error::SingularMatrix(format!(
                "condition number {:.3e}",
                max / min
            )));
        }
        let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
        let inv =
            &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
        SymMatrix::new(inv)
    }

    /// `log det` of an SPD matrix.
    pub fn logdet(&self) -> Result<f64> {
        let ev = self.eigenvalues();
        if ev[0] <= 0.0 {
            return Err(Error::NotPsd(ev[0]));
        }
        Ok(ev.iter().map(|v| v.ln()).sum())
    }

    /// Frobenius norm of the difference, as an absolute distance.
    pub fn frobenius_distance(&self, other: &SymMatrix) -> f64 {
        (&self.m - &other.m).norm()
    }
}

/// `a` is below `b` in the Loewner order, within a relative eigenvalue
/// tolerance: `min eig(b - a) >= -tol * max(1, ||b - a||_2)`.
pub fn loewner_leq(a: &SymMatrix, b: &SymMatrix, tol: f64) -> Result<bool> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "loewner_leq: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if tol < 0.0 {
        return Err(Error::InvalidProblem("tolerance must be >= 0".into()));
    }
    let diff = SymMatrix::new(b.as_matrix() - a.as_matrix())?;
    let ev = diff.eigenvalues();
    let norm = ev.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
    Ok(ev[0] >= -tol * norm.max(1.0))
}

/// The `Nd x d` stack of `n` identity blocks (the centralized observation
/// matrix `1_N (x) I_d`).
pub fn stacked_identity(n: usize, d: usize) -> Result<DMatrix<f64>> {
    if n == 0 || d == 0 {
        return Err(Error::DimensionMismatch(
            "node count and state dimension must be >= 1".into(),
        ));
    }
    let mut h = DMatrix::zeros(n * d, d);
    for b in 0..n {
        for i in 0..d {
            h[(b * d + i, i)] = 1.0;
        }
    }
    Ok(h)
}

/// `count` points on the boundary `{x : x^T P^{-1} x = 1}` of the ellipse of
/// an SPD 2x2 matrix, parameterized by angle: `x_k = P^{1/2} (cos t_k, sin t_k)`.
pub fn ellipse_boundary(p: &SymMatrix, count: usize) -> Result<Vec<[f64; 2]>> {
    if p.dim() != 2 {
        return Err(Error::DimensionMismatch(format!(
            "ellipse export needs dim 2, got {}",
            p.dim()
        )));
    }
    if !p.is_spd() {
        return Err(Error::SingularMatrix("ellipse of a singular matrix".into()));
    }
    let root = p.psd_sqrt()?;
    let mut pts = Vec::with_capacity(count);
    for k in 0..count {
        let t = 2.0 * std::f64::consts::PI * (k as f64) / (count as f64);
        let u = DVector::from_column_slice(&[t.cos(), t.sin()]);
        let x = root.as_matrix() * u;
        pts.push([x[0], x[1]]);
    }
    Ok(pts)
}

/// Symmetric `Nd x Nd` matrix interpreted as an `N x N` grid of `d x d`
/// blocks. Carries the centralized covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    block_dim: usize,
    block_count: usize,
    m: SymMatrix,
}

impl BlockMatrix {
    pub fn new(m: SymMatrix, block_dim: usize) -> Result<Self> {
        if block_dim == 0 || !m.dim().is_multiple_of(block_dim) {
            return Err(Error::DimensionMismatch(format!(
                "matrix of dim {} cannot be split into blocks of dim {}",
                m.dim(),
                block_dim
            )));
        }
        let block_count = m.dim() / block_dim;
        Ok(Self {
            block_dim,
            block_count,
            m,
        })
    }

    pub fn zeros(block_count: usize, block_dim: usize) -> Self {
        Self {
            block_dim,
            block_count,
            m: SymMatrix::zeros(block_count * block_dim),
        }
    }

    /// Assemble a block-diagonal matrix from `d x d` symmetric blocks.
    pub fn block_diagonal(blocks: &[SymMatrix]) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::DimensionMismatch("no blocks".into()));
        }
        let d = blocks[0].dim();
        if blocks.iter().any(|b| b.dim() != d) {
            return Err(Error::DimensionMismatch("blocks of unequal dim".into()));
        }
        let n = blocks.len();
        let mut m = DMatrix::zeros(n * d, n * d);
        for (b, blk) in blocks.iter().enumerate() {
            m.view_mut((b * d, b * d), (d, d)).copy_from(blk.as_matrix());
        }
        Ok(Self {
            block_dim: d,
            block_count: n,
            m: SymMatrix::new(m)?,
        })
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn block_count(&self) -> usize {
        self.block_count
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    /// Copy of block `(i, j)`.
    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let d = self.block_dim;
        self.m.as_matrix().view((i * d, j * d), (d, d)).into_owned()
    }

    /// Diagonal block `(i, i)` as a symmetric matrix.
    pub fn diagonal_block(&self, i: usize) -> SymMatrix {
        SymMatrix::new(self.block(i, i)).expect("diagonal block of a symmetric matrix")
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.m
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.m.as_matrix()
    }
}

// Matrix JSON encoding used repo-wide: {"dim": d, "rows": [[...], ...]} with
// full symmetric storage; readers reject asymmetry beyond 1e-12 absolute.
#[derive(Serialize, Deserialize)]
struct MatrixJson {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let d = self.dim();
        let rows = (0..d)
            .map(|i| (0..d).map(|j| self.m[(i, j)]).collect())
            .collect();
        MatrixJson { dim: d, rows }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = MatrixJson::deserialize(de)?;
        if raw.rows.len() != raw.dim || raw.rows.iter().any(|r| r.len() != raw.dim) {
            return Err(D::Error::custom(format!(
                "matrix rows do not match declared dim {}",
                raw.dim
            )));
        }
        let mut worst = 0.0f64;
        for i in 0..raw.dim {
            for j in (i + 1)..raw.dim {
                worst = worst.max((raw.rows[i][j] - raw.rows[j][i]).abs());
            }
        }
        if worst > JSON_ASYMMETRY_TOL {
            return Err(D::Error::custom(format!(
                "matrix asymmetric beyond {JSON_ASYMMETRY_TOL:.0e} (max {worst:.3e})"
            )));
        }
        SymMatrix::from_rows(&raw.rows).map_err(D::Error::custom)
    }
}
