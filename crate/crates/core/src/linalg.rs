//! Dense complex linear algebra for finite-dimensional quantum states.
//!
//! The central type is [`CMatrix`], a dense complex matrix with the handful of
//! structure-aware operations the rest of the crate is built on: Kronecker
//! products, partial traces, the column-vectorization `|A>> = sum_jk A_jk
//! |j>|k>` (row index on the first tensor factor), Hermitian
//! eigendecomposition, support projectors and pseudo-inverses restricted to
//! the support, and the operator norm.
//!
//! Two operator inequalities used to control restricted inverses are exposed
//! as residual checks ([`lemma_a1_residual`], [`lemma_a2_residual`]); both
//! return the minimum eigenvalue of a difference that is nonnegative in exact
//! arithmetic.

use nalgebra::DMatrix;
pub use num_complex::Complex64;

use crate::error::{Error, Result};

/// Rank cutoff for support detection: eigenvalues above `tol * lambda_max`
/// count toward the support.
pub const DEFAULT_SUPPORT_TOL: f64 = 1e-9;

/// Absolute eigenvalue floor used when the largest eigenvalue is zero.
pub const SUPPORT_ABS_FLOOR: f64 = 1e-12;

/// Relative tolerance for Hermiticity preconditions.
pub const HERMITIAN_TOL: f64 = 1e-8;

/// Shorthand complex constructor.
#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Real number as a complex scalar.
#[inline]
pub fn cr(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Which tensor factor `partial_trace` keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    First,
    Second,
}

/// Dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    m: DMatrix<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            m: DMatrix::zeros(rows, cols),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: DMatrix::identity(n, n),
        }
    }

    /// Builds from row-major nested data; rows must have equal length.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let r = rows.len();
        if r == 0 {
            return Err(Error::InvalidArgument("empty matrix".into()));
        }
        let cols = rows[0].len();
        if cols == 0 || rows.iter().any(|row| row.len() != cols) {
            return Err(Error::DimensionMismatch("ragged or empty rows".into()));
        }
        Ok(Self {
            m: DMatrix::from_fn(r, cols, |i, j| rows[i][j]),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> Complex64) -> Self {
        Self {
            m: DMatrix::from_fn(rows, cols, f),
        }
    }

    /// Diagonal matrix from real entries.
    pub fn from_real_diag(diag: &[f64]) -> Self {
        Self::from_fn(diag.len(), diag.len(), |i, j| {
            if i == j {
                cr(diag[i])
            } else {
                cr(0.0)
            }
        })
    }

    /// Column vector from a complex slice.
    pub fn col_vector(entries: &[Complex64]) -> Self {
        Self {
            m: DMatrix::from_fn(entries.len(), 1, |i, _| entries[i]),
        }
    }

    /// Standard basis column vector `|k>` in dimension `dim`.
    pub fn basis_ket(dim: usize, k: usize) -> Self {
        Self::from_fn(dim, 1, |i, _| if i == k { cr(1.0) } else { cr(0.0) })
    }

    pub fn rows(&self) -> usize {
        self.m.nrows()
    }

    pub fn cols(&self) -> usize {
        self.m.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.m[(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.m[(i, j)] = v;
    }

    /// Entries in row-major order.
    pub fn entries_row_major(&self) -> Vec<Complex64> {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(self.m[(i, j)]);
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        Self {
            m: self.m.adjoint(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            m: self.m.transpose(),
        }
    }

    pub fn conjugate(&self) -> Self {
        Self {
            m: self.m.map(|z| z.conj()),
        }
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            m: self.m.map(|z| z * s),
        }
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(cr(s))
    }

    pub fn trace(&self) -> Complex64 {
        debug_assert!(self.is_square());
        (0..self.rows()).map(|i| self.m[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows(), self.cols()), (other.rows(), other.cols()));
        self.m
            .iter()
            .zip(other.m.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Frobenius norm of `A - A^dagger`.
    pub fn hermitian_residual(&self) -> f64 {
        (self - &self.adjoint()).frobenius_norm()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square() && self.hermitian_residual() <= tol * self.frobenius_norm().max(1.0)
    }

    /// Hermitian part `(A + A^dagger)/2`.
    pub fn hermitize(&self) -> Self {
        (self + &self.adjoint()).scale_re(0.5)
    }

    /// Kronecker product; row/column indices of `self` vary slowest.
    pub fn kron(&self, other: &Self) -> Self {
        Self {
            m: self.m.kronecker(&other.m),
        }
    }

    /// Partial trace of a square matrix on a bipartite space of dimensions
    /// `d1 x d2` (first factor varying slowest).
    pub fn partial_trace(&self, d1: usize, d2: usize, keep: Keep) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::NotSquare(self.rows(), self.cols()));
        }
        if d1 * d2 != self.rows() {
            return Err(Error::DimensionMismatch(format!(
                "partial trace of {}x{} with factors {}x{}",
                self.rows(),
                self.cols(),
                d1,
                d2
            )));
        }
        let out = match keep {
            Keep::First => Self::from_fn(d1, d1, |i, j| {
                (0..d2).map(|k| self.m[(i * d2 + k, j * d2 + k)]).sum()
            }),
            Keep::Second => Self::from_fn(d2, d2, |k, l| {
                (0..d1).map(|i| self.m[(i * d2 + k, i * d2 + l)]).sum()
            }),
        };
        Ok(out)
    }

    /// Column vectorization `|A>> = sum_jk A_jk |j>|k>` (row-major flatten).
    pub fn vec_ket(&self) -> Self {
        Self::col_vector(&self.entries_row_major())
    }

    /// Inverse of [`CMatrix::vec_ket`]: reshapes a `rows*cols x 1` column.
    pub fn unvec(v: &Self, rows: usize, cols: usize) -> Result<Self> {
        if v.cols() != 1 || v.rows() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "unvec of {}x{} into {}x{}",
                v.rows(),
                v.cols(),
                rows,
                cols
            )));
        }
        Ok(Self::from_fn(rows, cols, |i, j| v.m[(i * cols + j, 0)]))
    }

    /// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
    ///
    /// The input is symmetrized as `(A + A^dagger)/2` first; inputs further
    /// than `HERMITIAN_TOL` (relative) from Hermitian are rejected.
    pub fn herm_eig(&self) -> Result<HermitianEig> {
        if !self.is_square() {
            return Err(Error::NotSquare(self.rows(), self.cols()));
        }
        let res = self.hermitian_residual();
        if res > HERMITIAN_TOL * self.frobenius_norm().max(1.0) {
            return Err(Error::NotHermitian(res));
        }
        let sym = self.hermitize();
        let eig = sym.m.symmetric_eigen();
        let n = self.rows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
        Ok(HermitianEig {
            eigenvalues,
            vectors,
        })
    }

    /// Operator norm (largest singular value), via the top eigenvalue of
    /// `A^dagger A`.
    pub fn op_norm(&self) -> f64 {
        if self.rows() == 0 || self.cols() == 0 {
            return 0.0;
        }
        let gram = &self.adjoint() * self;
        let eig = gram
            .herm_eig()
            .expect("gram matrix is Hermitian by construction");
        eig.eigenvalues
            .last()
            .copied()
            .unwrap_or(0.0)
            .max(0.0)
            .sqrt()
    }

    /// Orthogonal projector onto the span of eigenvectors with eigenvalue
    /// above the rank cutoff `tol * lambda_max` (absolute floor
    /// `SUPPORT_ABS_FLOOR` when `lambda_max <= 0`).
    pub fn support_projector(&self, tol: f64) -> Result<SupportInfo> {
        let eig = self.psd_eig()?;
        let lam_max = eig.eigenvalues.last().copied().unwrap_or(0.0);
        let cutoff = if lam_max > 0.0 {
            tol * lam_max
        } else {
            SUPPORT_ABS_FLOOR
        };
        let n = self.rows();
        let mut projector = CMatrix::zeros(n, n);
        let mut rank = 0;
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > cutoff {
                let v = eig.vector(k);
                projector = &projector + &(&v * &v.adjoint());
                rank += 1;
            }
        }
        Ok(SupportInfo {
            projector,
            rank,
            cutoff,
        })
    }

    /// Moore-Penrose pseudo-inverse of a Hermitian PSD matrix, inverting only
    /// eigenvalues above the rank cutoff (see [`CMatrix::support_projector`]).
    pub fn pinv_on_support(&self, tol: f64) -> Result<Self> {
        let eig = self.psd_eig()?;
        let lam_max = eig.eigenvalues.last().copied().unwrap_or(0.0);
        let cutoff = if lam_max > 0.0 {
            tol * lam_max
        } else {
            SUPPORT_ABS_FLOOR
        };
        let n = self.rows();
        let mut out = CMatrix::zeros(n, n);
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > cutoff {
                let v = eig.vector(k);
                out = &out + &(&v * &v.adjoint()).scale_re(1.0 / lam);
            }
        }
        Ok(out)
    }

    /// Hermitian PSD square root.
    pub fn sqrt_psd(&self) -> Result<Self> {
        let eig = self.psd_eig()?;
        let n = self.rows();
        let mut out = CMatrix::zeros(n, n);
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > 0.0 {
                let v = eig.vector(k);
                out = &out + &(&v * &v.adjoint()).scale_re(lam.sqrt());
            }
        }
        Ok(out)
    }

    /// `exp(i * theta * A)` for Hermitian `A`, via eigendecomposition.
    pub fn expi(&self, theta: f64) -> Result<Self> {
        let eig = self.herm_eig()?;
        let n = self.rows();
        let mut out = CMatrix::zeros(n, n);
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            let v = eig.vector(k);
            let phase = Complex64::from_polar(1.0, theta * lam);
            out = &out + &(&v * &v.adjoint()).scale(phase);
        }
        Ok(out)
    }

    /// Eigendecomposition with a PSD sanity check (small negative eigenvalues
    /// from rounding are tolerated).
    fn psd_eig(&self) -> Result<HermitianEig> {
        let eig = self.herm_eig()?;
        let lam_max = eig.eigenvalues.last().copied().unwrap_or(0.0);
        let lam_min = eig.eigenvalues.first().copied().unwrap_or(0.0);
        if lam_min < -1e-8 * lam_max.abs().max(1.0) {
            return Err(Error::NotPsd(lam_min));
        }
        Ok(eig)
    }
}

impl std::ops::Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        CMatrix {
            m: &self.m + &rhs.m,
        }
    }
}

impl std::ops::Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        CMatrix {
            m: &self.m - &rhs.m,
        }
    }
}

impl std::ops::Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        CMatrix {
            m: &self.m * &rhs.m,
        }
    }
}

impl std::ops::Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        CMatrix { m: -self.m.clone() }
    }
}

/// Sorted Hermitian eigendecomposition; eigenvector `k` is column `k`.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    /// Ascending real eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// Unitary matrix of eigenvector columns, in eigenvalue order.
    pub vectors: CMatrix,
}

impl HermitianEig {
    /// Eigenvector `k` as a column vector.
    pub fn vector(&self, k: usize) -> CMatrix {
        CMatrix::from_fn(self.vectors.rows(), 1, |i, _| self.vectors.get(i, k))
    }

    /// `V diag(lambda) V^dagger`.
    pub fn reconstruct(&self) -> CMatrix {
        let diag = CMatrix::from_real_diag(&self.eigenvalues);
        let v = &self.vectors;
        &(v * &diag) * &v.adjoint()
    }

    /// Frobenius distance of `V^dagger V` from the identity.
    pub fn orthonormality_residual(&self) -> f64 {
        let n = self.eigenvalues.len();
        (&(&self.vectors.adjoint() * &self.vectors) - &CMatrix::identity(n)).frobenius_norm()
    }
}

/// Support projector with its rank and the eigenvalue cutoff used.
#[derive(Debug, Clone)]
pub struct SupportInfo {
    pub projector: CMatrix,
    pub rank: usize,
    pub cutoff: f64,
}

impl SupportInfo {
    /// Frobenius norm of `P^2 - P`.
    pub fn idempotency_residual(&self) -> f64 {
        (&(&self.projector * &self.projector) - &self.projector).frobenius_norm()
    }
}

fn validate_projector(p: &CMatrix) -> Result<()> {
    if !p.is_square() {
        return Err(Error::NotSquare(p.rows(), p.cols()));
    }
    let herm = p.hermitian_residual();
    if herm > 1e-10 * p.frobenius_norm().max(1.0) {
        return Err(Error::NotHermitian(herm));
    }
    let idem = (&(p * p) - p).frobenius_norm();
    if idem > 1e-10 * p.frobenius_norm().max(1.0) {
        return Err(Error::NotProjector(idem));
    }
    Ok(())
}

/// Minimum eigenvalue of `A^{-1} - pinv(P A P)` for positive definite `A` and
/// a projector `P`; nonnegative in exact arithmetic (the inverse restricted
/// to a subspace never exceeds the full inverse).
pub fn lemma_a1_residual(a: &CMatrix, p: &CMatrix) -> Result<f64> {
    validate_projector(p)?;
    let eig = a.herm_eig()?;
    let lam_min = eig.eigenvalues.first().copied().unwrap_or(0.0);
    let lam_max = eig.eigenvalues.last().copied().unwrap_or(0.0);
    if lam_min <= 1e-14 * lam_max.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "matrix must be positive definite (min eigenvalue {lam_min:.3e})"
        )));
    }
    if a.rows() != p.rows() {
        return Err(Error::DimensionMismatch(format!(
            "operator is {}x{} but projector is {}x{}",
            a.rows(),
            a.cols(),
            p.rows(),
            p.cols()
        )));
    }
    let a_inv = a.pinv_on_support(DEFAULT_SUPPORT_TOL)?;
    let pap = (&(p * a) * p).hermitize();
    let pap_pinv = pap.pinv_on_support(DEFAULT_SUPPORT_TOL)?;
    let diff = (&a_inv - &pap_pinv).hermitize();
    let deig = diff.herm_eig()?;
    Ok(deig.eigenvalues.first().copied().unwrap_or(0.0))
}

/// Minimum eigenvalue of
/// `eps P + (R^2/eps)(I-P) - P A (I-P) - (I-P) A P` with `R = ||P A (I-P)||`,
/// for Hermitian `A`, projector `P`, `eps > 0`; nonnegative in exact
/// arithmetic (off-diagonal blocks are dominated by weighted diagonal ones).
pub fn lemma_a2_residual(a: &CMatrix, p: &CMatrix, eps: f64) -> Result<f64> {
    validate_projector(p)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    if !a.is_hermitian(HERMITIAN_TOL) {
        return Err(Error::NotHermitian(a.hermitian_residual()));
    }
    if a.rows() != p.rows() {
        return Err(Error::DimensionMismatch(format!(
            "operator is {}x{} but projector is {}x{}",
            a.rows(),
            a.cols(),
            p.rows(),
            p.cols()
        )));
    }
    let q = &CMatrix::identity(p.rows()) - p;
    let x = &(p * a) * &q;
    let r = x.op_norm();
    let m = &(&(&p.scale_re(eps) + &q.scale_re(r * r / eps)) - &x) - &x.adjoint();
    let eig = m.hermitize().herm_eig()?;
    Ok(eig.eigenvalues.first().copied().unwrap_or(0.0))
}
