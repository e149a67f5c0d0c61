//! Hermitian matrix utilities.
//!
//! PSD square roots, pseudoinverses and numerical rank on complex matrices,
//! plus the real symmetric embedding `P + jQ -> [[P, -Q], [Q, P]]` used to
//! hand complex data to the real-cone interior-point solver.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Default relative tolerance for rank decisions and pseudoinverses.
pub const DEFAULT_REL_TOL: f64 = 1e-9;

/// Relative eigenvalue clipping window used by [`default_psd_tol`].
pub const PSD_CLIP_REL: f64 = 1e-7;

/// A complex square matrix that is exactly equal to its conjugate transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    /// Symmetrizes `m` into `(m + m*) / 2`. Fails if `m` is not square.
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "Hermitian matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(symmetrize(&m))
    }

    pub fn zeros(k: usize) -> Self {
        HermitianMatrix(CMatrix::zeros(k, k))
    }

    pub fn identity(k: usize) -> Self {
        HermitianMatrix(CMatrix::identity(k, k))
    }

    pub fn from_real(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(m.map(|v| Complex64::new(v, 0.0)))
    }

    /// Outer product `v v*`.
    pub fn outer(v: &CVector) -> Self {
        symmetrize(&(v * v.adjoint()))
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    /// Real inner product `Re tr(self * other)`, the pairing used for all
    /// linear constraints on Hermitian variables.
    pub fn inner(&self, other: &HermitianMatrix) -> f64 {
        inner(&self.0, &other.0)
    }

    pub fn trace(&self) -> f64 {
        self.0.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    pub fn scale(&self, s: f64) -> Self {
        HermitianMatrix(self.0.map(|z| z * s))
    }

    pub fn add(&self, other: &HermitianMatrix) -> Self {
        HermitianMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &HermitianMatrix) -> Self {
        HermitianMatrix(&self.0 - &other.0)
    }

    /// Congruence `T self T*`.
    pub fn congruence(&self, t: &CMatrix) -> Self {
        symmetrize(&(t * &self.0 * t.adjoint()))
    }

    /// Eigenvalues in ascending order with matching eigenvector columns.
    pub fn eigh(&self) -> (DVector<f64>, CMatrix) {
        let eig = SymmetricEigen::new(self.0.clone());
        let k = self.size();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let values = DVector::from_iterator(k, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = CMatrix::zeros(k, k);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        (values, vectors)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.size() == 0 {
            return 0.0;
        }
        self.eigh().0[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        if self.size() == 0 {
            return 0.0;
        }
        let (values, _) = self.eigh();
        values[values.len() - 1]
    }

    /// Spectral norm.
    pub fn norm2(&self) -> f64 {
        if self.size() == 0 {
            return 0.0;
        }
        let (values, _) = self.eigh();
        values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Projects onto the PSD cone by zeroing negative eigenvalues.
    pub fn clip_psd(&self) -> Self {
        let (values, vectors) = self.eigh();
        let clipped = values.map(|v| v.max(0.0));
        let scaled = scale_columns(&vectors, &clipped);
        symmetrize(&(scaled * vectors.adjoint()))
    }
}

/// `Re tr(a * b)` for complex square matrices of equal size.
pub fn inner(a: &CMatrix, b: &CMatrix) -> f64 {
    // tr(ab) = sum_ij a_ij b_ji
    let k = a.nrows();
    let mut acc = 0.0;
    for i in 0..k {
        for j in 0..k {
            let x = a[(i, j)];
            let y = b[(j, i)];
            acc += x.re * y.re - x.im * y.im;
        }
    }
    acc
}

pub fn symmetrize(m: &CMatrix) -> HermitianMatrix {
    let mut h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    for i in 0..h.nrows() {
        h[(i, i)].im = 0.0;
    }
    HermitianMatrix(h)
}

/// Clipping tolerance `1e-7 * ||h||_2` used for solver-produced matrices.
pub fn default_psd_tol(h: &HermitianMatrix) -> f64 {
    PSD_CLIP_REL * h.norm2()
}

/// Square root `S` with `S S* = h`, from the eigendecomposition
/// `h = U diag(l) U*` as `S = U diag(sqrt(l))`.
///
/// Eigenvalues in `[-tol, tol]` are set to zero.
pub fn psd_sqrt(h: &HermitianMatrix, tol: f64) -> Result<CMatrix> {
    let k = h.size();
    if k == 0 {
        return Ok(CMatrix::zeros(0, 0));
    }
    let (values, vectors) = h.eigh();
    if values[0] < -tol {
        return Err(Error::NotPsd {
            min_eigenvalue: values[0],
        });
    }
    // Eigenvalues inside the tolerance window are treated as exact zeros.
    let roots = values.map(|v| if v > tol { v.sqrt() } else { 0.0 });
    Ok(scale_columns(&vectors, &roots))
}

/// Real symmetric embedding `[[P, -Q], [Q, P]]` of `h = P + jQ`.
pub fn embed_real(h: &HermitianMatrix) -> DMatrix<f64> {
    let k = h.size();
    let m = h.as_matrix();
    let mut out = DMatrix::<f64>::zeros(2 * k, 2 * k);
    for i in 0..k {
        for j in 0..k {
            let z = m[(i, j)];
            out[(i, j)] = z.re;
            out[(i + k, j + k)] = z.re;
            out[(i, j + k)] = -z.im;
            out[(i + k, j)] = z.im;
        }
    }
    out
}

/// Inverse of [`embed_real`] for arbitrary real symmetric `y`: averages the two
/// diagonal blocks and the two off-diagonal blocks, which is the orthogonal
/// projection onto the range of the embedding.
pub fn unembed_real(y: &DMatrix<f64>) -> Result<HermitianMatrix> {
    if !y.is_square() || !y.nrows().is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "embedded matrix must be square of even order, got {}x{}",
            y.nrows(),
            y.ncols()
        )));
    }
    let k = y.nrows() / 2;
    let mut out = CMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let re = 0.5 * (y[(i, j)] + y[(i + k, j + k)]);
            let im = 0.5 * (y[(i + k, j)] - y[(i, j + k)]);
            out[(i, j)] = Complex64::new(re, im);
        }
    }
    Ok(symmetrize(&out))
}

/// Singular values in descending order. Wide inputs are handled directly.
pub fn singular_values(m: &CMatrix) -> DVector<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = SVD::new(m.clone(), false, false);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    DVector::from_vec(s)
}

pub fn spectral_norm(m: &CMatrix) -> f64 {
    singular_values(m).iter().copied().fold(0.0, f64::max)
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(m: &CMatrix, rel_tol: f64) -> usize {
    let s = singular_values(m);
    let smax = s.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_tol * smax).count()
}

/// Full SVD `m = U diag(s) V*` with square unitary `U` (r x r) and `V` (c x c).
///
/// nalgebra returns thin factors; the missing columns are filled with an
/// orthonormal complement.
pub fn full_svd(m: &CMatrix) -> Result<(CMatrix, DVector<f64>, CMatrix)> {
    let (r, c) = m.shape();
    let mut svd = SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    svd.sort_by_singular_values();
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD missing U".into()))?;
    let v = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD missing V".into()))?
        .adjoint();
    Ok((complete_basis(&u, r), svd.singular_values, complete_basis(&v, c)))
}

/// Extends orthonormal columns `q` to a unitary `dim x dim` matrix.
fn complete_basis(q: &CMatrix, dim: usize) -> CMatrix {
    let mut out = CMatrix::zeros(dim, dim);
    let k = q.ncols();
    out.view_mut((0, 0), (dim, k)).copy_from(q);
    let mut filled = k;
    let mut candidates: Vec<usize> = (0..dim).collect();
    while filled < dim {
        // Pick the coordinate axis with the largest residual against the current span.
        let basis = out.columns(0, filled).into_owned();
        let mut best: Option<(f64, usize, CVector)> = None;
        for &i in &candidates {
            let mut e = CVector::zeros(dim);
            e[i] = Complex64::new(1.0, 0.0);
            for _ in 0..2 {
                let proj = basis.adjoint() * &e;
                e -= &basis * proj;
            }
            let nrm = e.norm();
            if best.as_ref().is_none_or(|(b, _, _)| nrm > *b) {
                best = Some((nrm, i, e));
            }
        }
        let (nrm, axis, e) = best.expect("candidate axes remain");
        candidates.retain(|&i| i != axis);
        out.set_column(filled, &(e / Complex64::new(nrm, 0.0)));
        filled += 1;
    }
    out
}

/// Moore-Penrose pseudoinverse with singular values below
/// `rel_tol * sigma_max` treated as zero.
pub fn pinv(m: &CMatrix, rel_tol: f64) -> Result<CMatrix> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(CMatrix::zeros(c, r));
    }
    let svd = SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V");
    let mut out = CMatrix::zeros(c, r);
    if smax == 0.0 {
        return Ok(out);
    }
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_tol * smax {
            let vi = v_t.row(i).adjoint();
            let ui = u.column(i).adjoint();
            out += (vi * ui) * Complex64::new(1.0 / s, 0.0);
        }
    }
    Ok(out)
}

pub(crate) fn scale_columns(m: &CMatrix, s: &DVector<f64>) -> CMatrix {
    let mut out = m.clone();
    for (j, &v) in s.iter().enumerate() {
        out.column_mut(j).scale_mut(v);
    }
    out
}
