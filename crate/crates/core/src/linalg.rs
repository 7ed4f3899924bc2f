//! Dense symmetric linear algebra.
//!
//! The eigensolver for a single symmetric matrix is nalgebra's implicit-QR
//! routine; everything layered on top of it (ordering and sign conventions,
//! Cholesky with a relative pivot tolerance, whitening, and the
//! symmetric-definite generalized eigenproblem) lives here.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{RcaError, Result};

/// Relative pivot tolerance shared by every positive-definiteness test.
pub const PD_TOL: f64 = 1e-12;

/// Maximum relative asymmetry accepted by [`SymMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// A dense real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validates squareness, finiteness and symmetry, then stores `(A + Aᵀ)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(RcaError::invalid(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(RcaError::invalid("matrix must have positive dimension"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(RcaError::invalid("matrix has non-finite entries"));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let n = m.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(RcaError::invalid(format!(
                        "matrix is not symmetric at ({i}, {j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        Ok(Self::symmetrize(m))
    }

    /// Symmetrizes without the asymmetry check. Intended for matrices that are
    /// symmetric analytically (Gram products, inverses) but carry rounding noise.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "symmetrize needs a square matrix");
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        SymMatrix(DMatrix::identity(dim, dim) * scale)
    }

    /// `AᵀA · scale`.
    pub fn gram(a: &DMatrix<f64>, scale: f64) -> Self {
        Self::symmetrize(a.tr_mul(a) * scale)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn max_diagonal(&self) -> f64 {
        self.0.diagonal().max()
    }

    pub fn scale(&self, factor: f64) -> Self {
        SymMatrix(&self.0 * factor)
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn add_diagonal(&self, value: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += value;
        }
        SymMatrix(m)
    }

    /// `PᵀAP` for the permutation sending position `k` to `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.dim();
        SymMatrix(DMatrix::from_fn(n, n, |i, j| self.0[(perm[i], perm[j])]))
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// `‖A‖_F`.
pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// `‖A − B‖_F / max(‖B‖_F, tiny)`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Orthonormal eigendecomposition `A = U diag(values) Uᵀ`, values descending.
#[derive(Debug, Clone)]
pub struct EigDecomp {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
}

impl EigDecomp {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = scale_columns(&self.vectors, self.values.as_slice());
        &scaled * self.vectors.transpose()
    }
}

/// Flips each column so that its largest-magnitude entry (first one on ties) is positive.
pub fn canonicalize_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Returns `m · diag(d)`.
pub fn scale_columns(m: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= d[j];
    }
    out
}

/// Returns `diag(d) · m`.
pub fn scale_rows(m: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= d[i];
    }
    out
}

pub fn sym_eig(a: &SymMatrix) -> Result<EigDecomp> {
    let m = a.as_matrix();
    if m.iter().any(|v| !v.is_finite()) {
        return Err(RcaError::invalid("sym_eig: non-finite entries"));
    }
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0)
        .ok_or_else(|| RcaError::invalid("sym_eig: eigensolver failed"))?;

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the solver's order on exact ties, so output is deterministic.
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    canonicalize_signs(&mut vectors);
    Ok(EigDecomp { vectors, values })
}

/// Lower-triangular Cholesky factor `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

pub fn cholesky(a: &SymMatrix) -> Result<Cholesky> {
    let m = a.as_matrix();
    let n = m.nrows();
    let tol = PD_TOL * a.max_diagonal().max(0.0);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > tol) {
            return Err(RcaError::not_pd(format!(
                "cholesky pivot {pivot:e} at index {j} is below tolerance {tol:e}"
            )));
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(Cholesky { l })
}

impl Cholesky {
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn into_l(self) -> DMatrix<f64> {
        self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `L x = b` in place for every column of `b`.
    pub fn forward_solve_mut(&self, b: &mut DMatrix<f64>) {
        let n = self.dim();
        for mut col in b.column_iter_mut() {
            for i in 0..n {
                let mut s = col[i];
                for k in 0..i {
                    s -= self.l[(i, k)] * col[k];
                }
                col[i] = s / self.l[(i, i)];
            }
        }
    }

    /// Solves `Lᵀ x = b` in place for every column of `b`.
    pub fn backward_solve_mut(&self, b: &mut DMatrix<f64>) {
        let n = self.dim();
        for mut col in b.column_iter_mut() {
            for i in (0..n).rev() {
                let mut s = col[i];
                for k in (i + 1)..n {
                    s -= self.l[(k, i)] * col[k];
                }
                col[i] = s / self.l[(i, i)];
            }
        }
    }

    /// `A⁻¹ B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.forward_solve_mut(&mut x);
        self.backward_solve_mut(&mut x);
        x
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        let x = self.solve(&m);
        DVector::from_column_slice(x.as_slice())
    }

    pub fn inverse(&self) -> SymMatrix {
        SymMatrix::symmetrize(self.solve(&DMatrix::identity(self.dim(), self.dim())))
    }

    /// `bᵀ A⁻¹ b` summed over the columns of `b`, i.e. `tr(Bᵀ A⁻¹ B)`.
    pub fn quad_form_trace(&self, b: &DMatrix<f64>) -> f64 {
        let mut x = b.clone();
        self.forward_solve_mut(&mut x);
        x.norm_squared()
    }
}

/// The whitening map `Σ^{-1/2} = Λ^{-1/2} Uᵀ` built from `Σ = U Λ Uᵀ`, with its inverse.
#[derive(Debug, Clone)]
pub struct Whitening {
    map: DMatrix<f64>,
    inverse: DMatrix<f64>,
}

impl Whitening {
    /// The whitening matrix `Λ^{-1/2} Uᵀ`.
    pub fn map(&self) -> &DMatrix<f64> {
        &self.map
    }

    /// `U Λ^{1/2}`, so that `inverse · map = I`.
    pub fn inverse_map(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.map * v
    }

    pub fn unapply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.inverse * v
    }
}

pub fn whitening_transform(sigma: &SymMatrix) -> Result<Whitening> {
    let eig = sym_eig(sigma)?;
    let n = sigma.dim();
    let largest = eig.values[0];
    let smallest = eig.values[n - 1];
    if !(largest > 0.0) || smallest <= PD_TOL * largest {
        return Err(RcaError::not_pd(format!(
            "whitening: eigenvalue range [{smallest:e}, {largest:e}]"
        )));
    }
    let inv_sqrt: Vec<f64> = eig.values.iter().map(|v| 1.0 / v.sqrt()).collect();
    let sqrt: Vec<f64> = eig.values.iter().map(|v| v.sqrt()).collect();
    let map = scale_rows(&eig.vectors.transpose(), &inv_sqrt);
    let inverse = scale_columns(&eig.vectors, &sqrt);
    Ok(Whitening { map, inverse })
}

/// Solution `A S = B S diag(values)` of a symmetric-definite pencil, `Sᵀ B S = I`.
#[derive(Debug, Clone)]
pub struct GepDecomp {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
}

impl GepDecomp {
    /// `‖A S − B S D‖_F / ‖A S‖_F`.
    pub fn residual(&self, a: &SymMatrix, b: &SymMatrix) -> f64 {
        let as_ = a.as_matrix() * &self.vectors;
        let bsd = scale_columns(&(b.as_matrix() * &self.vectors), self.values.as_slice());
        (&as_ - bsd).norm() / as_.norm().max(f64::MIN_POSITIVE)
    }

    /// `‖Sᵀ B S − I‖_F`.
    pub fn b_orthogonality_error(&self, b: &SymMatrix) -> f64 {
        let n = self.vectors.ncols();
        let g = self.vectors.transpose() * b.as_matrix() * &self.vectors;
        (g - DMatrix::<f64>::identity(n, n)).norm()
    }
}

/// Solves the symmetric-definite generalized eigenproblem by whitening `b`,
/// diagonalizing `B^{-1/2} A B^{-1/2}`, and mapping the eigenvectors back.
pub fn gep_sym(a: &SymMatrix, b: &SymMatrix) -> Result<GepDecomp> {
    if a.dim() != b.dim() {
        return Err(RcaError::invalid(format!(
            "gep_sym: dimension mismatch {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let w = whitening_transform(b)?;
    let whitened = SymMatrix::symmetrize(w.map() * a.as_matrix() * w.map().transpose());
    let eig = sym_eig(&whitened)?;
    let mut vectors = w.map().transpose() * eig.vectors;
    canonicalize_signs(&mut vectors);
    Ok(GepDecomp {
        vectors,
        values: eig.values,
    })
}
