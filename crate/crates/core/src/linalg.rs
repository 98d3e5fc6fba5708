//! Dense linear-algebra helpers shared by all stages.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SysIdError};

/// Tolerance for symmetry and semi-definiteness checks.
pub const PSD_TOL: f64 = 1e-10;

/// Flip the sign of column `j` of `m` so that its largest-magnitude entry is positive.
/// Returns the sign applied.
pub(crate) fn fix_column_sign(m: &mut DMatrix<f64>, j: usize) -> f64 {
    let col = m.column(j);
    let mut best = 0usize;
    let mut best_abs = -1.0;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > best_abs {
            best_abs = v.abs();
            best = i;
        }
    }
    if col[best] < 0.0 {
        m.column_mut(j).neg_mut();
        -1.0
    } else {
        1.0
    }
}

/// Full symmetric eigendecomposition, eigenvalues descending, eigenvector signs
/// normalized so each column's largest-magnitude entry is positive.
pub fn symmetric_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
        fix_column_sign(&mut vectors, dst);
    }
    (values, vectors)
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Thin SVD with singular values sorted descending and a deterministic sign
/// convention on the left singular vectors. Returns `(U, s, V)` with `M = U diag(s) Vᵀ`.
///
/// Computed with faer: nalgebra's bidiagonal SVD returns inaccurate factors
/// for some rank-deficient matrices (exact Hankel matrices among them).
pub fn svd_sorted(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return (DMatrix::zeros(m.nrows(), 0), Vec::new(), DMatrix::zeros(m.ncols(), 0));
    }
    let svd = to_faer(m).thin_svd().expect("SVD iteration converges on finite input");
    let u = from_faer(svd.U());
    let v = from_faer(svd.V());
    let values: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut us = DMatrix::zeros(m.nrows(), k);
    let mut vs = DMatrix::zeros(m.ncols(), k);
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        us.set_column(dst, &u.column(src));
        vs.set_column(dst, &v.column(src));
        s.push(values[src]);
        if fix_column_sign(&mut us, dst) < 0.0 {
            vs.column_mut(dst).neg_mut();
        }
    }
    (us, s, vs)
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s = to_faer(m).singular_values().expect("SVD iteration converges on finite input");
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Spectral (operator 2-) norm.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.ncols() == 1 || m.nrows() == 1 {
        return m.norm();
    }
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Rank with relative cutoff `sigma_max * max(rows, cols) * 1e-12`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let s = singular_values(m);
    let Some(&top) = s.first() else { return 0 };
    let cutoff = top * (m.nrows().max(m.ncols()) as f64) * 1e-12;
    s.iter().filter(|&&v| v > cutoff && v > 0.0).count()
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Orthonormal basis of the column space of a full-column-rank matrix
/// (thin Householder QR, columns signed so that `R` has a positive diagonal).
pub fn orthonormalize_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols().min(r.nrows()) {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>, name: &'static str) -> Result<()> {
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > PSD_TOL * scale {
        return Err(SysIdError::NotSymmetric { name });
    }
    Ok(())
}

/// Symmetric square root `Σ^{1/2}` of a PSD matrix. General matrices are kept
/// in factored form `V diag(s) Vᵀ` over the eigenvectors whose eigenvalues
/// survive the relative clamp `λ > 1e-12 λ_max`.
#[derive(Clone, Debug)]
pub struct PsdSqrt {
    dim: usize,
    root: Root,
}

#[derive(Clone, Debug)]
enum Root {
    Zero,
    Scaled(f64),
    Factored {
        vectors: DMatrix<f64>,
        sqrt_values: DVector<f64>,
    },
}

impl PsdSqrt {
    pub fn new(m: &DMatrix<f64>, name: &'static str) -> Result<Self> {
        if !m.is_square() {
            return Err(crate::error::dim_mismatch(name, "square", format!("{}x{}", m.nrows(), m.ncols())));
        }
        check_symmetric(m, name)?;
        let dim = m.nrows();
        let (values, vectors) = symmetric_eigen_desc(m);
        let min = values.last().copied().unwrap_or(0.0);
        if min < -PSD_TOL {
            return Err(SysIdError::NotPsd { name, min_eigenvalue: min });
        }
        let top = values.first().copied().unwrap_or(0.0).max(0.0);
        let keep: Vec<usize> = (0..dim).filter(|&i| values[i] > 1e-12 * top && values[i] > 0.0).collect();
        if keep.is_empty() {
            return Ok(Self { dim, root: Root::Zero });
        }
        let kept = DMatrix::from_fn(dim, keep.len(), |i, j| vectors[(i, keep[j])]);
        let sqrt_values = DVector::from_iterator(keep.len(), keep.iter().map(|&i| values[i].sqrt()));
        Ok(Self {
            dim,
            root: Root::Factored {
                vectors: kept,
                sqrt_values,
            },
        })
    }

    /// `σ I` for a scalar standard deviation `σ ≥ 0`.
    pub fn isotropic(dim: usize, std: f64) -> Self {
        let root = if std == 0.0 { Root::Zero } else { Root::Scaled(std) };
        Self { dim, root }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.root, Root::Zero)
    }

    /// Returns `Σ^{1/2} z`.
    pub fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.root {
            Root::Zero => DVector::zeros(self.dim),
            Root::Scaled(s) => z * *s,
            Root::Factored { vectors, sqrt_values } => {
                let mut coeff = vectors.tr_mul(z);
                coeff.component_mul_assign(sqrt_values);
                vectors * coeff
            }
        }
    }

    /// Dense `Σ^{1/2}`.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        match &self.root {
            Root::Zero => DMatrix::zeros(self.dim, self.dim),
            Root::Scaled(s) => DMatrix::identity(self.dim, self.dim) * *s,
            Root::Factored { vectors, sqrt_values } => {
                vectors * DMatrix::from_diagonal(sqrt_values) * vectors.transpose()
            }
        }
    }
}
