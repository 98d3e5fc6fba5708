//! Observer column-space estimation from the unnormalized observation covariance.

use nalgebra::DMatrix;

use crate::error::{dim_mismatch, Result, SysIdError};
use crate::linalg;
use crate::lti::{Dataset, Trajectory};

/// Orthonormality tolerance for basis columns.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// `n × q` matrix with orthonormal columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceBasis {
    matrix: DMatrix<f64>,
}

impl SubspaceBasis {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (n, q) = matrix.shape();
        if q == 0 || q > n {
            return Err(SysIdError::InvalidArgument(format!("basis rank {q} outside 1..={n}")));
        }
        let defect = (matrix.tr_mul(&matrix) - DMatrix::<f64>::identity(q, q)).amax();
        if defect > ORTHONORMAL_TOL {
            return Err(SysIdError::InvalidArgument(format!(
                "basis columns are not orthonormal (defect {defect:e})"
            )));
        }
        Ok(Self { matrix })
    }

    /// Orthonormal basis of `col(m)` for a full-column-rank `m`.
    pub fn from_span(m: &DMatrix<f64>) -> Result<Self> {
        if linalg::numerical_rank(m) != m.ncols() {
            return Err(SysIdError::InvalidArgument("spanning set is rank deficient".into()));
        }
        Self::new(linalg::orthonormalize_columns(m))
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: DMatrix::identity(n, n),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn ambient_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.matrix.ncols()
    }

    /// Right-multiplies by a `q × q` orthogonal matrix (same subspace).
    pub fn rotated(&self, q: &DMatrix<f64>) -> Result<Self> {
        Self::new(&self.matrix * q)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColApproxResult {
    pub basis: SubspaceBasis,
    pub estimated_rank: usize,
    /// Eigenvalues of `Σ_y`, descending.
    pub eigenvalues: Vec<f64>,
    /// `eigenvalues[i] - eigenvalues[i + 1]`.
    pub gaps: Vec<f64>,
    /// `T^{3/4}`.
    pub threshold: f64,
}

/// `Σ_t y_t y_tᵀ` over the columns of `observations`.
pub fn observation_gram(observations: &DMatrix<f64>) -> DMatrix<f64> {
    observations * observations.transpose()
}

/// Column-space estimate from a precomputed gram `Σ_y` and the horizon `T`
/// that sets the eigengap threshold `T^{3/4}`.
pub fn col_approx_from_gram(gram: &DMatrix<f64>, horizon: usize, rank_override: Option<usize>) -> Result<ColApproxResult> {
    let n = gram.nrows();
    if !gram.is_square() || n == 0 {
        return Err(dim_mismatch("observation gram", "non-empty square", format!("{}x{}", gram.nrows(), gram.ncols())));
    }
    if gram.iter().any(|v| !v.is_finite()) {
        return Err(SysIdError::InvalidArgument("observations contain non-finite values".into()));
    }
    let (eigenvalues, vectors) = linalg::symmetric_eigen_desc(gram);
    let gaps: Vec<f64> = eigenvalues.windows(2).map(|w| w[0] - w[1]).collect();
    let threshold = (horizon as f64).powf(0.75);
    let estimated_rank = match rank_override {
        Some(q) if q == 0 || q > n => {
            return Err(SysIdError::InvalidArgument(format!("rank override {q} outside 1..={n}")));
        }
        Some(q) => q,
        None => match gaps.iter().rposition(|&g| g > threshold) {
            Some(i) => i + 1,
            None => {
                return Err(SysIdError::RankUndetected {
                    threshold,
                    largest_gap: gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    gaps,
                })
            }
        },
    };
    let basis = SubspaceBasis::new(vectors.columns(0, estimated_rank).into_owned())?;
    Ok(ColApproxResult {
        basis,
        estimated_rank,
        eigenvalues,
        gaps,
        threshold,
    })
}

/// Estimates the observer column space from `n × (T+1)` observations.
pub fn col_approx(observations: &DMatrix<f64>, rank_override: Option<usize>) -> Result<ColApproxResult> {
    if observations.ncols() < 2 {
        return Err(SysIdError::InvalidArgument("col_approx needs at least 2 observations".into()));
    }
    col_approx_from_gram(&observation_gram(observations), observations.ncols() - 1, rank_override)
}

/// Pooled estimate over several observation sets; the threshold uses the
/// summed horizon `Σ_k T_k`.
pub fn col_approx_pooled(sets: &[&DMatrix<f64>], rank_override: Option<usize>) -> Result<ColApproxResult> {
    let first = sets
        .first()
        .ok_or_else(|| SysIdError::InvalidArgument("pooled col_approx needs at least one set".into()))?;
    let n = first.nrows();
    let mut gram = DMatrix::zeros(n, n);
    let mut horizon = 0usize;
    for set in sets {
        if set.nrows() != n {
            return Err(dim_mismatch("pooled observations", n, set.nrows()));
        }
        if set.ncols() < 2 {
            return Err(SysIdError::InvalidArgument("each observation set needs at least 2 observations".into()));
        }
        gram += observation_gram(set);
        horizon += set.ncols() - 1;
    }
    col_approx_from_gram(&gram, horizon, rank_override)
}

/// `‖(Φ̂^⊥)ᵀ Φ‖`: largest singular value of `(I − Φ̂Φ̂ᵀ)Φ`.
pub fn principal_angle_error(estimate: &SubspaceBasis, truth: &SubspaceBasis) -> Result<f64> {
    if estimate.ambient_dim() != truth.ambient_dim() {
        return Err(dim_mismatch("principal_angle_error", estimate.ambient_dim(), truth.ambient_dim()));
    }
    let phi_hat = estimate.matrix();
    let phi = truth.matrix();
    let residual = phi - phi_hat * phi_hat.tr_mul(phi);
    Ok(linalg::op_norm(&residual).clamp(0.0, 1.0))
}

pub fn project_trajectory(trajectory: &Trajectory, basis: &SubspaceBasis) -> Result<Trajectory> {
    if trajectory.obs_dim() != basis.ambient_dim() {
        return Err(dim_mismatch("project", basis.ambient_dim(), trajectory.obs_dim()));
    }
    trajectory.with_observations(basis.matrix().tr_mul(trajectory.observations()))
}

/// Replaces every observation `y` by `Φᵀ y`.
pub fn project_dataset(dataset: &Dataset, basis: &SubspaceBasis) -> Result<Dataset> {
    let projected = dataset
        .trajectories()
        .iter()
        .map(|t| project_trajectory(t, basis))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(projected)
}

/// `Φ̂ C̃`.
pub fn lift_observer(basis: &SubspaceBasis, low_c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if low_c.nrows() != basis.rank() {
        return Err(dim_mismatch("lift_observer", basis.rank(), low_c.nrows()));
    }
    Ok(basis.matrix() * low_c)
}
