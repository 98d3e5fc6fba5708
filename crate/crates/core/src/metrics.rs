//! Error measures against ground truth and the hard-instance family used for
//! lower-bound experiments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_mismatch, Result, SysIdError};
use crate::hokalman::Realization;
use crate::linalg;
use crate::lti::{observability_matrix, ObsNoise, SystemParams};
use crate::rng::{NoiseKind, StreamKey};
use crate::subspace::{principal_angle_error, SubspaceBasis};

/// Errors after aligning the estimate with a latent change of basis `S`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedErrors {
    /// The transform used. A least-squares heuristic; it coincides with the
    /// true similarity only when the estimate is an exact similarity copy.
    pub transform: DMatrix<f64>,
    /// `‖S⁻¹AS − Â‖`
    pub a_error: f64,
    /// `‖S⁻¹B − B̂‖`
    pub b_error: f64,
    /// `‖CS − Ĉ‖`
    pub c_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    /// `‖ĈÂ^iB̂ − CA^iB‖` for `i = 0..depth`.
    pub markov_errors: Vec<f64>,
    /// `markov_errors[0]`, i.e. `‖ĈB̂ − CB‖`.
    pub cb_error: f64,
    /// Principal-angle error of the estimated column space against `col(C)`.
    pub subspace_error: f64,
    pub aligned: Option<AlignedErrors>,
}

fn check_io_dims(est: &Realization, truth: &SystemParams) -> Result<()> {
    if est.obs_dim() != truth.obs_dim() || est.input_dim() != truth.input_dim() {
        return Err(dim_mismatch(
            "estimate vs truth",
            format!("n={}, m={}", truth.obs_dim(), truth.input_dim()),
            format!("n={}, m={}", est.obs_dim(), est.input_dim()),
        ));
    }
    Ok(())
}

/// Operator-norm errors of the first `depth` Markov parameters.
pub fn markov_error(est: &Realization, truth: &SystemParams, depth: usize) -> Result<Vec<f64>> {
    check_io_dims(est, truth)?;
    let g_hat = est.markov_parameters(depth);
    let g = truth.markov_parameters(depth);
    Ok(g_hat.iter().zip(&g).map(|(a, b)| linalg::op_norm(&(a - b))).collect())
}

/// `‖ĈB̂ − CB‖`.
pub fn cb_error(est: &Realization, truth: &SystemParams) -> Result<f64> {
    Ok(markov_error(est, truth, 1)?[0])
}

/// Full report. `basis` defaults to an orthonormal basis of `col(Ĉ)`.
pub fn error_report(
    est: &Realization,
    truth: &SystemParams,
    depth: usize,
    basis: Option<&SubspaceBasis>,
) -> Result<ErrorReport> {
    let markov_errors = markov_error(est, truth, depth.max(1))?;
    let truth_basis = SubspaceBasis::from_span(&truth.c)?;
    let subspace_error = match basis {
        Some(b) => principal_angle_error(b, &truth_basis)?,
        None => principal_angle_error(&SubspaceBasis::from_span(&est.c)?, &truth_basis)?,
    };
    Ok(ErrorReport {
        cb_error: markov_errors[0],
        markov_errors,
        subspace_error,
        aligned: None,
    })
}

/// Aligns `est` to `truth` through `S = O† Ô`, where `O` and `Ô` stack
/// `depth` observability blocks (`2r` is a good default).
pub fn align_realization(est: &Realization, truth: &SystemParams, depth: usize) -> Result<(DMatrix<f64>, ErrorReport)> {
    check_io_dims(est, truth)?;
    let r = truth.latent_dim();
    if est.latent_dim() != r {
        return Err(dim_mismatch("align_realization latent dimension", r, est.latent_dim()));
    }
    if depth == 0 {
        return Err(SysIdError::InvalidArgument("alignment depth must be >= 1".into()));
    }
    let obs = observability_matrix(&truth.a, &truth.c, depth);
    let obs_hat = observability_matrix(&est.a, &est.c, depth);
    let (u, s, v) = linalg::svd_sorted(&obs);
    let cutoff = s[0] * (obs.nrows().max(obs.ncols()) as f64) * 1e-12;
    if s.len() < r || s[r - 1] <= cutoff {
        return Err(SysIdError::NotObservable);
    }
    let inv_s = DVector::from_iterator(r, s[..r].iter().map(|x| 1.0 / x));
    let transform = &v * DMatrix::from_diagonal(&inv_s) * u.tr_mul(&obs_hat);
    let inv = transform
        .clone()
        .try_inverse()
        .ok_or_else(|| SysIdError::InvalidArgument("alignment transform is singular".into()))?;

    let aligned = AlignedErrors {
        a_error: linalg::op_norm(&(&inv * &truth.a * &transform - &est.a)),
        b_error: linalg::op_norm(&(&inv * &truth.b - &est.b)),
        c_error: linalg::op_norm(&(&truth.c * &transform - &est.c)),
        transform: transform.clone(),
    };
    let mut report = error_report(est, truth, depth, None)?;
    report.aligned = Some(aligned);
    Ok((transform, report))
}

/// Shared noise description for hard-instance members.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedNoise {
    pub sigma_w: DMatrix<f64>,
    pub obs_noise: ObsNoise,
    pub sigma_u: DMatrix<f64>,
}

pub const DEFAULT_HARD_FAMILY_BUDGET: usize = 1_000_000;

fn unit_ball_point<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    let mut v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = v.norm();
    if norm > 0.0 {
        v /= norm;
    }
    let radius = rng.random::<f64>().powf(1.0 / n as f64);
    v * radius
}

/// Packing points `p_i` in the unit ball with pairwise distance `≥ 1/2`,
/// found by rejection sampling.
pub fn packing_points(n: usize, max_members: usize, budget: usize, stream: &StreamKey) -> Vec<DVector<f64>> {
    let mut rng = stream.at(NoiseKind::Auxiliary, 0);
    let mut excluded = DVector::zeros(n);
    excluded[0] = -1.0;
    let mut points: Vec<DVector<f64>> = Vec::new();
    for _ in 0..budget {
        if points.len() >= max_members {
            break;
        }
        let p = unit_ball_point(&mut rng, n);
        if (&p - &excluded).norm() == 0.0 {
            continue;
        }
        if points.iter().all(|q| (&p - q).norm() >= 0.5) {
            points.push(p);
        }
    }
    points
}

/// Candidate systems `A_i = I/2`, `B_i = Σ_l E_ll`, `C_i = 4ε p_i e_1ᵀ + Σ_l E_ll`
/// whose first Markov parameters are pairwise at least `2ε` apart.
#[allow(clippy::too_many_arguments)]
pub fn hard_instance_family(
    n: usize,
    eps: f64,
    r: usize,
    m: usize,
    max_members: usize,
    budget: usize,
    noise: &SharedNoise,
    stream: &StreamKey,
) -> Result<Vec<SystemParams>> {
    if n < 2 {
        return Err(SysIdError::InvalidArgument(format!("hard family needs n >= 2, got {n}")));
    }
    if r == 0 || m < r || r > n {
        return Err(SysIdError::InvalidArgument(format!("hard family needs 1 <= r <= min(m, n), got r={r}, m={m}, n={n}")));
    }
    if !(eps > 0.0 && eps < 0.1) {
        return Err(SysIdError::InvalidArgument(format!("eps {eps} outside (0, 0.1)")));
    }
    let points = packing_points(n, max_members, budget, stream);
    if points.len() < 2 {
        return Err(SysIdError::Generation(format!(
            "only {} packing points found within {budget} attempts",
            points.len()
        )));
    }
    let a = DMatrix::identity(r, r) * 0.5;
    let b = DMatrix::identity(r, m);
    points
        .iter()
        .map(|p| {
            let mut c = DMatrix::identity(n, r);
            let mut first = c.column_mut(0);
            first.axpy(4.0 * eps, p, 1.0);
            SystemParams::new(
                a.clone(),
                b.clone(),
                c,
                noise.sigma_w.clone(),
                noise.obs_noise.clone(),
                noise.sigma_u.clone(),
            )
        })
        .collect()
}

/// Smallest `‖C_iB_i − C_jB_j‖` over all pairs.
pub fn min_pairwise_cb_distance(systems: &[SystemParams]) -> f64 {
    let cbs: Vec<DMatrix<f64>> = systems.iter().map(|s| &s.c * &s.b).collect();
    let mut best = f64::INFINITY;
    for i in 0..cbs.len() {
        for j in (i + 1)..cbs.len() {
            best = best.min(linalg::op_norm(&(&cbs[i] - &cbs[j])));
        }
    }
    best
}
