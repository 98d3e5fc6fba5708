//! Column-space-projected identification for one system and, with
//! leave-one-out pooling, for a family of systems sharing an observer
//! column space.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{dim_mismatch, Result, SysIdError};
use crate::hokalman::{HoKalman, IdOracle, Realization};
use crate::lti::Trajectory;
use crate::subspace::{self, SubspaceBasis};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub col_approx: Duration,
    pub projection: Duration,
    pub oracle: Duration,
    pub lift: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineReport {
    /// `(Â, B̂, Ĉ)` with `Ĉ = Φ̂ C̃` in the original observation space.
    pub realization: Realization,
    /// Observer `C̃` identified in the projected coordinates.
    pub low_c: DMatrix<f64>,
    pub basis: SubspaceBasis,
    pub estimated_rank: usize,
    pub markov_residual: f64,
    pub timings: StageTimings,
}

/// Latent dimension for each system of a meta set.
#[derive(Clone, Debug, PartialEq)]
pub enum LatentDims {
    Shared(usize),
    PerSystem(Vec<usize>),
}

impl LatentDims {
    fn get(&self, k: usize) -> usize {
        match self {
            LatentDims::Shared(r) => *r,
            LatentDims::PerSystem(v) => v[k],
        }
    }
}

impl From<usize> for LatentDims {
    fn from(r: usize) -> Self {
        LatentDims::Shared(r)
    }
}

fn identify_projected(
    oracle: &dyn IdOracle,
    basis: SubspaceBasis,
    estimated_rank: usize,
    trajectory: &Trajectory,
    r: usize,
    mut timings: StageTimings,
) -> Result<PipelineReport> {
    let clock = Instant::now();
    let projected = subspace::project_trajectory(trajectory, &basis)?;
    timings.projection = clock.elapsed();

    let clock = Instant::now();
    let out = oracle.identify(&projected, r)?;
    timings.oracle = clock.elapsed();

    let clock = Instant::now();
    let low = out.realization;
    let c = subspace::lift_observer(&basis, &low.c)?;
    let realization = Realization::new(low.a, low.b, c)?;
    timings.lift = clock.elapsed();

    Ok(PipelineReport {
        realization,
        low_c: low.c,
        basis,
        estimated_rank,
        markov_residual: out.markov_residual,
        timings,
    })
}

/// Two-trajectory identification: the column space comes from the
/// observations of `d1` only, the low-dimensional system from the projection
/// of `d2`.
pub fn col_adapted_sysid(
    d1: &Trajectory,
    d2: &Trajectory,
    r: usize,
    delta: f64,
    rank_override: Option<usize>,
) -> Result<PipelineReport> {
    col_adapted_sysid_with(&HoKalman { delta }, d1, d2, r, rank_override)
}

pub fn col_adapted_sysid_with(
    oracle: &dyn IdOracle,
    d1: &Trajectory,
    d2: &Trajectory,
    r: usize,
    rank_override: Option<usize>,
) -> Result<PipelineReport> {
    if d1.obs_dim() != d2.obs_dim() || d1.input_dim() != d2.input_dim() {
        return Err(dim_mismatch(
            "col_adapted_sysid",
            format!("n={}, m={}", d1.obs_dim(), d1.input_dim()),
            format!("n={}, m={}", d2.obs_dim(), d2.input_dim()),
        ));
    }
    let clock = Instant::now();
    let col = subspace::col_approx(d1.observations(), rank_override)?;
    let timings = StageTimings {
        col_approx: clock.elapsed(),
        ..Default::default()
    };
    identify_projected(oracle, col.basis, col.estimated_rank, d2, r, timings)
}

/// Meta identification over `K ≥ 2` trajectories. Entry `k` is identified from
/// trajectory `k` projected onto the column space pooled from every other
/// trajectory. Per-system failures are returned in their slot.
pub fn meta_sysid(
    datasets: &[Trajectory],
    latent: impl Into<LatentDims>,
    delta: f64,
    rank_override: Option<usize>,
) -> Result<Vec<Result<PipelineReport>>> {
    meta_sysid_with(&HoKalman { delta }, datasets, latent.into(), rank_override)
}

pub fn meta_sysid_with(
    oracle: &dyn IdOracle,
    datasets: &[Trajectory],
    latent: LatentDims,
    rank_override: Option<usize>,
) -> Result<Vec<Result<PipelineReport>>> {
    let k_total = datasets.len();
    if k_total < 2 {
        return Err(SysIdError::InvalidArgument(format!(
            "meta identification needs at least 2 datasets, got {k_total}"
        )));
    }
    if let LatentDims::PerSystem(v) = &latent {
        if v.len() != k_total {
            return Err(dim_mismatch("per-system latent dimensions", k_total, v.len()));
        }
    }
    let n = datasets[0].obs_dim();
    if let Some(bad) = datasets.iter().find(|d| d.obs_dim() != n) {
        return Err(dim_mismatch("meta datasets", n, bad.obs_dim()));
    }

    let grams: Vec<DMatrix<f64>> = datasets
        .par_iter()
        .map(|d| subspace::observation_gram(d.observations()))
        .collect();

    let reports = (0..k_total)
        .into_par_iter()
        .map(|k| {
            let clock = Instant::now();
            // Sum of the other grams, in index order.
            let mut pooled: Option<DMatrix<f64>> = None;
            let mut horizon = 0usize;
            for (j, g) in grams.iter().enumerate() {
                if j == k {
                    continue;
                }
                horizon += datasets[j].len();
                match pooled.as_mut() {
                    Some(acc) => *acc += g,
                    None => pooled = Some(g.clone()),
                }
            }
            let pooled = pooled.expect("K >= 2");
            let col = subspace::col_approx_from_gram(&pooled, horizon, rank_override)?;
            let timings = StageTimings {
                col_approx: clock.elapsed(),
                ..Default::default()
            };
            identify_projected(oracle, col.basis, col.estimated_rank, &datasets[k], latent.get(k), timings)
        })
        .collect();
    Ok(reports)
}
