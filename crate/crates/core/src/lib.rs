//! Identification of linear time-invariant systems whose low-dimensional
//! latent state is observed through high-dimensional noisy measurements.
//!
//! The pipeline first estimates the observer column space from one
//! trajectory ([`subspace::col_approx`]), projects a second trajectory onto
//! it and hands the small system to an identification oracle
//! ([`hokalman::HoKalman`]). [`pipelines::meta_sysid`] does the same for a
//! family of systems that share an observer column space.

pub mod error;
pub mod experiment;
pub mod hokalman;
pub mod io;
pub mod linalg;
pub mod lti;
pub mod metrics;
pub mod pipelines;
pub mod rng;
pub mod subspace;

pub use error::{Result, SysIdError};
pub use hokalman::{
    build_hankel, estimate_markov, hankel_depth, ho_kalman, realize, HankelPair, HoKalman, IdOracle, MarkovEstimate,
    Realization, DEFAULT_DELTA,
};
pub use lti::{
    check_minimal, decay_diagnostics, simulate, simulate_with_inputs, Dataset, DecayDiagnostics, MinimalityReport,
    ObsNoise, SystemParams, Trajectory,
};
pub use metrics::{align_realization, cb_error, hard_instance_family, markov_error, ErrorReport};
pub use pipelines::{col_adapted_sysid, meta_sysid, LatentDims, PipelineReport};
pub use rng::{NoiseKind, StreamKey};
pub use subspace::{
    col_approx, col_approx_pooled, lift_observer, principal_angle_error, project_dataset, ColApproxResult,
    SubspaceBasis,
};
