//! Latent linear dynamics: system definitions, simulation and ground-truth quantities.
//!
//! The model is
//!
//! ```text
//! x_{t+1} = A x_t + B u_t + w_t,   w_t ~ N(0, Σ_w)
//! y_t     = C x_t + η_t,           η_t ~ N(0, Σ_η)
//! ```
//!
//! with `x_0 = 0`, inputs `u_t ~ N(0, Σ_u)` for `t = 0..T-1` and observations for
//! `t = 0..T`.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_mismatch, Result, SysIdError};
use crate::linalg::{self, PsdSqrt, PSD_TOL};
use crate::rng::{NoiseKind, StreamKey};

/// Observation noise covariance.
#[derive(Clone, Debug, PartialEq)]
pub enum ObsNoise {
    /// `σ² I` with the given variance.
    Isotropic(f64),
    Full(DMatrix<f64>),
}

impl ObsNoise {
    pub fn covariance(&self, n: usize) -> DMatrix<f64> {
        match self {
            ObsNoise::Isotropic(v) => DMatrix::identity(n, n) * *v,
            ObsNoise::Full(m) => m.clone(),
        }
    }
}

/// One LTI system `(r, n, m, A, B, C, Σ_w, Σ_η, Σ_u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
    pub obs_noise: ObsNoise,
    pub sigma_u: DMatrix<f64>,
}

impl SystemParams {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        sigma_w: DMatrix<f64>,
        obs_noise: ObsNoise,
        sigma_u: DMatrix<f64>,
    ) -> Result<Self> {
        let sys = Self {
            a,
            b,
            c,
            sigma_w,
            obs_noise,
            sigma_u,
        };
        sys.validate()?;
        Ok(sys)
    }

    /// Noiseless system with identity input covariance.
    pub fn noiseless(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let (r, m) = (a.nrows(), b.ncols());
        Self::new(
            a,
            b,
            c,
            DMatrix::zeros(r, r),
            ObsNoise::Isotropic(0.0),
            DMatrix::identity(m, m),
        )
    }

    pub fn latent_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.a.nrows();
        let (n, m) = (self.c.nrows(), self.b.ncols());
        if r == 0 || n == 0 || m == 0 {
            return Err(SysIdError::InvalidArgument("system dimensions must be positive".into()));
        }
        let shape = |x: &DMatrix<f64>| format!("{}x{}", x.nrows(), x.ncols());
        if self.a.ncols() != r {
            return Err(dim_mismatch("A", format!("{r}x{r}"), shape(&self.a)));
        }
        if self.b.nrows() != r {
            return Err(dim_mismatch("B", format!("{r}x{m}"), shape(&self.b)));
        }
        if self.c.ncols() != r {
            return Err(dim_mismatch("C", format!("{n}x{r}"), shape(&self.c)));
        }
        if self.sigma_w.shape() != (r, r) {
            return Err(dim_mismatch("sigma_w", format!("{r}x{r}"), shape(&self.sigma_w)));
        }
        if self.sigma_u.shape() != (m, m) {
            return Err(dim_mismatch("sigma_u", format!("{m}x{m}"), shape(&self.sigma_u)));
        }
        for (name, mat) in [("A", &self.a), ("B", &self.b), ("C", &self.c)] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(SysIdError::InvalidArgument(format!("{name} has non-finite entries")));
            }
        }
        check_psd(&self.sigma_w, "sigma_w")?;
        match &self.obs_noise {
            ObsNoise::Isotropic(v) => {
                if !(v.is_finite() && *v >= 0.0) {
                    return Err(SysIdError::NotPsd {
                        name: "obs_noise",
                        min_eigenvalue: *v,
                    });
                }
            }
            ObsNoise::Full(s) => {
                if s.shape() != (n, n) {
                    return Err(dim_mismatch("obs_noise", format!("{n}x{n}"), shape(s)));
                }
                check_psd(s, "obs_noise")?;
            }
        }
        linalg::check_symmetric(&self.sigma_u, "sigma_u")?;
        let min_u = min_eigenvalue(&self.sigma_u);
        if !(min_u > 0.0) {
            return Err(SysIdError::NotPd {
                name: "sigma_u",
                min_eigenvalue: min_u,
            });
        }
        Ok(())
    }

    /// `C A^i B` for `i = 0..count`.
    pub fn markov_parameters(&self, count: usize) -> Vec<DMatrix<f64>> {
        markov_blocks(&self.a, &self.b, &self.c, count)
    }

    /// `(S⁻¹AS, S⁻¹B, CS)` with the same noise description.
    pub fn transformed(&self, s: &DMatrix<f64>) -> Result<Self> {
        let inv = s
            .clone()
            .try_inverse()
            .ok_or_else(|| SysIdError::InvalidArgument("similarity transform is singular".into()))?;
        let mut out = self.clone();
        out.a = &inv * &self.a * s;
        out.b = &inv * &self.b;
        out.c = &self.c * s;
        out.sigma_w = &inv * &self.sigma_w * inv.transpose();
        out.sigma_w = (&out.sigma_w + out.sigma_w.transpose()) * 0.5;
        Ok(out)
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    linalg::symmetric_eigen_desc(m).0.last().copied().unwrap_or(0.0)
}

fn check_psd(m: &DMatrix<f64>, name: &'static str) -> Result<()> {
    linalg::check_symmetric(m, name)?;
    let min = min_eigenvalue(m);
    if min < -PSD_TOL {
        return Err(SysIdError::NotPsd { name, min_eigenvalue: min });
    }
    Ok(())
}

/// `C A^i B` for `i = 0..count`, by repeated application of `A` to the running product.
pub fn markov_blocks(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, count: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut running = b.clone();
    for i in 0..count {
        if i > 0 {
            running = a * &running;
        }
        out.push(c * &running);
    }
    out
}

/// One rollout: `T` inputs and `T + 1` observations, stored column-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    inputs: DMatrix<f64>,
    observations: DMatrix<f64>,
    latents: Option<DMatrix<f64>>,
}

impl Trajectory {
    /// `inputs` is `m × T`, `observations` is `n × (T+1)`, `latents` is `r × (T+1)`.
    pub fn new(inputs: DMatrix<f64>, observations: DMatrix<f64>, latents: Option<DMatrix<f64>>) -> Result<Self> {
        if inputs.ncols() == 0 {
            return Err(SysIdError::InvalidArgument("trajectory needs at least one input".into()));
        }
        if observations.ncols() != inputs.ncols() + 1 {
            return Err(dim_mismatch(
                "trajectory observations",
                format!("{} observations", inputs.ncols() + 1),
                observations.ncols(),
            ));
        }
        if let Some(x) = &latents {
            if x.ncols() != observations.ncols() {
                return Err(dim_mismatch("trajectory latents", observations.ncols(), x.ncols()));
            }
        }
        Ok(Self {
            inputs,
            observations,
            latents,
        })
    }

    /// Number of inputs `T`.
    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn obs_dim(&self) -> usize {
        self.observations.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn observations(&self) -> &DMatrix<f64> {
        &self.observations
    }

    pub fn latents(&self) -> Option<&DMatrix<f64>> {
        self.latents.as_ref()
    }

    /// First `len` steps (`len` inputs, `len + 1` observations).
    pub fn prefix(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len() {
            return Err(SysIdError::InvalidArgument(format!(
                "prefix length {len} outside 1..={}",
                self.len()
            )));
        }
        Ok(Self {
            inputs: self.inputs.columns(0, len).into_owned(),
            observations: self.observations.columns(0, len + 1).into_owned(),
            latents: self.latents.as_ref().map(|x| x.columns(0, len + 1).into_owned()),
        })
    }

    /// Same inputs, observations replaced (e.g. by a projection).
    pub fn with_observations(&self, observations: DMatrix<f64>) -> Result<Self> {
        Self::new(self.inputs.clone(), observations, self.latents.clone())
    }

    pub fn without_latents(mut self) -> Self {
        self.latents = None;
        self
    }

    /// Joins two trajectories into one of length `T₁ + T₂`: inputs are
    /// concatenated and the last observation of `self` is dropped so the
    /// observation count stays one more than the input count.
    pub fn concatenate(&self, other: &Self) -> Result<Self> {
        if self.obs_dim() != other.obs_dim() || self.input_dim() != other.input_dim() {
            return Err(dim_mismatch(
                "concatenate",
                format!("n={}, m={}", self.obs_dim(), self.input_dim()),
                format!("n={}, m={}", other.obs_dim(), other.input_dim()),
            ));
        }
        let (t1, t2) = (self.len(), other.len());
        let mut u = DMatrix::zeros(self.input_dim(), t1 + t2);
        u.columns_mut(0, t1).copy_from(&self.inputs);
        u.columns_mut(t1, t2).copy_from(&other.inputs);
        let mut y = DMatrix::zeros(self.obs_dim(), t1 + t2 + 1);
        y.columns_mut(0, t1).copy_from(&self.observations.columns(0, t1));
        y.columns_mut(t1, t2 + 1).copy_from(&other.observations);
        Self::new(u, y, None)
    }
}

/// Non-empty set of trajectories sharing `(n, m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| SysIdError::InvalidArgument("dataset must contain a trajectory".into()))?;
        let (n, m) = (first.obs_dim(), first.input_dim());
        for t in &trajectories {
            if t.obs_dim() != n || t.input_dim() != m {
                return Err(dim_mismatch(
                    "dataset",
                    format!("n={n}, m={m}"),
                    format!("n={}, m={}", t.obs_dim(), t.input_dim()),
                ));
            }
        }
        Ok(Self { trajectories })
    }

    pub fn single(trajectory: Trajectory) -> Self {
        Self {
            trajectories: vec![trajectory],
        }
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn total_length(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn obs_dim(&self) -> usize {
        self.trajectories[0].obs_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.trajectories[0].input_dim()
    }
}

/// Rolls out the system for `len` steps with inputs drawn from `N(0, Σ_u)`.
pub fn simulate(system: &SystemParams, len: usize, stream: &StreamKey, keep_latents: bool) -> Result<Trajectory> {
    system.validate()?;
    if len == 0 {
        return Err(SysIdError::InvalidArgument("trajectory length must be >= 1".into()));
    }
    let m = system.input_dim();
    let input_root = PsdSqrt::new(&system.sigma_u, "sigma_u")?;
    let mut inputs = DMatrix::zeros(m, len);
    let mut z = DVector::zeros(m);
    for t in 0..len {
        stream.fill_normal(NoiseKind::Input, t as u64, z.as_mut_slice());
        inputs.set_column(t, &input_root.apply(&z));
    }
    simulate_validated(system, inputs, stream, keep_latents)
}

/// Rolls out the system driven by the given `m × T` inputs; only the process
/// and observation noise are drawn from `stream`.
pub fn simulate_with_inputs(
    system: &SystemParams,
    inputs: DMatrix<f64>,
    stream: &StreamKey,
    keep_latents: bool,
) -> Result<Trajectory> {
    system.validate()?;
    if inputs.nrows() != system.input_dim() {
        return Err(dim_mismatch("inputs", system.input_dim(), inputs.nrows()));
    }
    simulate_validated(system, inputs, stream, keep_latents)
}

fn simulate_validated(
    system: &SystemParams,
    inputs: DMatrix<f64>,
    stream: &StreamKey,
    keep_latents: bool,
) -> Result<Trajectory> {
    let (r, n) = (system.latent_dim(), system.obs_dim());
    let len = inputs.ncols();
    if len == 0 {
        return Err(SysIdError::InvalidArgument("trajectory length must be >= 1".into()));
    }
    let process_root = PsdSqrt::new(&system.sigma_w, "sigma_w")?;
    let obs_root = match &system.obs_noise {
        ObsNoise::Isotropic(v) => PsdSqrt::isotropic(n, v.sqrt()),
        ObsNoise::Full(s) => PsdSqrt::new(s, "obs_noise")?,
    };
    let mut latents = DMatrix::zeros(r, len + 1);
    let mut observations = DMatrix::zeros(n, len + 1);
    let mut x = DVector::zeros(r);
    let mut zw = DVector::zeros(r);
    let mut zn = DVector::zeros(n);
    for t in 0..=len {
        let mut y = &system.c * &x;
        if !obs_root.is_zero() {
            stream.fill_normal(NoiseKind::Observation, t as u64, zn.as_mut_slice());
            y += obs_root.apply(&zn);
        }
        observations.set_column(t, &y);
        latents.set_column(t, &x);
        if t == len {
            break;
        }
        let mut next = &system.a * &x + &system.b * inputs.column(t);
        if !process_root.is_zero() {
            stream.fill_normal(NoiseKind::Process, t as u64, zw.as_mut_slice());
            next += process_root.apply(&zw);
        }
        x = next;
    }
    Trajectory::new(inputs, observations, keep_latents.then_some(latents))
}

/// Controllability / observability summary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinimalityReport {
    pub controllable: bool,
    pub observable: bool,
    pub rank_controllability: usize,
    pub rank_observability: usize,
}

impl MinimalityReport {
    pub fn is_minimal(&self) -> bool {
        self.controllable && self.observable
    }
}

/// `[C; CA; …; CA^{depth-1}]`.
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>, depth: usize) -> DMatrix<f64> {
    let (n, r) = (c.nrows(), c.ncols());
    let mut out = DMatrix::zeros(n * depth, r);
    let mut block = c.clone();
    for i in 0..depth {
        if i > 0 {
            block = &block * a;
        }
        out.view_mut((i * n, 0), (n, r)).copy_from(&block);
    }
    out
}

/// `[B, AB, …, A^{depth-1}B]`.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, depth: usize) -> DMatrix<f64> {
    let (r, m) = (b.nrows(), b.ncols());
    let mut out = DMatrix::zeros(r, m * depth);
    let mut block = b.clone();
    for i in 0..depth {
        if i > 0 {
            block = a * &block;
        }
        out.view_mut((0, i * m), (r, m)).copy_from(&block);
    }
    out
}

pub fn check_minimal(system: &SystemParams) -> MinimalityReport {
    let r = system.latent_dim();
    let rank_controllability = linalg::numerical_rank(&controllability_matrix(&system.a, &system.b, r));
    let rank_observability = linalg::numerical_rank(&observability_matrix(&system.a, &system.c, r));
    MinimalityReport {
        controllable: rank_controllability == r,
        observable: rank_observability == r,
        rank_controllability,
        rank_observability,
    }
}

/// Constants `(ψ_A, ρ_A)` with `‖A^i‖ ≤ ψ_A ρ_A^{i-1}` on `i = 1..=i_max`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayDiagnostics {
    pub psi_a: f64,
    pub rho_a: f64,
    pub spectral_radius: f64,
}

const DECAY_CLAMP: f64 = 1e-9;

pub fn decay_diagnostics(a: &DMatrix<f64>, i_max: usize) -> Result<DecayDiagnostics> {
    if !a.is_square() || a.is_empty() {
        return Err(dim_mismatch("decay_diagnostics", "non-empty square matrix", format!("{}x{}", a.nrows(), a.ncols())));
    }
    if i_max == 0 {
        return Err(SysIdError::InvalidArgument("i_max must be >= 1".into()));
    }
    let spectral_radius = linalg::spectral_radius(a);
    if spectral_radius >= 1.0 {
        return Err(SysIdError::Unstable { spectral_radius });
    }
    let mut norms = Vec::with_capacity(i_max);
    let mut power = a.clone();
    for i in 1..=i_max {
        if i > 1 {
            power = &power * a;
        }
        norms.push(linalg::op_norm(&power));
    }
    let start = i_max.div_ceil(2).max(1);
    let rho_a = (start..=i_max)
        .map(|i| norms[i - 1].powf(1.0 / i as f64))
        .fold(0.0, f64::max)
        .clamp(DECAY_CLAMP, 1.0 - DECAY_CLAMP);
    let psi_a = norms
        .iter()
        .enumerate()
        .map(|(k, norm)| norm / rho_a.powi(k as i32))
        .fold(1.0, f64::max);
    Ok(DecayDiagnostics {
        psi_a,
        rho_a,
        spectral_radius,
    })
}
