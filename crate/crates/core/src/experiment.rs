//! Declarative simulation sweeps and their CSV results.
//!
//! Three built-in protocols mirror the standard scalar study (`r = m = 1`,
//! `A = 0.9`, `B = 1`, `Σ_w = 0`, `σ_η = 1`, `Σ_u = 0.1`, random orthonormal
//! `C`):
//!
//! * `fig1-left`: column-space error of `col_approx` along one trajectory, with
//!   isotropic noise and with noise covariance `Φ_C Φ_Cᵀ`.
//! * `fig1-center`: `‖ĈB̂ − CB‖` of the two-trajectory pipeline against
//!   Ho-Kalman on the concatenated data.
//! * `fig1-right`: `‖ĈB̂ − CB‖` for system 1 of a meta set of
//!   `⌊n / k_divisor⌋ + 1` systems sharing `C`, against Ho-Kalman on system 1 alone.
//!
//! `custom` runs the `fig1-center` comparison for an arbitrary template and grid.
//!
//! Every `(cell, seed)` pair draws from its own stream, derived from
//! `(master_seed, cell index, seed)`, so results do not depend on scheduling.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SysIdError};
use crate::hokalman::{ho_kalman, DEFAULT_DELTA};
use crate::io::{format_f64, rows_to_matrix, write_atomic, Rows};
use crate::linalg;
use crate::lti::{simulate, ObsNoise, SystemParams, Trajectory};
use crate::metrics::cb_error;
use crate::pipelines::{col_adapted_sysid, meta_sysid};
use crate::rng::{NoiseKind, StreamKey};
use crate::subspace::{col_approx_from_gram, observation_gram, principal_angle_error, SubspaceBasis};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    #[serde(rename = "fig1-left")]
    Fig1Left,
    #[serde(rename = "fig1-center")]
    Fig1Center,
    #[serde(rename = "fig1-right")]
    Fig1Right,
    Custom,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Fig1Left => "fig1-left",
            ExperimentKind::Fig1Center => "fig1-center",
            ExperimentKind::Fig1Right => "fig1-right",
            ExperimentKind::Custom => "custom",
        }
    }
}

/// A scalar `s` stands for `s·I` of the required shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixOrScalar {
    Scalar(f64),
    Matrix(Rows),
}

impl MatrixOrScalar {
    fn resolve(&self, rows: usize, cols: usize, path: &str) -> Result<DMatrix<f64>> {
        let m = match self {
            MatrixOrScalar::Scalar(s) => DMatrix::identity(rows, cols) * *s,
            MatrixOrScalar::Matrix(r) => rows_to_matrix(r, path)?,
        };
        if m.shape() != (rows, cols) {
            return Err(SysIdError::Config {
                path: path.into(),
                message: format!("expected a {rows}x{cols} matrix, got {}x{}", m.nrows(), m.ncols()),
            });
        }
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObserverRule {
    #[default]
    RandomOrthonormalColumns,
}

fn one() -> usize {
    1
}

fn default_a() -> MatrixOrScalar {
    MatrixOrScalar::Scalar(0.9)
}

fn default_b() -> MatrixOrScalar {
    MatrixOrScalar::Scalar(1.0)
}

fn default_obs_std() -> f64 {
    1.0
}

fn default_process() -> MatrixOrScalar {
    MatrixOrScalar::Scalar(0.0)
}

fn default_input_cov() -> MatrixOrScalar {
    MatrixOrScalar::Scalar(0.1)
}

/// System family of a sweep; only the observer is random.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemTemplate {
    #[serde(default = "one")]
    pub latent_dim: usize,
    #[serde(default = "one")]
    pub input_dim: usize,
    #[serde(default = "default_a")]
    pub a: MatrixOrScalar,
    #[serde(default = "default_b")]
    pub b: MatrixOrScalar,
    /// Standard deviation σ_η of the observation noise.
    #[serde(default = "default_obs_std")]
    pub obs_noise_std: f64,
    #[serde(default = "default_process")]
    pub process_noise: MatrixOrScalar,
    #[serde(default = "default_input_cov")]
    pub input_cov: MatrixOrScalar,
    #[serde(default)]
    pub observer: ObserverRule,
}

impl Default for SystemTemplate {
    fn default() -> Self {
        Self {
            latent_dim: 1,
            input_dim: 1,
            a: default_a(),
            b: default_b(),
            obs_noise_std: default_obs_std(),
            process_noise: default_process(),
            input_cov: default_input_cov(),
            observer: ObserverRule::default(),
        }
    }
}

/// `n × r` standard-Gaussian matrix from `stream` with orthonormalized columns.
pub fn random_orthonormal_columns(n: usize, r: usize, stream: &StreamKey) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(n, r);
    stream.fill_normal(NoiseKind::Structure, 0, g.as_mut_slice());
    linalg::orthonormalize_columns(&g)
}

impl SystemTemplate {
    /// Builds the system for observation dimension `n`; returns it with `Φ_C`.
    pub fn build(&self, n: usize, stream: &StreamKey) -> Result<(SystemParams, SubspaceBasis)> {
        let (r, m) = (self.latent_dim, self.input_dim);
        if r == 0 || m == 0 {
            return Err(SysIdError::Config {
                path: "system".into(),
                message: "latent_dim and input_dim must be >= 1".into(),
            });
        }
        if r > n {
            return Err(SysIdError::Config {
                path: "system.latent_dim".into(),
                message: format!("latent_dim {r} exceeds observation dimension {n}"),
            });
        }
        if !(self.obs_noise_std.is_finite() && self.obs_noise_std >= 0.0) {
            return Err(SysIdError::Config {
                path: "system.obs_noise_std".into(),
                message: "must be a finite non-negative number".into(),
            });
        }
        let a = self.a.resolve(r, r, "system.a")?;
        let b = self.b.resolve(r, m, "system.b")?;
        let sigma_w = self.process_noise.resolve(r, r, "system.process_noise")?;
        let sigma_u = self.input_cov.resolve(m, m, "system.input_cov")?;
        let c = match self.observer {
            ObserverRule::RandomOrthonormalColumns => random_orthonormal_columns(n, r, stream),
        };
        let basis = SubspaceBasis::new(c.clone())?;
        let obs = ObsNoise::Isotropic(self.obs_noise_std * self.obs_noise_std);
        let sys = SystemParams::new(a, b, c, sigma_w, obs, sigma_u).map_err(|e| SysIdError::Config {
            path: "system".into(),
            message: e.to_string(),
        })?;
        let spectral_radius = linalg::spectral_radius(&sys.a);
        if spectral_radius >= 1.0 {
            return Err(SysIdError::Config {
                path: "system.a".into(),
                message: SysIdError::Unstable { spectral_radius }.to_string(),
            });
        }
        Ok((sys, basis))
    }
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Observation dimensions `n`.
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
    /// `fig1-left`: trajectory length. `fig1-center` / `custom`: total budget
    /// `T₁ + T₂`. `fig1-right`: per-system trajectory length.
    #[serde(default)]
    pub length: Option<usize>,
    /// Meta set size rule `K = ⌊n / k_divisor⌋ + 1`.
    #[serde(default)]
    pub k_divisor: Option<usize>,
    #[serde(default)]
    pub system: SystemTemplate,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub master_seed: u64,
    /// Sample sizes at which errors are recorded (same meaning as `length`).
    #[serde(default)]
    pub checkpoints: Option<Vec<usize>>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Fixed observer rank instead of the eigengap rule.
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Fill `wall_ms`; off by default so result files are reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            dims: None,
            length: None,
            k_divisor: None,
            system: SystemTemplate::default(),
            seeds: default_seeds(),
            master_seed: 0,
            checkpoints: None,
            delta: DEFAULT_DELTA,
            rank: None,
            output: None,
            record_wall_time: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        crate::io::from_json_str(text)
    }

    /// Applies per-kind defaults and checks every field.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let geometric = vec![625, 1250, 2500, 5000, 10_000];
        let (dims, length) = match self.kind {
            ExperimentKind::Fig1Left => (vec![40, 80, 160, 320], 10_000),
            ExperimentKind::Fig1Center => (vec![320], 10_000),
            ExperimentKind::Fig1Right => (vec![80, 160, 320], 4000),
            ExperimentKind::Custom => (vec![40], 10_000),
        };
        let dims = self.dims.clone().unwrap_or(dims);
        let length = self.length.unwrap_or(length);
        let checkpoints = match (&self.checkpoints, self.kind) {
            (Some(c), _) => c.clone(),
            (None, ExperimentKind::Fig1Right) => vec![length],
            (None, _) if self.length.is_none() => geometric,
            (None, _) => vec![length],
        };
        let cfg_err = |path: String, message: String| SysIdError::Config { path, message };

        if dims.is_empty() {
            return Err(cfg_err("dims".into(), "must be non-empty".into()));
        }
        let mut seen = HashSet::new();
        for (i, &n) in dims.iter().enumerate() {
            if n == 0 {
                return Err(cfg_err(format!("dims[{i}]"), "must be positive".into()));
            }
            if !seen.insert(n) {
                return Err(cfg_err(format!("dims[{i}]"), format!("duplicate dimension {n}")));
            }
        }
        if length == 0 {
            return Err(cfg_err("length".into(), "must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(cfg_err("seeds".into(), "must be non-empty".into()));
        }
        let mut seen = HashSet::new();
        for (i, s) in self.seeds.iter().enumerate() {
            if !seen.insert(*s) {
                return Err(cfg_err(format!("seeds[{i}]"), format!("duplicate seed {s}")));
            }
        }
        if checkpoints.is_empty() {
            return Err(cfg_err("checkpoints".into(), "must be non-empty".into()));
        }
        let mut seen = HashSet::new();
        let min_checkpoint = if matches!(self.kind, ExperimentKind::Fig1Center | ExperimentKind::Custom) { 2 } else { 1 };
        for (i, &c) in checkpoints.iter().enumerate() {
            if c < min_checkpoint || c > length {
                return Err(cfg_err(
                    format!("checkpoints[{i}]"),
                    format!("checkpoint {c} outside {min_checkpoint}..={length}"),
                ));
            }
            if !seen.insert(c) {
                return Err(cfg_err(format!("checkpoints[{i}]"), format!("duplicate checkpoint {c}")));
            }
        }
        let mut checkpoints = checkpoints;
        checkpoints.sort_unstable();
        if !(self.delta > 0.0 && self.delta < (-1.0f64).exp()) {
            return Err(cfg_err("delta".into(), format!("{} outside (0, 1/e)", self.delta)));
        }
        let k_divisor = self.k_divisor.unwrap_or(40);
        if k_divisor == 0 {
            return Err(cfg_err("k_divisor".into(), "must be positive".into()));
        }
        if let Some(q) = self.rank {
            if let Some(&n) = dims.iter().find(|&&n| q == 0 || q > n) {
                return Err(cfg_err("rank".into(), format!("rank {q} outside 1..={n}")));
            }
        }
        for &n in &dims {
            self.system.build(n, &StreamKey::new(self.master_seed))?;
        }
        Ok(ResolvedConfig {
            kind: self.kind,
            dims,
            length,
            k_divisor,
            system: self.system.clone(),
            seeds: self.seeds.clone(),
            master_seed: self.master_seed,
            checkpoints,
            delta: self.delta,
            rank: self.rank,
            record_wall_time: self.record_wall_time,
        })
    }
}

/// An [`ExperimentConfig`] with defaults filled in and all fields validated.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedConfig {
    pub kind: ExperimentKind,
    pub dims: Vec<usize>,
    pub length: usize,
    pub k_divisor: usize,
    pub system: SystemTemplate,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    pub checkpoints: Vec<usize>,
    pub delta: f64,
    pub rank: Option<usize>,
    pub record_wall_time: bool,
}

impl ResolvedConfig {
    pub fn methods(&self) -> [&'static str; 2] {
        match self.kind {
            ExperimentKind::Fig1Left => [METHOD_ISOTROPIC, METHOD_ANISOTROPIC],
            ExperimentKind::Fig1Center | ExperimentKind::Custom => [METHOD_COL_ADAPTED, METHOD_HO_KALMAN],
            ExperimentKind::Fig1Right => [METHOD_META, METHOD_HO_KALMAN],
        }
    }

    pub fn expected_rows(&self) -> usize {
        self.dims.len() * self.seeds.len() * self.checkpoints.len() * self.methods().len()
    }

    pub fn meta_size(&self, n: usize) -> usize {
        n / self.k_divisor + 1
    }
}

pub const METHOD_ISOTROPIC: &str = "col-approx-isotropic";
pub const METHOD_ANISOTROPIC: &str = "col-approx-anisotropic";
pub const METHOD_COL_ADAPTED: &str = "col-adapted";
pub const METHOD_HO_KALMAN: &str = "ho-kalman";
pub const METHOD_META: &str = "meta-sysid";
pub const METRIC_ANGLE: &str = "principal_angle_error";
pub const METRIC_CB: &str = "cb_error";

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRecord {
    pub experiment: ExperimentKind,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub seed: u64,
    pub method: String,
    pub metric: String,
    /// NaN when the method failed; `error` then names the failure.
    pub value: f64,
    pub wall_ms: f64,
    pub error: Option<String>,
}

pub const CSV_HEADER: &str = "experiment,n,T,seed,method,metric,value,wall_ms,error";

pub fn records_to_csv(records: &[ResultRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.experiment.as_str(),
            r.n,
            r.t,
            r.seed,
            r.method,
            r.metric,
            format_f64(r.value),
            format_f64(r.wall_ms),
            r.error.as_deref().unwrap_or("")
        ));
    }
    out
}

struct Cell<'a> {
    cfg: &'a ResolvedConfig,
    cell_index: usize,
    n: usize,
    seed: u64,
}

impl Cell<'_> {
    fn key(&self) -> StreamKey {
        StreamKey::new(self.cfg.master_seed)
            .child(self.cell_index as u64)
            .child(self.seed)
    }

    fn record(&self, t: usize, method: &str, metric: &str, outcome: Result<f64>, elapsed_ms: f64) -> ResultRecord {
        let wall_ms = if self.cfg.record_wall_time { elapsed_ms } else { 0.0 };
        let (value, error) = match outcome {
            Ok(v) if v.is_finite() => (v, None),
            Ok(_) => (f64::NAN, Some("non-finite".to_string())),
            Err(e) => (f64::NAN, Some(e.label().to_string())),
        };
        ResultRecord {
            experiment: self.cfg.kind,
            n: self.n,
            t,
            seed: self.seed,
            method: method.into(),
            metric: metric.into(),
            value,
            wall_ms,
            error,
        }
    }

    fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
        let clock = Instant::now();
        let out = f();
        (out, clock.elapsed().as_secs_f64() * 1e3)
    }

    fn run(&self) -> Result<Vec<ResultRecord>> {
        let key = self.key();
        let (system, phi) = self.cfg.system.build(self.n, &key.child(0))?;
        match self.cfg.kind {
            ExperimentKind::Fig1Left => self.run_left(&system, &phi, &key),
            ExperimentKind::Fig1Center | ExperimentKind::Custom => self.run_center(&system, &key),
            ExperimentKind::Fig1Right => self.run_right(&system, &key),
        }
    }

    fn run_left(&self, system: &SystemParams, phi: &SubspaceBasis, key: &StreamKey) -> Result<Vec<ResultRecord>> {
        let variance = self.cfg.system.obs_noise_std.powi(2);
        let mut anisotropic = system.clone();
        anisotropic.obs_noise = ObsNoise::Full(phi.matrix() * phi.matrix().transpose() * variance);
        let mut out = Vec::new();
        for (method, sys) in [(METHOD_ISOTROPIC, system), (METHOD_ANISOTROPIC, &anisotropic)] {
            // both variants share inputs and raw noise draws
            let traj = simulate(sys, self.cfg.length, &key.child(1), false)?;
            let y = traj.observations();
            let n = self.n;
            let mut gram = DMatrix::zeros(n, n);
            let mut used = 0usize;
            for &c in &self.cfg.checkpoints {
                let ((outcome, g), ms) = Self::timed(|| {
                    let add = y.columns(used, c + 1 - used).into_owned();
                    let g = &gram + observation_gram(&add);
                    let outcome = col_approx_from_gram(&g, c, self.cfg.rank)
                        .and_then(|res| principal_angle_error(&res.basis, phi));
                    (outcome, g)
                });
                gram = g;
                used = c + 1;
                out.push(self.record(c, method, METRIC_ANGLE, outcome, ms));
            }
        }
        Ok(out)
    }

    fn run_center(&self, system: &SystemParams, key: &StreamKey) -> Result<Vec<ResultRecord>> {
        let split = |c: usize| (c / 2, c - c / 2);
        let (max1, max2) = split(self.cfg.length);
        let d1 = simulate(system, max1, &key.child(1), false)?;
        let d2 = simulate(system, max2, &key.child(2), false)?;
        let r = self.cfg.system.latent_dim;
        let mut out = Vec::new();
        for &c in &self.cfg.checkpoints {
            let (t1, t2) = split(c);
            let p1 = d1.prefix(t1)?;
            let p2 = d2.prefix(t2)?;
            let (outcome, ms) = Self::timed(|| {
                col_adapted_sysid(&p1, &p2, r, self.cfg.delta, self.cfg.rank)
                    .and_then(|rep| cb_error(&rep.realization, system))
            });
            out.push(self.record(c, METHOD_COL_ADAPTED, METRIC_CB, outcome, ms));
            let (outcome, ms) = Self::timed(|| {
                p1.concatenate(&p2)
                    .and_then(|joined| ho_kalman(&joined, r, self.cfg.delta))
                    .and_then(|est| cb_error(&est, system))
            });
            out.push(self.record(c, METHOD_HO_KALMAN, METRIC_CB, outcome, ms));
        }
        Ok(out)
    }

    fn run_right(&self, system: &SystemParams, key: &StreamKey) -> Result<Vec<ResultRecord>> {
        let k_total = self.cfg.meta_size(self.n);
        let trajectories: Vec<Trajectory> = (0..k_total)
            .map(|k| simulate(system, self.cfg.length, &key.child(1 + k as u64), false))
            .collect::<Result<_>>()?;
        let r = self.cfg.system.latent_dim;
        let mut out = Vec::new();
        for &c in &self.cfg.checkpoints {
            let prefixes: Vec<Trajectory> = trajectories.iter().map(|t| t.prefix(c)).collect::<Result<_>>()?;
            let (outcome, ms) = Self::timed(|| {
                meta_sysid(&prefixes, r, self.cfg.delta, self.cfg.rank).and_then(|mut reports| {
                    reports
                        .swap_remove(0)
                        .and_then(|rep| cb_error(&rep.realization, system))
                })
            });
            out.push(self.record(c, METHOD_META, METRIC_CB, outcome, ms));
            let (outcome, ms) = Self::timed(|| {
                ho_kalman(&prefixes[0], r, self.cfg.delta).and_then(|est| cb_error(&est, system))
            });
            out.push(self.record(c, METHOD_HO_KALMAN, METRIC_CB, outcome, ms));
        }
        Ok(out)
    }
}

fn method_rank(cfg: &ResolvedConfig, method: &str) -> usize {
    cfg.methods().iter().position(|m| *m == method).unwrap_or(usize::MAX)
}

/// Runs the sweep on the current rayon pool and returns rows in canonical
/// order `(n, T, seed, method, metric)`. Writes the CSV when `output` is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let resolved = config.resolve()?;
    let records = run_resolved(&resolved)?;
    if let Some(path) = &config.output {
        write_atomic(path, records_to_csv(&records).as_bytes())?;
    }
    Ok(records)
}

pub fn run_resolved(cfg: &ResolvedConfig) -> Result<Vec<ResultRecord>> {
    let jobs: Vec<(usize, usize, u64)> = cfg
        .dims
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| cfg.seeds.iter().map(move |&s| (i, n, s)))
        .collect();
    let batches = jobs
        .par_iter()
        .map(|&(cell_index, n, seed)| {
            Cell {
                cfg,
                cell_index,
                n,
                seed,
            }
            .run()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records: Vec<ResultRecord> = batches.into_iter().flatten().collect();
    records.sort_by(|a, b| {
        (a.n, a.t, a.seed, method_rank(cfg, &a.method), &a.metric).cmp(&(
            b.n,
            b.t,
            b.seed,
            method_rank(cfg, &b.method),
            &b.metric,
        ))
    });
    Ok(records)
}

/// Aggregate of one `(n, T, method)` group.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub n: usize,
    pub t: usize,
    pub method: String,
    pub mean: f64,
    pub median: f64,
    pub count: usize,
    pub failures: usize,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Mean and median over seeds; failed rows count as failures and are
/// excluded from the statistics.
pub fn summarize(records: &[ResultRecord]) -> Vec<CellSummary> {
    let mut groups: BTreeMap<(usize, usize, String), (Vec<f64>, usize)> = BTreeMap::new();
    for r in records {
        let entry = groups.entry((r.n, r.t, r.method.clone())).or_default();
        if r.error.is_some() {
            entry.1 += 1;
        } else {
            entry.0.push(r.value);
        }
    }
    groups
        .into_iter()
        .map(|((n, t, method), (values, failures))| CellSummary {
            n,
            t,
            method,
            mean: if values.is_empty() { f64::NAN } else { values.iter().sum::<f64>() / values.len() as f64 },
            median: median(&values),
            count: values.len(),
            failures,
        })
        .collect()
}
