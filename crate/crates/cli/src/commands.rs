use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use hdsysid::experiment::{run_resolved, records_to_csv, summarize, ExperimentConfig};
use hdsysid::io::{
    format_f64, matrix_csv_string, matrix_to_rows, read_json, to_json_string, trajectory_csv_string, write_atomic,
    write_json, write_trajectory, RealizationSpec, Rows, SystemSpec,
};
use hdsysid::metrics::{min_pairwise_cb_distance, SharedNoise};
use hdsysid::{
    check_minimal, hard_instance_family, ho_kalman as run_ho_kalman, markov_error, principal_angle_error, subspace,
    ObsNoise, PipelineReport, StreamKey, SysIdError, DEFAULT_DELTA,
};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::{DataConfig, HardFamilyConfig, Loaded, Truth};
use crate::Common;

#[derive(Debug)]
pub struct CliError {
    stage: String,
    error: SysIdError,
}

impl CliError {
    pub fn new(stage: &str, error: SysIdError) -> Self {
        Self {
            stage: stage.into(),
            error,
        }
    }

    pub fn validation(stage: &str, message: String) -> Self {
        Self::new(stage, SysIdError::InvalidArgument(message))
    }

    /// 1 for invalid input, 2 for numerical failure.
    pub fn exit_code(&self) -> u8 {
        if self.error.is_validation() {
            1
        } else {
            2
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.error)
    }
}

trait Stage<T> {
    fn stage(self, name: &str) -> Result<T, CliError>;
}

impl<T> Stage<T> for Result<T, SysIdError> {
    fn stage(self, name: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(name, e))
    }
}

fn config_path(common: &Common) -> Result<&Path, CliError> {
    common
        .config
        .as_deref()
        .ok_or_else(|| CliError::new("config", SysIdError::Config {
            path: "--config".into(),
            message: "a configuration file is required".into(),
        }))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn check_delta(delta: f64) -> Result<f64, CliError> {
    if delta > 0.0 && delta < (-1.0f64).exp() {
        Ok(delta)
    } else {
        Err(CliError::new("config", SysIdError::Config {
            path: "delta".into(),
            message: format!("{delta} outside (0, 1/e)"),
        }))
    }
}

struct Data {
    loaded: Loaded,
    rank: Option<usize>,
    delta: f64,
    seed: u64,
}

fn load_data(common: &Common, need: usize) -> Result<Data, CliError> {
    let path = config_path(common)?;
    let cfg: DataConfig = read_json(path).stage("config")?;
    let seed = common.seed.or(cfg.seed).unwrap_or(0);
    let delta = check_delta(common.delta.or(cfg.delta).unwrap_or(DEFAULT_DELTA))?;
    let rank = common.rank.or(cfg.rank);
    let loaded = cfg.load(&base_dir(path), seed, need).stage("load")?;
    Ok(Data {
        loaded,
        rank,
        delta,
        seed,
    })
}

/// Writes to `out` atomically, or to stdout.
fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()).stage("output"),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::new("output", e.into())),
    }
}

fn indexed_path(path: &Path, k: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{k}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{k}"),
    };
    path.with_file_name(name)
}

pub fn simulate(common: &Common) -> Result<(), CliError> {
    let data = load_data(common, 1)?;
    let trajs = &data.loaded.trajectories;
    match (&common.out, trajs.len()) {
        (None, 1) => emit(None, &trajectory_csv_string(&trajs[0]))?,
        (None, _) => {
            return Err(CliError::validation("output", "--out is required for several trajectories".into()));
        }
        (Some(out), 1) => write_trajectory(&trajs[0], out).stage("output")?,
        (Some(out), _) => {
            for (k, t) in trajs.iter().enumerate() {
                write_trajectory(t, &indexed_path(out, k)).stage("output")?;
            }
        }
    }
    if let (Some(out), Some(truth)) = (&common.out, &data.loaded.truth) {
        write_json(&out.with_extension("system.json"), &SystemSpec::from_system(&truth.system)).stage("output")?;
    }
    if common.out.is_some() {
        println!("seed: {}", data.seed);
        for (k, t) in trajs.iter().enumerate() {
            println!("trajectory {k}: T={} n={} m={}", t.len(), t.obs_dim(), t.input_dim());
        }
    }
    Ok(())
}

pub fn col_approx(common: &Common) -> Result<(), CliError> {
    let data = load_data(common, 1)?;
    let traj = &data.loaded.trajectories[0];
    let res = subspace::col_approx(traj.observations(), data.rank).stage("col-approx")?;
    println!("estimated rank: {}", res.estimated_rank);
    println!("threshold: {}", format_f64(res.threshold));
    let shown = res.eigenvalues.len().min(res.estimated_rank + 2);
    let eig: Vec<String> = res.eigenvalues[..shown].iter().map(|&v| format_f64(v)).collect();
    println!("leading eigenvalues: {}", eig.join(" "));
    if let Some(truth) = &data.loaded.truth {
        let err = principal_angle_error(&res.basis, &truth.basis).stage("metrics")?;
        println!("principal angle error: {}", format_f64(err));
    }
    if let Some(out) = &common.out {
        emit(Some(out), &matrix_csv_string(res.basis.matrix()))?;
    }
    Ok(())
}

fn realization_errors(truth: Option<&Truth>, est: &hdsysid::Realization, depth: usize) -> Result<(), CliError> {
    if let Some(truth) = truth {
        let errs = markov_error(est, &truth.system, depth).stage("metrics")?;
        println!("cb error: {}", format_f64(errs[0]));
        let all: Vec<String> = errs.iter().map(|&e| format_f64(e)).collect();
        println!("markov errors: {}", all.join(" "));
    }
    Ok(())
}

pub fn ho_kalman(common: &Common) -> Result<(), CliError> {
    let data = load_data(common, 1)?;
    let traj = &data.loaded.trajectories[0];
    let r = data.loaded.latent_dim;
    let est = run_ho_kalman(traj, r, data.delta).stage("ho-kalman")?;
    let depth = 2 * hdsysid::hankel_depth(r, data.delta).stage("ho-kalman")?;
    println!("latent dimension: {r}");
    realization_errors(data.loaded.truth.as_ref(), &est, depth)?;
    if let Some(out) = &common.out {
        write_json(out, &RealizationSpec::from(&est)).stage("output")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportJson {
    realization: RealizationSpec,
    low_c: Rows,
    basis: Rows,
    estimated_rank: usize,
    markov_residual: f64,
}

impl From<&PipelineReport> for ReportJson {
    fn from(r: &PipelineReport) -> Self {
        Self {
            realization: RealizationSpec::from(&r.realization),
            low_c: matrix_to_rows(&r.low_c),
            basis: matrix_to_rows(r.basis.matrix()),
            estimated_rank: r.estimated_rank,
            markov_residual: r.markov_residual,
        }
    }
}

pub fn col_adapted(common: &Common) -> Result<(), CliError> {
    let data = load_data(common, 2)?;
    let t = &data.loaded.trajectories;
    let r = data.loaded.latent_dim;
    let report = hdsysid::col_adapted_sysid(&t[0], &t[1], r, data.delta, data.rank).stage("col-adapted")?;
    println!("estimated rank: {}", report.estimated_rank);
    if let Some(truth) = &data.loaded.truth {
        let err = principal_angle_error(&report.basis, &truth.basis).stage("metrics")?;
        println!("principal angle error: {}", format_f64(err));
    }
    let depth = 2 * hdsysid::hankel_depth(r, data.delta).stage("col-adapted")?;
    realization_errors(data.loaded.truth.as_ref(), &report.realization, depth)?;
    if let Some(out) = &common.out {
        write_json(out, &ReportJson::from(&report)).stage("output")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct MetaEntry {
    index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<ReportJson>,
}

pub fn meta(common: &Common) -> Result<(), CliError> {
    let data = load_data(common, 2)?;
    let r = data.loaded.latent_dim;
    let reports = hdsysid::meta_sysid(&data.loaded.trajectories, r, data.delta, data.rank).stage("meta")?;
    let mut entries = Vec::with_capacity(reports.len());
    let mut first_failure = None;
    for (k, rep) in reports.into_iter().enumerate() {
        match rep {
            Ok(rep) => {
                let cb = match &data.loaded.truth {
                    Some(t) => format!(" cb error {}", format_f64(hdsysid::cb_error(&rep.realization, &t.system).stage("metrics")?)),
                    None => String::new(),
                };
                println!("system {k}: estimated rank {}{cb}", rep.estimated_rank);
                entries.push(MetaEntry {
                    index: k,
                    error: None,
                    report: Some(ReportJson::from(&rep)),
                });
            }
            Err(e) => {
                println!("system {k}: failed ({})", e.label());
                entries.push(MetaEntry {
                    index: k,
                    error: Some(e.to_string()),
                    report: None,
                });
                first_failure.get_or_insert((k, e));
            }
        }
    }
    if let Some(out) = &common.out {
        write_json(out, &entries).stage("output")?;
    }
    match first_failure {
        Some((k, e)) => Err(CliError::new(&format!("meta system {k}"), e)),
        None => Ok(()),
    }
}

pub fn experiment(common: &Common) -> Result<(), CliError> {
    let path = config_path(common)?;
    let mut cfg: ExperimentConfig = read_json(path).stage("config")?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(rank) = common.rank {
        cfg.rank = Some(rank);
    }
    if let Some(delta) = common.delta {
        cfg.delta = delta;
    }
    let out = match (&common.out, &cfg.output) {
        (Some(o), _) => Some(o.clone()),
        (None, Some(o)) => Some(base_dir(path).join(o)),
        (None, None) => None,
    };
    let resolved = cfg.resolve().stage("config")?;
    let records = run_resolved(&resolved).stage("experiment")?;
    let csv = records_to_csv(&records);
    match &out {
        Some(p) => {
            emit(Some(p), &csv)?;
            for s in summarize(&records) {
                println!(
                    "n={} T={} {}: mean {} median {} ({} ok, {} failed)",
                    s.n,
                    s.t,
                    s.method,
                    format_f64(s.mean),
                    format_f64(s.median),
                    s.count,
                    s.failures
                );
            }
        }
        None => emit(None, &csv)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct FamilyJson {
    eps: f64,
    min_pairwise_cb_distance: f64,
    members: Vec<SystemSpec>,
}

pub fn hard_family(common: &Common) -> Result<(), CliError> {
    let path = config_path(common)?;
    let cfg: HardFamilyConfig = read_json(path).stage("config")?;
    let seed = common.seed.or(cfg.seed).unwrap_or(0);
    let r = cfg.latent_dim;
    let m = cfg.input_dim.unwrap_or(r);
    let noise = SharedNoise {
        sigma_w: DMatrix::identity(r, r) * cfg.process_noise_variance,
        obs_noise: ObsNoise::Isotropic(cfg.obs_noise_variance),
        sigma_u: DMatrix::identity(m, m) * cfg.input_variance,
    };
    let family = hard_instance_family(cfg.n, cfg.eps, r, m, cfg.max_members, cfg.budget, &noise, &StreamKey::new(seed))
        .stage("hard-family")?;
    let min_dist = min_pairwise_cb_distance(&family);
    let minimal = family.iter().filter(|s| check_minimal(s).is_minimal()).count();
    // keep stdout clean when it carries the JSON
    let summary = format!(
        "members: {}\nminimal members: {minimal}\nmin pairwise cb distance: {}",
        family.len(),
        format_f64(min_dist)
    );
    if common.out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    let json = FamilyJson {
        eps: cfg.eps,
        min_pairwise_cb_distance: min_dist,
        members: family.iter().map(SystemSpec::from_system).collect(),
    };
    match &common.out {
        Some(p) => write_json(p, &json).stage("output"),
        None => emit(None, &to_json_string(&json).stage("output")?),
    }
}
