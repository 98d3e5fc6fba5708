//! JSON configuration of the single-run subcommands.

use std::path::{Path, PathBuf};

use hdsysid::experiment::SystemTemplate;
use hdsysid::io::{read_json, read_trajectory, SystemSpec};
use hdsysid::{simulate, StreamKey, SubspaceBasis, SysIdError, SystemParams, Trajectory};
use serde::Deserialize;

/// Data for `simulate`, `col-approx`, `ho-kalman`, `col-adapted` and `meta`.
///
/// Data either comes from `trajectories` (CSV or JSON files) or is simulated
/// from a system: `system` (inline), `system_file`, or `template` with `n`.
/// Simulated trajectory `k` has length `lengths[k]` and its own stream; all of
/// them share one system, hence one observer.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub system: Option<SystemSpec>,
    #[serde(default)]
    pub system_file: Option<PathBuf>,
    #[serde(default)]
    pub template: Option<SystemTemplate>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub lengths: Option<Vec<usize>>,
    #[serde(default)]
    pub trajectories: Option<Vec<PathBuf>>,
    /// Latent dimension handed to the oracle; defaults to the system's.
    #[serde(default)]
    pub latent_dim: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub keep_latents: bool,
}

fn cfg_err(path: &str, message: impl Into<String>) -> SysIdError {
    SysIdError::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// Ground truth, when the data were simulated here.
pub struct Truth {
    pub system: SystemParams,
    pub basis: SubspaceBasis,
}

pub struct Loaded {
    pub trajectories: Vec<Trajectory>,
    pub truth: Option<Truth>,
    pub latent_dim: usize,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl DataConfig {
    fn system(&self, base: &Path, key: &StreamKey) -> Result<Option<SystemParams>, SysIdError> {
        let given = [self.system.is_some(), self.system_file.is_some(), self.template.is_some()];
        if given.iter().filter(|&&g| g).count() > 1 {
            return Err(cfg_err("system", "give at most one of system, system_file, template"));
        }
        if let Some(spec) = &self.system {
            return spec.to_system().map(Some).map_err(|e| relabel("system", e));
        }
        if let Some(file) = &self.system_file {
            let spec: SystemSpec = read_json(&resolve(base, file)).map_err(|e| relabel("system_file", e))?;
            return spec.to_system().map(Some).map_err(|e| relabel("system_file", e));
        }
        if let Some(template) = &self.template {
            let n = self.n.ok_or_else(|| cfg_err("n", "required with template"))?;
            return template.build(n, &key.child(0)).map(|(s, _)| Some(s));
        }
        if self.n.is_some() {
            return Err(cfg_err("n", "only valid with template"));
        }
        Ok(None)
    }

    /// Loads or simulates the data; `need` is the minimum number of trajectories.
    pub fn load(&self, base: &Path, seed: u64, need: usize) -> Result<Loaded, SysIdError> {
        let key = StreamKey::new(seed);
        let system = self.system(base, &key)?;
        let trajectories = match (&self.trajectories, &system) {
            (Some(files), _) => {
                if self.lengths.is_some() {
                    return Err(cfg_err("lengths", "not used with trajectories"));
                }
                files
                    .iter()
                    .enumerate()
                    .map(|(i, f)| read_trajectory(&resolve(base, f)).map_err(|e| relabel(&format!("trajectories[{i}]"), e)))
                    .collect::<Result<Vec<_>, _>>()?
            }
            (None, Some(sys)) => {
                let lengths = self.lengths.as_ref().ok_or_else(|| cfg_err("lengths", "required when simulating"))?;
                if let Some(i) = lengths.iter().position(|&l| l == 0) {
                    return Err(cfg_err(&format!("lengths[{i}]"), "must be positive"));
                }
                lengths
                    .iter()
                    .enumerate()
                    .map(|(k, &len)| simulate(sys, len, &key.child(1 + k as u64), self.keep_latents))
                    .collect::<Result<Vec<_>, _>>()?
            }
            (None, None) => return Err(cfg_err("<root>", "give trajectories or a system to simulate")),
        };
        if trajectories.len() < need {
            let field = if self.trajectories.is_some() { "trajectories" } else { "lengths" };
            return Err(cfg_err(field, format!("need at least {need} trajectories, got {}", trajectories.len())));
        }
        let latent_dim = match (self.latent_dim, &system) {
            (Some(0), _) => return Err(cfg_err("latent_dim", "must be >= 1")),
            (Some(r), _) => r,
            (None, Some(s)) => s.latent_dim(),
            (None, None) => 1,
        };
        let truth = match system {
            Some(system) => {
                let basis = SubspaceBasis::from_span(&system.c)?;
                Some(Truth { system, basis })
            }
            None => None,
        };
        Ok(Loaded {
            trajectories,
            truth,
            latent_dim,
        })
    }
}

/// Prefixes configuration error paths with `field`.
fn relabel(field: &str, e: SysIdError) -> SysIdError {
    match e {
        SysIdError::Config { path, message } => SysIdError::Config {
            path: if path == "<root>" { field.into() } else { format!("{field}.{path}") },
            message,
        },
        other => other,
    }
}

fn default_max_members() -> usize {
    64
}

fn default_budget() -> usize {
    hdsysid::metrics::DEFAULT_HARD_FAMILY_BUDGET
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardFamilyConfig {
    pub n: usize,
    pub eps: f64,
    #[serde(default = "one")]
    pub latent_dim: usize,
    /// Defaults to `latent_dim`.
    #[serde(default)]
    pub input_dim: Option<usize>,
    #[serde(default = "default_max_members")]
    pub max_members: usize,
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Isotropic observation-noise variance shared by all members.
    #[serde(default = "unit")]
    pub obs_noise_variance: f64,
    #[serde(default)]
    pub process_noise_variance: f64,
    #[serde(default = "unit")]
    pub input_variance: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}
