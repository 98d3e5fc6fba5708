use thiserror::Error;

/// Errors raised by the identification pipeline.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SysIdError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{name} is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { name: &'static str, min_eigenvalue: f64 },

    #[error("{name} is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPd { name: &'static str, min_eigenvalue: f64 },

    #[error("{name} is not symmetric")]
    NotSymmetric { name: &'static str },

    #[error("unstable latent dynamics: spectral radius {spectral_radius} >= 1")]
    Unstable { spectral_radius: f64 },

    #[error("observer rank undetected: no eigenvalue gap exceeds {threshold} (largest gap {largest_gap})")]
    RankUndetected {
        threshold: f64,
        largest_gap: f64,
        gaps: Vec<f64>,
    },

    #[error("ill-conditioned regression: singular value ratio {ratio:e} below cutoff")]
    IllConditionedRegression { ratio: f64 },

    #[error("trajectory too short: need at least {required} steps, got {actual}")]
    TooShort { required: usize, actual: usize },

    #[error("near-singular Hankel matrix: sigma_r / sigma_1 = {ratio:e}")]
    NearSingularHankel { ratio: f64 },

    #[error("ground-truth system is not observable at the alignment depth")]
    NotObservable,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("hard-instance generation failed: {0}")]
    Generation(String),

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl SysIdError {
    /// True for failures caused by bad input (as opposed to numerical breakdown).
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            SysIdError::Unstable { .. }
                | SysIdError::RankUndetected { .. }
                | SysIdError::IllConditionedRegression { .. }
                | SysIdError::NearSingularHankel { .. }
                | SysIdError::NotObservable
                | SysIdError::Generation(_)
        )
    }

    /// Short kebab-case label used in result files.
    pub fn label(&self) -> &'static str {
        match self {
            SysIdError::DimensionMismatch { .. } => "dimension-mismatch",
            SysIdError::NotPsd { .. } => "not-psd",
            SysIdError::NotPd { .. } => "not-pd",
            SysIdError::NotSymmetric { .. } => "not-symmetric",
            SysIdError::Unstable { .. } => "unstable",
            SysIdError::RankUndetected { .. } => "rank-undetected",
            SysIdError::IllConditionedRegression { .. } => "ill-conditioned-regression",
            SysIdError::TooShort { .. } => "too-short",
            SysIdError::NearSingularHankel { .. } => "near-singular-hankel",
            SysIdError::NotObservable => "not-observable",
            SysIdError::InvalidArgument(_) => "invalid-argument",
            SysIdError::Generation(_) => "generation",
            SysIdError::Config { .. } => "config",
            SysIdError::Parse { .. } => "parse",
            SysIdError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for SysIdError {
    fn from(e: std::io::Error) -> Self {
        SysIdError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SysIdError>;

pub(crate) fn dim_mismatch(
    context: &'static str,
    expected: impl ToString,
    actual: impl ToString,
) -> SysIdError {
    SysIdError::DimensionMismatch {
        context,
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
