//! Ho-Kalman identification: least-squares Markov parameters, Hankel
//! matrices and a rank-`r` balanced realization.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_mismatch, Result, SysIdError};
use crate::linalg;
use crate::lti::{markov_blocks, Trajectory};

/// Default failure probability.
pub const DEFAULT_DELTA: f64 = 0.05;

const LSTSQ_CUTOFF: f64 = 1e-12;
const HANKEL_CUTOFF: f64 = 1e-10;

/// Estimated `(Â, B̂, Ĉ)`, defined up to a change of latent basis.
#[derive(Clone, Debug, PartialEq)]
pub struct Realization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl Realization {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let r = a.nrows();
        if a.ncols() != r || b.nrows() != r || c.ncols() != r {
            return Err(dim_mismatch(
                "realization",
                format!("A {r}x{r}, B {r}xm, C nx{r}"),
                format!(
                    "A {}x{}, B {}x{}, C {}x{}",
                    a.nrows(),
                    a.ncols(),
                    b.nrows(),
                    b.ncols(),
                    c.nrows(),
                    c.ncols()
                ),
            ));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(SysIdError::InvalidArgument("realization has non-finite entries".into()));
        }
        Ok(Self { a, b, c })
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

    pub fn markov_parameters(&self, count: usize) -> Vec<DMatrix<f64>> {
        markov_blocks(&self.a, &self.b, &self.c, count)
    }
}

/// `[Ĝ_0, …, Ĝ_{2d-1}]`, block `i` estimating `C A^i B`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovEstimate {
    pub blocks: Vec<DMatrix<f64>>,
    pub depth: usize,
    /// `sqrt(Σ_t ‖y_t − Ĝ φ_t‖² / N)` over the `N` regression rows.
    pub regression_residual: f64,
}

impl MarkovEstimate {
    /// Wraps exact (or externally computed) blocks; `blocks.len()` must be `2d`.
    pub fn from_blocks(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        if blocks.is_empty() || blocks.len() % 2 != 0 {
            return Err(SysIdError::InvalidArgument(format!(
                "expected an even, non-zero number of Markov blocks, got {}",
                blocks.len()
            )));
        }
        let shape = blocks[0].shape();
        if let Some(bad) = blocks.iter().find(|b| b.shape() != shape) {
            return Err(dim_mismatch("markov blocks", format!("{shape:?}"), format!("{:?}", bad.shape())));
        }
        Ok(Self {
            depth: blocks.len() / 2,
            blocks,
            regression_residual: 0.0,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.blocks[0].ncols()
    }
}

/// `H⁻` and `H⁺`: `d·n × d·m` block Hankel matrices with block `(i, j)` equal
/// to `G_{i+j}` and `G_{i+j+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct HankelPair {
    pub minus: DMatrix<f64>,
    pub plus: DMatrix<f64>,
    pub depth: usize,
    pub obs_dim: usize,
    pub input_dim: usize,
}

/// `d = max(r, ⌈ln(1/δ)⌉)`.
pub fn hankel_depth(r: usize, delta: f64) -> Result<usize> {
    if r == 0 {
        return Err(SysIdError::InvalidArgument("latent dimension must be >= 1".into()));
    }
    if !(delta > 0.0 && delta < (-1.0f64).exp()) {
        return Err(SysIdError::InvalidArgument(format!("delta {delta} outside (0, 1/e)")));
    }
    // absorb rounding in ln for exact powers of e
    let lag = ((1.0 / delta).ln() - 1e-9).ceil() as usize;
    Ok(r.max(lag))
}

/// Least squares of `y_t` on `[u_{t-1}; …; u_{t-2d}]` for `t = 2d..=T`.
pub fn estimate_markov(trajectory: &Trajectory, depth: usize) -> Result<MarkovEstimate> {
    if depth == 0 {
        return Err(SysIdError::InvalidArgument("Hankel depth must be >= 1".into()));
    }
    let (n, m, len) = (trajectory.obs_dim(), trajectory.input_dim(), trajectory.len());
    let lags = 2 * depth;
    let width = lags * m;
    let required = lags + width;
    if len < required {
        return Err(SysIdError::TooShort { required, actual: len });
    }
    let u = trajectory.inputs();
    let y = trajectory.observations();
    let rows = len - lags + 1;
    let mut regressors = DMatrix::zeros(rows, width);
    let mut targets = DMatrix::zeros(rows, n);
    for (row, t) in (lags..=len).enumerate() {
        for lag in 0..lags {
            let col = u.column(t - 1 - lag);
            for k in 0..m {
                regressors[(row, lag * m + k)] = col[k];
            }
        }
        targets.set_row(row, &y.column(t).transpose());
    }

    let (left, s, right) = linalg::svd_sorted(&regressors);
    let top = s.first().copied().unwrap_or(0.0);
    let bottom = s.last().copied().unwrap_or(0.0);
    let ratio = if top > 0.0 { bottom / top } else { 0.0 };
    if !(ratio >= LSTSQ_CUTOFF) {
        return Err(SysIdError::IllConditionedRegression { ratio });
    }
    // X = V Σ⁻¹ Uᵀ Y, shape width × n
    let mut coeff = left.tr_mul(&targets);
    for (i, sv) in s.iter().enumerate() {
        coeff.row_mut(i).scale_mut(1.0 / sv);
    }
    let solution = &right * coeff;
    let fitted = &regressors * &solution;
    let ssr = (&targets - fitted).norm_squared();

    let gain = solution.transpose();
    let blocks = (0..lags).map(|i| gain.columns(i * m, m).into_owned()).collect();
    Ok(MarkovEstimate {
        blocks,
        depth,
        regression_residual: (ssr / rows as f64).sqrt(),
    })
}

pub fn build_hankel(markov: &MarkovEstimate) -> HankelPair {
    let d = markov.depth;
    let (n, m) = (markov.obs_dim(), markov.input_dim());
    let mut minus = DMatrix::zeros(d * n, d * m);
    let mut plus = DMatrix::zeros(d * n, d * m);
    for i in 0..d {
        for j in 0..d {
            minus.view_mut((i * n, j * m), (n, m)).copy_from(&markov.blocks[i + j]);
            plus.view_mut((i * n, j * m), (n, m)).copy_from(&markov.blocks[i + j + 1]);
        }
    }
    HankelPair {
        minus,
        plus,
        depth: d,
        obs_dim: n,
        input_dim: m,
    }
}

/// Rank-`r` realization from a Hankel pair:
/// `Â = Σ_r^{-1/2} U_rᵀ H⁺ V_r Σ_r^{-1/2}`, `B̂` = first `m` columns of
/// `Σ_r^{1/2} V_rᵀ`, `Ĉ` = first `n` rows of `U_r Σ_r^{1/2}`.
pub fn realize(hankel: &HankelPair, r: usize) -> Result<Realization> {
    let (n, m, d) = (hankel.obs_dim, hankel.input_dim, hankel.depth);
    let max_rank = (d * n).min(d * m);
    if r == 0 || r > max_rank {
        return Err(SysIdError::InvalidArgument(format!(
            "latent dimension {r} outside 1..={max_rank} for depth {d}"
        )));
    }
    let (u, s, v) = linalg::svd_sorted(&hankel.minus);
    let top = s[0];
    let ratio = if top > 0.0 { s[r - 1] / top } else { 0.0 };
    if !(ratio >= HANKEL_CUTOFF) {
        return Err(SysIdError::NearSingularHankel { ratio });
    }
    let u_r = u.columns(0, r);
    let v_r = v.columns(0, r);
    let root = DVector::from_iterator(r, s[..r].iter().map(|x| x.sqrt()));
    let inv_root = root.map(|x| 1.0 / x);

    let mut a = u_r.tr_mul(&hankel.plus) * v_r;
    for i in 0..r {
        for j in 0..r {
            a[(i, j)] *= inv_root[i] * inv_root[j];
        }
    }
    // Σ^{1/2} Vᵀ restricted to the first m columns
    let mut b = v_r.rows(0, m).transpose();
    for i in 0..r {
        b.row_mut(i).scale_mut(root[i]);
    }
    let mut c = u_r.rows(0, n).into_owned();
    for j in 0..r {
        c.column_mut(j).scale_mut(root[j]);
    }
    Realization::new(a, b, c)
}

/// Plug-in point for system identification routines used by the pipelines.
pub trait IdOracle: Sync {
    fn identify(&self, trajectory: &Trajectory, latent_dim: usize) -> Result<OracleOutput>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleOutput {
    pub realization: Realization,
    pub markov_residual: f64,
}

/// The Ho-Kalman oracle with failure probability `delta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HoKalman {
    pub delta: f64,
}

impl Default for HoKalman {
    fn default() -> Self {
        Self { delta: DEFAULT_DELTA }
    }
}

impl IdOracle for HoKalman {
    fn identify(&self, trajectory: &Trajectory, latent_dim: usize) -> Result<OracleOutput> {
        let depth = hankel_depth(latent_dim, self.delta)?;
        let markov = estimate_markov(trajectory, depth)?;
        let realization = realize(&build_hankel(&markov), latent_dim)?;
        Ok(OracleOutput {
            realization,
            markov_residual: markov.regression_residual,
        })
    }
}

pub fn ho_kalman(trajectory: &Trajectory, r: usize, delta: f64) -> Result<Realization> {
    HoKalman { delta }.identify(trajectory, r).map(|o| o.realization)
}
