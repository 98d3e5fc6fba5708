#![allow(dead_code)]

use hdsysid::linalg::spectral_radius;
use hdsysid::{check_minimal, NoiseKind, StreamKey, SystemParams};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Shape of a random test system.
#[derive(Clone, Copy, Debug)]
pub struct Shape {
    pub r: usize,
    pub n: usize,
    pub m: usize,
}

/// Random noiseless minimal system with spectral radius `rho`; redraws until
/// the draw is minimal.
pub fn random_minimal(shape: Shape, rho: f64, seed: u64) -> SystemParams {
    let mut rng = StreamKey::new(seed).at(NoiseKind::Auxiliary, 0);
    loop {
        let mut a = gaussian(shape.r, shape.r, &mut rng);
        let radius = spectral_radius(&a);
        if radius < 1e-3 {
            continue;
        }
        a *= rho / radius;
        let b = gaussian(shape.r, shape.m, &mut rng);
        let c = gaussian(shape.n, shape.r, &mut rng);
        let sys = SystemParams::noiseless(a, b, c).expect("valid shapes");
        if check_minimal(&sys).is_minimal() {
            return sys;
        }
    }
}

/// Shape and spectral radius of the `index`-th system of the exactness suite:
/// `r ≤ 3`, `n ≤ 8` (and `n ≥ r`), `m ≤ 2`, radius in `[0.3, 0.9]`.
pub fn suite_system(index: u64) -> SystemParams {
    let mut rng = StreamKey::new(0x5eed).child(index).at(NoiseKind::Auxiliary, 1);
    let r = rng.random_range(1..=3);
    let n = rng.random_range(r.max(2)..=8);
    let m = rng.random_range(1..=2);
    let rho = rng.random_range(0.3..=0.9);
    random_minimal(Shape { r, n, m }, rho, 1000 + index)
}

/// Orthonormal `n × q` matrix.
pub fn random_orthonormal(n: usize, q: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    hdsysid::linalg::orthonormalize_columns(&gaussian(n, q, rng))
}

/// Well-conditioned random invertible matrix.
pub fn random_invertible(r: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    loop {
        let s = gaussian(r, r, rng) + DMatrix::identity(r, r) * 2.0;
        let sv = hdsysid::linalg::singular_values(&s);
        if sv[r - 1] > 0.2 {
            return s;
        }
    }
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// Observations `y_j = Σ_k sqrt(λ_k) q_k z_jk` whose gram `Σ_j y_j y_jᵀ` equals
/// `Q diag(λ) Qᵀ` exactly (up to rounding): the columns are the rows of a
/// scaled orthonormal `N × n` matrix.
pub fn observations_with_spectrum(spectrum: &[f64], samples: usize, rng: &mut impl Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = spectrum.len();
    assert!(samples >= n);
    let q = random_orthonormal(n, n, rng);
    let z = random_orthonormal(samples, n, rng);
    let scale = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, spectrum.iter().map(|l| l.sqrt())));
    (&q * scale * z.transpose(), q)
}
