//! Checks against independent reference computations: each expected value is
//! produced here by a different route than the library uses.

mod common;

use approx::assert_relative_eq;
use common::{max_abs_diff, observations_with_spectrum, random_invertible, random_minimal, random_orthonormal, Shape};
use hdsysid::hokalman::{build_hankel, estimate_markov, realize, MarkovEstimate};
use hdsysid::lti::{decay_diagnostics, markov_blocks};
use hdsysid::metrics::{min_pairwise_cb_distance, SharedNoise};
use hdsysid::subspace::{col_approx_pooled, lift_observer, project_trajectory};
use hdsysid::{
    align_realization, cb_error, check_minimal, col_adapted_sysid, col_approx, hard_instance_family, ho_kalman,
    markov_error, meta_sysid, principal_angle_error, simulate, simulate_with_inputs, NoiseKind, ObsNoise, Realization,
    StreamKey, SubspaceBasis, SysIdError, SystemParams, Trajectory,
};
use nalgebra::{DMatrix, DVector};

/// `A^i` by binary exponentiation, independent of the library's iteration.
fn power(a: &DMatrix<f64>, mut i: usize) -> DMatrix<f64> {
    let mut result = DMatrix::identity(a.nrows(), a.ncols());
    let mut base = a.clone();
    while i > 0 {
        if i & 1 == 1 {
            result = &result * &base;
        }
        base = &base * &base;
        i >>= 1;
    }
    result
}

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

#[test]
fn markov_parameters_match_repeated_squaring() {
    let mut rng = StreamKey::new(11).at(NoiseKind::Auxiliary, 0);
    let a = common::gaussian(2, 2, &mut rng) * 0.5;
    let b = common::gaussian(2, 1, &mut rng);
    let c = common::gaussian(3, 2, &mut rng);
    let blocks = markov_blocks(&a, &b, &c, 5);
    for (i, g) in blocks.iter().enumerate() {
        assert!(max_abs_diff(g, &(&c * power(&a, i) * &b)) <= 1e-12, "block {i}");
    }
}

#[test]
fn hand_computed_minimality() {
    // controllability [B, AB] = [[1, 0.5], [1, 0.3]], det = -0.2
    // observability [C; CA] = [[1, 1], [0.5, 0.3]], det = -0.2
    let sys = SystemParams::noiseless(
        DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.3]),
        DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
    )
    .unwrap();
    let ctrl = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 1.0, 0.3]);
    assert_relative_eq!(ctrl.determinant(), -0.2, epsilon = 1e-15);
    let rep = check_minimal(&sys);
    assert!(rep.is_minimal());
    assert_eq!((rep.rank_controllability, rep.rank_observability), (2, 2));
}

#[test]
fn decay_bound_holds_on_power_sweep() {
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 10.0, 0.0, 0.5]);
    let diag = decay_diagnostics(&a, 40).unwrap();
    for i in 1..=40 {
        let norm = hdsysid::linalg::op_norm(&power(&a, i));
        let bound = diag.psi_a * diag.rho_a.powi(i as i32 - 1);
        assert!(norm <= bound * (1.0 + 1e-9), "i={i}: {norm} > {bound}");
    }
}

#[test]
fn planted_spectrum_gives_planted_rank() {
    let t = 10_000usize;
    let tf = t as f64;
    let top = tf + tf.powf(0.9);
    let spectrum = [top, top, tf, tf, tf, tf];
    let mut rng = StreamKey::new(2).at(NoiseKind::Auxiliary, 0);
    let (y, q) = observations_with_spectrum(&spectrum, t + 1, &mut rng);
    let res = col_approx(&y, None).unwrap();
    // the same spectrum, recomputed independently
    let gram = &y * y.transpose();
    let mut eig: Vec<f64> = gram.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    for (e, s) in eig.iter().zip(&spectrum) {
        assert_relative_eq!(*e, *s, max_relative = 1e-9);
    }
    assert_eq!(res.estimated_rank, 2);
    let planted = SubspaceBasis::new(q.columns(0, 2).into_owned()).unwrap();
    assert!(principal_angle_error(&res.basis, &planted).unwrap() < 1e-8);
}

#[test]
fn pooled_threshold_uses_summed_horizon() {
    // a top gap between the single-trajectory and pooled thresholds
    let (t1, t2) = (4000usize, 4000usize);
    let single = (t1 as f64).powf(0.75);
    let pooled = ((t1 + t2) as f64).powf(0.75);
    let gap = 0.5 * (single + pooled);
    assert!(single < gap && gap < pooled);
    let total_base = (t1 + t2) as f64;
    let spectrum = [total_base + gap, total_base, total_base, total_base];
    let mut rng = StreamKey::new(5).at(NoiseKind::Auxiliary, 0);
    // split the planted observations into two sets with the right column counts
    let (y, _) = observations_with_spectrum(&spectrum, t1 + t2 + 2, &mut rng);
    let y1 = y.columns(0, t1 + 1).into_owned();
    let y2 = y.columns(t1 + 1, t2 + 1).into_owned();
    let res = col_approx_pooled(&[&y1, &y2], None);
    match res {
        Err(SysIdError::RankUndetected { threshold, largest_gap, .. }) => {
            assert_relative_eq!(threshold, pooled, max_relative = 1e-12);
            assert!(largest_gap < pooled && largest_gap > single);
        }
        other => panic!("expected rank undetected, got {other:?}"),
    }
    // the same gram judged against a single-trajectory horizon detects rank 1
    let gram = &y * y.transpose();
    let res = hdsysid::subspace::col_approx_from_gram(&gram, t1, None).unwrap();
    assert_eq!(res.estimated_rank, 1);
}

#[test]
fn thirty_degree_principal_angle() {
    let e1 = SubspaceBasis::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
    let (s, c) = 30f64.to_radians().sin_cos();
    let tilted = SubspaceBasis::new(DMatrix::from_column_slice(2, 1, &[c, s])).unwrap();
    assert_relative_eq!(principal_angle_error(&e1, &tilted).unwrap(), 0.5, epsilon = 1e-15);
}

#[test]
fn projection_round_trips_in_span_vectors() {
    let mut rng = StreamKey::new(8).at(NoiseKind::Auxiliary, 0);
    let phi = SubspaceBasis::new(random_orthonormal(7, 3, &mut rng)).unwrap();
    let coeff = common::gaussian(3, 21, &mut rng);
    let y = phi.matrix() * &coeff;
    let traj = Trajectory::new(DMatrix::zeros(1, 20), y.clone(), None).unwrap();
    let projected = project_trajectory(&traj, &phi).unwrap();
    assert!(max_abs_diff(&(phi.matrix() * projected.observations()), &y) <= 1e-10);

    let low_c = common::gaussian(3, 2, &mut rng);
    let lifted = lift_observer(&phi, &low_c).unwrap();
    assert!(max_abs_diff(&phi.matrix().tr_mul(&lifted), &low_c) <= 1e-12);
}

#[test]
fn realize_random_minimal_system_exactly() {
    let sys = random_minimal(Shape { r: 2, n: 3, m: 2 }, 0.8, 21);
    let d = 3;
    let blocks = markov_blocks(&sys.a, &sys.b, &sys.c, 2 * d);
    let est = realize(&build_hankel(&MarkovEstimate::from_blocks(blocks.clone()).unwrap()), 2).unwrap();
    for (i, (g, h)) in blocks.iter().zip(est.markov_parameters(2 * d).iter()).enumerate() {
        assert!(max_abs_diff(g, h) <= 1e-8, "block {i}");
    }
    // overestimated rank on a rank-2 Hankel
    let h = build_hankel(&MarkovEstimate::from_blocks(blocks).unwrap());
    assert!(matches!(realize(&h, 3), Err(SysIdError::NearSingularHankel { .. })));
}

#[test]
fn markov_consistency_on_realizable_blocks() {
    // realizable blocks plus a small perturbation: the realization's Markov
    // parameters stay within the Hankel reconstruction error of the input
    let sys = random_minimal(Shape { r: 2, n: 4, m: 1 }, 0.7, 4);
    let d = 3;
    let mut rng = StreamKey::new(4).at(NoiseKind::Auxiliary, 9);
    let blocks: Vec<_> = markov_blocks(&sys.a, &sys.b, &sys.c, 2 * d)
        .into_iter()
        .map(|g| &g + common::gaussian(4, 1, &mut rng) * 1e-4)
        .collect();
    let h = build_hankel(&MarkovEstimate::from_blocks(blocks.clone()).unwrap());
    let est = realize(&h, 2).unwrap();
    let (u, s, v) = hdsysid::linalg::svd_sorted(&h.minus);
    let low = u.columns(0, 2) * DMatrix::from_diagonal(&DVector::from_row_slice(&s[..2])) * v.columns(0, 2).transpose();
    let recon_error = hdsysid::linalg::op_norm(&(&h.minus - low));
    for (i, (g, gh)) in blocks.iter().zip(est.markov_parameters(2 * d - 1).iter()).enumerate() {
        let e = hdsysid::linalg::op_norm(&(g - gh));
        assert!(e <= 10.0 * recon_error + 1e-8, "block {i}: {e} vs {recon_error}");
    }
}

#[test]
fn planted_similarity_is_recovered() {
    let sys = random_minimal(Shape { r: 3, n: 5, m: 2 }, 0.8, 13);
    let mut rng = StreamKey::new(13).at(NoiseKind::Auxiliary, 5);
    let s0 = random_invertible(3, &mut rng);
    let copy = sys.transformed(&s0).unwrap();
    let est = Realization::new(copy.a, copy.b, copy.c).unwrap();
    let (s, report) = align_realization(&est, &sys, 6).unwrap();
    assert!(max_abs_diff(&s, &s0) <= 1e-8);
    let al = report.aligned.unwrap();
    assert!(al.a_error <= 1e-8 && al.b_error <= 1e-8 && al.c_error <= 1e-8);
    assert!(report.markov_errors.iter().all(|&e| e <= 1e-9));
}

#[test]
fn cb_error_triangle_bound() {
    let sys = random_minimal(Shape { r: 2, n: 4, m: 2 }, 0.6, 31);
    let mut rng = StreamKey::new(31).at(NoiseKind::Auxiliary, 2);
    for _ in 0..20 {
        let b_hat = &sys.b + common::gaussian(2, 2, &mut rng) * 0.05;
        let c_hat = &sys.c + common::gaussian(4, 2, &mut rng) * 0.05;
        let est = Realization::new(sys.a.clone(), b_hat.clone(), c_hat.clone()).unwrap();
        let norm = hdsysid::linalg::op_norm;
        let (dc, db) = (&c_hat - &sys.c, &b_hat - &sys.b);
        let bound = norm(&dc) * norm(&b_hat) + norm(&sys.c) * norm(&db) + norm(&dc) * norm(&db);
        assert!(cb_error(&est, &sys).unwrap() <= bound + 1e-12);
    }
}

#[test]
fn hard_family_brute_force_packing() {
    let noise = SharedNoise {
        sigma_w: DMatrix::zeros(1, 1),
        obs_noise: ObsNoise::Isotropic(1.0),
        sigma_u: DMatrix::identity(1, 1),
    };
    let eps = 0.05;
    let fam = hard_instance_family(5, eps, 1, 1, 200, 100_000, &noise, &StreamKey::new(0)).unwrap();
    assert!(fam.len() >= 20, "{} members", fam.len());
    for i in 0..fam.len() {
        assert!(check_minimal(&fam[i]).is_minimal());
        for k in 0..=5 {
            let g = fam[i].markov_parameters(k + 1);
            assert!(max_abs_diff(&g[k], &(&g[0] * 0.5f64.powi(k as i32))) <= 1e-15);
        }
        for j in (i + 1)..fam.len() {
            // CB = e_1 + 4ε p; distance is 4ε‖p_i − p_j‖ ≥ 2ε
            let d = (&fam[i].c * &fam[i].b - &fam[j].c * &fam[j].b).norm();
            assert!(d >= 2.0 * eps - 1e-12, "pair ({i}, {j}): {d}");
        }
    }
    assert!(min_pairwise_cb_distance(&fam) >= 0.1 - 1e-12);
}

fn scalar_study(n: usize, obs_var: f64, seed: u64) -> SystemParams {
    let c = random_orthonormal(n, 1, &mut StreamKey::new(seed).at(NoiseKind::Structure, 0));
    SystemParams::new(scalar(0.9), scalar(1.0), c, scalar(0.0), ObsNoise::Isotropic(obs_var), scalar(0.1)).unwrap()
}

#[test]
fn ho_kalman_recovers_fir_systems_exactly() {
    // a nilpotent A has no truncation tail: the lag regression is exact
    let sys = SystemParams::noiseless(scalar(0.0), scalar(1.0), scalar(1.0)).unwrap();
    let traj = simulate(&sys, 200, &StreamKey::new(1), false).unwrap();
    let est = estimate_markov(&traj, 3).unwrap();
    let expected = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    for (g, e) in est.blocks.iter().zip(expected) {
        assert!((g[(0, 0)] - e).abs() <= 1e-9);
    }
    let sys = SystemParams::noiseless(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 1.0, 0.0, -1.0]),
    )
    .unwrap();
    let traj = simulate(&sys, 300, &StreamKey::new(2), false).unwrap();
    let est = ho_kalman(&traj, 2, 0.05).unwrap();
    assert!(markov_error(&est, &sys, 6).unwrap().iter().all(|&e| e <= 1e-9));
}

#[test]
fn ho_kalman_truncation_bias_on_slow_system() {
    // With A = 0.9 the lag-2d regression omits C A^{2d} x_{t-2d}; the fitted
    // blocks deviate from 0.9^i by an amount set by that omitted tail.
    let sys = SystemParams::noiseless(scalar(0.9), scalar(1.0), scalar(1.0)).unwrap();
    let traj = simulate(&sys, 500, &StreamKey::new(1), false).unwrap();
    let est = estimate_markov(&traj, 3).unwrap();
    let worst = est
        .blocks
        .iter()
        .enumerate()
        .map(|(i, g)| (g[(0, 0)] - 0.9f64.powi(i as i32)).abs())
        .fold(0.0, f64::max);
    assert!(worst < 0.05, "{worst}");
    assert!(est.regression_residual > 0.0);
    // the bias vanishes as the tail shrinks
    let fast = SystemParams::noiseless(scalar(0.1), scalar(1.0), scalar(1.0)).unwrap();
    let traj = simulate(&fast, 500, &StreamKey::new(1), false).unwrap();
    let est = estimate_markov(&traj, 3).unwrap();
    for (i, g) in est.blocks.iter().enumerate() {
        assert!((g[(0, 0)] - 0.1f64.powi(i as i32)).abs() <= 1e-5, "block {i}");
    }
}

#[test]
fn ho_kalman_is_similarity_equivariant() {
    let sys = random_minimal(Shape { r: 2, n: 4, m: 1 }, 0.6, 7);
    let noisy = |s: &SystemParams| {
        SystemParams::new(
            s.a.clone(),
            s.b.clone(),
            s.c.clone(),
            DMatrix::identity(2, 2) * 0.01,
            ObsNoise::Isotropic(0.05),
            DMatrix::identity(1, 1),
        )
        .unwrap()
    };
    let s0 = random_invertible(2, &mut StreamKey::new(7).at(NoiseKind::Auxiliary, 1));
    let base = noisy(&sys);
    let moved = noisy(&sys.transformed(&s0).unwrap());
    let key = StreamKey::new(70);
    let est_base = ho_kalman(&simulate(&base, 3000, &key, false).unwrap(), 2, 0.05).unwrap();
    let u = simulate(&base, 3000, &key, false).unwrap().inputs().clone();
    // same inputs; process noise enters through the transformed coordinates, so
    // compare against the base system's Markov parameters with a statistical tolerance
    let est_moved = ho_kalman(&simulate_with_inputs(&moved, u, &key, false).unwrap(), 2, 0.05).unwrap();
    let e1 = markov_error(&est_base, &sys, 4).unwrap();
    let e2 = markov_error(&est_moved, &sys, 4).unwrap();
    for (a, b) in e1.iter().zip(&e2) {
        assert!(*a < 0.1 && *b < 0.1, "{a} {b}");
    }
}

#[test]
fn realization_is_bit_reproducible() {
    let sys = scalar_study(10, 1.0, 3);
    let traj = simulate(&sys, 2000, &StreamKey::new(3), false).unwrap();
    assert_eq!(ho_kalman(&traj, 1, 0.05).unwrap(), ho_kalman(&traj, 1, 0.05).unwrap());
}

#[test]
fn rank_override_matches_detection() {
    let sys = scalar_study(40, 1.0, 17);
    let key = StreamKey::new(17);
    let d1 = simulate(&sys, 5000, &key.child(1), false).unwrap();
    let d2 = simulate(&sys, 5000, &key.child(2), false).unwrap();
    let auto = col_adapted_sysid(&d1, &d2, 1, 0.05, None).unwrap();
    assert_eq!(auto.estimated_rank, 1);
    let forced = col_adapted_sysid(&d1, &d2, 1, 0.05, Some(1)).unwrap();
    assert_eq!(auto.realization, forced.realization);
    assert_eq!(auto.basis, forced.basis);
}

#[test]
fn meta_isolates_failures_and_duplicates_agree() {
    let sys = scalar_study(6, 0.0, 23);
    let key = StreamKey::new(23);
    let t1 = simulate(&sys, 400, &key.child(1), false).unwrap();
    let zero = simulate_with_inputs(&sys, DMatrix::zeros(1, 400), &key.child(2), false).unwrap();
    // the zero-input set has zero observations; pooling it alone has no signal,
    // so slot 1 uses rank override while slot 2 fails in its own regression
    let reports = meta_sysid(&[t1.clone(), zero], 1, 0.05, Some(1)).unwrap();
    assert!(reports[0].is_ok());
    assert!(matches!(reports[1], Err(SysIdError::IllConditionedRegression { .. })));

    let reports = meta_sysid(&[t1.clone(), t1.clone()], 1, 0.05, None).unwrap();
    let single = col_adapted_sysid(&t1, &t1, 1, 0.05, None).unwrap();
    for rep in &reports {
        let rep = rep.as_ref().unwrap();
        let a = markov_error(&rep.realization, &sys, 6).unwrap();
        let b = markov_error(&single.realization, &sys, 6).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-8);
        }
    }
}

#[test]
fn meta_reports_depend_on_others_only_through_the_basis() {
    let sys = scalar_study(8, 0.5, 29);
    let key = StreamKey::new(29);
    let t: Vec<_> = (0..4).map(|k| simulate(&sys, 1500, &key.child(k), false).unwrap()).collect();
    let full = meta_sysid(&t, 1, 0.05, None).unwrap();
    let dropped = meta_sysid(&[t[0].clone(), t[1].clone(), t[2].clone()], 1, 0.05, None).unwrap();
    let rep_full = full[0].as_ref().unwrap();
    let rep_drop = dropped[0].as_ref().unwrap();
    // projecting dataset 0 onto each report's basis and running Ho-Kalman reproduces it
    for rep in [rep_full, rep_drop] {
        let projected = project_trajectory(&t[0], &rep.basis).unwrap();
        let direct = ho_kalman(&projected, 1, 0.05).unwrap();
        assert_eq!(direct.a, rep.realization.a);
        assert_eq!(direct.b, rep.realization.b);
        assert_eq!(direct.c, rep.low_c);
    }
}

#[test]
fn noiseless_column_space_of_rank_one_signal() {
    let c = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
    let sys = SystemParams::noiseless(scalar(0.5), scalar(1.0), c.clone()).unwrap();
    let traj = simulate(&sys, 10_000, &StreamKey::new(4), false).unwrap();
    let energy: f64 = traj.observations().row(0).iter().map(|v| v * v).sum();
    assert!(energy > (10_000f64).powf(0.75));
    let res = col_approx(traj.observations(), None).unwrap();
    assert_eq!(res.estimated_rank, 1);
    let truth = SubspaceBasis::new(c).unwrap();
    assert!(principal_angle_error(&res.basis, &truth).unwrap() <= 1e-9);
}

#[test]
fn study_trajectory_csv_fixture() {
    let sys = scalar_study(40, 1.0, 9);
    let traj = simulate(&sys, 50, &StreamKey::new(9), false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("study.csv");
    hdsysid::io::emit_trajectory_csv(&traj, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let expected: Vec<String> =
        ["t".to_string(), "u_0".to_string()].into_iter().chain((0..40).map(|i| format!("y_{i}"))).collect();
    assert_eq!(header, expected);
    // 41 value columns after the time index
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == 42));
    assert_eq!(hdsysid::io::ingest_trajectory_csv(&path).unwrap(), traj);
}
