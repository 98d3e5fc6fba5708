use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hdsysid(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdsysid"))
        .args(args)
        .current_dir(dir)
        .env_remove("SYSID_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

#[test]
fn col_approx_on_noiseless_fixture() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "cfg.json",
        r#"{"template": {"obs_noise_std": 0.0}, "n": 12, "lengths": [800]}"#,
    );
    let o = hdsysid(&["col-approx", "--config", "cfg.json", "--seed", "7", "--out", "basis.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("estimated rank: 1"), "{out}");
    let err_line = out.lines().find(|l| l.starts_with("principal angle error")).unwrap();
    let err: f64 = err_line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(err < 1e-8, "{err}");
    let basis = fs::read_to_string(dir.path().join("basis.csv")).unwrap();
    assert_eq!(basis.lines().next().unwrap(), "c_0");
    assert_eq!(basis.lines().count(), 13);
}

#[test]
fn simulate_then_identify_from_file() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "sim.json",
        r#"{"template": {"obs_noise_std": 0.1}, "n": 6, "lengths": [3000]}"#,
    );
    let o = hdsysid(&["simulate", "--config", "sim.json", "--out", "traj.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,u_0,y_0,y_1,y_2,y_3,y_4,y_5");
    assert_eq!(csv.lines().count(), 3002);
    assert!(dir.path().join("traj.system.json").exists());

    write(
        dir.path(),
        "hk.json",
        r#"{"trajectories": ["traj.csv"], "system_file": "traj.system.json"}"#,
    );
    let o = hdsysid(&["ho-kalman", "--config", "hk.json", "--out", "est.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o).lines().find(|l| l.starts_with("cb error")).unwrap().to_string();
    let cb: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(cb < 0.2, "{cb}");
    let est: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("est.json")).unwrap()).unwrap();
    assert_eq!(est["obs_dim"], 6);
}

#[test]
fn col_adapted_and_meta_run() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "cfg.json",
        r#"{"template": {}, "n": 20, "lengths": [2000, 2000, 2000]}"#,
    );
    let o = hdsysid(&["col-adapted", "--config", "cfg.json", "--out", "rep.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("estimated rank: 1"));
    let o = hdsysid(&["meta", "--config", "cfg.json", "--out", "meta.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta.as_array().unwrap().len(), 3);
}

#[test]
fn experiment_csv_schema_and_row_count() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "center.json",
        r#"{"kind": "fig1-center", "dims": [30], "length": 2000, "checkpoints": [1000, 2000], "seeds": [0, 1, 2]}"#,
    );
    let o = hdsysid(&["experiment", "--config", "center.json", "--out", "res.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("res.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("experiment,n,T,seed,method,metric,value,wall_ms"));
    assert_eq!(lines.count(), 3 * 2 * 2);
}

#[test]
fn experiment_output_is_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "right.json",
        r#"{"kind": "fig1-right", "dims": [40, 80], "length": 800, "seeds": [0, 1, 2, 3]}"#,
    );
    let one = hdsysid(&["experiment", "--config", "right.json", "--threads", "1", "--out", "a.csv"], dir.path());
    assert!(one.status.success(), "{}", stderr(&one));
    let many = Command::new(env!("CARGO_BIN_EXE_hdsysid"))
        .args(["experiment", "--config", "right.json", "--threads", "1", "--out", "b.csv"])
        .current_dir(dir.path())
        .env("SYSID_THREADS", "4")
        .output()
        .unwrap();
    assert!(many.status.success(), "{}", stderr(&many));
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    let b = fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn hard_family_reports_distance() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "hf.json", r#"{"n": 5, "eps": 0.05, "budget": 100000}"#);
    let o = hdsysid(&["hard-family", "--config", "hf.json", "--out", "fam.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let fam: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("fam.json")).unwrap()).unwrap();
    assert!(fam["members"].as_array().unwrap().len() >= 20);
    assert!(fam["min_pairwise_cb_distance"].as_f64().unwrap() >= 0.1);
    assert!(stdout(&o).contains("min pairwise cb distance"));
}

#[test]
fn invalid_configs_exit_one_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("experiment", r#"{"kind": "fig1-left", "seeds": [3, 3]}"#, "seeds[1]"),
        ("experiment", r#"{"kind": "fig1-left", "dims": [40, -1]}"#, "dims[1]"),
        ("experiment", r#"{"kind": "fig1-left", "sedes": [1]}"#, "sedes"),
        ("experiment", r#"{"kind": "fig1-left""#, "config"),
        ("col-approx", r#"{"template": {}, "lengths": [10]}"#, "n"),
        ("meta", r#"{"template": {}, "n": 4, "lengths": [100]}"#, "lengths"),
        ("hard-family", r#"{"n": 5}"#, "eps"),
    ];
    for (cmd, json, needle) in cases {
        write(dir.path(), "bad.json", json);
        let o = hdsysid(&[cmd, "--config", "bad.json"], dir.path());
        assert_eq!(o.status.code(), Some(1), "{cmd} {json}: {}", stderr(&o));
        assert!(stderr(&o).contains(needle), "{cmd} {json}: {}", stderr(&o));
    }
    let o = hdsysid(&["experiment", "--config", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_two_and_names_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("t,u_0,y_0,y_1\n");
    for t in 0..100 {
        csv.push_str(&format!("{t},0,{},{}\n", (t as f64).sin(), (t as f64).cos()));
    }
    csv.push_str("100,,0.5,0.5\n");
    write(dir.path(), "zero.csv", &csv);
    write(dir.path(), "cfg.json", r#"{"trajectories": ["zero.csv"]}"#);
    let o = hdsysid(&["ho-kalman", "--config", "cfg.json"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("[ho-kalman]"), "{}", stderr(&o));
}
