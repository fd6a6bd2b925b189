use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn aiflab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aiflab"))
        .args(args)
        .current_dir(dir)
        .env("AIFLAB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

fn scalar_data(dir: &Path) {
    fs::write(dir.join("d.csv"), "x\n0.3\n-1.2\n2.2\n0.9\n4.0\n-0.1\n1.7\n").unwrap();
}

#[test]
fn meanstd_aif_is_root_two() {
    let dir = tempfile::tempdir().unwrap();
    scalar_data(dir.path());
    let out = aiflab(
        &["aif", "--estimator", "meanstd", "--data", "d.csv", "--p", "2"],
        dir.path(),
    );
    let v = stdout_json(&out);
    assert!((v["aif"].as_f64().unwrap() - 2f64.sqrt()).abs() < 1e-12);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"aif\": 1.41421356237309"), "{text}");
}

#[test]
fn p_below_one_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    scalar_data(dir.path());
    let out = aiflab(
        &["aif", "--estimator", "meanstd", "--data", "d.csv", "--p", "0.5"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "PNotSupported");
}

#[test]
fn unknown_flags_and_subcommands_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(aiflab(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(
        aiflab(&["design", "--colour", "red"], dir.path()).status.code(),
        Some(1)
    );
    assert_eq!(aiflab(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn infeasible_design_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = aiflab(&["design", "--density", "laplace", "--xi", "1.2"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "Infeasible");
}

#[test]
fn design_emits_psi_table_with_kkt_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = aiflab(
        &["design", "--density", "laplace", "--xi", "3.0", "--emit-psi", "out.csv"],
        dir.path(),
    );
    let v = stdout_json(&out);
    assert!(v["kkt_max_residual"].as_f64().unwrap() < 1e-9);
    let csv = fs::read_to_string(dir.path().join("out.csv")).unwrap();
    let resid: f64 = csv
        .lines()
        .find_map(|l| l.strip_prefix("# kkt_max_residual="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(resid < 1e-9);
    let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "z,psi1,dpsi1,psi2,dpsi2");
    let rows = csv.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert!(rows >= 2048);
}

#[test]
fn config_file_sits_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    scalar_data(dir.path());
    fs::write(dir.path().join("run.cfg"), "# defaults\nestimator = meanstd\np = 3\n").unwrap();
    let v = stdout_json(&aiflab(&["--config", "run.cfg", "aif", "--data", "d.csv"], dir.path()));
    assert_eq!(v["p"].as_f64(), Some(3.0));
    let v = stdout_json(&aiflab(
        &["--config", "run.cfg", "aif", "--data", "d.csv", "--p", "2"],
        dir.path(),
    ));
    assert_eq!(v["p"].as_f64(), Some(2.0));
    fs::write(dir.path().join("bad.cfg"), "shade = 3\n").unwrap();
    let out = aiflab(&["--config", "bad.cfg", "aif", "--data", "d.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verbose_prints_resolved_configuration() {
    let dir = tempfile::tempdir().unwrap();
    scalar_data(dir.path());
    let out = aiflab(
        &["-v", "solve", "--estimator", "meanstd", "--data", "d.csv"],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("resolved configuration"));
}

#[test]
fn attack_writes_perturbed_data() {
    let dir = tempfile::tempdir().unwrap();
    scalar_data(dir.path());
    let out = aiflab(
        &[
            "attack",
            "--estimator",
            "huber2",
            "--data",
            "d.csv",
            "--p",
            "2",
            "--delta",
            "0.001",
            "--emit-attack",
            "moved.csv",
        ],
        dir.path(),
    );
    let v = stdout_json(&out);
    assert!(v["kkt_max_residual"].as_f64().unwrap() < 1e-9);
    let moved = fs::read_to_string(dir.path().join("moved.csv")).unwrap();
    assert_eq!(moved.lines().count(), 7);
    let gap = v["first_order"][2]["relative_gap"].as_f64().unwrap();
    assert!(gap < 0.05, "{gap}");
}

#[test]
fn regression_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("x1,x2,y\n");
    for n in 0..12 {
        let (a, b) = ((n as f64 * 0.7).sin(), (n as f64 * 1.3).cos());
        let _ = std::fmt::Write::write_fmt(
            &mut csv,
            format_args!("{a},{b},{}\n", 0.5 * a - b + 0.3 * (n as f64).sin()),
        );
    }
    fs::write(dir.path().join("r.csv"), &csv).unwrap();
    let v = stdout_json(&aiflab(
        &["regress-aif", "--data", "r.csv", "--scheme", "ols", "--p", "2"],
        dir.path(),
    ));
    assert!(v["aif"].as_f64().unwrap() > 0.0);
    let out = aiflab(&["sweep", "--data", "r.csv,r.csv", "--k-grid", "0.5,5"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("scheme,K,mean_aif,stderr,n_fail"));
    assert_eq!(text.lines().count(), 1 + 4 * 2);
}

#[test]
fn population_and_frontier() {
    let dir = tempfile::tempdir().unwrap();
    let v = stdout_json(&aiflab(
        &[
            "ls-aif",
            "--population",
            "--density",
            "laplace",
            "--estimator",
            "huber2",
            "--K",
            "3",
        ],
        dir.path(),
    ));
    assert!((v["aif"].as_f64().unwrap() - 1.385).abs() < 1e-3);
    let out = aiflab(
        &["frontier", "--xi-grid", "1.0,3,6", "--split-resolution", "6"],
        dir.path(),
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    // ξ = 1 is below the feasibility floor and leaves a gap.
    assert_eq!(text.lines().count(), 3, "{text}");
}

#[test]
fn experiment_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "experiment",
        "--name",
        "regression_sweep",
        "--set",
        "n_replicates=3",
        "--set",
        "k_grid=3.05,5",
        "--seed",
        "11",
        "--out",
        "a",
    ];
    let m = stdout_json(&aiflab(&args, dir.path()));
    assert_eq!(m["config"]["seed"], 11);
    let mut args_b = args;
    args_b[args.len() - 1] = "b";
    stdout_json(&aiflab(&args_b, dir.path()));
    let a = fs::read(dir.path().join("a/regression_sweep.csv")).unwrap();
    let b = fs::read(dir.path().join("b/regression_sweep.csv")).unwrap();
    assert_eq!(a, b);
    assert!(dir.path().join("a/regression_sweep_manifest.json").exists());
    assert!(dir.path().join("a/regression_sweep_mallows.csv").exists());
}
