//! End-to-end tests of the `cfe` binary: exit codes, manifest plumbing, and
//! a desk-scale simulate -> train -> scan -> eval pipeline.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cfe"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cfe-cli-test-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(2));
    let text = format!("{}{}", stdout(&out), String::from_utf8_lossy(&out.stderr));
    assert!(text.contains("Usage"), "expected usage text, got: {text}");
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stability_prints_boundary_near_reference_value() {
    let out = run(&["stability", "--g", "0.1", "--alpha", "1"]);
    assert_eq!(out.status.code(), Some(0), "{:?}", out);
    let text = stdout(&out);
    let value: f64 = text
        .split('=')
        .nth(1)
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or_else(|| panic!("no numeric boundary in `{text}`"));
    assert!((value - 0.955).abs() <= 0.005, "boundary {value}");
}

#[test]
fn stability_reports_no_finite_boundary_for_unit_diffusion() {
    let out = run(&["stability", "--g", "1", "--alpha", "1"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("infinite"));
}

#[test]
fn stability_rejects_bad_alpha_with_exit_2() {
    let out = run(&["stability", "--g", "0.1", "--alpha", "3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_error_names_the_offending_key() {
    let dir = temp_dir("badkey");
    let cfg = write_config(
        &dir,
        "bad.cfg",
        "simulate.drift = sine1d\nsimulate.alpha = fast\nsimulate.g = 0.25\n",
    );
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("ds.txt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("simulate.alpha"), "stderr: {err}");
}

const SIM_CFG: &str = "\
simulate.drift = sine1d
simulate.alpha = 1
simulate.g = 0.25
simulate.init = point:0
simulate.fine_step = 1e-2
simulate.total_steps = 400
simulate.save_stride = 100
simulate.n_t = 25
simulate.seed = 11
";

#[test]
fn simulate_is_deterministic_and_writes_manifest() {
    let dir = temp_dir("sim");
    let cfg = write_config(&dir, "sim.cfg", SIM_CFG);
    let a = dir.join("a.txt");
    let b = dir.join("b.txt");
    for out_path in [&a, &b] {
        let out = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{:?}", out);
        assert!(stdout(&out).contains("n_T=25"));
    }
    assert_eq!(
        std::fs::read(&a).unwrap(),
        std::fs::read(&b).unwrap(),
        "same seed must give byte-identical datasets"
    );
    let manifest = std::fs::read_to_string(format!("{}.manifest", a.display())).unwrap();
    assert!(manifest.contains("command = simulate"));
    assert!(manifest.contains("simulate.seed = 11"));
}

/// Desk-scale pipeline: simulate, train on a reduced grid, scan the scalar
/// family, evaluate against the ground truth. The train tolerance is the
/// coarse-recovery bound; the full-scale configuration is exercised in the
/// core acceptance suite.
#[test]
fn pipeline_simulate_train_scan_eval() {
    let dir = temp_dir("pipeline");
    let sim_cfg = write_config(
        &dir,
        "sim.cfg",
        "\
simulate.drift = sine1d
simulate.alpha = 1
simulate.g = 0.25
simulate.init = point:0
simulate.fine_step = 1e-3
simulate.total_steps = 4000
simulate.save_stride = 100
simulate.n_t = 60
simulate.seed = 3
",
    );
    let ds = dir.join("sine.txt");
    let out = run(&[
        "simulate",
        "--config",
        sim_cfg.to_str().unwrap(),
        "--out",
        ds.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{:?}", out);

    let train_cfg = write_config(
        &dir,
        "train.cfg",
        "\
grid.m = 256
grid.n_l = 8
loss.alpha = 1
loss.g = 0.25
loss.nu = 10
loss.pad = 64
loss.mu = 0
model.j_max = 4
train.max_iter = 60
",
    );
    let coeffs = dir.join("theta.csv");
    let out = run(&[
        "train",
        "--config",
        train_cfg.to_str().unwrap(),
        "--dataset",
        ds.to_str().unwrap(),
        "--out",
        coeffs.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{:?}", out);
    assert!(coeffs.exists());
    assert!(Path::new(&format!("{}.report.txt", coeffs.display())).exists());
    assert!(Path::new(&format!("{}.manifest", coeffs.display())).exists());

    let scan_csv = dir.join("scan.csv");
    let out = run(&[
        "scan",
        "--config",
        train_cfg.to_str().unwrap(),
        "--set",
        "scan.step=0.1",
        "--dataset",
        ds.to_str().unwrap(),
        "--out",
        scan_csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{:?}", out);
    let scan_text = std::fs::read_to_string(&scan_csv).unwrap();
    assert_eq!(scan_text.lines().count(), 12, "header plus 11 scan points");
    let minimizer: f64 = stdout(&out)
        .split("theta = ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .expect("minimizer reported");
    assert!(
        (0.3..=0.7).contains(&minimizer),
        "coarse scan minimizer {minimizer} should be near 0.5"
    );

    let eval_cfg = write_config(
        &dir,
        "eval.cfg",
        "\
eval.truth = sine1d
eval.alpha = 1
eval.g = 0.25
eval.fine_step = 1e-3
eval.total_steps = 4000
eval.save_stride = 100
eval.n_test = 40
eval.seed = 5
",
    );
    let report = dir.join("eval.txt");
    let out = run(&[
        "eval",
        "--config",
        eval_cfg.to_str().unwrap(),
        "--coeffs",
        coeffs.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{:?}", out);
    let text = std::fs::read_to_string(&report).unwrap();
    let mae: f64 = text
        .lines()
        .find(|l| l.starts_with("coeff_mae"))
        .and_then(|l| l.split('=').nth(1))
        .and_then(|v| v.trim().parse().ok())
        .expect("coeff_mae line");
    // Smoke-scale data (60 short trajectories) leaves noticeable sampling
    // noise in the fit; accuracy at full scale is covered elsewhere.
    assert!(mae <= 5e-2, "desk-scale coefficient MAE {mae}");
    for field in ["mmae", "miqr", "reference_mmae", "dropped_trajectories"] {
        assert!(text.contains(field), "report missing {field}: {text}");
    }
}

#[test]
fn portrait_writes_grid_and_candidates() {
    let dir = temp_dir("portrait");
    // Hand-written single-well coefficients: f = (sin x2, -sin x1).
    let coeffs = dir.join("well.csv");
    let mut body = String::from("j0,j1,component,re,im\n");
    body.push_str("0,1,0,0,-0.5\n0,-1,0,0,0.5\n");
    body.push_str("1,0,1,0,0.5\n-1,0,1,0,-0.5\n");
    std::fs::write(&coeffs, body).unwrap();
    let csv = dir.join("field.csv");
    let out = run(&[
        "portrait",
        "--coeffs",
        coeffs.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
        "--set",
        "portrait.resolution=21",
        "--set",
        "portrait.lo=-3,-3",
        "--set",
        "portrait.hi=3,3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{:?}", out);
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .collect();
    assert_eq!(rows.len(), 21 * 21);
    // strictly increasing lexicographic coordinates
    let mut prev: Option<(f64, f64)> = None;
    for row in &rows {
        let mut it = row.split(',');
        let x1: f64 = it.next().unwrap().parse().unwrap();
        let x2: f64 = it.next().unwrap().parse().unwrap();
        if let Some((p1, p2)) = prev {
            assert!(x1 > p1 || (x1 == p1 && x2 > p2), "rows not sorted");
        }
        prev = Some((x1, x2));
    }
    assert!(text.contains("fixed-point candidate"));
}

#[test]
fn portrait_rejects_one_dimensional_models() {
    let dir = temp_dir("portrait1d");
    let coeffs = dir.join("one.csv");
    std::fs::write(&coeffs, "j0,component,re,im\n2,0,0,-0.5\n-2,0,0,0.5\n").unwrap();
    let out = run(&[
        "portrait",
        "--coeffs",
        coeffs.to_str().unwrap(),
        "--out",
        dir.join("x.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_suite_passes() {
    let out = run(&["oracle"]);
    let text = stdout(&out);
    assert_eq!(out.status.code(), Some(0), "oracle output:\n{text}");
    assert!(text.lines().filter(|l| l.contains(": ok")).count() >= 6, "{text}");
    assert!(!text.contains("FAIL"), "{text}");
}
