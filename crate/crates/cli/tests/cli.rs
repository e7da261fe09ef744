//! End-to-end tests of the ddsim binary: exit codes, artifact layout,
//! determinism across worker counts, and report wording.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ddsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

const TINY_DECAY_CONFIG: &str = r#"
[ensemble]
n_spins = 4
n_realizations = 6
density_ppm = 500.0

[sweep]
family = "xy8"

[sweep.mode]
kind = "fixed_interval_sweep_n"
interval_ns = 6.0
pulse_counts = [8, 16, 24]
"#;

#[test]
fn missing_config_file_exits_2() {
    let output = ddsim(&["simulate-decay", "--config", "/nonexistent/run.toml"]);
    assert_eq!(code(&output), 2, "stderr: {}", stderr(&output));
    assert!(stderr(&output).contains("error:"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[ensemble]\nn_spin = 8\n");
    let output = ddsim(&["simulate-decay", "--config", &config]);
    assert_eq!(code(&output), 2, "stderr: {}", stderr(&output));
    assert!(stderr(&output).contains("n_spin"));
}

#[test]
fn simulate_decay_is_deterministic_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY_DECAY_CONFIG);
    let mut csvs = Vec::new();
    for (out, workers) in [("a", "1"), ("b", "3")] {
        let out_dir = dir.path().join(out);
        let output = ddsim(&[
            "simulate-decay",
            "--config",
            &config,
            "--seed",
            "7",
            "--workers",
            workers,
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        let status = code(&output);
        assert!(
            status == 0 || status == 4,
            "unexpected exit {status}: {}",
            stderr(&output)
        );
        csvs.push(fs::read(out_dir.join("decay.csv")).unwrap());
        assert!(out_dir.join("simulate-decay_manifest.json").exists());
        assert!(out_dir.join("decay_fit.txt").exists());
    }
    assert_eq!(csvs[0], csvs[1], "worker count changed the curve");

    let text = String::from_utf8(csvs[0].clone()).unwrap();
    let times: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|line| line.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(times.len(), 3);
    assert!(times.windows(2).all(|w| w[0] < w[1]), "times not sorted: {times:?}");
}

#[test]
fn simulate_decay_fit_failure_exits_4_after_writing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
[ensemble]
n_spins = 4
n_realizations = 4
density_ppm = 236.0

[sweep]
family = "xy8"

[sweep.mode]
kind = "fixed_interval_sweep_n"
interval_ns = 6.0
pulse_counts = [8]
"#,
    );
    let out_dir = dir.path().join("out");
    let output = ddsim(&[
        "simulate-decay",
        "--config",
        &config,
        "--svg",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 4, "stderr: {}", stderr(&output));
    assert!(out_dir.join("decay.csv").exists());
    assert!(out_dir.join("decay.svg").exists());
    let report = fs::read_to_string(out_dir.join("decay_fit.txt")).unwrap();
    assert!(report.contains("T2 fit failed"), "report: {report}");
}

#[test]
fn density_sweep_flags_fit_failures_without_failing() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
densities_ppm = [236.0]

[ensemble]
n_spins = 4
n_realizations = 4

[xy8_sweep]
family = "xy8"

[xy8_sweep.mode]
kind = "fixed_interval_sweep_n"
interval_ns = 6.0
pulse_counts = [8]

[droid_sweep]
family = "droid"

[droid_sweep.mode]
kind = "fixed_interval_sweep_n"
interval_ns = 6.0
pulse_counts = [6]
"#,
    );
    let out_dir = dir.path().join("out");
    let output = ddsim(&[
        "density-sweep",
        "--config",
        &config,
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    assert!(stdout(&output).contains("fit failed"));
    let summary = fs::read_to_string(out_dir.join("t2_summary.csv")).unwrap();
    assert!(summary.lines().count() >= 3, "summary: {summary}");
    assert!(summary.contains("fit"), "summary lacks failure flags: {summary}");
    assert!(out_dir.join("curves.csv").exists());
}

#[test]
fn avg_hamiltonian_droid_reports_heisenberg_match() {
    let dir = tempfile::tempdir().unwrap();
    let output = ddsim(&[
        "avg-hamiltonian",
        "--builtin",
        "droid",
        "--n-spins",
        "3",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    assert!(
        stdout(&output).contains("Heisenberg/3: MATCH"),
        "stdout: {}",
        stdout(&output)
    );
    assert!(dir.path().join("avg_hamiltonian.txt").exists());
}

#[test]
fn avg_hamiltonian_xy8_leaves_dipolar_form_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let output = ddsim(&[
        "avg-hamiltonian",
        "--builtin",
        "xy8",
        "--n-spins",
        "3",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    assert!(
        stdout(&output).contains("Dipolar form: UNCHANGED"),
        "stdout: {}",
        stdout(&output)
    );
}

#[test]
fn avg_hamiltonian_unknown_builtin_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let output = ddsim(&[
        "avg-hamiltonian",
        "--builtin",
        "cpmg",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 2);
    assert!(stderr(&output).contains("cpmg"));
}

#[test]
fn convert_dose_reproduces_published_densities() {
    let dir = tempfile::tempdir().unwrap();
    let output = ddsim(&[
        "convert-dose",
        "0.30",
        "1.1",
        "10",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    let table = fs::read_to_string(dir.path().join("dose_table.csv")).unwrap();
    let ppm: Vec<f64> = table
        .lines()
        .skip(1)
        .map(|line| line.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let expected = [540.0, 2000.0, 18000.0];
    for (got, want) in ppm.iter().zip(expected) {
        assert!(
            (got - want).abs() / want < 0.03,
            "dose conversion {got} vs published {want}"
        );
    }
}

#[test]
fn extract_density_inverts_a_planted_power_law() {
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("t2_summary.csv");
    let mut csv = String::from("density_ppm,sequence,t2_ns,fit_error\n");
    for rho in [50.0_f64, 123.0, 236.0, 500.0] {
        csv.push_str(&format!("{rho},xy8,{},\n", 1.0e5 * rho.powf(-0.8)));
        csv.push_str(&format!("{rho},droid,{},\n", 3.0e5 * rho.powf(-0.9)));
    }
    fs::write(&summary, csv).unwrap();
    let planted = 150.0_f64;
    let t2_xy8 = 1.0e5 * planted.powf(-0.8);
    let t2_droid = 3.0e5 * planted.powf(-0.9);
    let output = ddsim(&[
        "extract-density",
        "--t2-summary",
        summary.to_str().unwrap(),
        "--t2-xy8-ns",
        &t2_xy8.to_string(),
        "--t2-droid-ns",
        &t2_droid.to_string(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    assert!(stdout(&output).contains("estimated density"));
    let estimate: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("density_estimate.json")).unwrap(),
    )
    .unwrap();
    let rho = estimate["estimate"]["rho_ppm"].as_f64().unwrap();
    assert!(
        (rho - planted).abs() / planted < 0.02,
        "estimated {rho} ppm vs planted {planted}"
    );
    assert!(dir.path().join("residual_curve.csv").exists());
}

#[test]
fn extract_density_missing_summary_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let output = ddsim(&[
        "extract-density",
        "--t2-summary",
        "/nonexistent/t2.csv",
        "--t2-xy8-ns",
        "300",
        "--t2-droid-ns",
        "900",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 2);
}

#[test]
fn esr_single_spectrum_reports_splitting() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
[charge_model]
n_charge_configs = 8

[esr]
grid_low_mhz = 2600.0
grid_high_mhz = 4400.0
grid_step_mhz = 4.0
"#,
    );
    let out_dir = dir.path().join("out");
    let output = ddsim(&[
        "esr",
        "--config",
        &config,
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    assert!(stdout(&output).contains("splitting:"), "stdout: {}", stdout(&output));
    assert!(out_dir.join("esr_spectrum.csv").exists());
    assert!(out_dir.join("esr_manifest.json").exists());
}

#[test]
fn dump_geometry_reports_sampled_box() {
    let dir = tempfile::tempdir().unwrap();
    let output = ddsim(&[
        "dump-geometry",
        "--density-ppm",
        "123",
        "--n-spins",
        "5",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    assert!(stdout(&output).contains("5 spins at 123 ppm"));
    let rows = fs::read_to_string(dir.path().join("geometry.csv")).unwrap();
    assert_eq!(rows.lines().count(), 6, "header plus one row per spin: {rows}");
}
