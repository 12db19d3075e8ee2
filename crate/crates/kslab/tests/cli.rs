//! End-to-end checks of the command line binary: outputs land where the
//! config says, reruns reproduce results byte for byte, flag overrides win
//! over the file, and bad input fails with a pointed diagnostic.

use std::path::Path;
use std::process::{Command, Output};

fn kslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kslab"))
        .args(args)
        .output()
        .expect("binary should launch")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

#[test]
fn thresholds_subcommand_prints_the_window() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("th");
    let cfg = write_config(
        dir.path(),
        "th.cfg",
        &format!(
            "[domain]\nshape = ellipse\nalpha = 0.05\nresolution = 8\n\n\
             [run]\nmode = thresholds\nout = {}\n",
            out.display()
        ),
    );
    let output = kslab(&["--config", &cfg]);
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("lambda_under = 36.09"), "stdout: {stdout}");
    assert!(stdout.contains("lambda_over  = 42.1"), "stdout: {stdout}");
    assert!(stdout.contains("supercritical window nonempty"), "stdout: {stdout}");
    assert!(out.join("results.csv").exists());
    assert!(out.join("meta.txt").exists());
}

#[test]
fn evolve_reruns_reproduce_results_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let body = |out: &Path| {
        format!(
            "[domain]\nshape = ellipse\nalpha = 1.0\nresolution = 12\n\n\
             [model]\nlambda = 6.0\nsigma = 0.2\nseed = 4\n\n\
             [run]\nmode = evolve\nt_end = 0.05\nsample_dt = 0.01\ndt_max = 0.005\nout = {}\n",
            out.display()
        )
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let cfg_a = write_config(dir.path(), "a.cfg", &body(&out_a));
    let cfg_b = write_config(dir.path(), "b.cfg", &body(&out_b));

    let run_a = kslab(&["--config", &cfg_a]);
    let run_b = kslab(&["--config", &cfg_b]);
    assert!(run_a.status.success(), "stderr: {}", String::from_utf8_lossy(&run_a.stderr));
    assert!(run_b.status.success());

    let results_a = std::fs::read(out_a.join("results.csv")).unwrap();
    let results_b = std::fs::read(out_b.join("results.csv")).unwrap();
    assert_eq!(results_a, results_b);
    let rho_a = std::fs::read(out_a.join("fields/rho_final.csv")).unwrap();
    let rho_b = std::fs::read(out_b.join("fields/rho_final.csv")).unwrap();
    assert_eq!(rho_a, rho_b);
}

#[test]
fn subcommand_and_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let out_cfg = dir.path().join("from_config");
    let out_flag = dir.path().join("from_flag");
    let cfg = write_config(
        dir.path(),
        "s.cfg",
        &format!(
            "[domain]\nshape = ellipse\nalpha = 1.0\nresolution = 10\n\n\
             [model]\nlambda = 6.0\nsigma = 0.2\nseed = 4\n\n\
             [run]\nmode = evolve\nt_end = 0.05\nsample_dt = 0.01\ndt_max = 0.005\nout = {}\n",
            out_cfg.display()
        ),
    );
    // The steady subcommand replaces mode = evolve; --out redirects the run.
    let output = kslab(&[
        "--config",
        &cfg,
        "--out",
        &out_flag.display().to_string(),
        "--resolution",
        "12",
        "steady",
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert!(!out_cfg.exists());
    let results = std::fs::read_to_string(out_flag.join("results.csv")).unwrap();
    assert!(results.starts_with("lambda,mu,"));
    let meta = std::fs::read_to_string(out_flag.join("meta.txt")).unwrap();
    assert!(meta.contains("mode = steady"));
    assert!(meta.contains("resolution = 12"));
}

#[test]
fn malformed_config_fails_with_a_pointed_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.cfg",
        "[domain]\nshape = ellipse\nalpha = 0.05\nresolution = 8\n\n\
         [model]\nsigma = 0.9\n\n[run]\nmode = evolve\n",
    );
    let output = kslab(&["--config", &cfg]);
    assert!(!output.status.success());
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("config error"), "stderr: {stderr}");
    assert!(stderr.contains("sigma"), "stderr: {stderr}");
}

#[test]
fn missing_config_file_reports_the_path() {
    let output = kslab(&["--config", "/nonexistent/nope.cfg"]);
    assert!(!output.status.success());
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("nope.cfg"), "stderr: {stderr}");
}
