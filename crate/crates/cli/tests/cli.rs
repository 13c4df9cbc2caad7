//! End-to-end tests of the binary: artifact determinism (byte-identical
//! reruns), file hand-off between commands, exit codes, and the
//! verification report.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_invsource")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary should launch")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_bytes(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("missing {name}: {e}"))
}

fn snapshot(dir: &Path, files: &[&str]) -> Vec<Vec<u8>> {
    files.iter().map(|f| read_bytes(dir, f)).collect()
}

/// Run the identical command twice into the same directory; all artifacts
/// must come back byte-identical.
fn assert_rerun_identical(args: &[&str], dir: &Path, files: &[&str]) {
    run_ok(args);
    let first = snapshot(dir, files);
    run_ok(args);
    let second = snapshot(dir, files);
    for (f, (a, b)) in files.iter().zip(first.iter().zip(&second)) {
        assert_eq!(a, b, "file {f} differs between reruns");
    }
}

#[test]
fn synth_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let out_arg = format!("output.dir={}", dir.display());
    assert_rerun_identical(
        &[
            "synth",
            "--set",
            "problem.level=3",
            "--set",
            "noise.delta_percent=3",
            "--set",
            &out_arg,
        ],
        &dir,
        &["clean_trace.csv", "noisy_trace.csv", "smoothed_trace.csv", "manifest.toml"],
    );
}

#[test]
fn zero_noise_synth_emits_identical_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    run_ok(&[
        "synth",
        "--set",
        "problem.level=3",
        "--set",
        "noise.delta_percent=0",
        "--set",
        &format!("output.dir={}", dir.display()),
    ]);
    let clean = read_bytes(&dir, "clean_trace.csv");
    assert_eq!(clean, read_bytes(&dir, "noisy_trace.csv"));
    assert_eq!(clean, read_bytes(&dir, "smoothed_trace.csv"));
}

#[test]
fn reconstruct_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let out_arg = format!("output.dir={}", dir.display());
    assert_rerun_identical(
        &[
            "reconstruct",
            "--set",
            "problem.experiment=4",
            "--set",
            "problem.level=2",
            "--set",
            "noise.delta_percent=3",
            "--set",
            "optimizer.max_iter=5",
            "--set",
            &out_arg,
        ],
        &dir,
        &["f_final.csv", "history.csv", "summary.toml", "manifest.toml"],
    );
}

#[test]
fn reconstruct_consumes_synthesized_trace_files() {
    // Feeding the smoothed trace back through CSV must reproduce the inline
    // run exactly (the format round-trips bitwise).
    let tmp = tempfile::tempdir().unwrap();
    let synth_dir = tmp.path().join("synth");
    let inline_dir = tmp.path().join("inline");
    let file_dir = tmp.path().join("fromfile");
    let common = [
        "--set",
        "problem.level=3",
        "--set",
        "noise.delta_percent=3",
        "--set",
        "optimizer.max_iter=3",
    ];
    let mut args = vec!["synth"];
    args.extend_from_slice(&common);
    let synth_out = format!("output.dir={}", synth_dir.display());
    args.extend_from_slice(&["--set", &synth_out]);
    run_ok(&args);

    let mut args = vec!["reconstruct"];
    args.extend_from_slice(&common);
    let inline_out = format!("output.dir={}", inline_dir.display());
    args.extend_from_slice(&["--set", &inline_out]);
    run_ok(&args);

    let mut args = vec!["reconstruct"];
    args.extend_from_slice(&common);
    let file_out = format!("output.dir={}", file_dir.display());
    let data_file = format!(
        "problem.data_file=\"{}\"",
        synth_dir.join("smoothed_trace.csv").display()
    );
    args.extend_from_slice(&["--set", &file_out, "--set", &data_file]);
    run_ok(&args);

    assert_eq!(
        read_bytes(&inline_dir, "f_final.csv"),
        read_bytes(&file_dir, "f_final.csv"),
        "file-fed reconstruction differs from the inline pipeline"
    );
}

#[test]
fn table_output_is_worker_count_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let d1 = tmp.path().join("w1");
    let d2 = tmp.path().join("w4");
    for (d, workers) in [(&d1, "1"), (&d2, "4")] {
        run_ok(&[
            "table",
            "--set",
            "table.level_min=2",
            "--set",
            "table.level_max=3",
            "--set",
            "table.deltas=[1.0]",
            "--set",
            "optimizer.max_iter=3",
            "--set",
            &format!("table.workers={workers}"),
            "--set",
            &format!("output.dir={}", d.display()),
        ]);
    }
    assert_eq!(read_bytes(&d1, "table.csv"), read_bytes(&d2, "table.csv"));
    let text = String::from_utf8(read_bytes(&d1, "table.csv")).unwrap();
    assert!(text.starts_with("l,h,theta_e1_d1"), "header: {text}");
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn config_errors_exit_with_code_one() {
    let out = run(&["synth", "--set", "noise.delta_percent=101"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("noise.delta_percent"), "stderr: {err}");

    let out = run(&["reconstruct", "--set", "optimizer.max_iter=0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("optimizer.max_iter"));

    let out = run(&["table", "--set", "table.level_min=5", "--set", "table.level_max=3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exact_data_mode_is_rejected_for_disc_experiments() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let out_arg = format!("output.dir={}", dir.display());
    run_ok(&[
        "synth",
        "--set",
        "problem.experiment=2",
        "--set",
        "problem.data_mode=exact",
        "--set",
        "problem.level=2",
        "--set",
        &out_arg,
    ]);
    let out = run(&[
        "synth",
        "--set",
        "problem.experiment=4",
        "--set",
        "problem.data_mode=exact",
        "--set",
        "problem.level=2",
        "--set",
        &out_arg,
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn solver_failure_exits_with_code_two() {
    // one CG iteration cannot reach the tolerance, so the first step fails
    let out = run(&[
        "reconstruct",
        "--set",
        "problem.level=2",
        "--set",
        "solver.max_iterations=1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solver"));
}

#[test]
fn three_dimensional_experiment_runs_through_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    run_ok(&[
        "table",
        "--set",
        "table.experiments=[6]",
        "--set",
        "table.level_min=2",
        "--set",
        "table.level_max=3",
        "--set",
        "table.deltas=[1.0]",
        "--set",
        "optimizer.max_iter=2",
        "--set",
        &format!("output.dir={}", dir.display()),
    ]);
    let text = String::from_utf8(read_bytes(&dir, "table.csv")).unwrap();
    assert!(text.starts_with("l,h,theta_e6_d1"), "header: {text}");
    assert_eq!(text.lines().count(), 3);

    // 3-D reconstruction artifacts (x,y,z field CSV) write cleanly too
    let dir2 = tmp.path().join("rec");
    run_ok(&[
        "reconstruct",
        "--set",
        "problem.experiment=6",
        "--set",
        "problem.level=2",
        "--set",
        "optimizer.max_iter=2",
        "--set",
        &format!("output.dir={}", dir2.display()),
    ]);
    let field = String::from_utf8(read_bytes(&dir2, "f_final.csv")).unwrap();
    assert!(field.starts_with("x,y,z,value"));
}

#[test]
fn custom_problem_block_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let cfg_path = tmp.path().join("run.toml");
    fs::write(
        &cfg_path,
        r#"
[problem]
experiment = 0
level = 3

[optimizer]
max_iter = 3

[custom]
dim = 2
a = "one_plus_coords"
f_true = "gaussian:0.5,0.3,0.1"
f0 = "const:1.0"
g = "poly_cos"
"#,
    )
    .unwrap();
    run_ok(&[
        "reconstruct",
        "--config",
        cfg_path.to_str().unwrap(),
        "--set",
        &format!("output.dir={}", dir.display()),
    ]);
    let summary = String::from_utf8(read_bytes(&dir, "summary.toml")).unwrap();
    assert!(summary.contains("final_theta"), "{summary}");
}

#[test]
fn verify_writes_a_passing_deterministic_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let out_arg = format!("output.dir={}", dir.display());
    assert_rerun_identical(
        &["verify", "--set", &out_arg],
        &dir,
        &["verify_report.toml", "manifest.toml"],
    );
    let report = String::from_utf8(read_bytes(&dir, "verify_report.toml")).unwrap();
    assert!(report.contains("passed = true"), "report:\n{report}");
}
