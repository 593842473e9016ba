//! Black-box tests of the dvrsim binary: exit codes, produced files and
//! override handling.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dvrsim"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

/// Fresh per-test directory under the cargo-managed tmp root.
fn out_dir(tag: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(tag);
    if dir.exists() {
        fs::remove_dir_all(&dir).expect("clear tmp dir");
    }
    fs::create_dir_all(&dir).expect("create tmp dir");
    dir
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn expect_code(out: &Output, want: i32) {
    assert_eq!(
        code(out),
        want,
        "stdout:\n{}\nstderr:\n{}",
        text(&out.stdout),
        text(&out.stderr)
    );
}

#[test]
fn run_writes_trace_and_classify_reads_it() {
    let dir = out_dir("run-classify");
    let out = bin()
        .args(["run"])
        .arg(scenario("case1_sag.json"))
        .args(["--no-dvr", "--set", "solver.t_end=0.25", "--out-dir"])
        .arg(&dir)
        .output()
        .expect("spawn");
    expect_code(&out, 0);
    assert!(text(&out.stdout).contains("rows=5001"));

    let trace = dir.join("case1_sag_trace.csv");
    assert!(trace.exists(), "missing {}", trace.display());

    let out = bin()
        .arg("classify")
        .arg(&trace)
        .args(["--channel", "rms_grid_pu"])
        .output()
        .expect("spawn");
    expect_code(&out, 0);
    assert!(text(&out.stdout).contains("total:"));
}

#[test]
fn classify_rejects_missing_channel() {
    let dir = out_dir("classify-missing");
    let out = bin()
        .arg("run")
        .arg(scenario("case1_sag.json"))
        .args(["--set", "solver.t_end=0.05", "--out-dir"])
        .arg(&dir)
        .output()
        .expect("spawn");
    expect_code(&out, 0);
    let out = bin()
        .arg("classify")
        .arg(dir.join("case1_sag_trace.csv"))
        .args(["--channel", "no_such_channel"])
        .output()
        .expect("spawn");
    expect_code(&out, 1);
    assert!(text(&out.stderr).contains("no_such_channel"));
}

#[test]
fn refuses_overwrite_without_force() {
    let dir = out_dir("overwrite");
    let mut first = bin();
    first
        .arg("run")
        .arg(scenario("case1_sag.json"))
        .args(["--set", "solver.t_end=0.05", "--out-dir"])
        .arg(&dir);
    let out = first.output().expect("spawn");
    expect_code(&out, 0);

    let out = bin()
        .arg("run")
        .arg(scenario("case1_sag.json"))
        .args(["--set", "solver.t_end=0.05", "--out-dir"])
        .arg(&dir)
        .output()
        .expect("spawn");
    expect_code(&out, 1);
    assert!(text(&out.stderr).contains("force"));

    let out = bin()
        .arg("run")
        .arg(scenario("case1_sag.json"))
        .args(["--set", "solver.t_end=0.05", "--force", "--out-dir"])
        .arg(&dir)
        .output()
        .expect("spawn");
    expect_code(&out, 0);
}

#[test]
fn no_dvr_flag_matches_config_override() {
    let dir_a = out_dir("nodvr-flag");
    let dir_b = out_dir("nodvr-set");
    let out = bin()
        .arg("run")
        .arg(scenario("case1_sag.json"))
        .args(["--no-dvr", "--set", "solver.t_end=0.1", "--out-dir"])
        .arg(&dir_a)
        .output()
        .expect("spawn");
    expect_code(&out, 0);
    let out = bin()
        .arg("run")
        .arg(scenario("case1_sag.json"))
        .args([
            "--set",
            "dvr.enabled=false",
            "--set",
            "solver.t_end=0.1",
            "--out-dir",
        ])
        .arg(&dir_b)
        .output()
        .expect("spawn");
    expect_code(&out, 0);

    let a = fs::read(dir_a.join("case1_sag_trace.csv")).expect("trace a");
    let b = fs::read(dir_b.join("case1_sag_trace.csv")).expect("trace b");
    assert_eq!(a, b, "--no-dvr and dvr.enabled=false diverge");
}

#[test]
fn validate_accepts_shipped_scenarios() {
    for name in ["case1_sag.json", "case2_swell.json"] {
        let out = bin()
            .arg("validate")
            .arg(scenario(name))
            .output()
            .expect("spawn");
        expect_code(&out, 0);
        assert!(text(&out.stdout).starts_with("ok:"));
    }
}

#[test]
fn validate_lists_violations() {
    let dir = out_dir("validate-bad");
    let mut doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(scenario("case1_sag.json")).unwrap()).unwrap();
    doc["solver"]["dt"] = serde_json::json!(-5.0e-5);
    doc["load"]["p"] = serde_json::json!(-1.0);
    let bad = dir.join("bad.json");
    fs::write(&bad, serde_json::to_string_pretty(&doc).unwrap()).unwrap();

    let out = bin().arg("validate").arg(&bad).output().expect("spawn");
    expect_code(&out, 2);
    assert!(text(&out.stderr).contains("violation"));
}

#[test]
fn missing_scenario_is_a_usage_error() {
    let out = bin()
        .arg("run")
        .arg("does_not_exist.json")
        .output()
        .expect("spawn");
    expect_code(&out, 1);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = bin().arg("frobnicate").output().expect("spawn");
    expect_code(&out, 1);
}

#[test]
fn pv_curve_writes_the_characteristic() {
    let dir = out_dir("pv-curve");
    let out = bin()
        .arg("pv-curve")
        .arg(scenario("case1_sag.json"))
        .args(["--points", "50", "--out-dir"])
        .arg(&dir)
        .output()
        .expect("spawn");
    expect_code(&out, 0);
    let body = fs::read_to_string(dir.join("case1_sag_pv_curve.csv")).expect("curve csv");
    assert!(body.starts_with("v,i,p\n"));
    assert_eq!(body.lines().count(), 51);
}

#[test]
fn pv_curve_requires_a_pv_section() {
    let dir = out_dir("pv-curve-none");
    let mut doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(scenario("case1_sag.json")).unwrap()).unwrap();
    doc.as_object_mut().unwrap().remove("pv");
    let stripped = dir.join("no_pv.json");
    fs::write(&stripped, serde_json::to_string_pretty(&doc).unwrap()).unwrap();

    let out = bin().arg("pv-curve").arg(&stripped).output().expect("spawn");
    expect_code(&out, 2);
}

#[test]
fn out_dir_env_var_is_honoured() {
    let dir = out_dir("env-out");
    let out = bin()
        .arg("run")
        .arg(scenario("case1_sag.json"))
        .args(["--set", "solver.t_end=0.05"])
        .env("DVRSIM_OUT_DIR", &dir)
        .output()
        .expect("spawn");
    expect_code(&out, 0);
    assert!(dir.join("case1_sag_trace.csv").exists());
}
