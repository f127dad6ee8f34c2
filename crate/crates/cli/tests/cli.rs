use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn cardioflow(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cardioflow"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("CARDIOFLOW_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = cardioflow(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn small_phantom() -> Value {
    json!({
        "dims": [24, 24, 24],
        "center": [11.5, 11.5, 12.0],
        "inner_radius": 3.0,
        "outer_radius": 6.0,
        "axial_length": 16.0,
        "apex_depth": 6.0
    })
}

fn small_solver() -> Value {
    json!({"levels": 2, "iters_unconstrained": 30, "iters_constrained": 30, "snapshot_interval": 10})
}

#[test]
fn pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("cfg.json"),
        json!({"phantom": small_phantom(), "angle": 20.0}).to_string(),
    )
    .unwrap();
    fs::write(d.join("solver.json"), small_solver().to_string()).unwrap();

    ok(&["phantom", "generate", "--config", "cfg.json", "--out", "pair"], d);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(d.join("pair/pair.json")).unwrap()).unwrap();
    assert_eq!(manifest["torsion"]["total_angle"], 20.0);
    for f in ["systole", "diastole", "systole_mask", "diastole_mask", "gt_flow"] {
        assert!(d.join(format!("pair/{f}.volhdr")).exists(), "{f}");
    }

    for (mask, mesh) in [("systole_mask", "a.off"), ("diastole_mask", "b.off")] {
        ok(&["mesh", "build", "--mask", &format!("pair/{mask}.volhdr"), "--out", mesh], d);
        assert!(fs::read_to_string(d.join(mesh)).unwrap().starts_with("OFF"));
    }

    ok(&["correspond", "--src", "a.off", "--dst", "b.off", "--out", "pm.json"], d);
    let pm: Value = serde_json::from_str(&fs::read_to_string(d.join("pm.json")).unwrap()).unwrap();
    assert_eq!(pm["C_final_size"], 133);
    assert!(!pm["map"].as_array().unwrap().is_empty());

    ok(
        &[
            "constraints", "--pointmap", "pm.json", "--src", "a.off", "--dst", "b.off", "--mask",
            "pair/systole_mask.volhdr", "--out", "cons.volhdr",
        ],
        d,
    );
    ok(
        &[
            "solve", "--src", "pair/systole.volhdr", "--dst", "pair/diastole.volhdr", "--constraints",
            "cons.volhdr", "--config", "solver.json", "--out", "flow.volhdr", "--log", "losses.csv",
        ],
        d,
    );
    let log = fs::read_to_string(d.join("losses.csv")).unwrap();
    assert_eq!(log.lines().count(), 61, "header plus one row per iteration");

    let out = ok(
        &[
            "evaluate", "--pred", "flow.volhdr", "--gt", "pair/gt_flow.volhdr", "--mask",
            "pair/systole_mask.volhdr", "--out", "report.json",
        ],
        d,
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("mepe_myo"));
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert!(report["mepe_myo"].as_f64().unwrap().is_finite());
}

fn sweep_config() -> Value {
    json!({
        "angles": [0.0, 10.0],
        "centers": [0.0],
        "seeds": [0],
        "methods": ["unconstrained", "overlap"],
        "phantom": small_phantom(),
        "solver": small_solver()
    })
}

#[test]
fn sweep_is_reproducible_and_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("exp.json"), sweep_config().to_string()).unwrap();
    ok(&["bench", "sweep", "--config", "exp.json", "--out", "r1", "--workers", "1"], d);
    ok(&["bench", "sweep", "--config", "exp.json", "--out", "r2", "--workers", "2"], d);
    let a = fs::read(d.join("r1/results.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("r2/results.csv")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 5);
    for f in ["summary.csv", "timings.csv", "mepe_myo.svg", "mepe_local_tangential.svg"] {
        assert!(d.join("r1").join(f).exists(), "{f}");
    }
}

#[test]
fn seed_variable_changes_the_phantoms() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut cfg = sweep_config();
    cfg["angles"] = json!([10.0]);
    cfg["methods"] = json!(["unconstrained"]);
    fs::write(d.join("exp.json"), cfg.to_string()).unwrap();
    ok(&["bench", "sweep", "--config", "exp.json", "--out", "base"], d);
    let out = Command::new(env!("CARGO_BIN_EXE_cardioflow"))
        .args(["bench", "sweep", "--config", "exp.json", "--out", "seeded"])
        .current_dir(d)
        .env("RUST_LOG", "warn")
        .env("CARDIOFLOW_SEED", "11")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_ne!(
        fs::read(d.join("base/results.csv")).unwrap(),
        fs::read(d.join("seeded/results.csv")).unwrap()
    );
}

#[test]
fn failing_cells_give_a_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut cfg = sweep_config();
    cfg["angles"] = json!([0.0]);
    cfg["methods"] = json!(["constrained", "unconstrained"]);
    // more eigenpairs than the small meshes have vertices
    cfg["correspondence"] = json!({"k0": 3, "iterations": 5000, "step": 1, "wks": 50});
    fs::write(d.join("exp.json"), cfg.to_string()).unwrap();
    let out = cardioflow(&["bench", "sweep", "--config", "exp.json", "--out", "r"], d);
    assert!(!out.status.success());
    let rows = fs::read_to_string(d.join("r/results.csv")).unwrap();
    assert!(rows.contains(",constrained,error,"), "{rows}");
    assert!(rows.contains(",unconstrained,ok,"), "{rows}");
}

#[test]
fn invalid_inputs_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut cfg = sweep_config();
    cfg["angles"] = json!([40.0]);
    fs::write(d.join("exp.json"), cfg.to_string()).unwrap();
    let out = cardioflow(&["bench", "sweep", "--config", "exp.json", "--out", "r"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("angle 40"));

    let out = cardioflow(&["mesh", "build", "--mask", "missing.volhdr", "--out", "m.off"], d);
    assert!(!out.status.success());
}
