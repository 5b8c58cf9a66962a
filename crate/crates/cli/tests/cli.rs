//! End-to-end runs of the `conflat` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use conflat::gridfile::read_grid;
use conflat::runner::Report;

fn conflat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conflat")).args(args).output().expect("binary runs")
}

fn scenario(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn list_names_every_item() {
    let o = conflat(&["list"]);
    assert!(o.status.success());
    for name in conflat::catalog::NAMES {
        assert!(stdout(&o).contains(name), "{name} missing");
    }
    let o = conflat(&["list", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), conflat::catalog::NAMES.len());
}

#[test]
fn flat_inclusion_passes_every_suite() {
    let dir = tempfile::tempdir().unwrap();
    let sc =
        scenario(dir.path(), "flat.json", r#"{"schema": 1, "item": "flat_inclusion", "suite": "all", "samples": 20}"#);
    let out = dir.path().join("out");
    let o = conflat(&["verify", &sc, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let r = Report::load(&out.join("report.json")).unwrap();
    assert!(r.verify_hash());
    assert!(r.deterministic.summary.pass);
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("name,anchor,residual,tolerance,bound,status,note"));
    assert_eq!(csv.lines().count(), r.checks().len() + 1);
    assert_eq!(conflat(&["report", out.to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn negative_control_exits_zero_with_confirmation() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), "ctl.json", r#"{"schema": 1, "item": "s2xs2_control", "suite": "conformal"}"#);
    let o = conflat(&["verify", &sc, "-v"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("negative control confirmed"));
}

#[test]
fn failing_checks_exit_one_and_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let sc =
        scenario(dir.path(), "ex2.json", r#"{"schema": 1, "item": "example2", "suite": ["conformal"], "samples": 20}"#);
    let o = conflat(&["verify", &sc]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL conformal.quadruple_identity"));
}

#[test]
fn configuration_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = scenario(dir.path(), "bad.json", "{\n  \"schema\": 1,\n  \"item\": \"s3xs1\",\n  \"grid\": \"five\"\n}");
    let o = conflat(&["verify", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));

    let ok = scenario(dir.path(), "ok.json", r#"{"schema": 1, "item": "s3xs1", "suite": "ribaucour"}"#);
    let o = conflat(&["pipeline", &ok, "--grid", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid"));

    let o = conflat(&["verify", &ok, "--tol-scale", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(conflat(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn pipeline_writes_member_grids() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(
        dir.path(),
        "rib.json",
        r#"{"schema": 1, "item": "s3xs1", "pipeline": {"count": 1, "grid_candidates": 0}}"#,
    );
    let out = dir.path().join("run");
    let o = conflat(&["pipeline", &sc, "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let fam: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("family/family.json")).unwrap()).unwrap();
    let files = fam["files"].as_object().unwrap();
    assert!(files.contains_key("identity") && files.contains_key("reflection0"));
    let mut f = fs::File::open(out.join("family").join(files["reflection0"].as_str().unwrap())).unwrap();
    let (h, v) = read_grid(&mut f).unwrap();
    assert_eq!((h.n, h.ambient_dim, h.grid_shape.clone()), (4, 6, vec![5; 4]));
    assert_eq!(v.len(), h.value_count());
    let r = Report::load(&out.join("report.json")).unwrap();
    assert_eq!(r.deterministic.scenario.seed, 3);
}

#[test]
fn zero_count_reports_only_the_null_space() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), "rib0.json", r#"{"schema": 1, "item": "s3xs1", "pipeline": {"count": 0}}"#);
    let out = dir.path().join("run");
    let o = conflat(&["pipeline", &sc, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let r = Report::load(&out.join("report.json")).unwrap();
    assert!(r.check("ribaucour.nullspace_dim").is_some());
    assert!(r.checks().iter().all(|c| !c.name.contains('[')));
}

#[test]
fn same_seed_gives_the_same_hash() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(
        dir.path(),
        "det.json",
        r#"{"schema": 1, "item": "torus_cone", "samples": 15, "suite": ["principal", "conformal"]}"#,
    );
    let hash = |seed: &str, run: usize| {
        let out = dir.path().join(format!("o{run}"));
        conflat(&["verify", &sc, "--seed", seed, "--out", out.to_str().unwrap()]);
        Report::load(&out.join("report.json")).unwrap().hash
    };
    let (a, b, c) = (hash("1", 0), hash("1", 1), hash("2", 2));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn shipped_scenarios_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut count = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            conflat::runner::Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 5);
}
