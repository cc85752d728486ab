use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_qtime");

fn scenario(name: &str) -> String {
    format!("{}/scenarios/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn qtime(args: &[&str], out: &Path) -> Output {
    Command::new(BIN).args(args).arg("--out-dir").arg(out).output().unwrap()
}

#[test]
fn run_writes_tables_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = qtime(&["run", &scenario("rabi_two_measurements.json")], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["grid"]["N"], 256);
    let joint = std::fs::read_to_string(dir.path().join("02_joint.csv")).unwrap();
    assert!(joint.starts_with("t,"));
}

#[test]
fn runs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let path = scenario("driven_qutrit.json");
    assert!(qtime(&["run", &path], a.path()).status.success());
    assert!(qtime(&["run", &path], b.path()).status.success());
    for entry in std::fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        let x = std::fs::read(a.path().join(&name)).unwrap();
        let y = std::fs::read(b.path().join(&name)).unwrap();
        assert_eq!(x, y, "{name:?} differs");
    }
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario("driven_qutrit.json");
    assert_eq!(qtime(&["verify", &path], dir.path()).status.code(), Some(0));
    assert!(dir.path().join("verify.json").exists());
    let faulty = qtime(&["verify", &path, "--inject-fault", "100"], dir.path());
    assert_eq!(faulty.status.code(), Some(2));
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(qtime(&["run", "/nonexistent.json"], dir.path()).status.code(), Some(1));
    assert_eq!(qtime(&["frobnicate", "x"], dir.path()).status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    let text = std::fs::read_to_string(scenario("rabi_two_measurements.json"))
        .unwrap()
        .replace("\"N\": 256", "\"N\": 4");
    std::fs::write(&bad, text).unwrap();
    let out = qtime(&["run", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn residual_sweep_writes_one_row_per_width() {
    let dir = tempfile::tempdir().unwrap();
    let out = qtime(&["sweep-residual", &scenario("free_gaussian_sweep.json")], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("residual_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}
