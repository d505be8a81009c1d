use std::fs;
use std::path::Path;
use std::process::Command;

fn philap() -> Command {
    Command::new(env!("CARGO_BIN_EXE_philap"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, format!("seed = 11\noutput_dir = \"out\"\n{body}")).unwrap();
    path
}

const AUDIT: &str = r#"
experiments = ["nfunction-audit"]
[kernel]
family = "power"
exponents = [3.0]
[audit]
zeta_samples = 500
"#;

#[test]
fn audit_config_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), AUDIT);
    let out = philap().arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = fs::read_to_string(tmp.path().join("out/audit.csv")).unwrap();
    assert!(csv.contains(",ell,3e0,true"));
    assert!(csv.contains(",m,3e0,true"));
}

#[test]
fn output_dir_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), AUDIT);
    let elsewhere = tmp.path().join("elsewhere");
    let status = philap().arg(&cfg).arg("-o").arg(&elsewhere).status().unwrap();
    assert!(status.success());
    assert!(elsewhere.join("summary.txt").exists());
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn empty_experiments_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "experiments = []\n[kernel]\nfamily = \"power\"\nexponents = [2.0]\n");
    let out = philap().arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn unreadable_config_exits_one() {
    let out = philap().arg("/nonexistent/run.toml").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn check_only_skips_solving() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
experiments = ["continuation"]
[kernel]
family = "power"
exponents = [2.0]
[mesh]
shape = "interval"
x = [0.0, 1.0]
cells = [20]
[system]
structure = "cooperative"
a = ["1", "1"]
b = ["1", "1"]
exponents = { alpha = [0.5, 0.5], gamma = [0.3, 0.3] }
"#,
    );
    let out = philap().arg(&cfg).arg("--check-only").arg("-v").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(tmp.path().join("out/validation.csv").exists());
    assert!(!tmp.path().join("out/continuation.csv").exists());
}
