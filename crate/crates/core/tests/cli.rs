use std::path::PathBuf;
use std::process::Command;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

#[test]
fn small_batch_writes_report() {
    let out = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_safeloco"))
        .arg("--scenario")
        .arg(scenario("coupled.toml"))
        .args(["--variant", "full", "--variant", "no_cbf"])
        .args(["--episodes", "3", "--seed", "5", "--parallel", "2", "--trace-episodes", "1"])
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let stdout = String::from_utf8_lossy(&status.stdout);
    assert!(stdout.contains("full") && stdout.contains("no_cbf"));
    assert!(!stdout.contains("hard_handoff"));

    let episodes = std::fs::read_to_string(out.path().join("episodes.csv")).unwrap();
    let rows = episodes.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 1 + 2 * 3);
    assert!(std::fs::read_dir(out.path()).unwrap().count() > 1);
}

#[test]
fn unknown_variant_is_rejected() {
    let status = Command::new(env!("CARGO_BIN_EXE_safeloco"))
        .arg("--scenario")
        .arg(scenario("coupled.toml"))
        .args(["--variant", "bogus"])
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("bogus"));
}

#[test]
fn bad_dt_is_rejected() {
    let out = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_safeloco"))
        .arg("--scenario")
        .arg(scenario("duel.toml"))
        .args(["--episodes", "1", "--dt=-0.1"])
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("dt"));
}
