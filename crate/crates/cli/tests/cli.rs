use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kirchlab"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn malformed_config_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "regime = \"sh\"\nbogus = 1\n").unwrap();
    let out = dir.path().join("out");
    let st = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("bogus"));
    assert!(!out.exists());
}

#[test]
fn unknown_stage_and_missing_file_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let st = bin()
        .args(["run", "--stages", "classify,nope", "--config"])
        .arg(config("apriori_sh.toml"))
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    let st = bin().args(["classify", "--config", "/nonexistent.toml"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    let st = bin().args(["classify"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn classify_subcommand_writes_only_its_section() {
    let dir = tempfile::tempdir().unwrap();
    let st = bin()
        .args(["classify", "--quiet", "--config"])
        .arg(config("sh_desk.toml"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(0));
    assert!(st.stdout.is_empty());
    let r = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(r.contains("\"classification\""));
    assert!(r.contains("\"counterexample\""));
    assert!(!r.contains("\"lift_kirchhoff\""));
}

#[test]
fn two_full_runs_are_byte_identical() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let st = bin()
            .args(["run", "--quiet", "--config"])
            .arg(config("apriori_sh.toml"))
            .arg("--out")
            .arg(d.path())
            .status()
            .unwrap();
        assert_eq!(st.code(), Some(0));
    }
    let names: Vec<_> = std::fs::read_dir(dirs[0].path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(names.iter().any(|n| n == "report.json"));
    for n in names {
        let a = std::fs::read(dirs[0].path().join(&n)).unwrap();
        let b = std::fs::read(dirs[1].path().join(&n)).unwrap();
        assert_eq!(a, b, "{n:?}");
    }
}
