use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fracpin"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fracpin-exit-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn default_config() -> toml::Table {
    let out = bin().arg("default-config").output().unwrap();
    assert!(out.status.success());
    toml::from_str(std::str::from_utf8(&out.stdout).unwrap()).unwrap()
}

fn write_config(dir: &Path, cfg: &toml::Table) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, toml::to_string(cfg).unwrap()).unwrap();
    path
}

fn run(dir: &Path, cfg: &toml::Table, command: &str) -> Output {
    let path = write_config(dir, cfg);
    bin()
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .arg(command)
        .env_remove("FRACPIN_SEED")
        .env_remove("FRACPIN_TOLERANCE")
        .output()
        .unwrap()
}

fn section<'a>(cfg: &'a mut toml::Table, name: &str) -> &'a mut toml::Table {
    cfg.get_mut(name).unwrap().as_table_mut().unwrap()
}

#[test]
fn select_succeeds_and_report_verifies_digests() {
    let dir = scratch("select");
    let out = run(&dir, &default_config(), "select");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out_dir = dir.join("out");
    assert!(out_dir.join("ledger.json").exists());
    assert!(out_dir.join("select.manifest.json").exists());
    let report = bin().arg("--out").arg(&out_dir).arg("report").output().unwrap();
    assert_eq!(report.status.code(), Some(0));
    std::fs::write(out_dir.join("ledger.txt"), "tampered").unwrap();
    let report = bin().arg("--out").arg(&out_dir).arg("report").output().unwrap();
    assert_eq!(report.status.code(), Some(3));
}

#[test]
fn steep_surface_is_rejected() {
    let dir = scratch("steep");
    let mut cfg = default_config();
    section(&mut cfg, "surface").insert("tilt".into(), toml::Value::Array(vec![1.2.into(), 0.0.into()]));
    let out = run(&dir, &cfg, "select");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn incomplete_or_unknown_config_is_a_usage_error() {
    let dir = scratch("usage");
    let mut cfg = default_config();
    section(&mut cfg, "model").remove("lambda");
    assert_eq!(run(&dir, &cfg, "select").status.code(), Some(1));
    let mut cfg = default_config();
    section(&mut cfg, "run").insert("bogus".into(), 1.into());
    assert_eq!(run(&dir, &cfg, "select").status.code(), Some(1));
    let mut cfg = default_config();
    cfg.insert("schema_version".into(), 2.into());
    assert_eq!(run(&dir, &cfg, "select").status.code(), Some(1));
}

#[test]
fn homogenization_outside_half_laplacian_is_rejected() {
    let dir = scratch("homog");
    let mut cfg = default_config();
    section(&mut cfg, "model").insert("s".into(), 0.6.into());
    assert_eq!(run(&dir, &cfg, "homogenize").status.code(), Some(2));
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = scratch("seed");
    let cfg = default_config();
    let path = write_config(&dir, &cfg);
    let out = bin()
        .args(["--seed", "99", "--out"])
        .arg(dir.join("out"))
        .arg("--config")
        .arg(&path)
        .arg("select")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.join("out/select.manifest.json")).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(manifest["seed"], 99);
}
