use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jumpmfg"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

#[test]
fn missing_scenario_names_the_path() {
    let out = bin().args(["verify", "--scenario", "/nonexistent/where.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/where.toml"));
}

#[test]
fn invalid_scenario_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("merton")).unwrap()
        .replace("rho = { law = \"constant\", value = 0.5 }", "rho = { law = \"constant\", value = 1.0 }")
        .replace("zeta = { form = \"constant\", value = 1.0 }", "zeta = { form = \"constant\", value = 5.0 }");
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let out = bin().args(["solve-mfg", "--scenario"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("E[rho] != 1"), "{err}");
    assert!(err.contains("0 <= zeta <= c_nu"), "{err}");
}

#[test]
fn oracle_verify_passes_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["verify", "--scenario"]).arg(scenario("tiny-oracle")).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    for f in ["manifest.json", "summary.txt", "checks.csv", "oracle.csv", "strategies.csv", "wealth.csv", "bsde.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let wealth = std::fs::read_to_string(dir.path().join("wealth.csv")).unwrap();
    assert!(wealth.starts_with("path,node,value\n"));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["scenario"]["solver"]["backend"], "lattice");
    assert!(manifest["wall_time_s"].is_number());
}

#[test]
fn solve_mfg_twice_gives_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, threads) in [(&a, "1"), (&b, "3")] {
        let out = bin()
            .env("RAYON_NUM_THREADS", threads)
            .args(["solve-mfg", "--seed", "7", "--paths", "100", "--scenario"])
            .arg(scenario("merton"))
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    }
    for f in ["strategies.csv", "wealth.csv", "bsde.csv", "classes.csv", "mean_field.csv", "deviations.csv", "checks.csv", "summary.txt"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn oracle_without_tiny_model_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["oracle", "--scenario"]).arg(scenario("merton")).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_and_single_agent_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["simulate", "--paths", "50", "--agents", "4", "--scenario"]).arg(scenario("tilt-check")).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let noise = std::fs::read_to_string(dir.path().join("noise.csv")).unwrap();
    assert!(noise.starts_with("common,agent,node,w0,n0,n1\n"));
    let out = bin()
        .args(["solve-single", "--paths", "50", "--backend", "lsmc", "--scenario"])
        .arg(scenario("tiny-oracle"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(dir.path().join("classes.csv")).unwrap().starts_with("class,alpha,rho"));
}

#[test]
fn lattice_rejected_for_idiosyncratic_claim_with_interaction() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["solve-mfg", "--paths", "20", "--backend", "lattice", "--scenario"])
        .arg(scenario("stoploss-cpp"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lsmc"));
}
