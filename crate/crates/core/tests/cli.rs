use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_maxwell-ibvp"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn json(out: &std::process::Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

#[test]
fn verify_cancellation_seeded() {
    let out = bin().args(["verify-cancellation", "--random-seed", "7", "--trials", "100"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!(v["max_residual"].as_f64().unwrap() <= 1e-13);
    assert_eq!(v["trials"], 100);
}

#[test]
fn simulate_writes_series() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("simulate")
        .arg(scenario("vacuum_standing_wave.toml"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("series.csv")).unwrap();
    let energy: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let drift = energy.iter().map(|e| (e - energy[0]).abs() / energy[0]).fold(0.0, f64::max);
    assert!(drift <= 1e-6, "{drift}");
    assert!(dir.path().join("snapshots/u_000000.json").exists());
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn check_compat_gate() {
    let out = bin()
        .args(["check-compat", "--order", "2"])
        .arg(scenario("incompatible.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let v = json(&out);
    assert_eq!(v["pass"], false);
    assert!(v["residuals"][0].as_f64().unwrap() > 1e-3);

    let out = bin().arg("check-compat").arg(scenario("anisotropic_manufactured.toml")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn estimate_gate_agrees_with_check_compat() {
    let out = bin()
        .args(["verify-energy", "--order", "1"])
        .arg(scenario("incompatible.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["report"]["pass"], false);
}

#[test]
fn reports_are_reproducible() {
    let run = || {
        bin()
            .arg("correct-data")
            .arg(scenario("anisotropic_manufactured.toml"))
            .output()
            .unwrap()
            .stdout
    };
    assert_eq!(run(), run());
    let run = || bin().args(["verify-cancellation", "--seed", "11", "--trials", "10"]).output().unwrap().stdout;
    assert_eq!(run(), run());
}

#[test]
fn transform_and_norms() {
    let out = bin().arg("transform").arg(scenario("curved_chart.toml")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(json(&out)["normal_coefficient_defect"].as_f64().unwrap() <= 1e-12);
    let out = bin()
        .args(["norms", "--gamma", "2", "--gamma", "4"])
        .arg(scenario("vacuum_standing_wave.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert!(v[0]["gm"].as_f64().unwrap() >= v[1]["gm"].as_f64().unwrap());
}

#[test]
fn usage_errors() {
    assert_eq!(bin().arg("nope").output().unwrap().status.code(), Some(64));
    assert_eq!(bin().args(["simulate"]).output().unwrap().status.code(), Some(64));
    assert_eq!(bin().args(["simulate", "/does/not/exist.toml"]).output().unwrap().status.code(), Some(1));
}
