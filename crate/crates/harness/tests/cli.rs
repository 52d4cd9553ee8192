use std::process::Command;

fn kac_ldp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kac-ldp"))
}

#[test]
fn nucleation_table_lists_costs() {
    let out = kac_ldp()
        .args([
            "nucleation-table",
            "--fbar",
            "1",
            "--mu",
            "1",
            "--v2t",
            "12",
            "--nmax",
            "2",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<f64> = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    let expect = [12.0, 12.0, 6.0, 6.4, 1.0];
    for (a, b) in row.iter().zip(expect) {
        assert!((a - b).abs() < 1e-12, "{row:?}");
    }
    assert!(text.contains("crossover 0->1 at V^2 T = 3"));
}

#[test]
fn validate_schedule_exit_codes() {
    assert!(kac_ldp().arg("validate-schedule").status().unwrap().success());
    let out = kac_ldp()
        .args(["validate-schedule", "--set", "lambda4=0.5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().contains("FAIL c1"));
    let bad = kac_ldp()
        .args(["validate-schedule", "--set", "nope=1"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn experiment_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "kind = \"instanton\"\nbeta = 2.0\n").unwrap();
    let out = kac_ldp()
        .args(["instanton", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .args(["--format", "json", "--format", "csv"])
        .env("KAC_LDP_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("instanton.json").exists());
    assert!(dir.path().join("instanton_profile.csv").exists());
    let rec = kac_ldp_harness::load_record(&dir.path().join("instanton.json")).unwrap();
    assert!(rec.all_passed());
    assert_eq!(rec.metrics.threads, 2);
}

#[test]
fn mismatched_kind_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "kind = \"tube\"\n").unwrap();
    let out = kac_ldp().args(["cost", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("not `cost`"));
}
