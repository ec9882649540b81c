use std::process::Command;

use qlink_core::cli::output::parse_csv;

fn qlink() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qlink"))
}

#[test]
fn single_run_writes_csv_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let st = qlink()
            .args([
                "run",
                "--trials",
                "2",
                "--seed",
                "5",
                "--set",
                "n_measurements=300",
                "--set",
                "length_km=5",
                "--out",
            ])
            .arg(&out)
            .output()
            .unwrap();
        assert!(st.status.success());
        std::fs::read_to_string(out.join("run.csv")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let (meta, rows) = parse_csv(&a).unwrap();
    assert_eq!(meta.seed_base, 5);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].trials, 2);
    assert_eq!(rows[0].series, "none");
    assert!(rows[0].mean_f_r > 0.5 && rows[0].mean_f_r < 1.0);
}

#[test]
fn json_output_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let st = qlink()
        .args([
            "run",
            "--trials",
            "1",
            "--set",
            "n_measurements=50",
            "--set",
            "scheme=ds-sp",
            "--format",
            "json",
            "--trace",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(st.status.success());
    let text = std::fs::read_to_string(dir.path().join("run.json")).unwrap();
    let (_, rows) = qlink_core::cli::output::parse_json(&text).unwrap();
    assert_eq!(rows[0].series, "Ds-Sp");
    let events = std::fs::read_to_string(dir.path().join("run-trace/point0.events")).unwrap();
    assert!(events.lines().count() > 10);
    assert!(dir.path().join("run-trace/point0.node1.log").exists());
}

#[test]
fn bad_configuration_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["run", "--set", "no_such_key=1"],
        vec!["run", "--set", "meas_error=1.5"],
        vec!["run", "--preset", "fig99"],
        vec!["oracle", "purification", "--scheme", "zz-top"],
    ] {
        let mut cmd = qlink();
        cmd.args(&args);
        if args[0] == "run" {
            cmd.arg("--out").arg(dir.path());
        }
        let out = cmd.output().unwrap();
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "length_km = -3\n").unwrap();
    let out = qlink()
        .args(["run", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn event_cap_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = qlink()
        .args(["run", "--trials", "1", "--set", "event_cap=50", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn oracle_prints_truth_table() {
    let out = qlink()
        .args(["oracle", "purification", "--scheme", "ss-sp"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("pair0,pair1,success,kept"));
    assert_eq!(lines.count(), 16);
}
