use std::process::Command;

fn netcoop() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_netcoop"));
    c.env("RUST_LOG", "warn");
    c
}

const SMALL: [&str; 12] = [
    "--set",
    "scenario.n_bs=4",
    "--set",
    "scenario.n_ue=6",
    "--set",
    "scenario.area_side=200.0",
    "--set",
    "scenario.cluster_size_l=2",
    "--set",
    "scenario.static_groups=2",
    "--set",
    "scenario.n_drops=2",
];

#[test]
fn simulate_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let out = netcoop()
        .arg("simulate")
        .args(SMALL)
        .args([
            "--set",
            "scenario.snr_sweep=[0.0, 20.0]",
            "--target",
            "se,coverage",
            "--jobs",
            "1",
        ])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 4 * 2);
    assert!(dir.path().join("results.csv").exists());
    assert!(dir.path().join("config.toml").exists());

    let cmp = netcoop()
        .arg("compare")
        .arg("--in")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        cmp.status.success(),
        "{}",
        String::from_utf8_lossy(&cmp.stderr)
    );
    assert!(dir.path().join("checks.csv").exists());
}

#[test]
fn simulate_refuses_existing_output() {
    let dir = tempfile::tempdir().unwrap();
    let run = |extra: &[&str]| {
        netcoop()
            .arg("simulate")
            .args(SMALL)
            .args([
                "--scheme",
                "single",
                "--set",
                "scenario.snr_sweep=[10.0]",
                "--target",
                "se",
            ])
            .args(extra)
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap()
    };
    assert!(run(&[]).status.success());
    let second = run(&[]);
    assert!(!second.status.success());
    assert!(String::from_utf8_lossy(&second.stderr).contains("error"));
    assert!(run(&["--overwrite"]).status.success());
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["--scheme", "bogus"],
        vec!["--set", "scenario.n_bs=0"],
        vec!["--set", "nonsense"],
        vec!["--target", "latency"],
    ] {
        let out = netcoop()
            .arg("simulate")
            .args(&args)
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(!out.status.success(), "{args:?} succeeded");
    }
}

#[test]
fn sensing_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let sensing = |extra: &[&str]| {
        netcoop()
            .args([
                "sensing",
                "--set",
                "sensing.n_draws=3",
                "--set",
                "sensing.padding=4",
            ])
            .args(extra)
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap()
    };
    let out = sensing(&[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("sensing.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    assert!(dir.path().join("sensing_report.txt").exists());
    assert!(!sensing(&[]).status.success());
    assert!(sensing(&["--overwrite"]).status.success());
}
