use std::path::Path;
use std::process::{Command, Output};

fn tmc() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tmc"));
    cmd.env_remove("TMC_OUTPUT_ROOT");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("tmc runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s2_args(root: &Path, name: &str) -> Vec<String> {
    [
        "run",
        "--mode",
        "s2",
        "--name",
        name,
        "--sizes",
        "2",
        "--probabilities",
        "0.1,0.2",
        "--n-steps",
        "60",
        "--n-trajectories",
        "6",
        "--checkpoint-interval",
        "20",
        "--seed",
        "7",
        "--output-root",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([root.display().to_string()])
    .collect()
}

#[test]
fn oracle_check_passes_on_tiny_lattices() {
    let out = run(tmc().args(["oracle-check", "--sizes", "1"]));
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(
        text.contains("[PASS]") && !text.contains("[FAIL]"),
        "{text}"
    );
}

#[test]
fn oracle_check_rejects_large_sizes() {
    let out = run(tmc().args(["oracle-check", "--sizes", "4"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn temperatures_and_probabilities_are_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(tmc().args(["run", "--temperatures", "0.5", "--probabilities", "0.1"]));
    assert_eq!(out.status.code(), Some(2));

    let cfg = dir.path().join("both.json");
    std::fs::write(
        &cfg,
        r#"{"mode": "anyon", "sizes": [2], "temperatures": [0.5], "probabilities": [0.1]}"#,
    )
    .unwrap();
    let out = run(tmc()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--output-root")
        .arg(dir.path()));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mutually exclusive"));
}

#[test]
fn unknown_config_field_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("typo.json");
    std::fs::write(&cfg, r#"{"mode": "anyon", "n_sample": 10}"#).unwrap();
    let out = run(tmc()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--output-root")
        .arg(dir.path()));
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn flags_override_config_and_env_sets_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("anyon.json");
    std::fs::write(
        &cfg,
        r#"{"mode": "anyon", "name": "from-config", "sizes": [2], "temperatures": [0.8], "n_samples": 50}"#,
    )
    .unwrap();
    let root = dir.path().join("env-root");
    let out = run(tmc()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--n-samples", "20", "--name", "from-flag"])
        .env("TMC_OUTPUT_ROOT", &root));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let campaign = root.join("from-flag");
    let written: serde_json::Value =
        serde_json::from_slice(&std::fs::read(campaign.join("config.json")).unwrap()).unwrap();
    assert_eq!(written["n_samples"], 20);
    let table = std::fs::read_to_string(campaign.join("results.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "observable,L,T,p,value,error,n_steps,n_trajectories,chi,seed,code_version"
    );
    assert!(lines.next().unwrap().starts_with("T_l,2,0.8,"));
}

#[test]
fn interrupted_campaign_resumes_to_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let straight = run(tmc().args(s2_args(dir.path(), "straight")));
    assert!(
        straight.status.success(),
        "{}",
        String::from_utf8_lossy(&straight.stderr)
    );

    let mut halted = tmc();
    halted.args(s2_args(dir.path(), "halted")).args([
        "--threads",
        "1",
        "--halt-after-checkpoints",
        "5",
    ]);
    let out = run(&mut halted);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(
        !dir.path().join("halted/results.csv").exists() || {
            let rows = std::fs::read_to_string(dir.path().join("halted/results.csv")).unwrap();
            rows.lines().count() < 3
        }
    );

    let out = run(tmc().arg("resume").arg(dir.path().join("halted")));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let a = std::fs::read(dir.path().join("straight/results.csv")).unwrap();
    let b = std::fs::read(dir.path().join("halted/results.csv")).unwrap();
    assert_eq!(a, b);

    let manifest_before = std::fs::read(dir.path().join("straight/manifest.json")).unwrap();
    let again = run(tmc().arg("resume").arg(dir.path().join("straight")));
    assert!(again.status.success());
    assert_eq!(
        manifest_before,
        std::fs::read(dir.path().join("straight/manifest.json")).unwrap()
    );

    let report = run(tmc().arg("report").arg(dir.path().join("straight")));
    assert!(report.status.success());
    let text = stdout(&report);
    assert!(text.contains("Jensen bound holds"), "{text}");
    assert!(text.contains("S2_half"), "{text}");
}

#[test]
fn changed_physics_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(tmc().args(s2_args(dir.path(), "c"))).status.success());
    let mut args = s2_args(dir.path(), "c");
    let seed = args.iter().position(|a| a == "--seed").unwrap();
    args[seed + 1] = "8".into();
    let out = run(tmc().args(args));
    assert!(!out.status.success());
}

#[test]
fn analyze_writes_report_and_rescaled_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(tmc()
        .args([
            "run",
            "--mode",
            "anyon",
            "--name",
            "a",
            "--sizes",
            "2,4",
            "--temperatures",
            "0.6,0.8,1.0,1.2,1.4",
            "--n-samples",
            "200",
            "--output-root",
        ])
        .arg(dir.path()));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let campaign = dir.path().join("a");
    let out = run(tmc()
        .args(["analyze", "--input"])
        .arg(campaign.join("results.csv"))
        .args(["--bootstrap", "4", "--degree", "2"]));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(campaign.join("analysis_T_l.json").exists());
    let rescaled = std::fs::read_to_string(campaign.join("rescaled_T_l.csv")).unwrap();
    assert_eq!(rescaled.lines().count(), 11);

    let report = run(tmc().arg("report").arg(&campaign));
    assert!(stdout(&report).contains("T_l: T_c ="));
}

#[test]
fn report_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(tmc().arg("report").arg(dir.path()));
    assert_eq!(out.status.code(), Some(1));
}
