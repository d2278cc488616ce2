use std::path::Path;
use std::process::{Command, Output};

fn run(config: &str, out: &Path, extra: &[&str]) -> Output {
    let path = out.join("config.toml");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_stochint"))
        .arg("run")
        .arg(&path)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

const CHAOS: &str = r#"
experiment = "chaos_audit"
seed = 3
k = 1
x_grid = [1.0, 3.0]

[chaos]
variables = 4
entries = [
  { tuple = [0], value = 1.0 },
  { tuple = [1], value = 1.0 },
  { tuple = [2], value = 1.0 },
  { tuple = [3], value = 1.0 },
]
"#;

#[test]
fn chaos_audit_matches_hand_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(CHAOS, dir.path(), &[]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    let csv = std::fs::read_to_string(dir.path().join("chaos_tail.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    // Four unit signs: |Z| is 0, 2 or 4 with weights 6, 8 and 2 out of 16.
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][2], 10.0 / 16.0);
    assert_eq!(rows[1][2], 2.0 / 16.0);
    for row in &rows {
        assert!(row[2] <= row[3]);
    }
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn invalid_field_exits_2_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(&CHAOS.replace("seed = 3", "seed = 3\nreps = 0"), dir.path(), &[]);
    assert_eq!(output.status.code(), Some(2));
    let err = stderr(&output);
    assert_eq!(err.trim_end().lines().count(), 1);
    assert!(err.contains("`reps`"), "{err}");
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(&CHAOS.replace("seed = 3", "seed = 3\nrepz = 10"), dir.path(), &[]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("repz"), "{}", stderr(&output));
}

#[test]
fn table_format_skips_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"
experiment = "expansion_audit"
seed = 0
n = 3
k = 2
trials = 9
held_out = 5
space = { points = 4 }
"#;
    let output = run(config, dir.path(), &["--format", "table"]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    assert!(dir.path().join("expansion.csv").exists());
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn schedule_outside_hypothesis_is_reported_not_failed() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"
experiment = "schedule_audit"
seed = 0
n = 10
k = 1
sigma = 0.1
dense = { d = 1.0, l = 0.0 }
x_grid = [0.5, 5.0]
"#;
    let output = run(config, dir.path(), &[]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    let csv = std::fs::read_to_string(dir.path().join("schedule.csv")).unwrap();
    assert!(csv.lines().all(|l| l.starts_with('x') || l.contains(",false,")));
}

#[test]
fn seed_override_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(CHAOS, dir.path(), &["--seed", "99", "--format", "report"]);
    assert_eq!(output.status.code(), Some(0));
    let report = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(report.contains("\"seed\": 99"));
    assert!(!dir.path().join("chaos_tail.csv").exists());
}
