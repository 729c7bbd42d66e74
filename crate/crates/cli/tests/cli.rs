use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn storm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_storm"))
        .args(args)
        .env_remove("STORM_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn summary(o: &Output) -> String {
    stdout(o).lines().last().unwrap_or_default().to_string()
}

#[test]
fn fixture_runs_print_expected_coverage() {
    let cases = [
        (vec!["--fixture", "appendix-c3", "--policy", "storm", "--Tprime", "3", "--k", "1"], "coverage=3.8"),
        (vec!["--fixture", "appendix-c3", "--policy", "storm", "--Tprime", "2", "--k", "1"], "coverage=3.0"),
        (vec!["--fixture", "storm-tight", "--Tprime", "5", "--policy", "storm", "--k", "1"], "coverage=1.0"),
        (vec!["--fixture", "appendix-c3", "--policy", "stormpp", "--Tprime", "3", "--delta", "3"], "coverage=3.8"),
    ];
    for (args, want) in cases {
        let mut full = vec!["run"];
        full.extend(args);
        let o = storm(&full);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(summary(&o).contains(want), "{full:?}: {}", summary(&o));
    }
}

#[test]
fn gen_writes_items_and_schedule_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = storm(&["gen", "--n", "4", "--T", "2", "--seed", "1", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let items = fs::read_to_string(a.join("items.tsv")).unwrap();
    assert_eq!(items.lines().count(), 4);
    let schedule = fs::read_to_string(a.join("schedule.txt")).unwrap();
    assert_eq!(schedule.lines().filter(|l| *l == "1").count(), 2);
    assert_eq!(items, fs::read_to_string(b.join("items.tsv")).unwrap());
    assert_eq!(schedule, fs::read_to_string(b.join("schedule.txt")).unwrap());

    // The generated files feed straight into `run`.
    let o = storm(&[
        "run",
        "--items",
        a.join("items.tsv").to_str().unwrap(),
        "--schedule",
        a.join("schedule.txt").to_str().unwrap(),
        "--policy",
        "lmgreedy",
        "--k",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(summary(&o).contains("coverage="));
}

#[test]
fn gen_rejects_inverted_probability_range() {
    let dir = tempfile::tempdir().unwrap();
    let o = storm(&[
        "gen", "--n", "4", "--T", "2", "--prob-lo", "0.3", "--prob-hi", "0.2", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("prob"));
}

#[test]
fn unknown_flags_and_suites_are_usage_errors() {
    assert_eq!(storm(&["run", "--fixture", "appendix-c3", "--policy", "storm", "--bogus"]).status.code(), Some(2));
    assert_eq!(storm(&["verify", "bogus"]).status.code(), Some(2));
    assert_eq!(storm(&["run", "--fixture", "nope", "--policy", "storm"]).status.code(), Some(2));
    assert_eq!(storm(&["run", "--fixture", "appendix-c3", "--policy", "nope"]).status.code(), Some(2));
}

#[test]
fn verify_suites_pass_and_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for suite in ["fixtures", "properties", "ratios"] {
        let o = storm(&["verify", suite, "--seed", "7"]);
        assert!(o.status.success(), "{suite}: {}{}", stdout(&o), stderr(&o));
    }
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    for p in [&a, &b] {
        assert!(storm(&["verify", "ratios", "--seed", "7", "--out", p.to_str().unwrap()]).status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    fs::write(
        &path,
        r#"
seed = 3
repetitions = 2

[stream]
n_items = 200
visits = 3
delta_t = 4
k = 2
source = { synthetic = { topics = 12, per_item_min = 1, per_item_max = 3 } }

[[policies]]
name = "storm"

[[policies]]
name = "stormpp"
delta = 2

[[policies]]
name = "lmgreedy"

[sweep]
param = "k"
values = [1, 5, 10]
"#,
    )
    .unwrap();
    path
}

#[test]
fn sweep_writes_reproducible_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = storm(&["sweep", "--config", config.to_str().unwrap(), "--out", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let csv = fs::read_to_string(&a).unwrap();
    assert_eq!(csv.lines().count(), 10);
    assert_eq!(csv, fs::read_to_string(&b).unwrap());

    let json = dir.path().join("r.json");
    let o = storm(&["sweep", "--config", config.to_str().unwrap(), "--out", json.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success());
    let rows: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 9);
}

#[test]
fn sweep_missing_config_names_the_path() {
    let o = storm(&["sweep", "--config", "/no/such/exp.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/exp.toml"));
}

#[test]
fn run_report_goes_to_out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_storm"))
        .args(["run", "--fixture", "appendix-c3", "--policy", "storm", "--Tprime", "3", "--out", "c3.json"])
        .env("STORM_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("c3.json")).unwrap();
    let rows: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(rows[0]["mean_coverage"], serde_json::json!(3.8));
}

#[test]
fn fixtures_lists_and_prints() {
    let o = storm(&["fixtures"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 3);
    let o = storm(&["fixtures", "storm-tight", "--Tprime", "3"]);
    assert!(stdout(&o).contains("{1,2,3}"));
}
