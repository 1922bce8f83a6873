use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dop::metrics::COLUMNS;

fn dop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dop")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{
  "algorithm": "stochastic_dop",
  "env": {"kind": "matrix_game"},
  "total_steps": 40,
  "metric_period": 20,
  "stochastic": {"actor_hidden": [8], "critic": {"hidden": [8]}}
}"#;

fn csv_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).filter(|n| n.ends_with(".csv")).collect();
    v.sort();
    v
}

#[test]
fn syntax_error_reports_position_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", "{\n  \"algorithm\": \"coma\",\n  \"env\": {\"kind\": \"matrix_game\"\n  \"total_steps\": 5\n}");
    let out = dop(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4, column 3"), "{err}");
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"algorithm": "coma", "env": {"kind": "matrix_game"}, "total_steps": 5, "learning_rate": 1}"#);
    let out = dop(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn incompatible_algorithm_and_env_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"algorithm": "stochastic_dop", "env": {"kind": "mill"}, "total_steps": 5}"#);
    let out = dop(&["run", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(csv_files(dir.path()).is_empty());
}

#[test]
fn twelve_seeds_give_twelve_csvs_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let out_dir = dir.path().join("out");
    let out = dop(&["run", &cfg, "--out", out_dir.to_str().unwrap(), "--parallel", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let files = csv_files(&out_dir);
    assert_eq!(files.len(), 12);
    for f in &files {
        let text = fs::read_to_string(out_dir.join(f)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), COLUMNS.join(","));
        assert_eq!(lines.count(), 2, "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cells"].as_array().unwrap().len(), 12);
    assert_eq!(manifest["config"]["algorithm"], "stochastic_dop");
}

#[test]
fn reruns_and_parallelism_do_not_change_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(dop(&["run", &cfg, "--out", a.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(dop(&["run", &cfg, "--out", b.to_str().unwrap(), "--parallel", "4"]).status.code(), Some(0));
    for f in csv_files(&a) {
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_offset_shifts_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("\"total_steps\": 40", "\"total_steps\": 20, \"seeds\": [0, 1]");
    let cfg = write(dir.path(), "c.json", &text);
    let out_dir = dir.path().join("o");
    assert_eq!(dop(&["run", &cfg, "--out", out_dir.to_str().unwrap(), "--seed-offset", "5"]).status.code(), Some(0));
    assert_eq!(csv_files(&out_dir), vec!["stochastic_dop-matrix_game-seed5.csv", "stochastic_dop-matrix_game-seed6.csv"]);
    let direct = dir.path().join("d");
    let shifted = text.replace("[0, 1]", "[5, 6]");
    let cfg2 = write(dir.path(), "c2.json", &shifted);
    assert_eq!(dop(&["run", &cfg2, "--out", direct.to_str().unwrap()]).status.code(), Some(0));
    for f in csv_files(&out_dir) {
        assert_eq!(fs::read(out_dir.join(&f)).unwrap(), fs::read(direct.join(&f)).unwrap());
    }
}

#[test]
fn unknown_suite_exits_2() {
    assert_eq!(dop(&["accept", "smac"]).status.code(), Some(2));
}

#[test]
fn improvement_suite_passes_from_the_command_line() {
    let out = dop(&["accept", "improvement"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 2, "{text}");
}

#[test]
fn shipped_configs_match_the_acceptance_settings() {
    use dop::Algorithm;
    use dop_cli::runner::load_config;
    use dop_cli::suites::{continuous_config, matrix_config};
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let load = |name: &str| load_config(&dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    assert_eq!(load("matrix_game_dop.json").stochastic, matrix_config(Algorithm::StochasticDop).stochastic);
    assert_eq!(load("matrix_game_coma.json").coma, matrix_config(Algorithm::Coma).coma);
    let maddpg = load("matrix_game_maddpg.json");
    assert_eq!(maddpg.deterministic, matrix_config(Algorithm::Maddpg).deterministic);
    assert_eq!(maddpg.relaxation, matrix_config(Algorithm::Maddpg).relaxation);
    assert_eq!(load("mill_dop.json").deterministic, continuous_config());
    for name in ["aggregation_full_dop.json", "aggregation_full_maddpg.json"] {
        assert_eq!(load(name).total_steps, 300_000);
    }
}
