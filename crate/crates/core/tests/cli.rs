use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sympkan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sympkan"))
        .args(args)
        .env_remove("SYMPKAN_SEED")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_enumerates_presets_and_overrides() {
    let o = sympkan(&["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for word in ["spring", "pendulum", "two_body", "three_body", "--trajectories", "--steps", "--clean", "SYMPKAN_SEED"] {
        assert!(text.contains(word), "{word} missing from help");
    }
}

#[test]
fn generate_is_idempotent_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let o = sympkan(&["generate", "--preset", "spring", "--seed", "0", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let data = out.join("spring.jsonl");
    let first = fs::read(&data).unwrap();
    assert_eq!(first.iter().filter(|&&b| b == b'\n').count(), 50);
    assert!(out.join("spring.meta.json").exists());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("generate.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["outputs"][0], "spring.jsonl");

    assert!(sympkan(&["generate", "--preset", "spring", "--seed", "0", "--out", s(&out)]).status.success());
    assert_eq!(fs::read(&data).unwrap(), first);

    // the environment seed is a fallback for --seed
    let env_out = dir.path().join("env");
    let o = Command::new(env!("CARGO_BIN_EXE_sympkan"))
        .args(["generate", "--preset", "spring", "--out", s(&env_out)])
        .env("SYMPKAN_SEED", "0")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(fs::read(env_out.join("spring.jsonl")).unwrap(), first);
}

#[test]
fn unknown_preset_exits_2_with_the_list() {
    let dir = tempfile::tempdir().unwrap();
    let o = sympkan(&["generate", "--preset", "bogus", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("spring, pendulum, two_body, three_body"));
}

#[test]
fn train_needs_an_existing_matching_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let o = sympkan(&["train", "--preset", "spring", "--model", "kar", "--data", s(&missing), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.jsonl"));

    assert!(sympkan(&["generate", "--preset", "pendulum", "--out", s(dir.path())]).status.success());
    let pend = dir.path().join("pendulum.jsonl");
    let o = sympkan(&["train", "--preset", "spring", "--model", "hnn", "--data", s(&pend), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    assert!(sympkan(&["generate", "--preset", "spring", "--out", s(&data_dir)]).status.success());
    let data = data_dir.join("spring.jsonl");
    let runs = dir.path().join("runs");
    let o = sympkan(&[
        "train", "--preset", "spring", "--model", "kar", "--data", s(&data), "--out", s(&runs), "--steps", "10",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("train loss"));
    let model = runs.join("spring_kar_seed0.khm");
    let history = fs::read_to_string(runs.join("spring_kar_seed0.history.csv")).unwrap();
    assert!(history.starts_with("step,loss,grad_norm,ms\n"));
    assert_eq!(history.lines().count(), 11);

    let eval_dir = dir.path().join("eval");
    let args = [
        "eval", "--model-file", s(&model), "--data", s(&data), "--out", s(&eval_dir), "--max-rollouts", "3",
    ];
    let o = sympkan(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(eval_dir.join("kar.report.csv")).unwrap();
    assert!(report.starts_with("model,train_mean,train_std,test_mean,test_std,energy_mean,energy_std,scale\nkar,"));
    for f in ["kar.breakdown.csv", "kar.energy.csv", "kar.traj_true.csv", "kar.traj_kar.csv", "eval.manifest.json"] {
        assert!(eval_dir.join(f).exists(), "{f}");
    }
    assert!(sympkan(&args).status.success());
    assert_eq!(fs::read_to_string(eval_dir.join("kar.report.csv")).unwrap(), report);

    fs::write(&model, b"KHMF garbage").unwrap();
    assert_eq!(sympkan(&args).status.code(), Some(2));
}

#[test]
fn true_field_has_no_drift() {
    let dir = tempfile::tempdir().unwrap();
    assert!(sympkan(&["generate", "--preset", "pendulum", "--clean", "--out", s(dir.path())]).status.success());
    let out = dir.path().join("eval");
    let o = sympkan(&[
        "eval", "--true-field", "--data", s(&dir.path().join("pendulum.jsonl")), "--out", s(&out), "--max-rollouts", "5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(out.join("true.report.csv")).unwrap();
    let row: Vec<f64> = report.lines().nth(1).unwrap().split(',').skip(1).take(6).map(|v| v.parse().unwrap()).collect();
    assert!(row[0] < 1e-6 && row[2] < 1e-6, "{report}");
    assert!(row[4] < 1e-6, "{report}");
}

#[test]
fn reproduce_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = sympkan(&[
        "reproduce", "--experiment", "pendulum", "--repeats", "1", "--trajectories", "4", "--steps", "2",
        "--max-rollouts", "1", "--quiet", "--out", s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(dir.path().join("pendulum/table.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(stdout(&o).contains("ordering agreement"));
    assert!(dir.path().join("reproduce.manifest.json").exists());
    assert_eq!(sympkan(&["reproduce", "--experiment", "nope", "--out", s(dir.path())]).status.code(), Some(2));
}

#[test]
fn presets_dump_is_json() {
    let o = sympkan(&["presets"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 4);
    assert_eq!(v[2]["kar"]["steps"], 4000);
}
