use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn btm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btm")).args(args).output().unwrap()
}

fn path(dir: &Path, f: &str) -> String {
    dir.join(f).to_str().unwrap().to_string()
}

fn scenario(dir: &Path, net: usize) -> PathBuf {
    let cfg = dir.join("scenario.json");
    fs::write(
        &cfg,
        format!(r#"{{"months": 3, "counts": {{"native": 12, "exemplars": 3, "net": {net}, "net_without_pv": 0}}}}"#),
    )
    .unwrap();
    let out = dir.join("data");
    let o = btm(&["synth", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn run_args(data: &Path, out: &Path) -> Vec<String> {
    vec![
        "run".into(),
        "--native".into(),
        path(data, "cp_native.csv"),
        "--exemplars".into(),
        path(data, "cg_exemplars.csv"),
        "--net".into(),
        path(data, "cn_net.csv"),
        "--components".into(),
        "1,2".into(),
        "--out-dir".into(),
        out.to_str().unwrap().into(),
    ]
}

fn run(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    btm(&refs)
}

#[test]
fn corrupt_row_exits_with_ingestion_status_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = scenario(dir.path(), 1);
    let native = data.join("cp_native.csv");
    let text = fs::read_to_string(&native).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[5] = "cp0000,2021-01-01T04:00:00,not-a-number";
    fs::write(&native, lines.join("\n") + "\n").unwrap();
    let o = run(&run_args(&data, &dir.path().join("out")));
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("line 6"), "{stderr}");
}

#[test]
fn missing_input_is_a_configuration_error() {
    let o = btm(&["run", "--native", "/nonexistent.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_net_set_emits_model_only() {
    let dir = tempfile::tempdir().unwrap();
    let data = scenario(dir.path(), 1);
    fs::write(data.join("cn_net.csv"), "customer_id,timestamp,kwh\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&run_args(&data, &out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("model.json").exists());
    assert!(!out.join("summary.json").exists());
    assert!(!out.join("customers").exists());
}

#[test]
fn fit_then_solve_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = scenario(dir.path(), 2);
    let full = dir.path().join("full");
    assert!(run(&run_args(&data, &full)).status.success());

    let staged = dir.path().join("staged");
    let mut fit = run_args(&data, &staged);
    fit[0] = "fit".into();
    assert!(run(&fit).status.success());
    let solved = dir.path().join("solved");
    let mut solve = run_args(&data, &solved);
    solve[0] = "solve".into();
    solve.extend(["--model".into(), path(&staged, "model.json"), "--partition".into(), path(&staged, "partition.json")]);
    let o = run(&solve);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    assert_eq!(fs::read(full.join("model.json")).unwrap(), fs::read(staged.join("model.json")).unwrap());
    for f in ["cn0000.csv", "cn0001.json"] {
        assert_eq!(
            fs::read(full.join("customers").join(f)).unwrap(),
            fs::read(solved.join("customers").join(f)).unwrap(),
            "{f}"
        );
    }
    let customers = |p: &Path| -> serde_json::Value {
        serde_json::from_str::<serde_json::Value>(&fs::read_to_string(p.join("summary.json")).unwrap()).unwrap()["customers"].clone()
    };
    assert_eq!(customers(&full), customers(&solved));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = scenario(dir.path(), 2);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&run_args(&data, &a)).status.success());
    let mut second = run_args(&data, &b);
    second.extend(["--workers".into(), "1".into()]);
    assert!(run(&second).status.success());
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());
}

#[test]
fn eval_scores_a_previous_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = scenario(dir.path(), 2);
    let out = dir.path().join("out");
    assert!(run(&run_args(&data, &out)).status.success());
    let scored = dir.path().join("scored");
    let o = btm(&[
        "eval",
        "--run-dir",
        out.to_str().unwrap(),
        "--actual-generation",
        &path(&data, "cn_actual_generation.csv"),
        "--actual-native",
        &path(&data, "cn_actual_native.csv"),
        "--out-dir",
        scored.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("median generation MAPE"));
    assert!(scored.join("evaluation.csv").exists());
}

#[test]
fn fit_on_unfittable_data_exits_with_fit_status() {
    let dir = tempfile::tempdir().unwrap();
    let data = scenario(dir.path(), 1);
    let mut fit = run_args(&data, &dir.path().join("out"));
    fit[0] = "fit".into();
    let k = fit.iter().position(|a| a == "1,2").unwrap();
    fit[k] = "50".into();
    assert_eq!(run(&fit).status.code(), Some(3));
}
