use std::fs;
use std::process::{Command, Output};

fn betamix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_betamix")).args(args).output().unwrap()
}

#[test]
fn simulate_writes_forecasts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = betamix(&["simulate", "--dgp", "sim2", "--t", "40", "--seed", "3", "--out-dir", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("forecasts.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 40);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn pipeline_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = betamix(&[
        "pipeline", "--dgp", "sim1", "--t", "80", "--model", "bminf", "--psi", "1", "--iterations", "200",
        "--burn-in", "100", "--out-dir", out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("\"evaluated_steps\":80"), "{stdout}");

    let eval = tempfile::tempdir().unwrap();
    let forecasts = dir.path().join("forecasts.jsonl");
    let trace = dir.path().join("trace.jsonl");
    let o = betamix(&[
        "evaluate",
        "--model",
        "bminf",
        "--forecasts",
        forecasts.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
        "--out-dir",
        eval.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(eval.path().join("report.csv")).unwrap().lines().count(), 81);
}

#[test]
fn config_file_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "seed = 5\nmodel = \"nc\"\n[dgp]\nkind = \"sim1\"\nt = 30\n[io]\nout_dir = \"unused\"\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = betamix(&["pipeline", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("report.csv").exists());
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(betamix(&["pipeline", "--model", "bmx", "--out-dir", out]).status.code(), Some(2));
    assert_eq!(betamix(&["pipeline", "--window", "rolling:3", "--out-dir", out]).status.code(), Some(2));
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "mystery = true\n").unwrap();
    assert_eq!(betamix(&["fit", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(
        &bad,
        "{\"t\":0,\"y\":0.1,\"components\":[{\"family\":\"normal\",\"params\":{\"loc\":0.0,\"scale\":-1.0}}]}\n",
    )
    .unwrap();
    let o = betamix(&[
        "pipeline",
        "--model",
        "nc",
        "--forecasts",
        bad.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("params.scale"));
}
