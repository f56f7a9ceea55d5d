use std::fs;
use std::path::Path;

use betamix::experiment::{run_experiment, ExperimentConfig, Mode, Window};
use betamix::finite::McmcConfig;
use betamix::io::{load_forecast_series, load_trace, ModelKind};
use betamix::model::Hyperparams;
use betamix::sim::Dgp;
use betamix::Error;

fn small(out: &Path, model: ModelKind, window: Window, t: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        mode: Mode::Pipeline,
        seed: 7,
        model,
        window,
        dgp: Dgp::Sim1 { p: [0.2, 0.2, 0.6], t },
        hyper: Hyperparams::default().with_fixed_psi(1.0),
        mcmc: McmcConfig {
            iterations: 300,
            burn_in: 100,
            seed: 7,
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.io.out_dir = out.to_path_buf();
    cfg
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn identical_config_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run_a = run_experiment(&small(a.path(), ModelKind::Bminf, Window::InSample, 150)).unwrap();
    run_experiment(&small(b.path(), ModelKind::Bminf, Window::InSample, 150)).unwrap();
    for f in &run_a.manifest.files {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    for f in ["forecasts.jsonl", "trace.jsonl", "report.csv", "summary.json"] {
        assert!(run_a.manifest.files.iter().any(|x| x == f), "{f} missing");
    }
    assert_eq!(read(a.path(), "manifest.json"), read(b.path(), "manifest.json"));
}

#[test]
fn pits_and_crps_in_range() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_experiment(&small(dir.path(), ModelKind::Bmk, Window::Holdout(100), 150)).unwrap();
    let report = run.report.unwrap();
    assert_eq!(report.pits.len(), 50);
    assert!(report.pits.iter().all(|p| (0.0..=1.0).contains(p)));
    assert!(report.crps.iter().all(|c| *c >= 0.0));
    let csv = String::from_utf8(read(dir.path(), "report.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,y,pit,log_score,crps");
    assert_eq!(csv.lines().count(), 51);
    assert!(csv.lines().nth(1).unwrap().starts_with("100,"));
}

#[test]
fn degenerate_rolling_window_scores_one_step() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_experiment(&small(dir.path(), ModelKind::Bm1, Window::Rolling(59), 60)).unwrap();
    let s = run.summary.unwrap();
    assert_eq!(s.evaluated_steps, 1);
    assert!(s.flagged_windows.is_empty());
}

#[test]
fn nc_runs_without_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_experiment(&small(dir.path(), ModelKind::Nc, Window::InSample, 200)).unwrap();
    assert!(!dir.path().join("trace.jsonl").exists());
    assert_eq!(run.report.unwrap().pits.len(), 200);
}

#[test]
fn fit_then_evaluate_from_saved_trace() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), ModelKind::Bminf, Window::InSample, 120);
    cfg.mode = Mode::Fit;
    run_experiment(&cfg).unwrap();
    let (header, post) = load_trace(&dir.path().join("trace.jsonl")).unwrap();
    assert_eq!(header.model, ModelKind::Bminf);
    assert_eq!(post.len(), 200);

    let eval_dir = tempfile::tempdir().unwrap();
    let mut ev = small(eval_dir.path(), ModelKind::Bminf, Window::InSample, 120);
    ev.mode = Mode::Evaluate;
    ev.dgp = Dgp::None;
    ev.io.forecasts = Some(dir.path().join("forecasts.jsonl"));
    ev.io.trace = Some(dir.path().join("trace.jsonl"));
    let run = run_experiment(&ev).unwrap();
    assert_eq!(run.report.unwrap().pits.len(), 120);
    assert_eq!(load_forecast_series(&dir.path().join("forecasts.jsonl")).unwrap().len(), 120);
}

#[test]
fn config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), ModelKind::Bminf, Window::Rolling(5), 100);
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
    cfg.window = Window::Holdout(500);
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
    assert!(matches!(
        ExperimentConfig::from_toml_str("mode = \"pipeline\"\nbogus = 1\n"),
        Err(Error::Config(_))
    ));
    let parsed = ExperimentConfig::from_toml_str("mode = \"fit\"\nseed = 3\nmodel = \"bmk\"\nk = 3\n").unwrap();
    assert_eq!((parsed.mode, parsed.seed, parsed.k), (Mode::Fit, 3, 3));
    let round = ExperimentConfig::from_toml_str(&parsed.to_toml_string()).unwrap();
    assert_eq!(round, parsed);
}

#[test]
fn missing_forecast_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), ModelKind::Nc, Window::InSample, 10);
    cfg.dgp = Dgp::None;
    cfg.io.forecasts = Some(dir.path().join("absent.jsonl"));
    assert!(matches!(run_experiment(&cfg), Err(Error::Io(_))));
}
