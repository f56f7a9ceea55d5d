//! Configuration and orchestration of simulate / fit / evaluate runs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dp::run_slice_sampler_evaluated;
use crate::error::{Error, Result};
use crate::finite::{run_finite_gibbs_evaluated, run_global_mh_k1_evaluated, AcceptanceRates, McmcConfig};
use crate::io::{self, ModelKind, TraceHeader};
use crate::model::Hyperparams;
use crate::pool::{EvaluatedSeries, ForecastSeries};
use crate::predict::{
    self, default_pit_grid, recursive_logscore_weights_evaluated, EvalReport, PitBand, Posterior, Predictive,
};
use crate::sim::Dgp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    Fit,
    Evaluate,
    Pipeline,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simulate" => Ok(Mode::Simulate),
            "fit" | "calibrate" => Ok(Mode::Fit),
            "evaluate" => Ok(Mode::Evaluate),
            "pipeline" | "full-pipeline" => Ok(Mode::Pipeline),
            _ => Err(Error::Config(format!("unknown mode `{s}`"))),
        }
    }
}

/// Which observations a fit sees and which are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// Fit on the whole series and score the same observations.
    InSample,
    /// Fit on the first `n` steps once, score the remainder.
    Holdout(usize),
    /// Refit on the last `n` steps before each scored step.
    Rolling(usize),
    /// Refit on all steps before each scored step, starting after `n`.
    Expanding(usize),
}

impl FromStr for Window {
    type Err = Error;

    /// `in_sample`, `holdout:N`, `expanding:N`, `rolling:N` or a bare `N`
    /// (rolling).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid window `{s}`"));
        let num = |v: &str| v.parse::<usize>().map_err(|_| bad());
        match s.split_once(':') {
            None if s == "in_sample" || s == "in-sample" => Ok(Window::InSample),
            None => num(s).map(Window::Rolling),
            Some(("holdout", n)) => num(n).map(Window::Holdout),
            Some(("rolling", n)) => num(n).map(Window::Rolling),
            Some(("expanding", n)) => num(n).map(Window::Expanding),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Window::InSample => write!(f, "in_sample"),
            Window::Holdout(n) => write!(f, "holdout:{n}"),
            Window::Rolling(n) => write!(f, "rolling:{n}"),
            Window::Expanding(n) => write!(f, "expanding:{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Posterior draws used for predictive evaluation (evenly thinned).
    pub max_draws: usize,
    pub pit_level: f64,
    pub pit_grid: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_draws: 1000,
            pit_level: 0.99,
            pit_grid: default_pit_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IoConfig {
    pub forecasts: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            forecasts: None,
            trace: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub model: ModelKind,
    /// Components of the finite mixture (`bmk` only).
    pub k: usize,
    pub window: Window,
    pub dgp: Dgp,
    pub hyper: Hyperparams,
    pub mcmc: McmcConfig,
    pub eval: EvalConfig,
    pub io: IoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Pipeline,
            seed: 0,
            model: ModelKind::Bminf,
            k: 2,
            window: Window::InSample,
            dgp: Dgp::Sim1 {
                p: [0.2, 0.2, 0.6],
                t: 1000,
            },
            hyper: Hyperparams::default(),
            mcmc: McmcConfig::default(),
            eval: EvalConfig::default(),
            io: IoConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        self.hyper.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.mcmc.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.model == ModelKind::Bmk && self.k == 0 {
            return cfg("model bmk needs k >= 1".into());
        }
        if let Window::Rolling(n) | Window::Expanding(n) = self.window {
            if n < 10 {
                return cfg(format!("window length must be at least 10, got {n}"));
            }
        }
        if !(self.eval.pit_level > 0.0 && self.eval.pit_level < 1.0) {
            return cfg(format!("pit_level must lie in (0, 1), got {}", self.eval.pit_level));
        }
        if self.dgp == Dgp::None && self.mode != Mode::Simulate && self.io.forecasts.is_none() {
            return cfg("no data: set io.forecasts or choose a dgp".into());
        }
        if self.dgp == Dgp::None && self.mode == Mode::Simulate {
            return cfg("simulate mode needs a dgp".into());
        }
        if self.mode == Mode::Evaluate && self.model != ModelKind::Nc && self.io.trace.is_none() {
            return cfg("evaluate mode needs io.trace".into());
        }
        if self.mode == Mode::Fit && self.model == ModelKind::Nc {
            return cfg("the nc model has nothing to fit".into());
        }
        Ok(())
    }
}

/// Posterior draws and sampler diagnostics from one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub posterior: Posterior,
    pub acceptance: AcceptanceRates,
    pub numerical_warnings: usize,
    pub cluster_counts: Option<Vec<usize>>,
}

pub fn fit(
    model: ModelKind,
    data: &EvaluatedSeries,
    hyper: &Hyperparams,
    k: usize,
    mcmc: &McmcConfig,
) -> Result<FitOutcome> {
    match model {
        ModelKind::Nc => Err(Error::Unsupported("the nc model has no parameters to fit".into())),
        ModelKind::Bm1 => {
            let tr = run_global_mh_k1_evaluated(data, hyper, mcmc)?;
            Ok(FitOutcome {
                posterior: Posterior::Finite(tr.draws),
                acceptance: tr.acceptance,
                numerical_warnings: tr.numerical_warnings,
                cluster_counts: None,
            })
        }
        ModelKind::Bmk => {
            let tr = run_finite_gibbs_evaluated(data, hyper, k, mcmc)?;
            Ok(FitOutcome {
                posterior: Posterior::Finite(tr.draws),
                acceptance: tr.acceptance,
                numerical_warnings: tr.numerical_warnings,
                cluster_counts: None,
            })
        }
        ModelKind::Bminf => {
            let tr = run_slice_sampler_evaluated(data, hyper, mcmc)?;
            Ok(FitOutcome {
                posterior: Posterior::Dp(tr.draws),
                acceptance: tr.acceptance,
                numerical_warnings: tr.numerical_warnings,
                cluster_counts: Some(tr.cluster_counts),
            })
        }
    }
}

/// Scores the non-calibrated pool with recursive log-score weights on steps
/// `range`; the weights accumulate over every earlier step.
pub fn evaluate_nc(series: &ForecastSeries, range: std::ops::Range<usize>, band: Option<(&[f64], f64)>) -> Result<EvalReport> {
    let data = EvaluatedSeries::from_series(series);
    let (weights, _) = recursive_logscore_weights_evaluated(&data);
    let mut pits = Vec::new();
    let mut ls = Vec::new();
    let mut crps = Vec::new();
    let mut clamped = 0;
    for t in range {
        let pred = Predictive::linear_pool(&weights[t]);
        let step = &series.steps()[t];
        pits.push(pred.cdf_from_values(data.cdfs(t)));
        let l = pred.pdf_from_values(data.cdfs(t), data.pdfs(t)).ln();
        if l.is_nan() || l < predict::LOG_SCORE_FLOOR {
            clamped += 1;
            ls.push(predict::LOG_SCORE_FLOOR);
        } else {
            ls.push(l);
        }
        crps.push(pred.crps(step.y, &step.components)?);
    }
    let band = band.map(|(grid, level)| ecdf_band(&pits, grid, level));
    EvalReport::from_parts(pits, ls, crps, band, clamped)
}

fn ecdf_band(pits: &[f64], grid: &[f64], level: f64) -> PitBand {
    let mut s = pits.to_vec();
    s.sort_by(f64::total_cmp);
    let e: Vec<f64> = grid
        .iter()
        .map(|&q| s.partition_point(|&x| x <= q) as f64 / s.len() as f64)
        .collect();
    PitBand {
        grid: grid.to_vec(),
        lower: e.clone(),
        upper: e,
        level,
    }
}

/// Seed for the fit ending just before step `t` in a rolling run.
pub fn window_seed(master: u64, t: usize) -> u64 {
    master ^ (t as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedWindow {
    pub t: usize,
    pub error: String,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model: ModelKind,
    pub dgp: String,
    pub window: String,
    pub evaluated_steps: usize,
    pub avls: Option<f64>,
    pub avcrps: Option<f64>,
    pub ks_statistic: Option<f64>,
    pub ks_critical: Option<f64>,
    pub ks_pass: Option<bool>,
    pub clamped_log_scores: usize,
    pub pit_band: Option<PitBand>,
    pub acceptance: Option<AcceptanceRates>,
    /// `P(K = i + 1)` for Dirichlet-process fits.
    pub cluster_count_pmf: Option<Vec<f64>>,
    pub psi_mean: Option<f64>,
    pub flagged_windows: Vec<FlaggedWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub files: Vec<String>,
}

/// Everything a run produced, also written to `io.out_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub series: Option<ForecastSeries>,
    pub report: Option<EvalReport>,
    pub summary: Option<RunSummary>,
    pub manifest: Manifest,
}

fn obtain_series(cfg: &ExperimentConfig) -> Result<ForecastSeries> {
    match cfg.dgp.generate(cfg.seed)? {
        Some(s) => Ok(s),
        None => {
            let path = cfg.io.forecasts.as_ref().ok_or_else(|| Error::Config("io.forecasts is not set".into()))?;
            io::load_forecast_series(path)
        }
    }
}

fn fit_range(window: Window, t: usize) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    match window {
        Window::InSample => Ok((0..t, 0..t)),
        Window::Holdout(n) if n > 0 && n < t => Ok((0..n, n..t)),
        Window::Rolling(n) | Window::Expanding(n) if n < t => Ok((0..n, n..t)),
        _ => Err(Error::Config(format!("window {window} does not fit a series of length {t}"))),
    }
}

fn cluster_pmf(counts: &[usize]) -> Vec<f64> {
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut pmf = vec![0.0; max];
    counts.iter().for_each(|&k| pmf[k - 1] += 1.0);
    pmf.iter_mut().for_each(|p| *p /= counts.len() as f64);
    pmf
}

fn psi_mean(post: &Posterior) -> Option<f64> {
    match post {
        Posterior::Dp(d) if !d.is_empty() => Some(d.iter().map(|x| x.psi).sum::<f64>() / d.len() as f64),
        _ => None,
    }
}

fn summarize(cfg: &ExperimentConfig, report: &EvalReport) -> RunSummary {
    RunSummary {
        model: cfg.model,
        dgp: cfg.dgp.name().to_string(),
        window: cfg.window.to_string(),
        evaluated_steps: report.pits.len(),
        avls: Some(report.avls),
        avcrps: Some(report.avcrps),
        ks_statistic: Some(report.ks.statistic),
        ks_critical: Some(report.ks.critical),
        ks_pass: Some(report.ks.pass),
        clamped_log_scores: report.clamped_log_scores,
        pit_band: report.pit_band.clone(),
        acceptance: None,
        cluster_count_pmf: None,
        psi_mean: None,
        flagged_windows: Vec::new(),
    }
}

/// Runs the configured experiment and writes its artifacts to
/// `io.out_dir`: `forecasts.jsonl`, `trace.jsonl`, `report.csv`,
/// `summary.json` and `manifest.json`, as applicable.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let out = &cfg.io.out_dir;
    std::fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let series = obtain_series(cfg)?;
    if series.is_empty() {
        return Err(Error::Validation("the forecast series is empty".into()));
    }
    if cfg.dgp != Dgp::None {
        io::save_forecast_series(&series, &out.join("forecasts.jsonl"))?;
        files.push("forecasts.jsonl".to_string());
    }
    let band_spec = Some((cfg.eval.pit_grid.as_slice(), cfg.eval.pit_level));
    let mut report = None;
    let mut summary = None;
    let mut scored: Vec<usize> = Vec::new();

    match cfg.mode {
        Mode::Simulate => {}
        Mode::Fit => {
            let (train, _) = fit_range(cfg.window, series.len()).unwrap_or((0..series.len(), 0..0));
            let fitted = fit_and_save(cfg, &series.slice(train), out, &mut files)?;
            let mut s = empty_summary(cfg);
            s.acceptance = Some(fitted.acceptance);
            s.cluster_count_pmf = fitted.cluster_counts.as_deref().map(cluster_pmf);
            s.psi_mean = psi_mean(&fitted.posterior);
            summary = Some(s);
        }
        Mode::Evaluate | Mode::Pipeline => {
            let (train, test) = fit_range(cfg.window, series.len())?;
            let rolling = matches!(cfg.window, Window::Rolling(_) | Window::Expanding(_));
            if cfg.model == ModelKind::Nc {
                scored = test.clone().collect();
                let r = evaluate_nc(&series, test, band_spec)?;
                summary = Some(summarize(cfg, &r));
                report = Some(r);
            } else if rolling && cfg.mode == Mode::Pipeline {
                let (r, s) = run_rolling(cfg, &series, test.clone())?;
                let flagged: Vec<usize> = s.flagged_windows.iter().map(|f| f.t).collect();
                scored = test.filter(|t| !flagged.contains(t)).collect();
                summary = Some(s);
                report = r;
            } else {
                let (posterior, diag) = if cfg.mode == Mode::Evaluate {
                    let path = cfg.io.trace.as_ref().expect("validated");
                    let (h, p) = io::load_trace(path)?;
                    if h.m != series.m() {
                        return Err(Error::Validation(format!(
                            "trace has {} pooled components, the series {}",
                            h.m,
                            series.m()
                        )));
                    }
                    (p, None)
                } else {
                    let f = fit_and_save(cfg, &series.slice(train), out, &mut files)?;
                    (f.posterior.clone(), Some(f))
                };
                let pred = Predictive::new(&posterior.thinned(cfg.eval.max_draws))?;
                scored = test.clone().collect();
                let r = predict::evaluate(&pred, &series.slice(test), band_spec)?;
                let mut s = summarize(cfg, &r);
                if let Some(f) = diag {
                    s.acceptance = Some(f.acceptance);
                    s.cluster_count_pmf = f.cluster_counts.as_deref().map(cluster_pmf);
                }
                s.psi_mean = psi_mean(&posterior);
                summary = Some(s);
                report = Some(r);
            }
        }
    }

    if let Some(r) = &report {
        let ys: Vec<f64> = scored.iter().map(|&t| series.steps()[t].y).collect();
        io::write_report_csv(r, &scored, &ys, std::fs::File::create(out.join("report.csv"))?)?;
        files.push("report.csv".to_string());
    }
    if let Some(s) = &summary {
        io::write_json(s, &out.join("summary.json"))?;
        files.push("summary.json".to_string());
    }
    let mut hashed = cfg.clone();
    hashed.io.out_dir = PathBuf::new();
    let manifest = Manifest {
        config_sha256: io::sha256_hex(hashed.to_toml_string().as_bytes()),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        files,
    };
    io::write_json(&manifest, &out.join("manifest.json"))?;
    Ok(RunArtifacts {
        series: Some(series),
        report,
        summary,
        manifest,
    })
}

fn empty_summary(cfg: &ExperimentConfig) -> RunSummary {
    RunSummary {
        model: cfg.model,
        dgp: cfg.dgp.name().to_string(),
        window: cfg.window.to_string(),
        evaluated_steps: 0,
        avls: None,
        avcrps: None,
        ks_statistic: None,
        ks_critical: None,
        ks_pass: None,
        clamped_log_scores: 0,
        pit_band: None,
        acceptance: None,
        cluster_count_pmf: None,
        psi_mean: None,
        flagged_windows: Vec::new(),
    }
}

fn fit_and_save(cfg: &ExperimentConfig, train: &ForecastSeries, out: &Path, files: &mut Vec<String>) -> Result<FitOutcome> {
    let mcmc = McmcConfig {
        seed: window_seed(cfg.seed, train.len()),
        ..cfg.mcmc
    };
    let data = EvaluatedSeries::from_series(train);
    let f = fit(cfg.model, &data, &cfg.hyper, cfg.k, &mcmc)?;
    let header = TraceHeader {
        model: cfg.model,
        k: match cfg.model {
            ModelKind::Bminf => None,
            ModelKind::Bm1 => Some(1),
            _ => Some(cfg.k),
        },
        m: train.m(),
        hyper: cfg.hyper,
        mcmc,
        acceptance: f.acceptance,
        draws: f.posterior.len(),
    };
    io::save_trace(&header, &f.posterior, &out.join("trace.jsonl"))?;
    files.push("trace.jsonl".to_string());
    Ok(f)
}

/// Refits before every scored step; a failed fit flags the step and the run
/// continues.
fn run_rolling(
    cfg: &ExperimentConfig,
    series: &ForecastSeries,
    test: std::ops::Range<usize>,
) -> Result<(Option<EvalReport>, RunSummary)> {
    let mut pits = Vec::new();
    let mut ls = Vec::new();
    let mut crps = Vec::new();
    let mut clamped = 0;
    let mut flagged = Vec::new();
    for t in test {
        let start = match cfg.window {
            Window::Rolling(n) => t - n,
            _ => 0,
        };
        let mcmc = McmcConfig {
            seed: window_seed(cfg.seed, t),
            ..cfg.mcmc
        };
        let data = EvaluatedSeries::from_series(&series.slice(start..t));
        let step = &series.steps()[t];
        let scored = fit(cfg.model, &data, &cfg.hyper, cfg.k, &mcmc).and_then(|f| {
            let pred = Predictive::new(&f.posterior.thinned(cfg.eval.max_draws))?;
            let pit = pred.cdf(step.y, &step.components);
            let l = pred.pdf(step.y, &step.components).ln();
            let c = pred.crps(step.y, &step.components)?;
            Ok((pit, l, c))
        });
        match scored {
            Ok((pit, l, c)) => {
                pits.push(pit);
                if l.is_nan() || l < predict::LOG_SCORE_FLOOR {
                    clamped += 1;
                    ls.push(predict::LOG_SCORE_FLOOR);
                } else {
                    ls.push(l);
                }
                crps.push(c);
                log::info!("window ending at {t}: pit {pit:.4}");
            }
            Err(e) => {
                log::warn!("window ending at {t} failed: {e}");
                flagged.push(FlaggedWindow { t, error: e.to_string() });
            }
        }
    }
    if pits.is_empty() {
        let mut s = empty_summary(cfg);
        s.flagged_windows = flagged;
        return Ok((None, s));
    }
    let r = EvalReport::from_parts(pits, ls, crps, None, clamped)?;
    let mut s = summarize(cfg, &r);
    s.flagged_windows = flagged;
    Ok((Some(r), s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_parsing() {
        assert_eq!("in_sample".parse::<Window>().unwrap(), Window::InSample);
        assert_eq!("250".parse::<Window>().unwrap(), Window::Rolling(250));
        assert_eq!("holdout:1000".parse::<Window>().unwrap(), Window::Holdout(1000));
        assert_eq!("expanding:50".parse::<Window>().unwrap(), Window::Expanding(50));
        assert!("sideways".parse::<Window>().is_err());
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let text = r#"
            mode = "pipeline"
            seed = 7
            model = "bmk"
            k = 3
            window = { rolling = 50 }

            [dgp]
            kind = "mar"
            phi = 0.5
            rho = -1.0
            t = 200

            [hyper.psi]
            kind = "fixed"
            psi = 0.1

            [mcmc]
            iterations = 300
            burn_in = 100
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.window, Window::Rolling(50));
        assert_eq!(cfg.mcmc.thin, 1);
        assert_eq!(cfg.hyper.xi_nu, 0.1);
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);

        let bad = ExperimentConfig { window: Window::Rolling(5), ..cfg.clone() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml_str("modle = 1"), Err(Error::Config(_))));
        let no_data = ExperimentConfig { dgp: Dgp::None, ..cfg };
        assert!(no_data.validate().is_err());
    }

    #[test]
    fn nc_single_step() {
        let s = crate::sim::generate_sim1([0.2, 0.2, 0.6], 30, 1).unwrap();
        let r = evaluate_nc(&s, 29..30, None).unwrap();
        assert_eq!(r.pits.len(), 1);
        assert!(r.crps[0] >= 0.0 && (0.0..=1.0).contains(&r.pits[0]));
    }
}
