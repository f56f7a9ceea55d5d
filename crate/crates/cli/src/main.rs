//! `betamix` command-line interface.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use betamix::experiment::{run_experiment, ExperimentConfig, Mode, Window};
use betamix::io::ModelKind;
use betamix::model::PsiPrior;
use betamix::sim::Dgp;
use betamix::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "betamix", version, about = "Beta-mixture calibration and combination of predictive distributions")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Generate a simulated forecast series.
    Simulate(Opts),
    /// Fit a model and write its trace.
    Fit(Opts),
    /// Score a saved trace (or the nc baseline) on a forecast series.
    Evaluate(Opts),
    /// Simulate or load, fit and evaluate in one run.
    Pipeline(Opts),
}

#[derive(Args, Debug, Default)]
struct Opts {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// nc, bm1, bmk or bminf.
    #[arg(long)]
    model: Option<String>,
    /// Number of mixture components for bmk.
    #[arg(long)]
    k: Option<usize>,
    /// sim1, sim2, mar:PHI:RHO or none.
    #[arg(long)]
    dgp: Option<String>,
    /// Fix the DP concentration at this value.
    #[arg(long)]
    psi: Option<f64>,
    /// in_sample, holdout:N, rolling:N or expanding:N.
    #[arg(long)]
    window: Option<String>,
    /// Forecast series (JSON Lines) to use instead of a simulated one.
    #[arg(long)]
    forecasts: Option<PathBuf>,
    /// Trace file for evaluate.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Series length for the simulated designs.
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
}

fn parse_dgp(s: &str, t: Option<usize>) -> Result<Dgp, Error> {
    let bad = || Error::Config(format!("invalid dgp `{s}`"));
    let parts: Vec<&str> = s.split(':').collect();
    let num = |v: &str| v.parse::<f64>().map_err(|_| bad());
    let dgp = match parts.as_slice() {
        ["sim1"] => Dgp::Sim1 {
            p: [0.2, 0.2, 0.6],
            t: t.unwrap_or(1000),
        },
        ["sim2"] => Dgp::Sim2 { t: t.unwrap_or(2000) },
        ["mar", phi, rho] => Dgp::Mar {
            phi: num(phi)?,
            rho: num(rho)?,
            t: t.unwrap_or(1000),
        },
        ["none"] => Dgp::None,
        _ => return Err(bad()),
    };
    Ok(dgp)
}

fn set_length(dgp: &mut Dgp, len: usize) {
    match dgp {
        Dgp::Sim1 { t, .. } | Dgp::Sim2 { t } | Dgp::Mar { t, .. } => *t = len,
        Dgp::None => {}
    }
}

fn build_config(mode: Mode, o: Opts) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &o.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.mode = mode;
    if let Some(s) = o.seed {
        cfg.seed = s;
        cfg.mcmc.seed = s;
    }
    if let Some(d) = o.out_dir {
        cfg.io.out_dir = d;
    }
    if let Some(m) = &o.model {
        cfg.model = m.parse::<ModelKind>()?;
    }
    if let Some(k) = o.k {
        cfg.k = k;
    }
    if let Some(d) = &o.dgp {
        cfg.dgp = parse_dgp(d, o.t)?;
    } else if let Some(t) = o.t {
        set_length(&mut cfg.dgp, t);
    }
    if let Some(psi) = o.psi {
        cfg.hyper.psi = PsiPrior::Fixed { psi };
    }
    if let Some(w) = &o.window {
        cfg.window = w.parse::<Window>()?;
    }
    if let Some(f) = o.forecasts {
        cfg.io.forecasts = Some(f);
        if o.dgp.is_none() {
            cfg.dgp = Dgp::None;
        }
    }
    if let Some(t) = o.trace {
        cfg.io.trace = Some(t);
    }
    if let Some(n) = o.iterations {
        cfg.mcmc.iterations = n;
    }
    if let Some(n) = o.burn_in {
        cfg.mcmc.burn_in = n;
    }
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Unsupported(_) => 2,
        Error::Parse { .. } | Error::Validation(_) | Error::Io(_) | Error::Domain(_) | Error::Contract(_) => 3,
        Error::Numerical(_) => 4,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let (mode, opts) = match cli.verb {
        Verb::Simulate(o) => (Mode::Simulate, o),
        Verb::Fit(o) => (Mode::Fit, o),
        Verb::Evaluate(o) => (Mode::Evaluate, o),
        Verb::Pipeline(o) => (Mode::Pipeline, o),
    };
    let cfg = build_config(mode, opts)?;
    log::info!("running {:?} with model {} on {}", cfg.mode, cfg.model.name(), cfg.dgp.name());
    let art = run_experiment(&cfg)?;
    if let Some(s) = &art.summary {
        if let Some(fw) = s.flagged_windows.first() {
            log::warn!("{} window(s) failed, first at t = {}: {}", s.flagged_windows.len(), fw.t, fw.error);
        }
        let line = serde_json::json!({
            "model": s.model.name(),
            "evaluated_steps": s.evaluated_steps,
            "avls": s.avls,
            "avcrps": s.avcrps,
            "ks_statistic": s.ks_statistic,
            "ks_pass": s.ks_pass,
            "acceptance": s.acceptance,
            "psi_mean": s.psi_mean,
        });
        println!("{line}");
    }
    println!("wrote {} to {}", art.manifest.files.join(", "), cfg.io.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Validation("x".into())), 3);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 4);
        let parse = Error::Parse {
            record: 1,
            field: "y".into(),
            message: "m".into(),
        };
        assert_eq!(exit_code(&parse), 3);
    }

    #[test]
    fn flags_override_config() {
        let o = Opts {
            seed: Some(9),
            dgp: Some("mar:0.5:-1".into()),
            t: Some(50),
            psi: Some(0.1),
            window: Some("rolling:20".into()),
            ..Default::default()
        };
        let cfg = build_config(Mode::Pipeline, o).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.dgp, Dgp::Mar { phi: 0.5, rho: -1.0, t: 50 });
        assert_eq!(cfg.hyper.psi, PsiPrior::Fixed { psi: 0.1 });
        assert_eq!(cfg.window, Window::Rolling(20));
        assert!(parse_dgp("mar:0.5", None).is_err());
    }
}
