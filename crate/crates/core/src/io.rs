//! Reading and writing forecast series, traces and evaluation reports.
//!
//! Forecasts and traces are JSON Lines. A forecast record looks like
//! `{"t": 0, "y": 0.3, "components": [{"family": "normal", "params":
//! {"loc": 0, "scale": 1}}]}`; a trace starts with a header record followed
//! by one record per stored draw.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dp::DpDraw;
use crate::error::{Error, Result};
use crate::finite::{AcceptanceRates, McmcConfig};
use crate::model::{FiniteParams, Hyperparams};
use crate::pool::{ComponentForecast, ForecastSeries, ForecastStep};
use crate::predict::{EvalReport, Posterior};

fn parse_err(record: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        record,
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Serialize)]
struct ForecastRecordOut<'a> {
    t: usize,
    y: f64,
    components: &'a [ComponentForecast],
}

pub fn write_forecast_series(series: &ForecastSeries, w: impl Write) -> Result<()> {
    let mut w = BufWriter::new(w);
    for (t, s) in series.steps().iter().enumerate() {
        let rec = ForecastRecordOut {
            t,
            y: s.y,
            components: &s.components,
        };
        serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_forecast_series(series: &ForecastSeries, path: &Path) -> Result<()> {
    write_forecast_series(series, File::create(path)?)
}

fn parse_component(record: usize, j: usize, v: &Value) -> Result<ComponentForecast> {
    let family = v
        .get("family")
        .ok_or_else(|| parse_err(record, format!("components[{j}].family"), "missing"))?;
    if !family.is_string() {
        return Err(parse_err(record, format!("components[{j}].family"), "must be a string"));
    }
    if v.get("params").is_none() {
        return Err(parse_err(record, format!("components[{j}].params"), "missing"));
    }
    let c: ComponentForecast = serde_json::from_value(v.clone())
        .map_err(|e| parse_err(record, format!("components[{j}]"), e.to_string()))?;
    if let Err(e) = c.check() {
        let msg = format!("{}: {}", e.field, e.message);
        return Err(if matches!(c, ComponentForecast::Grid { .. }) && e.field == "params.cdf" {
            Error::Validation(format!("record {record}, components[{j}].{msg}"))
        } else {
            parse_err(record, format!("components[{j}].{}", e.field), e.message)
        });
    }
    Ok(c)
}

/// Reads one record per non-blank line. Errors name the record index
/// (0-based line among non-blank lines) and the offending field.
pub fn read_forecast_series(r: impl BufRead) -> Result<ForecastSeries> {
    let mut steps = Vec::new();
    let mut m = None;
    for (record, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| parse_err(record, "<record>", e.to_string()))?;
        let y = v
            .get("y")
            .and_then(Value::as_f64)
            .ok_or_else(|| parse_err(record, "y", "missing or not a number"))?;
        if !y.is_finite() {
            return Err(parse_err(record, "y", "must be finite"));
        }
        let comps = v
            .get("components")
            .and_then(Value::as_array)
            .ok_or_else(|| parse_err(record, "components", "missing or not an array"))?;
        if comps.is_empty() {
            return Err(parse_err(record, "components", "must not be empty"));
        }
        if *m.get_or_insert(comps.len()) != comps.len() {
            return Err(parse_err(
                record,
                "components",
                format!("has {} entries, expected {}", comps.len(), m.unwrap_or(0)),
            ));
        }
        let components = comps
            .iter()
            .enumerate()
            .map(|(j, c)| parse_component(record, j, c))
            .collect::<Result<Vec<_>>>()?;
        steps.push(ForecastStep { components, y });
    }
    ForecastSeries::new(steps)
}

pub fn load_forecast_series(path: &Path) -> Result<ForecastSeries> {
    read_forecast_series(BufReader::new(File::open(path)?))
}

/// Which model produced a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Nc,
    Bm1,
    Bmk,
    Bminf,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Nc => "nc",
            ModelKind::Bm1 => "bm1",
            ModelKind::Bmk => "bmk",
            ModelKind::Bminf => "bminf",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nc" => Ok(ModelKind::Nc),
            "bm1" => Ok(ModelKind::Bm1),
            "bmk" => Ok(ModelKind::Bmk),
            "bminf" | "dp" => Ok(ModelKind::Bminf),
            _ => Err(Error::Config(format!("unknown model `{s}` (expected nc, bm1, bmk or bminf)"))),
        }
    }
}

/// First record of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub model: ModelKind,
    /// Number of mixture components, `None` for the Dirichlet process.
    pub k: Option<usize>,
    pub m: usize,
    pub hyper: Hyperparams,
    pub mcmc: McmcConfig,
    pub acceptance: AcceptanceRates,
    pub draws: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TraceLine {
    Header(TraceHeader),
    Finite {
        index: usize,
        #[serde(flatten)]
        draw: FiniteParams,
    },
    Dp {
        index: usize,
        #[serde(flatten)]
        draw: DpDraw,
    },
}

pub fn write_trace(header: &TraceHeader, posterior: &Posterior, w: impl Write) -> Result<()> {
    let mut w = BufWriter::new(w);
    let mut line = |rec: &TraceLine| -> Result<()> {
        serde_json::to_writer(&mut w, rec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        Ok(())
    };
    line(&TraceLine::Header(header.clone()))?;
    match posterior {
        Posterior::Finite(d) => {
            for (index, draw) in d.iter().enumerate() {
                line(&TraceLine::Finite { index, draw: draw.clone() })?;
            }
        }
        Posterior::Dp(d) => {
            for (index, draw) in d.iter().enumerate() {
                line(&TraceLine::Dp { index, draw: draw.clone() })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace(header: &TraceHeader, posterior: &Posterior, path: &Path) -> Result<()> {
    write_trace(header, posterior, File::create(path)?)
}

pub fn read_trace(r: impl BufRead) -> Result<(TraceHeader, Posterior)> {
    let mut header = None;
    let mut finite = Vec::new();
    let mut dp = Vec::new();
    for (record, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceLine =
            serde_json::from_str(&line).map_err(|e| parse_err(record, "<record>", e.to_string()))?;
        match rec {
            TraceLine::Header(h) if record == 0 => header = Some(h),
            TraceLine::Header(_) => return Err(parse_err(record, "record", "duplicate header")),
            _ if header.is_none() => return Err(parse_err(record, "record", "trace must start with a header")),
            TraceLine::Finite { draw, .. } => {
                draw.validate().map_err(|e| parse_err(record, "draw", e.to_string()))?;
                finite.push(draw)
            }
            TraceLine::Dp { draw, .. } => dp.push(draw),
        }
    }
    let header = header.ok_or_else(|| parse_err(0, "record", "empty trace file"))?;
    let posterior = match (finite.is_empty(), dp.is_empty()) {
        (_, true) => Posterior::Finite(finite),
        (true, false) => Posterior::Dp(dp),
        _ => return Err(Error::Validation("trace mixes finite and DP draws".into())),
    };
    if posterior.len() != header.draws {
        return Err(Error::Validation(format!(
            "header announces {} draws, found {}",
            header.draws,
            posterior.len()
        )));
    }
    Ok((header, posterior))
}

pub fn load_trace(path: &Path) -> Result<(TraceHeader, Posterior)> {
    read_trace(BufReader::new(File::open(path)?))
}

#[derive(Serialize)]
struct ReportRow {
    t: usize,
    y: f64,
    pit: f64,
    log_score: f64,
    crps: f64,
}

/// One CSV row per evaluated step; `steps[i]` is the time index of
/// `report.pits[i]`.
pub fn write_report_csv(report: &EvalReport, steps: &[usize], ys: &[f64], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for i in 0..report.pits.len() {
        wr.serialize(ReportRow {
            t: steps[i],
            y: ys[i],
            pit: report.pits[i],
            log_score: report.log_scores[i],
            crps: report.crps[i],
        })
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
