//! Posterior predictive distributions, PIT diagnostics and scoring rules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dp::DpDraw;
use crate::error::{contract, Error, Result};
use crate::model::{Atom, AtomPrior, FiniteParams, PreparedMixture};
use crate::pool::{invert_monotone, pool_inv_cdf_unchecked, ComponentForecast, EvaluatedSeries, ForecastSeries, PoolWeights};
use crate::sampling::{self, open_uniform};
use crate::special::{BetaMeanPrecision, PROB_GUARD};

/// Log scores below this are clamped.
pub const LOG_SCORE_FLOOR: f64 = -745.0;
pub const CRPS_NODES: usize = 4097;
const CRPS_TAIL_PROB: f64 = 1e-6;

/// Stored draws from either sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "draws", rename_all = "snake_case")]
pub enum Posterior {
    Finite(Vec<FiniteParams>),
    Dp(Vec<DpDraw>),
}

impl Posterior {
    pub fn len(&self) -> usize {
        match self {
            Posterior::Finite(d) => d.len(),
            Posterior::Dp(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keeps at most `max` draws, evenly spaced and always including the last.
    pub fn thinned(&self, max: usize) -> Self {
        fn pick<T: Clone>(v: &[T], max: usize) -> Vec<T> {
            if max == 0 || v.len() <= max {
                return v.to_vec();
            }
            let n = v.len();
            (0..max).map(|i| v[n - 1 - (i * n) / max].clone()).rev().collect()
        }
        match self {
            Posterior::Finite(d) => Posterior::Finite(pick(d, max)),
            Posterior::Dp(d) => Posterior::Dp(pick(d, max)),
        }
    }
}

/// Monte Carlo posterior predictive: an equally weighted average of
/// beta-mixture calibrated pools, one per posterior draw.
#[derive(Debug, Clone)]
pub struct Predictive {
    draws: Vec<PreparedMixture>,
}

impl Predictive {
    pub fn new(posterior: &Posterior) -> Result<Self> {
        let draws: Vec<PreparedMixture> = match posterior {
            Posterior::Finite(d) => d.iter().map(PreparedMixture::new).collect(),
            Posterior::Dp(d) => d
                .iter()
                .map(|d| PreparedMixture::from_parts(&d.normalized_weights(), &d.atoms))
                .collect(),
        };
        if draws.is_empty() {
            return contract("the posterior has no draws");
        }
        Ok(Self { draws })
    }

    /// The uncalibrated linear pool with weights `omega`.
    pub fn linear_pool(omega: &PoolWeights) -> Self {
        let atom = Atom::new(BetaMeanPrecision::uniform(), omega.clone());
        Self {
            draws: vec![PreparedMixture::from_parts(&[1.0], &[atom])],
        }
    }

    /// Mixture at the coordinatewise posterior mean of a finite-mixture
    /// trace; refused for Dirichlet-process traces, whose dimension varies.
    pub fn plugin(posterior: &Posterior) -> Result<Self> {
        let draws = match posterior {
            Posterior::Dp(_) => {
                return Err(Error::Unsupported(
                    "plug-in predictive is not defined for Dirichlet-process traces".into(),
                ))
            }
            Posterior::Finite(d) if d.is_empty() => return contract("the posterior has no draws"),
            Posterior::Finite(d) => d,
        };
        let n = draws.len() as f64;
        let (k, m) = (draws[0].k(), draws[0].m());
        let mut weights = vec![0.0; k];
        let mut mu = vec![0.0; k];
        let mut nu = vec![0.0; k];
        let mut omega = vec![vec![0.0; m]; k];
        for d in draws {
            if d.k() != k || d.m() != m {
                return contract("draws disagree on the mixture dimensions");
            }
            for j in 0..k {
                weights[j] += d.weights[j] / n;
                mu[j] += d.atoms[j].cal.mu / n;
                nu[j] += d.atoms[j].cal.nu / n;
                for (o, w) in omega[j].iter_mut().zip(d.atoms[j].omega.as_slice()) {
                    *o += w / n;
                }
            }
        }
        let sw: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= sw);
        let atoms: Vec<Atom> = (0..k)
            .map(|j| {
                let s: f64 = omega[j].iter().sum();
                let om = omega[j].iter().map(|w| w / s).collect();
                Atom::new(BetaMeanPrecision { mu: mu[j], nu: nu[j] }, PoolWeights::from_normalized(om))
            })
            .collect();
        Ok(Self {
            draws: vec![PreparedMixture::from_parts(&weights, &atoms)],
        })
    }

    pub fn draw_count(&self) -> usize {
        self.draws.len()
    }

    pub fn cdf_from_values(&self, cdfs: &[f64]) -> f64 {
        let s: f64 = self.draws.iter().map(|d| d.cdf_from_values(cdfs)).sum();
        (s / self.draws.len() as f64).clamp(0.0, 1.0)
    }

    pub fn pdf_from_values(&self, cdfs: &[f64], pdfs: &[f64]) -> f64 {
        let s: f64 = self.draws.iter().map(|d| d.pdf_from_values(cdfs, pdfs)).sum();
        s / self.draws.len() as f64
    }

    /// Per-draw cdf values, in draw order.
    pub fn draw_cdfs_from_values<'a>(&'a self, cdfs: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        self.draws.iter().map(move |d| d.cdf_from_values(cdfs))
    }

    pub fn cdf(&self, y: f64, tuple: &[ComponentForecast]) -> f64 {
        let cdfs: Vec<f64> = tuple.iter().map(|c| c.cdf(y)).collect();
        self.cdf_from_values(&cdfs)
    }

    pub fn pdf(&self, y: f64, tuple: &[ComponentForecast]) -> f64 {
        let cdfs: Vec<f64> = tuple.iter().map(|c| c.cdf(y)).collect();
        let pdfs: Vec<f64> = tuple.iter().map(|c| c.pdf(y)).collect();
        self.pdf_from_values(&cdfs, &pdfs)
    }

    pub fn quantile(&self, q: f64, tuple: &[ComponentForecast]) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {q}")));
        }
        let medians: Vec<f64> = tuple.iter().map(|c| c.quantile(0.5)).collect();
        let guess = medians.iter().sum::<f64>() / medians.len() as f64;
        let scale = tuple
            .iter()
            .map(|c| c.quantile(0.75) - c.quantile(0.25))
            .fold(0.0, f64::max)
            .max(1e-8);
        let x = invert_monotone(|y| self.cdf(y, tuple), q, guess, scale);
        if x.is_finite() {
            Ok(x)
        } else {
            Err(Error::Numerical(format!("predictive quantile at {q} not bracketed")))
        }
    }

    /// CRPS at `y` with integration bounds at the predictive
    /// `1e-6` and `1 - 1e-6` quantiles.
    pub fn crps(&self, y: f64, tuple: &[ComponentForecast]) -> Result<f64> {
        let integ = self.crps_integrator(tuple)?;
        integ.score(&|z| self.cdf(z, tuple), y)
    }

    /// Tabulates the predictive cdf once for repeated CRPS evaluations
    /// under the same forecast tuple.
    pub fn crps_integrator(&self, tuple: &[ComponentForecast]) -> Result<CrpsIntegrator> {
        let lo = self.quantile(CRPS_TAIL_PROB, tuple)?;
        let hi = self.quantile(1.0 - CRPS_TAIL_PROB, tuple)?;
        CrpsIntegrator::new(&|z| self.cdf(z, tuple), lo, hi, CRPS_NODES)
    }
}

/// `F(y)` under a finite-mixture or DP trace averaged over draws.
pub fn predictive_cdf(posterior: &Posterior, tuple: &[ComponentForecast], y: f64) -> Result<f64> {
    Ok(Predictive::new(posterior)?.cdf(y, tuple))
}

pub fn predictive_pdf(posterior: &Posterior, tuple: &[ComponentForecast], y: f64) -> Result<f64> {
    Ok(Predictive::new(posterior)?.pdf(y, tuple))
}

pub fn predictive_plugin_cdf(posterior: &Posterior, tuple: &[ComponentForecast], y: f64) -> Result<f64> {
    Ok(Predictive::plugin(posterior)?.cdf(y, tuple))
}

/// One draw of the next observation from a single DP snapshot. Mass not
/// covered by the stored sticks is filled with fresh `Beta(1, psi)` sticks
/// and base-measure atoms.
pub fn sample_predictive_dp<R: Rng + ?Sized>(
    draw: &DpDraw,
    tuple: &[ComponentForecast],
    base: &AtomPrior,
    rng: &mut R,
) -> Result<f64> {
    if draw.weights.len() != draw.atoms.len() {
        return contract("snapshot weights and atoms differ in length");
    }
    let u = open_uniform(rng);
    let mut cum = 0.0;
    let mut chosen = None;
    for (w, a) in draw.weights.iter().zip(&draw.atoms) {
        cum += w;
        if u < cum {
            chosen = Some(a.clone());
            break;
        }
    }
    let atom = match chosen {
        Some(a) => a,
        None => {
            let mut rest = 1.0 - cum;
            loop {
                let v = sampling::beta(1.0, draw.psi, rng);
                let atom = base.sample(tuple.len(), rng);
                cum += v * rest;
                rest *= 1.0 - v;
                if u < cum || rest <= 0.0 {
                    break atom;
                }
            }
        }
    };
    if atom.omega.len() != tuple.len() {
        return contract("atom and forecast tuple differ in the number of components");
    }
    let z = atom
        .cal
        .kernel()
        .inv_cdf(open_uniform(rng))
        .clamp(PROB_GUARD, 1.0 - PROB_GUARD);
    let y = pool_inv_cdf_unchecked(z, atom.omega.as_slice(), tuple);
    if y.is_finite() {
        Ok(y)
    } else {
        Err(Error::Numerical(format!("pool quantile at {z} did not converge")))
    }
}

/// PIT of each observation under the predictive.
pub fn compute_pits(pred: &Predictive, data: &EvaluatedSeries) -> Vec<f64> {
    (0..data.len()).map(|t| pred.cdf_from_values(data.cdfs(t))).collect()
}

/// Pointwise credible band for the PIT empirical cdf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitBand {
    pub grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
}

impl PitBand {
    /// Grid points where the uniform cdf falls outside the band.
    pub fn diagonal_misses(&self) -> Vec<f64> {
        self.grid
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .filter(|(q, (lo, hi))| **q < **lo || **q > **hi)
            .map(|(q, _)| *q)
            .collect()
    }

    pub fn contains_diagonal(&self) -> bool {
        self.diagonal_misses().is_empty()
    }
}

/// `0.01, 0.02, ..., 0.99`.
pub fn default_pit_grid() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

/// For each draw, the empirical cdf of that draw's PIT values on `grid`;
/// the band holds the pointwise `(1 - level) / 2` and `(1 + level) / 2`
/// quantiles across draws.
pub fn pit_band(pred: &Predictive, data: &EvaluatedSeries, grid: &[f64], level: f64) -> Result<PitBand> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("band level must lie in (0, 1), got {level}")));
    }
    if data.is_empty() {
        return contract("cannot build a PIT band without observations");
    }
    let n_draws = pred.draw_count();
    let mut pits = vec![Vec::with_capacity(data.len()); n_draws];
    for t in 0..data.len() {
        for (d, p) in pred.draw_cdfs_from_values(data.cdfs(t)).enumerate() {
            pits[d].push(p);
        }
    }
    let n = data.len() as f64;
    let mut ecdfs: Vec<Vec<f64>> = vec![Vec::with_capacity(n_draws); grid.len()];
    for p in &mut pits {
        p.sort_by(f64::total_cmp);
        for (g, &q) in grid.iter().enumerate() {
            ecdfs[g].push(p.partition_point(|&x| x <= q) as f64 / n);
        }
    }
    let (a, b) = ((1.0 - level) / 2.0, (1.0 + level) / 2.0);
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    for col in &mut ecdfs {
        col.sort_by(f64::total_cmp);
        lower.push(sorted_quantile(col, a));
        upper.push(sorted_quantile(col, b));
    }
    Ok(PitBand {
        grid: grid.to_vec(),
        lower,
        upper,
        level,
    })
}

/// Linear-interpolation sample quantile of sorted data.
fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let i = h.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (h - i as f64) * (sorted[j] - sorted[i])
}

/// Per-observation log predictive density, clamped below at
/// [`LOG_SCORE_FLOOR`]; the count of clamped values is returned alongside.
pub fn log_scores(pred: &Predictive, data: &EvaluatedSeries) -> (Vec<f64>, usize) {
    let mut clamped = 0;
    let scores = (0..data.len())
        .map(|t| {
            let ls = pred.pdf_from_values(data.cdfs(t), data.pdfs(t)).ln();
            if ls.is_nan() || ls < LOG_SCORE_FLOOR {
                clamped += 1;
                LOG_SCORE_FLOOR
            } else {
                ls
            }
        })
        .collect();
    (scores, clamped)
}

pub fn avg_log_score(pred: &Predictive, data: &EvaluatedSeries) -> f64 {
    let (s, _) = log_scores(pred, data);
    s.iter().sum::<f64>() / s.len() as f64
}

fn simpson(fa: f64, fm: f64, fb: f64, width: f64) -> f64 {
    width / 6.0 * (fa + 4.0 * fm + fb)
}

/// Composite Simpson integration of `(F(z) - 1{z >= y})^2` over a fixed
/// tabulation of `F`, reusable across observations.
///
/// Panels lying wholly on one side of `y` come from prefix sums; the panel
/// containing `y` is split at `y` and integrated with three fresh cdf
/// evaluations. Beyond the tabulated range the cdf is treated as an
/// exponential tail.
#[derive(Debug, Clone)]
pub struct CrpsIntegrator {
    x: Vec<f64>,
    f: Vec<f64>,
    /// `below[p]`: integral of `F^2` over panels `0..p`.
    below: Vec<f64>,
    /// `above[p]`: integral of `(1 - F)^2` over panels `p..`.
    above: Vec<f64>,
    tail_lo: f64,
    tail_hi: f64,
}

impl CrpsIntegrator {
    pub fn new(cdf: &dyn Fn(f64) -> f64, lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Numerical(format!("invalid CRPS range [{lo}, {hi}]")));
        }
        let nodes = if nodes.is_multiple_of(2) { nodes + 1 } else { nodes }.max(3);
        let h = (hi - lo) / (nodes - 1) as f64;
        let x: Vec<f64> = (0..nodes).map(|i| if i == nodes - 1 { hi } else { lo + i as f64 * h }).collect();
        let f: Vec<f64> = x.iter().map(|&z| cdf(z)).collect();
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite predictive cdf in CRPS integrand".into()));
        }
        let panels = (nodes - 1) / 2;
        let mut below = vec![0.0; panels + 1];
        let mut above = vec![0.0; panels + 1];
        for p in 0..panels {
            let (a, m, b) = (f[2 * p], f[2 * p + 1], f[2 * p + 2]);
            below[p + 1] = below[p] + simpson(a * a, m * m, b * b, 2.0 * h);
        }
        for p in (0..panels).rev() {
            let (a, m, b) = (1.0 - f[2 * p], 1.0 - f[2 * p + 1], 1.0 - f[2 * p + 2]);
            above[p] = above[p + 1] + simpson(a * a, m * m, b * b, 2.0 * h);
        }
        let tail_lo = exp_tail(f[0], f[1], h);
        let tail_hi = exp_tail(1.0 - f[nodes - 1], 1.0 - f[nodes - 2], h);
        Ok(Self {
            x,
            f,
            below,
            above,
            tail_lo,
            tail_hi,
        })
    }

    pub fn lo(&self) -> f64 {
        self.x[0]
    }

    pub fn hi(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    pub fn score(&self, cdf: &dyn Fn(f64) -> f64, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(Error::Domain(format!("observation must be finite, got {y}")));
        }
        let (lo, hi) = (self.lo(), self.hi());
        let n = self.x.len();
        let total = if y <= lo {
            let fy = cdf(y);
            exp_tail_mass(fy, self.tail_lo, self.f[0])
                + integrate(&|z| (1.0 - cdf(z)).powi(2), y, lo, 64)
                + self.above[0]
                + self.tail_hi
        } else if y >= hi {
            let fy = cdf(y);
            self.tail_lo
                + self.below[self.below.len() - 1]
                + integrate(&|z| cdf(z).powi(2), hi, y, 64)
                + exp_tail_mass(1.0 - fy, self.tail_hi, 1.0 - self.f[n - 1])
        } else {
            let panels = self.below.len() - 1;
            let width = self.x[2] - self.x[0];
            let p = (((y - lo) / width) as usize).min(panels - 1);
            let (a, b) = (self.x[2 * p], self.x[2 * p + 2]);
            let (fa, fb) = (self.f[2 * p], self.f[2 * p + 2]);
            let fy = cdf(y);
            let left = {
                let m = cdf(0.5 * (a + y));
                simpson(fa * fa, m * m, fy * fy, y - a)
            };
            let right = {
                let m = 1.0 - cdf(0.5 * (y + b));
                simpson((1.0 - fy).powi(2), m * m, (1.0 - fb).powi(2), b - y)
            };
            self.tail_lo + self.below[p] + left + right + self.above[p + 1] + self.tail_hi
        };
        if total.is_finite() {
            Ok(total.max(0.0))
        } else {
            Err(Error::Numerical(format!("non-finite CRPS at y = {y}")))
        }
    }
}

/// Integral of `g^2` below the first node assuming `g` decays exponentially
/// from the two tabulated values `g0` (outer) and `g1` (inner).
fn exp_tail(g0: f64, g1: f64, h: f64) -> f64 {
    if g0 <= 0.0 || g1 <= g0 {
        return 0.0;
    }
    let scale = h / (g1 / g0).ln();
    g0 * g0 * scale / 2.0
}

/// Rescales a tail integral computed at value `g_ref` to value `g`.
fn exp_tail_mass(g: f64, tail_at_ref: f64, g_ref: f64) -> f64 {
    if g_ref <= 0.0 {
        0.0
    } else {
        tail_at_ref * (g / g_ref).powi(2)
    }
}

fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let x0 = a + i as f64 * h;
            simpson(f(x0), f(x0 + 0.5 * h), f(x0 + h), h)
        })
        .sum()
}

/// CRPS of an arbitrary cdf over `[lo, hi]` extended to contain `y`.
pub fn crps(cdf: &dyn Fn(f64) -> f64, lo: f64, hi: f64, y: f64) -> Result<f64> {
    CrpsIntegrator::new(cdf, lo, hi, CRPS_NODES)?.score(cdf, y)
}

/// Pool weights from recursively accumulated log scores, equal at the
/// first step. Steps where every component density vanishes leave the
/// running totals unchanged; their count is returned.
pub fn recursive_logscore_weights(series: &ForecastSeries) -> (Vec<PoolWeights>, usize) {
    let data = EvaluatedSeries::from_series(series);
    recursive_logscore_weights_evaluated(&data)
}

pub fn recursive_logscore_weights_evaluated(data: &EvaluatedSeries) -> (Vec<PoolWeights>, usize) {
    let m = data.m();
    let mut sums = vec![0.0; m];
    let mut skipped = 0;
    let mut out = Vec::with_capacity(data.len());
    for t in 0..data.len() {
        let max = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = sums.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        out.push(PoolWeights::from_normalized(w));
        let pdfs = data.pdfs(t);
        if pdfs.iter().all(|&p| p <= 0.0) {
            skipped += 1;
            continue;
        }
        for (s, &p) in sums.iter_mut().zip(pdfs) {
            *s += p.ln();
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} steps had zero density under every component; weights carried forward");
    }
    (out, skipped)
}

/// One-sample Kolmogorov–Smirnov test against `U(0, 1)` at the 5% level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub critical: f64,
    pub pass: bool,
}

pub fn ks_uniformity(pits: &[f64]) -> Result<KsResult> {
    if pits.is_empty() {
        return contract("KS test needs at least one value");
    }
    let mut x = pits.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let statistic = x
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max);
    let critical = 1.358 / n.sqrt();
    Ok(KsResult {
        statistic,
        critical,
        pass: statistic < critical,
    })
}

/// Evaluation summary of a predictive over a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pits: Vec<f64>,
    pub log_scores: Vec<f64>,
    pub crps: Vec<f64>,
    pub avls: f64,
    pub avcrps: f64,
    pub ks: KsResult,
    pub pit_band: Option<PitBand>,
    pub clamped_log_scores: usize,
}

impl EvalReport {
    /// Builds the report from per-step values.
    pub fn from_parts(
        pits: Vec<f64>,
        log_scores: Vec<f64>,
        crps: Vec<f64>,
        pit_band: Option<PitBand>,
        clamped_log_scores: usize,
    ) -> Result<Self> {
        let ks = ks_uniformity(&pits)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(Self {
            avls: mean(&log_scores),
            avcrps: mean(&crps),
            ks,
            pits,
            log_scores,
            crps,
            pit_band,
            clamped_log_scores,
        })
    }
}

/// Evaluates one predictive against every step of a series. The CRPS
/// tabulation is reused across consecutive steps with identical tuples.
pub fn evaluate(pred: &Predictive, series: &ForecastSeries, band: Option<(&[f64], f64)>) -> Result<EvalReport> {
    let data = EvaluatedSeries::from_series(series);
    let pits = compute_pits(pred, &data);
    let (ls, clamped) = log_scores(pred, &data);
    let mut crps_vals = Vec::with_capacity(series.len());
    let mut cached: Option<(&[ComponentForecast], CrpsIntegrator)> = None;
    for step in series.steps() {
        let reuse = matches!(&cached, Some((tuple, _)) if *tuple == step.components.as_slice());
        if !reuse {
            cached = Some((&step.components, pred.crps_integrator(&step.components)?));
        }
        let (tuple, integ) = cached.as_ref().expect("integrator present");
        crps_vals.push(integ.score(&|z| pred.cdf(z, tuple), step.y)?);
    }
    let band = match band {
        Some((grid, level)) => Some(pit_band(pred, &data, grid, level)?),
        None => None,
    };
    EvalReport::from_parts(pits, ls, crps_vals, band, clamped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::bmk_cdf;
    use crate::pool::{pool_cdf, ForecastStep};
    use crate::sampling::seeded_rng;
    use crate::special::{std_normal_cdf, std_normal_pdf};

    fn atom(mu: f64, nu: f64, omega: &[f64]) -> Atom {
        Atom::new(BetaMeanPrecision::new(mu, nu).unwrap(), PoolWeights::new(omega.to_vec()).unwrap())
    }

    fn tuple() -> Vec<ComponentForecast> {
        vec![ComponentForecast::normal(-1.0, 1.0), ComponentForecast::normal(2.0, 1.0)]
    }

    fn k1(mu: f64, nu: f64, omega: &[f64]) -> FiniteParams {
        FiniteParams::new(vec![1.0], vec![atom(mu, nu, omega)]).unwrap()
    }

    fn normal_crps(mu: f64, s: f64, y: f64) -> f64 {
        let z = (y - mu) / s;
        s * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z) - 1.0 / std::f64::consts::PI.sqrt())
    }

    #[test]
    fn identity_draw_is_the_linear_pool() {
        let om = PoolWeights::new(vec![0.3, 0.7]).unwrap();
        let post = Posterior::Finite(vec![k1(0.5, 2.0, &[0.3, 0.7])]);
        for y in [-3.0, -0.5, 0.0, 1.2, 4.0] {
            let a = predictive_cdf(&post, &tuple(), y).unwrap();
            assert!((a - pool_cdf(y, &om, &tuple()).unwrap()).abs() < 1e-12);
        }
        let two = Posterior::Finite(vec![k1(0.4, 5.0, &[0.3, 0.7]); 2]);
        let one = Posterior::Finite(vec![k1(0.4, 5.0, &[0.3, 0.7])]);
        assert_eq!(predictive_cdf(&two, &tuple(), 0.3).unwrap(), predictive_cdf(&one, &tuple(), 0.3).unwrap());
    }

    #[test]
    fn two_draw_average_matches_oracle() {
        let post = Posterior::Finite(vec![k1(0.4, 5.0, &[0.3, 0.7]), k1(0.6, 3.0, &[0.5, 0.5])]);
        let v = predictive_cdf(&post, &tuple(), 0.5).unwrap();
        assert!((v - 0.37002653265420891).abs() < 1e-10, "{v}");
        let a = bmk_cdf(0.5, &k1(0.4, 5.0, &[0.3, 0.7]), &tuple()).unwrap();
        let b = bmk_cdf(0.5, &k1(0.6, 3.0, &[0.5, 0.5]), &tuple()).unwrap();
        assert!((v - 0.5 * (a + b)).abs() < 1e-15);
    }

    #[test]
    fn plugin_uses_posterior_means() {
        let post = Posterior::Finite(vec![k1(0.4, 2.0, &[0.5, 0.5]), k1(0.6, 2.0, &[0.5, 0.5])]);
        let om = PoolWeights::uniform(2);
        for y in [-1.0, 0.5, 2.5] {
            let p = predictive_plugin_cdf(&post, &tuple(), y).unwrap();
            assert!((p - pool_cdf(y, &om, &tuple()).unwrap()).abs() < 1e-12);
        }
        let single = Posterior::Finite(vec![k1(0.4, 5.0, &[0.3, 0.7])]);
        assert_eq!(
            predictive_plugin_cdf(&single, &tuple(), 0.1).unwrap(),
            predictive_cdf(&single, &tuple(), 0.1).unwrap()
        );
        let dp = Posterior::Dp(vec![]);
        assert!(matches!(predictive_plugin_cdf(&dp, &tuple(), 0.0), Err(Error::Unsupported(_))));
        assert!(matches!(predictive_cdf(&Posterior::Finite(vec![]), &tuple(), 0.0), Err(Error::Contract(_))));
    }

    #[test]
    fn dp_predictive_draws_follow_a_single_normal() {
        let draw = DpDraw {
            weights: vec![1.0],
            atoms: vec![atom(0.5, 2.0, &[1.0, 0.0])],
            counts: vec![1],
            psi: 1.0,
        };
        let tup = vec![ComponentForecast::normal(0.0, 1.0), ComponentForecast::normal(3.0, 1.0)];
        let base = crate::model::Hyperparams::default().dp_base_measure();
        let mut rng = seeded_rng(4);
        let pits: Vec<f64> = (0..10_000)
            .map(|_| std_normal_cdf(sample_predictive_dp(&draw, &tup, &base, &mut rng).unwrap()))
            .collect();
        let ks = ks_uniformity(&pits).unwrap();
        assert!(ks.statistic < 1.628 / 100.0, "{}", ks.statistic);
    }

    #[test]
    fn dp_predictive_extends_missing_mass() {
        // stored weights cover half the mass; the rest comes from the prior
        let draw = DpDraw {
            weights: vec![0.5],
            atoms: vec![atom(0.5, 2.0, &[1.0, 0.0])],
            counts: vec![1],
            psi: 1.0,
        };
        let base = crate::model::Hyperparams::default().dp_base_measure();
        let mut rng = seeded_rng(1);
        for _ in 0..1000 {
            assert!(sample_predictive_dp(&draw, &tuple(), &base, &mut rng).unwrap().is_finite());
        }
    }

    #[test]
    fn normal_crps_oracle() {
        let single = Predictive::linear_pool(&PoolWeights::new(vec![1.0]).unwrap());
        let t = vec![ComponentForecast::normal(0.0, 1.0)];
        let v = single.crps(0.0, &t).unwrap();
        assert!((v - 0.23369497725510907).abs() < 1e-8, "{v}");
        let mut rng = seeded_rng(10);
        for _ in 0..20 {
            let mu = rng.random_range(-5.0..5.0);
            let s = rng.random_range(0.2..4.0);
            let y = mu + s * rng.random_range(-6.0..6.0);
            let t = vec![ComponentForecast::normal(mu, s)];
            let v = single.crps(y, &t).unwrap();
            assert!((v - normal_crps(mu, s, y)).abs() < 1e-7, "{mu} {s} {y}: {v}");
        }
    }

    #[test]
    fn crps_translation_invariance_and_far_observations() {
        let single = Predictive::linear_pool(&PoolWeights::new(vec![1.0]).unwrap());
        let a = single.crps(0.7, &[ComponentForecast::normal(0.0, 1.3)]).unwrap();
        let b = single.crps(3.7, &[ComponentForecast::normal(3.0, 1.3)]).unwrap();
        assert!((a - b).abs() < 1e-8);
        for y in [-30.0, 25.0] {
            let v = single.crps(y, &[ComponentForecast::normal(0.0, 1.0)]).unwrap();
            assert!((v - normal_crps(0.0, 1.0, y)).abs() < 1e-6, "{y}: {v}");
        }
    }

    #[test]
    fn crps_vanishes_for_sharp_forecasts() {
        let sharp = |w: f64| {
            let cdf = move |z: f64| ((z + w) / (2.0 * w)).clamp(0.0, 1.0);
            crps(&cdf, -w, w, 0.0).unwrap()
        };
        assert!(sharp(1e-3) < sharp(1e-1));
        assert!(sharp(1e-3) < 1e-3);
    }

    #[test]
    fn recursive_weights() {
        let steps = vec![
            ForecastStep { components: tuple(), y: 0.0 },
            ForecastStep { components: tuple(), y: 1.0 },
        ];
        let s = ForecastSeries::new(steps).unwrap();
        let (w, skipped) = recursive_logscore_weights(&s);
        assert_eq!(skipped, 0);
        assert_eq!(w[0].as_slice(), &[0.5, 0.5]);
        // log-score totals (-10, -12) give softmax (0.8808, 0.1192)
        let data = EvaluatedSeries::from_values(2, vec![0.0, 0.0], vec![0.5; 4], vec![(-10f64).exp(), (-12f64).exp(), 1.0, 1.0]).unwrap();
        let (w, _) = recursive_logscore_weights_evaluated(&data);
        let e2 = 2f64.exp();
        assert!((w[1].as_slice()[0] - e2 / (1.0 + e2)).abs() < 1e-12);
        assert!((w[1].as_slice()[0] - 0.8808).abs() < 1e-4);
        let data = EvaluatedSeries::from_values(2, vec![0.0; 3], vec![0.5; 6], vec![0.0, 0.0, 0.3, 0.3, 0.1, 0.2]).unwrap();
        let (w, skipped) = recursive_logscore_weights_evaluated(&data);
        assert_eq!(skipped, 1);
        assert_eq!(w[2].as_slice(), &[0.5, 0.5]);
        let one = EvaluatedSeries::from_values(1, vec![0.0; 2], vec![0.5; 2], vec![0.1, 0.2]).unwrap();
        assert!(recursive_logscore_weights_evaluated(&one).0.iter().all(|w| w.as_slice() == [1.0]));
    }

    #[test]
    fn ks_examples() {
        let t = 200;
        let grid: Vec<f64> = (0..t).map(|i| (i as f64 + 0.5) / t as f64).collect();
        let r = ks_uniformity(&grid).unwrap();
        assert!((r.statistic - 0.5 / t as f64).abs() < 1e-15 && r.pass);
        let r = ks_uniformity(&[0.5; 8]).unwrap();
        assert_eq!(r.statistic, 0.5);
        assert!(!r.pass);
    }

    #[test]
    fn band_of_a_single_draw_is_its_ecdf() {
        let data = EvaluatedSeries::from_values(1, vec![0.0; 4], vec![0.1, 0.4, 0.6, 0.9], vec![1.0; 4]).unwrap();
        let pred = Predictive::linear_pool(&PoolWeights::new(vec![1.0]).unwrap());
        let b = pit_band(&pred, &data, &[0.05, 0.5, 0.95], 0.99).unwrap();
        assert_eq!(b.lower, vec![0.0, 0.5, 1.0]);
        assert_eq!(b.lower, b.upper);
    }

    #[test]
    fn log_score_of_standard_normal_at_zero() {
        let pred = Predictive::linear_pool(&PoolWeights::new(vec![1.0]).unwrap());
        let data = EvaluatedSeries::from_series(
            &ForecastSeries::new(vec![ForecastStep { components: vec![ComponentForecast::normal(0.0, 1.0)], y: 0.0 }])
                .unwrap(),
        );
        assert!((avg_log_score(&pred, &data) + 0.9189385332046727).abs() < 1e-12);
    }

    #[test]
    fn thinning_keeps_the_last_draw() {
        let draws: Vec<FiniteParams> = (1..=10).map(|i| k1(i as f64 / 20.0, 2.0, &[0.5, 0.5])).collect();
        let Posterior::Finite(t) = Posterior::Finite(draws.clone()).thinned(3) else { panic!() };
        assert_eq!(t.len(), 3);
        assert_eq!(t[2], draws[9]);
    }
}
