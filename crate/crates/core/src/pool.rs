//! Externally supplied component forecasts and the linear opinion pool.

use serde::{Deserialize, Serialize};

use crate::error::{contract, domain, Error, Result};
use crate::special::{
    self, std_normal_cdf, std_normal_ln_pdf, std_normal_pdf, std_normal_quantile,
};

/// One component's predictive distribution at one time step.
///
/// Serialized as `{"family": "...", "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum ComponentForecast {
    Normal { loc: f64, scale: f64 },
    StudentT { loc: f64, scale: f64, dof: f64 },
    SkewNormal { loc: f64, scale: f64, shape: f64 },
    TruncatedNormalAtZero { loc: f64, scale: f64 },
    Gev { loc: f64, scale: f64, shape: f64 },
    Grid { x: Vec<f64>, cdf: Vec<f64> },
}

/// A parameter that failed validation, named by its path in the exchange
/// format (e.g. `params.scale`).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: &'static str,
    pub message: String,
}

fn field_err(field: &'static str, message: impl Into<String>) -> FieldError {
    FieldError {
        field,
        message: message.into(),
    }
}

const GRID_EDGE_TOL: f64 = 1e-6;
const SKEW_TOL: f64 = 1e-10;

impl ComponentForecast {
    pub fn normal(loc: f64, scale: f64) -> Self {
        Self::Normal { loc, scale }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Self::Normal { .. } => "normal",
            Self::StudentT { .. } => "student_t",
            Self::SkewNormal { .. } => "skew_normal",
            Self::TruncatedNormalAtZero { .. } => "truncated_normal_at_zero",
            Self::Gev { .. } => "gev",
            Self::Grid { .. } => "grid",
        }
    }

    pub fn check(&self) -> std::result::Result<(), FieldError> {
        fn finite(field: &'static str, v: f64) -> std::result::Result<(), FieldError> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(field_err(field, format!("must be finite, got {v}")))
            }
        }
        fn positive(field: &'static str, v: f64) -> std::result::Result<(), FieldError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(field_err(field, format!("must be positive, got {v}")))
            }
        }
        match *self {
            Self::Normal { loc, scale } | Self::TruncatedNormalAtZero { loc, scale } => {
                finite("params.loc", loc)?;
                positive("params.scale", scale)
            }
            Self::StudentT { loc, scale, dof } => {
                finite("params.loc", loc)?;
                positive("params.scale", scale)?;
                positive("params.dof", dof)
            }
            Self::SkewNormal { loc, scale, shape } | Self::Gev { loc, scale, shape } => {
                finite("params.loc", loc)?;
                positive("params.scale", scale)?;
                finite("params.shape", shape)
            }
            Self::Grid { ref x, ref cdf } => {
                if x.len() < 2 {
                    return Err(field_err("params.x", "grid needs at least two knots"));
                }
                if x.len() != cdf.len() {
                    return Err(field_err("params.cdf", "must have the same length as params.x"));
                }
                if x.iter().any(|v| !v.is_finite()) || x.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(field_err("params.x", "knots must be finite and strictly increasing"));
                }
                if cdf.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(field_err("params.cdf", "values must lie in [0,1]"));
                }
                if cdf.windows(2).any(|w| w[1] < w[0]) {
                    return Err(field_err("params.cdf", "values must be nondecreasing"));
                }
                if cdf[0] > GRID_EDGE_TOL || cdf[cdf.len() - 1] < 1.0 - GRID_EDGE_TOL {
                    return Err(field_err("params.cdf", "must start at 0 and end at 1"));
                }
                Ok(())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|e| Error::Domain(format!("{} component: {}: {}", self.family_name(), e.field, e.message)))
    }

    pub fn cdf(&self, y: f64) -> f64 {
        match *self {
            Self::Normal { loc, scale } => std_normal_cdf((y - loc) / scale),
            Self::StudentT { loc, scale, dof } => student_t_cdf((y - loc) / scale, dof),
            Self::SkewNormal { loc, scale, shape } => skew_normal_cdf((y - loc) / scale, shape),
            Self::TruncatedNormalAtZero { loc, scale } => {
                if y <= 0.0 {
                    return 0.0;
                }
                // upper-tail form keeps precision when loc/scale is large
                let mass = std_normal_cdf(loc / scale);
                let above = std_normal_cdf((loc - y) / scale);
                ((mass - above) / mass).clamp(0.0, 1.0)
            }
            Self::Gev { loc, scale, shape } => gev_cdf((y - loc) / scale, shape),
            Self::Grid { ref x, ref cdf } => grid_cdf(x, cdf, y),
        }
    }

    pub fn pdf(&self, y: f64) -> f64 {
        match *self {
            Self::Normal { loc, scale } => std_normal_pdf((y - loc) / scale) / scale,
            Self::StudentT { loc, scale, dof } => {
                student_t_ln_pdf((y - loc) / scale, dof).exp() / scale
            }
            Self::SkewNormal { loc, scale, shape } => {
                let z = (y - loc) / scale;
                2.0 * std_normal_pdf(z) * std_normal_cdf(shape * z) / scale
            }
            Self::TruncatedNormalAtZero { loc, scale } => {
                if y <= 0.0 {
                    return 0.0;
                }
                std_normal_pdf((y - loc) / scale) / scale / std_normal_cdf(loc / scale)
            }
            Self::Gev { loc, scale, shape } => gev_pdf((y - loc) / scale, shape) / scale,
            Self::Grid { ref x, ref cdf } => grid_pdf(x, cdf, y),
        }
    }

    pub fn ln_pdf(&self, y: f64) -> f64 {
        match *self {
            Self::Normal { loc, scale } => std_normal_ln_pdf((y - loc) / scale) - scale.ln(),
            Self::StudentT { loc, scale, dof } => {
                student_t_ln_pdf((y - loc) / scale, dof) - scale.ln()
            }
            _ => self.pdf(y).ln(),
        }
    }

    /// Quantile at level `q` in `(0, 1)`.
    pub fn quantile(&self, q: f64) -> f64 {
        match *self {
            Self::Normal { loc, scale } => loc + scale * std_normal_quantile(q),
            Self::TruncatedNormalAtZero { loc, scale } => {
                let mass = std_normal_cdf(loc / scale);
                // P(Y > y) = (1 - q) * mass, solved in the upper tail
                let upper = (1.0 - q) * mass;
                (loc - scale * std_normal_quantile(upper)).max(0.0)
            }
            Self::Gev { loc, scale, shape } => {
                let l = -q.ln();
                if shape.abs() < 1e-12 {
                    loc - scale * l.ln()
                } else {
                    loc + scale * (l.powf(-shape) - 1.0) / shape
                }
            }
            Self::Grid { ref x, ref cdf } => grid_quantile(x, cdf, q),
            Self::StudentT { loc, scale, .. } | Self::SkewNormal { loc, scale, .. } => {
                invert_monotone(|y| self.cdf(y), q, loc, scale)
            }
        }
    }
}

/// Solve `cdf(y) = q` for a continuous nondecreasing `cdf` by expanding a
/// bracket around `guess` and bisecting.
pub(crate) fn invert_monotone(cdf: impl Fn(f64) -> f64, q: f64, guess: f64, scale: f64) -> f64 {
    let mut lo = guess;
    let mut step = scale.max(1e-12);
    while cdf(lo) > q {
        lo -= step;
        step *= 2.0;
        if !lo.is_finite() {
            return f64::NEG_INFINITY;
        }
    }
    let mut hi = guess;
    let mut step = scale.max(1e-12);
    while cdf(hi) < q {
        hi += step;
        step *= 2.0;
        if !hi.is_finite() {
            return f64::INFINITY;
        }
    }
    bisect(&cdf, q, lo, hi)
}

fn bisect(cdf: &impl Fn(f64) -> f64, q: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = cdf(mid);
        if (v - q).abs() <= 1e-13 {
            return mid;
        }
        if v < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn student_t_cdf(z: f64, dof: f64) -> f64 {
    let x = dof / (dof + z * z);
    let a = 0.5 * dof;
    let tail = 0.5 * special::inc_beta(a, 0.5, special::ln_beta_fn(a, 0.5), x);
    if z > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

fn student_t_ln_pdf(z: f64, dof: f64) -> f64 {
    special::ln_gamma(0.5 * (dof + 1.0))
        - special::ln_gamma(0.5 * dof)
        - 0.5 * (dof * std::f64::consts::PI).ln()
        - 0.5 * (dof + 1.0) * (z * z / dof).ln_1p()
}

/// `2 * integral_{-inf}^{z} phi(u) Phi(shape u) du` by adaptive Simpson.
fn skew_normal_cdf(z: f64, shape: f64) -> f64 {
    const REACH: f64 = 12.0;
    let f = |u: f64| 2.0 * std_normal_pdf(u) * std_normal_cdf(shape * u);
    if shape == 0.0 {
        return std_normal_cdf(z);
    }
    if z <= 0.0 {
        if z <= -REACH {
            return 0.0;
        }
        adaptive_simpson(&f, -REACH, z, SKEW_TOL).clamp(0.0, 1.0)
    } else {
        if z >= REACH {
            return 1.0;
        }
        (1.0 - adaptive_simpson(&f, z, REACH, SKEW_TOL)).clamp(0.0, 1.0)
    }
}

pub(crate) fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 48)
}

fn gev_cdf(z: f64, shape: f64) -> f64 {
    if shape.abs() < 1e-12 {
        return (-(-z).exp()).exp();
    }
    let t = 1.0 + shape * z;
    if t <= 0.0 {
        return if shape > 0.0 { 0.0 } else { 1.0 };
    }
    (-t.powf(-1.0 / shape)).exp()
}

fn gev_pdf(z: f64, shape: f64) -> f64 {
    if shape.abs() < 1e-12 {
        let e = (-z).exp();
        return e * (-e).exp();
    }
    let t = 1.0 + shape * z;
    if t <= 0.0 {
        return 0.0;
    }
    let s = t.powf(-1.0 / shape);
    s / t * (-s).exp()
}

fn grid_segment(x: &[f64], y: f64) -> usize {
    // index i with x[i] <= y < x[i+1]
    x.partition_point(|&v| v <= y).saturating_sub(1).min(x.len() - 2)
}

fn grid_cdf(x: &[f64], cdf: &[f64], y: f64) -> f64 {
    let n = x.len();
    if y < x[0] {
        return 0.0;
    }
    if y >= x[n - 1] {
        return if y == x[n - 1] { cdf[n - 1] } else { 1.0 };
    }
    let i = grid_segment(x, y);
    let w = (y - x[i]) / (x[i + 1] - x[i]);
    cdf[i] + w * (cdf[i + 1] - cdf[i])
}

fn grid_pdf(x: &[f64], cdf: &[f64], y: f64) -> f64 {
    let n = x.len();
    if y < x[0] || y >= x[n - 1] {
        return 0.0;
    }
    let i = grid_segment(x, y);
    (cdf[i + 1] - cdf[i]) / (x[i + 1] - x[i])
}

fn grid_quantile(x: &[f64], cdf: &[f64], q: f64) -> f64 {
    let n = x.len();
    if q <= cdf[0] {
        return x[0];
    }
    if q >= cdf[n - 1] {
        return x[n - 1];
    }
    let j = cdf.partition_point(|&c| c < q);
    let i = j - 1;
    let span = cdf[j] - cdf[i];
    if span <= 0.0 {
        return x[j];
    }
    x[i] + (q - cdf[i]) / span * (x[j] - x[i])
}

/// Pooling weights on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoolWeights(Vec<f64>);

pub(crate) const SIMPLEX_TOL: f64 = 1e-12;

impl PoolWeights {
    pub fn new(omega: Vec<f64>) -> Result<Self> {
        check_simplex(&omega, "pool weights")?;
        Ok(Self(omega))
    }

    /// Wraps a vector the caller has already normalized.
    pub(crate) fn from_normalized(omega: Vec<f64>) -> Self {
        debug_assert!(check_simplex(&omega, "pool weights").is_ok(), "{omega:?}");
        Self(omega)
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    /// All mass on component `i`.
    pub fn degenerate(m: usize, i: usize) -> Self {
        let mut w = vec![0.0; m];
        w[i] = 1.0;
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub(crate) fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() {
        return domain(format!("{what}: empty vector"));
    }
    if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return domain(format!("{what}: entries must lie in [0,1], got {v:?}"));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL.max(v.len() as f64 * f64::EPSILON) {
        return domain(format!("{what}: entries must sum to 1, got {sum}"));
    }
    Ok(())
}

/// `sum_m omega_m F_m`, evaluated as `1 - sum_m omega_m (1 - F_m)` in the
/// upper half so that it reaches exactly 1 when every `F_m` does.
#[inline]
pub fn pool_cdf_from_values(omega: &[f64], cdfs: &[f64]) -> f64 {
    let h: f64 = omega.iter().zip(cdfs).map(|(w, c)| w * c).sum();
    if h > 0.5 {
        (1.0 - omega.iter().zip(cdfs).map(|(w, c)| w * (1.0 - c)).sum::<f64>()).clamp(0.0, 1.0)
    } else {
        h.clamp(0.0, 1.0)
    }
}

/// Pooled cdf and pdf from per-component values.
#[inline]
pub fn pool_from_values(omega: &[f64], cdfs: &[f64], pdfs: &[f64]) -> (f64, f64) {
    let h_pdf = omega.iter().zip(pdfs).map(|(w, p)| w * p).sum();
    (pool_cdf_from_values(omega, cdfs), h_pdf)
}

fn check_tuple(omega: &PoolWeights, tuple: &[ComponentForecast]) -> Result<()> {
    if omega.len() != tuple.len() {
        return contract(format!(
            "pool weights have length {} but the forecast tuple has {} components",
            omega.len(),
            tuple.len()
        ));
    }
    tuple.iter().try_for_each(ComponentForecast::validate)
}

/// `sum_m omega_m F_m(y)`.
pub fn pool_cdf(y: f64, omega: &PoolWeights, tuple: &[ComponentForecast]) -> Result<f64> {
    check_tuple(omega, tuple)?;
    let cdfs: Vec<f64> = tuple.iter().map(|c| c.cdf(y)).collect();
    Ok(pool_cdf_from_values(&omega.0, &cdfs))
}

/// `sum_m omega_m f_m(y)`.
pub fn pool_pdf(y: f64, omega: &PoolWeights, tuple: &[ComponentForecast]) -> Result<f64> {
    check_tuple(omega, tuple)?;
    Ok(omega.0.iter().zip(tuple).map(|(w, c)| w * c.pdf(y)).sum())
}

/// Inverse of the pooled cdf.
///
/// The bracket comes from the component quantiles at `q / M` and
/// `1 - (1 - q) / M`, which always enclose the pooled quantile.
pub fn pool_inv_cdf(q: f64, omega: &PoolWeights, tuple: &[ComponentForecast]) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return domain(format!("quantile level must lie in (0,1), got {q}"));
    }
    check_tuple(omega, tuple)?;
    Ok(pool_inv_cdf_unchecked(q, omega.as_slice(), tuple))
}

pub(crate) fn pool_inv_cdf_unchecked(q: f64, omega: &[f64], tuple: &[ComponentForecast]) -> f64 {
    let m = tuple.len() as f64;
    let q_lo = q / m;
    let q_hi = 1.0 - (1.0 - q) / m;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (w, c) in omega.iter().zip(tuple) {
        if *w == 0.0 {
            continue;
        }
        lo = lo.min(c.quantile(q_lo));
        hi = hi.max(c.quantile(q_hi));
    }
    let cdf = |y: f64| -> f64 { omega.iter().zip(tuple).map(|(w, c)| w * c.cdf(y)).sum() };
    // widen by one ulp-scale step in case the component quantiles are
    // slightly inexact
    let pad = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
    let (mut lo, mut hi) = (lo - pad, hi + pad);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = cdf(mid);
        if (v - q).abs() <= 1e-12 {
            return mid;
        }
        if v < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One time step: the component forecasts issued for `y` and the realized
/// value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastStep {
    pub components: Vec<ComponentForecast>,
    pub y: f64,
}

/// An aligned sequence of forecast tuples and realizations with a fixed
/// number of components.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForecastSeries {
    steps: Vec<ForecastStep>,
}

impl ForecastSeries {
    pub fn new(steps: Vec<ForecastStep>) -> Result<Self> {
        if let Some(first) = steps.first() {
            let m = first.components.len();
            if m == 0 {
                return contract("forecast tuples need at least one component");
            }
            for (t, s) in steps.iter().enumerate() {
                if s.components.len() != m {
                    return contract(format!(
                        "step {t} has {} components, expected {m}",
                        s.components.len()
                    ));
                }
                if !s.y.is_finite() {
                    return contract(format!("step {t} has a non-finite observation"));
                }
                for c in &s.components {
                    c.validate()?;
                }
            }
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[ForecastStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Number of components per tuple (0 for an empty series).
    pub fn m(&self) -> usize {
        self.steps.first().map_or(0, |s| s.components.len())
    }

    pub fn observations(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.y).collect()
    }

    /// Steps `range`, as a new series.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            steps: self.steps[range].to_vec(),
        }
    }
}

/// Component cdf and pdf values at each realization, laid out row-major
/// (`T x M`).
///
/// The samplers only ever need `F_mt(y_t)` and `f_mt(y_t)`, so they are
/// computed once up front.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedSeries {
    m: usize,
    y: Vec<f64>,
    cdf: Vec<f64>,
    pdf: Vec<f64>,
}

impl EvaluatedSeries {
    pub fn from_series(series: &ForecastSeries) -> Self {
        let m = series.m();
        let mut cdf = Vec::with_capacity(series.len() * m);
        let mut pdf = Vec::with_capacity(series.len() * m);
        for s in series.steps() {
            for c in &s.components {
                cdf.push(c.cdf(s.y));
                pdf.push(c.pdf(s.y));
            }
        }
        Self {
            m,
            y: series.observations(),
            cdf,
            pdf,
        }
    }

    /// Builds from raw per-step component values.
    pub fn from_values(m: usize, y: Vec<f64>, cdf: Vec<f64>, pdf: Vec<f64>) -> Result<Self> {
        if m == 0 || cdf.len() != y.len() * m || pdf.len() != y.len() * m {
            return contract("component value matrices do not match T x M");
        }
        Ok(Self { m, y, cdf, pdf })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self, t: usize) -> f64 {
        self.y[t]
    }

    pub fn cdfs(&self, t: usize) -> &[f64] {
        &self.cdf[t * self.m..(t + 1) * self.m]
    }

    pub fn pdfs(&self, t: usize) -> &[f64] {
        &self.pdf[t * self.m..(t + 1) * self.m]
    }

    /// `(H_t(y_t | omega), h_t(y_t | omega))`.
    #[inline]
    pub fn pooled(&self, t: usize, omega: &[f64]) -> (f64, f64) {
        pool_from_values(omega, self.cdfs(t), self.pdfs(t))
    }
}
