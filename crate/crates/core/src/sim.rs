//! Data-generating processes for the simulation studies.

use rand::Rng;
use rand_distr::{Distribution, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::pool::{check_simplex, ComponentForecast, ForecastSeries, ForecastStep};
use crate::sampling::{seeded_rng, std_normal};

/// Component forecasts used by both static designs.
pub fn static_tuple() -> Vec<ComponentForecast> {
    vec![ComponentForecast::normal(-1.0, 1.0), ComponentForecast::normal(2.0, 1.0)]
}

/// Mixture of `N(-2, 0.25)`, `N(0, 0.25)` and `N(2, 0.25)` (variances) with
/// probabilities `p`, forecast by the fixed pair `N(-1, 1)`, `N(2, 1)`.
pub fn generate_sim1(p: [f64; 3], t: usize, seed: u64) -> Result<ForecastSeries> {
    check_simplex(&p, "mixture probabilities").map_err(|e| Error::Contract(e.to_string()))?;
    let mut rng = seeded_rng(seed);
    let means = [-2.0, 0.0, 2.0];
    let tuple = static_tuple();
    let steps = (0..t)
        .map(|_| {
            let u: f64 = rng.random();
            let j = if u < p[0] {
                0
            } else if u < p[0] + p[1] {
                1
            } else {
                2
            };
            ForecastStep {
                components: tuple.clone(),
                y: means[j] + 0.5 * std_normal(&mut rng),
            }
        })
        .collect();
    ForecastSeries::new(steps)
}

/// Equal mixture of Student-t distributions with 6 degrees of freedom
/// centred at -1 and 2, forecast by the same normal pair as [`generate_sim1`].
pub fn generate_sim2(t: usize, seed: u64) -> Result<ForecastSeries> {
    let mut rng = seeded_rng(seed);
    let t6 = StudentT::new(6.0).expect("valid dof");
    let tuple = static_tuple();
    let steps = (0..t)
        .map(|_| {
            let loc = if rng.random::<bool>() { -1.0 } else { 2.0 };
            ForecastStep {
                components: tuple.clone(),
                y: loc + t6.sample(&mut rng),
            }
        })
        .collect();
    ForecastSeries::new(steps)
}

/// Skew-normal variate `loc + scale * (delta |z0| + sqrt(1 - delta^2) z1)`
/// with `delta = shape / sqrt(1 + shape^2)`.
pub fn skew_normal<R: Rng + ?Sized>(loc: f64, scale: f64, shape: f64, rng: &mut R) -> f64 {
    let delta = shape / (1.0 + shape * shape).sqrt();
    let z0 = std_normal(rng).abs();
    let z1 = std_normal(rng);
    loc + scale * (delta * z0 + (1.0 - delta * delta).sqrt() * z1)
}

/// Mixture of skew-normal AR(1) processes,
/// `1/3 SN(-2 + phi y, 0.5, rho) + 2/3 SN(2 + phi y, 0.5, rho)` with
/// `y_0 = 0`, forecast by the normal AR(1) pair `N(-1 + phi y, 0.5^2)`,
/// `N(2 + phi y, 0.5^2)`.
pub fn generate_mar(phi: f64, rho: f64, t: usize, seed: u64) -> Result<ForecastSeries> {
    if !phi.is_finite() || !rho.is_finite() {
        return contract("autoregressive and skewness parameters must be finite");
    }
    if phi.abs() >= 1.0 {
        log::warn!("non-stationary autoregression, phi = {phi}");
    }
    let mut rng = seeded_rng(seed);
    let mut prev = 0.0;
    let mut steps = Vec::with_capacity(t);
    for i in 0..t {
        let drift = phi * prev;
        let loc = if rng.random::<f64>() < 1.0 / 3.0 { -2.0 } else { 2.0 };
        let y = skew_normal(loc + drift, 0.5, rho, &mut rng);
        if !y.is_finite() {
            return Err(Error::Numerical(format!("autoregression diverged at step {i}")));
        }
        steps.push(ForecastStep {
            components: vec![
                ComponentForecast::normal(-1.0 + drift, 0.5),
                ComponentForecast::normal(2.0 + drift, 0.5),
            ],
            y,
        });
        prev = y;
    }
    ForecastSeries::new(steps)
}

/// Data-generating process selector, as used in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dgp {
    Sim1 {
        #[serde(default = "default_sim1_p")]
        p: [f64; 3],
        #[serde(default = "default_t")]
        t: usize,
    },
    Sim2 {
        #[serde(default = "default_sim2_t")]
        t: usize,
    },
    Mar {
        phi: f64,
        rho: f64,
        #[serde(default = "default_t")]
        t: usize,
    },
    None,
}

fn default_sim1_p() -> [f64; 3] {
    [0.2, 0.2, 0.6]
}

fn default_t() -> usize {
    1000
}

fn default_sim2_t() -> usize {
    2000
}

impl Dgp {
    pub fn generate(&self, seed: u64) -> Result<Option<ForecastSeries>> {
        match *self {
            Dgp::Sim1 { p, t } => generate_sim1(p, t, seed).map(Some),
            Dgp::Sim2 { t } => generate_sim2(t, seed).map(Some),
            Dgp::Mar { phi, rho, t } => generate_mar(phi, rho, t, seed).map(Some),
            Dgp::None => Ok(None),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dgp::Sim1 { .. } => "sim1",
            Dgp::Sim2 { .. } => "sim2",
            Dgp::Mar { .. } => "mar",
            Dgp::None => "none",
        }
    }
}
