//! WebAssembly bindings for the browser demo. Every export returns a JSON
//! string; failures come back as `{"error": "..."}`.

use betamix::dp::run_slice_sampler_evaluated;
use betamix::finite::McmcConfig;
use betamix::model::{kernel_pdf, Atom, Hyperparams};
use betamix::pool::{pool_pdf, EvaluatedSeries, PoolWeights};
use betamix::predict::{compute_pits, default_pit_grid, ks_uniformity, pit_band, Posterior, Predictive};
use betamix::sim::{generate_sim1, static_tuple};
use betamix::special::{antoniak_pmf, BetaMeanPrecision};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn respond(r: betamix::Result<Value>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Density of the linear pool of `N(-1, 1)` and `N(2, 1)` with weight
/// `omega1` on the first component, and of its beta-calibrated version.
#[wasm_bindgen]
pub fn calibrated_density(mu: f64, nu: f64, omega1: f64) -> String {
    respond((|| {
        let tuple = static_tuple();
        let omega = PoolWeights::new(vec![omega1, 1.0 - omega1])?;
        let atom = Atom::new(BetaMeanPrecision::new(mu, nu)?, omega.clone());
        let ys = grid(-5.0, 6.0, 221);
        let pool = ys.iter().map(|&y| pool_pdf(y, &omega, &tuple)).collect::<betamix::Result<Vec<_>>>()?;
        let cal = ys.iter().map(|&y| kernel_pdf(y, &atom, &tuple)).collect::<betamix::Result<Vec<_>>>()?;
        Ok(json!({ "y": ys, "pool": pool, "calibrated": cal }))
    })())
}

/// Prior pmf of the number of occupied clusters.
#[wasm_bindgen]
pub fn cluster_prior(psi: f64, t: usize) -> String {
    respond(antoniak_pmf(psi, t).map(|p| json!({ "pmf": p })))
}

/// Simulates the three-normal design, fits the infinite mixture with fixed
/// concentration and returns the 99% PIT band and cluster-count posterior.
#[wasm_bindgen]
pub fn fit_sim1(seed: u64, t: usize, iterations: usize, psi: f64) -> String {
    respond((|| {
        let series = generate_sim1([0.2, 0.2, 0.6], t, seed)?;
        let data = EvaluatedSeries::from_series(&series);
        let hyper = Hyperparams::default().with_fixed_psi(psi);
        let cfg = McmcConfig {
            iterations,
            burn_in: iterations / 3,
            seed,
            ..Default::default()
        };
        let trace = run_slice_sampler_evaluated(&data, &hyper, &cfg)?;
        let pmf = trace.cluster_count_pmf();
        let pred = Predictive::new(&Posterior::Dp(trace.draws).thinned(500))?;
        let pits = compute_pits(&pred, &data);
        let ks = ks_uniformity(&pits)?;
        let band = pit_band(&pred, &data, &default_pit_grid(), 0.99)?;
        let nc_pits: Vec<f64> = {
            let nc = Predictive::linear_pool(&PoolWeights::uniform(2));
            compute_pits(&nc, &data)
        };
        Ok(json!({
            "grid": band.grid,
            "lower": band.lower,
            "upper": band.upper,
            "misses": band.diagonal_misses().len(),
            "pits": pits,
            "pool_pits": nc_pits,
            "ks": ks.statistic,
            "ks_critical": ks.critical,
            "cluster_pmf": pmf,
            "mu_nu_acceptance": trace.acceptance.mu_nu,
        }))
    })())
}
