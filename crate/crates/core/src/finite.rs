//! Gibbs sampler for the finite beta mixture and the global random-walk
//! Metropolis–Hastings sampler used when `K = 1`.
//!
//! One Gibbs sweep draws, in order, the allocations, each atom's `(mu, nu)`
//! by a random-walk step on `(logit mu, ln nu)`, each atom's pool weights by
//! an independence step with the Dirichlet prior as proposal, and finally the
//! mixture weights from their conjugate Dirichlet posterior.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::model::{Allocation, Atom, AtomPrior, FiniteParams, Hyperparams};
use crate::pool::{EvaluatedSeries, ForecastSeries, PoolWeights};
use crate::sampling::{self, categorical_from_logs, mh_accept, seeded_rng, std_normal};
use crate::special::{clamp_prob, BetaKernel, BetaMeanPrecision};

/// Run-length and proposal settings shared by all samplers.
///
/// Proposal scales are variances of the Gaussian random-walk increments on
/// the transformed scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    /// Total number of sweeps, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Variance of each coordinate of the `(logit mu, ln nu)` random walk.
    pub rw_scale_mu_nu: f64,
    /// Variances for `(logit mu, ln nu, log-ratio omega)` in the `K = 1`
    /// global sampler.
    pub rw_scales_k1: [f64; 3],
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 5_000,
            thin: 1,
            seed: 0,
            rw_scale_mu_nu: 0.05,
            rw_scales_k1: [0.1, 0.05, 0.1],
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.thin == 0 {
            return contract("iterations and thin must be positive");
        }
        if self.burn_in >= self.iterations {
            return contract(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                self.burn_in, self.iterations
            ));
        }
        let scales = [self.rw_scale_mu_nu, self.rw_scales_k1[0], self.rw_scales_k1[1], self.rw_scales_k1[2]];
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return contract("random-walk scales must be positive");
        }
        Ok(())
    }

    /// Whether the draw after sweep `iter` (0-based) is kept.
    pub fn keeps(&self, iter: usize) -> bool {
        iter >= self.burn_in && (iter - self.burn_in).is_multiple_of(self.thin)
    }

    pub fn stored_draws(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Fraction of accepted proposals per Metropolis–Hastings block, counted
/// after burn-in. `None` for blocks the sampler does not run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub mu_nu: Option<f64>,
    pub omega: Option<f64>,
    pub joint: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Counter {
    accepted: u64,
    proposed: u64,
}

impl Counter {
    pub(crate) fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub(crate) fn rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }
}

/// Which finite sampler produced a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiniteSampler {
    Gibbs,
    GlobalMh,
}

/// Post burn-in, thinned output of a finite-mixture sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteTrace {
    pub sampler: FiniteSampler,
    pub draws: Vec<FiniteParams>,
    pub acceptance: AcceptanceRates,
    /// Occupancy `T_k` at each stored draw.
    pub alloc_counts: Vec<Vec<usize>>,
    /// Observations whose allocation probabilities all underflowed.
    pub numerical_warnings: usize,
}

/// Sufficient statistics of the calibrated values `H_t` allocated to one
/// atom, for the beta likelihood.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BetaSuffStats {
    pub n: usize,
    pub sum_ln_x: f64,
    pub sum_ln_1mx: f64,
}

impl BetaSuffStats {
    pub fn push(&mut self, h: f64) {
        let x = clamp_prob(h);
        self.n += 1;
        self.sum_ln_x += x.ln();
        self.sum_ln_1mx += (-x).ln_1p();
    }

    pub fn from_members(members: &[usize], omega: &[f64], data: &EvaluatedSeries) -> Self {
        let mut s = Self::default();
        for &t in members {
            s.push(data.pooled(t, omega).0);
        }
        s
    }

    /// `sum_t ln b*_{mu,nu}(H_t)`.
    pub fn ln_likelihood(&self, cal: &BetaMeanPrecision) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let k = cal.kernel();
        (k.alpha - 1.0) * self.sum_ln_x + (k.beta - 1.0) * self.sum_ln_1mx - self.n as f64 * k.ln_beta()
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Log target of `(gamma, lambda) = (logit mu, ln nu)`: beta likelihood times
/// the prior on `(mu, nu)` times the Jacobian `mu (1 - mu) nu`.
pub fn ln_target_mu_nu(cal: &BetaMeanPrecision, stats: &BetaSuffStats, prior: &AtomPrior) -> f64 {
    let (mu, nu) = (cal.mu, cal.nu);
    if !(mu > 0.0 && mu < 1.0 && nu > 0.0 && nu.is_finite()) || !(cal.alpha() > 0.0 && cal.beta() > 0.0) {
        return f64::NEG_INFINITY;
    }
    stats.ln_likelihood(cal)
        + prior.ln_density_mu(mu)
        + prior.ln_density_nu(nu)
        + mu.ln()
        + (-mu).ln_1p()
        + nu.ln()
}

/// One random-walk MH step for a single atom's `(mu, nu)`.
pub fn mh_mu_nu_atom<R: Rng + ?Sized>(
    cal: BetaMeanPrecision,
    stats: &BetaSuffStats,
    prior: &AtomPrior,
    rw_var: f64,
    rng: &mut R,
) -> (BetaMeanPrecision, bool) {
    let sd = rw_var.sqrt();
    let gamma = logit(cal.mu) + sd * std_normal(rng);
    let lambda = cal.nu.ln() + sd * std_normal(rng);
    let proposal = BetaMeanPrecision {
        mu: logistic(gamma),
        nu: lambda.exp(),
    };
    let current = ln_target_mu_nu(&cal, stats, prior);
    let proposed = ln_target_mu_nu(&proposal, stats, prior);
    if mh_accept(current, proposed, rng) {
        (proposal, true)
    } else {
        (cal, false)
    }
}

/// `sum_{t in members} [ln b*(H_t(omega)) + ln h_t(omega)]`.
pub fn ln_kernel_likelihood(kernel: &BetaKernel, omega: &[f64], members: &[usize], data: &EvaluatedSeries) -> f64 {
    let mut acc = 0.0;
    for &t in members {
        let (hc, hp) = data.pooled(t, omega);
        if hp <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += kernel.ln_pdf(hc) + hp.ln();
    }
    acc
}

/// Independence MH step for one atom's pool weights with the Dirichlet prior
/// as proposal; the prior cancels, leaving the likelihood ratio.
pub fn mh_omega_atom<R: Rng + ?Sized>(
    atom: &Atom,
    members: &[usize],
    data: &EvaluatedSeries,
    prior: &AtomPrior,
    rng: &mut R,
) -> (PoolWeights, bool) {
    let proposal = sampling::symmetric_dirichlet(prior.omega_conc, atom.omega.len(), rng);
    let kernel = atom.cal.kernel();
    let current = ln_kernel_likelihood(&kernel, atom.omega.as_slice(), members, data);
    let proposed = ln_kernel_likelihood(&kernel, &proposal, members, data);
    if mh_accept(current, proposed, rng) {
        (PoolWeights::from_normalized(proposal), true)
    } else {
        (atom.omega.clone(), false)
    }
}

/// Allocation draw with probabilities proportional to
/// `w_k b*_k(H_t(y_t | omega_k)) h_t(y_t | omega_k)`.
///
/// Returns the allocation and the number of observations for which every
/// probability underflowed; those are allocated uniformly.
pub fn step_allocations<R: Rng + ?Sized>(
    theta: &FiniteParams,
    data: &EvaluatedSeries,
    rng: &mut R,
) -> (Allocation, usize) {
    let k = theta.k();
    let kernels: Vec<BetaKernel> = theta.atoms.iter().map(|a| a.cal.kernel()).collect();
    let ln_w: Vec<f64> = theta.weights.iter().map(|w| w.ln()).collect();
    let mut logs = vec![0.0; k];
    let mut degenerate = 0;
    let d = (0..data.len())
        .map(|t| {
            if k == 1 {
                return 0;
            }
            for j in 0..k {
                let (hc, hp) = data.pooled(t, theta.atoms[j].omega.as_slice());
                logs[j] = if hp > 0.0 && ln_w[j] > f64::NEG_INFINITY {
                    ln_w[j] + kernels[j].ln_pdf(hc) + hp.ln()
                } else {
                    f64::NEG_INFINITY
                };
            }
            categorical_from_logs(&logs, rng).unwrap_or_else(|| {
                degenerate += 1;
                rng.random_range(0..k)
            })
        })
        .collect();
    if degenerate > 0 {
        log::warn!("{degenerate} observations had zero density under every component");
    }
    (Allocation(d), degenerate)
}

/// One `(mu, nu)` step per atom; returns the acceptance flags.
pub fn step_mu_nu<R: Rng + ?Sized>(
    theta: &mut FiniteParams,
    alloc: &Allocation,
    data: &EvaluatedSeries,
    prior: &AtomPrior,
    rw_var: f64,
    rng: &mut R,
) -> Vec<bool> {
    let members = alloc.members(theta.k());
    theta
        .atoms
        .iter_mut()
        .zip(&members)
        .map(|(atom, mem)| {
            let stats = BetaSuffStats::from_members(mem, atom.omega.as_slice(), data);
            let (cal, acc) = mh_mu_nu_atom(atom.cal, &stats, prior, rw_var, rng);
            atom.cal = cal;
            acc
        })
        .collect()
}

/// One pool-weight step per atom; returns the acceptance flags.
pub fn step_omega<R: Rng + ?Sized>(
    theta: &mut FiniteParams,
    alloc: &Allocation,
    data: &EvaluatedSeries,
    prior: &AtomPrior,
    rng: &mut R,
) -> Vec<bool> {
    let members = alloc.members(theta.k());
    theta
        .atoms
        .iter_mut()
        .zip(&members)
        .map(|(atom, mem)| {
            let (omega, acc) = mh_omega_atom(atom, mem, data, prior, rng);
            atom.omega = omega;
            acc
        })
        .collect()
}

/// Conjugate draw `w ~ Dir(xi_w + T_1, ..., xi_w + T_K)`.
pub fn step_weights<R: Rng + ?Sized>(alloc: &Allocation, hyper: &Hyperparams, k: usize, rng: &mut R) -> Vec<f64> {
    let alpha: Vec<f64> = alloc.counts(k).iter().map(|&c| hyper.xi_w + c as f64).collect();
    sampling::dirichlet(&alpha, rng)
}

/// Mutable state of a finite Gibbs chain.
#[derive(Debug, Clone)]
pub struct FiniteGibbs {
    pub theta: FiniteParams,
    pub alloc: Allocation,
    hyper: Hyperparams,
    prior: AtomPrior,
    rw_var: f64,
    mu_nu: Counter,
    omega: Counter,
    warnings: usize,
}

impl FiniteGibbs {
    pub fn new(theta: FiniteParams, hyper: Hyperparams, rw_var: f64) -> Self {
        Self {
            prior: hyper.finite_atom_prior(),
            theta,
            alloc: Allocation(Vec::new()),
            hyper,
            rw_var,
            mu_nu: Counter::default(),
            omega: Counter::default(),
            warnings: 0,
        }
    }

    /// One full sweep: allocations, `(mu, nu)`, `omega`, `w`.
    pub fn sweep<R: Rng + ?Sized>(&mut self, data: &EvaluatedSeries, rng: &mut R) {
        let (alloc, degenerate) = step_allocations(&self.theta, data, rng);
        self.warnings += degenerate;
        for acc in step_mu_nu(&mut self.theta, &alloc, data, &self.prior, self.rw_var, rng) {
            self.mu_nu.record(acc);
        }
        for acc in step_omega(&mut self.theta, &alloc, data, &self.prior, rng) {
            self.omega.record(acc);
        }
        self.theta.weights = step_weights(&alloc, &self.hyper, self.theta.k(), rng);
        self.alloc = alloc;
    }

    fn reset_counters(&mut self) {
        self.mu_nu = Counter::default();
        self.omega = Counter::default();
    }
}

fn check_run(series: &ForecastSeries, hyper: &Hyperparams, config: &McmcConfig) -> Result<()> {
    config.validate()?;
    hyper.validate()?;
    if series.is_empty() {
        return contract("cannot fit an empty forecast series");
    }
    Ok(())
}

/// Gibbs sampler for the `K`-component beta mixture.
pub fn run_finite_gibbs(
    series: &ForecastSeries,
    hyper: &Hyperparams,
    k: usize,
    config: &McmcConfig,
) -> Result<FiniteTrace> {
    check_run(series, hyper, config)?;
    run_finite_gibbs_evaluated(&EvaluatedSeries::from_series(series), hyper, k, config)
}

pub fn run_finite_gibbs_evaluated(
    data: &EvaluatedSeries,
    hyper: &Hyperparams,
    k: usize,
    config: &McmcConfig,
) -> Result<FiniteTrace> {
    config.validate()?;
    if k == 0 {
        return contract("the mixture needs at least one component");
    }
    if data.is_empty() {
        return contract("cannot fit an empty forecast series");
    }
    let mut rng = seeded_rng(config.seed);
    let mut chain = FiniteGibbs::new(FiniteParams::identity(k, data.m()), *hyper, config.rw_scale_mu_nu);
    let mut draws = Vec::with_capacity(config.stored_draws());
    let mut alloc_counts = Vec::with_capacity(config.stored_draws());
    for iter in 0..config.iterations {
        if iter == config.burn_in {
            chain.reset_counters();
        }
        chain.sweep(data, &mut rng);
        if config.keeps(iter) {
            debug_assert!(chain.theta.validate().is_ok());
            draws.push(chain.theta.clone());
            alloc_counts.push(chain.alloc.counts(k));
        }
    }
    Ok(FiniteTrace {
        sampler: FiniteSampler::Gibbs,
        draws,
        acceptance: AcceptanceRates {
            mu_nu: chain.mu_nu.rate(),
            omega: chain.omega.rate(),
            joint: None,
        },
        alloc_counts,
        numerical_warnings: chain.warnings,
    })
}

/// Parameter of the `K = 1` model on the unconstrained scale:
/// `(logit mu, ln nu, ln(omega_j / omega_M) for j < M)`.
#[derive(Debug, Clone, PartialEq)]
struct Unconstrained(Vec<f64>);

impl Unconstrained {
    fn from_atom(atom: &Atom) -> Self {
        let om = atom.omega.as_slice();
        let last = om[om.len() - 1].ln();
        let mut v = vec![logit(atom.cal.mu), atom.cal.nu.ln()];
        v.extend(om[..om.len() - 1].iter().map(|w| w.ln() - last));
        Self(v)
    }

    fn to_atom(&self) -> Option<Atom> {
        let mu = logistic(self.0[0]);
        let nu = self.0[1].exp();
        let mut logs: Vec<f64> = self.0[2..].to_vec();
        logs.push(0.0);
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut om: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = om.iter().sum();
        om.iter_mut().for_each(|w| *w /= s);
        let cal = BetaMeanPrecision { mu, nu };
        let ok = mu > 0.0 && mu < 1.0 && nu > 0.0 && nu.is_finite() && cal.alpha() > 0.0 && cal.beta() > 0.0;
        ok.then(|| Atom {
            cal,
            omega: PoolWeights::from_normalized(om),
        })
    }
}

/// Joint log target on the unconstrained scale, Jacobian
/// `mu (1 - mu) nu prod_m omega_m` included.
fn ln_target_k1(atom: &Atom, all: &[usize], data: &EvaluatedSeries, prior: &AtomPrior) -> f64 {
    let (mu, nu) = (atom.cal.mu, atom.cal.nu);
    let om = atom.omega.as_slice();
    if om.iter().any(|&w| w <= 0.0) {
        return f64::NEG_INFINITY;
    }
    let lik = ln_kernel_likelihood(&atom.cal.kernel(), om, all, data);
    if lik == f64::NEG_INFINITY {
        return lik;
    }
    let jac = mu.ln() + (-mu).ln_1p() + nu.ln() + om.iter().map(|w| w.ln()).sum::<f64>();
    lik + prior.ln_density_mu(mu) + prior.ln_density_nu(nu) + prior.ln_density_omega(om) + jac
}

/// Global random-walk MH for the one-component model on
/// `(logit mu, ln nu, additive log-ratio of omega)`.
pub fn run_global_mh_k1(series: &ForecastSeries, hyper: &Hyperparams, config: &McmcConfig) -> Result<FiniteTrace> {
    check_run(series, hyper, config)?;
    run_global_mh_k1_evaluated(&EvaluatedSeries::from_series(series), hyper, config)
}

pub fn run_global_mh_k1_evaluated(
    data: &EvaluatedSeries,
    hyper: &Hyperparams,
    config: &McmcConfig,
) -> Result<FiniteTrace> {
    config.validate()?;
    if data.is_empty() {
        return contract("cannot fit an empty forecast series");
    }
    let mut rng = seeded_rng(config.seed);
    let prior = hyper.finite_atom_prior();
    let all: Vec<usize> = (0..data.len()).collect();
    let sd: Vec<f64> = {
        let [a, b, c] = config.rw_scales_k1;
        let mut v = vec![a.sqrt(), b.sqrt()];
        v.extend(std::iter::repeat_n(c.sqrt(), data.m() - 1));
        v
    };
    let mut atom = Atom::identity(data.m());
    let mut current = ln_target_k1(&atom, &all, data, &prior);
    let mut point = Unconstrained::from_atom(&atom);
    let mut counter = Counter::default();
    let mut draws = Vec::with_capacity(config.stored_draws());
    let mut alloc_counts = Vec::with_capacity(config.stored_draws());
    for iter in 0..config.iterations {
        if iter == config.burn_in {
            counter = Counter::default();
        }
        let prop = Unconstrained(point.0.iter().zip(&sd).map(|(x, s)| x + s * std_normal(&mut rng)).collect());
        let (prop_atom, proposed) = match prop.to_atom() {
            Some(a) => {
                let lt = ln_target_k1(&a, &all, data, &prior);
                (Some(a), lt)
            }
            None => (None, f64::NEG_INFINITY),
        };
        let accepted = mh_accept(current, proposed, &mut rng);
        if accepted {
            atom = prop_atom.expect("accepted proposals are valid");
            point = prop;
            current = proposed;
        }
        counter.record(accepted);
        if config.keeps(iter) {
            draws.push(FiniteParams {
                weights: vec![1.0],
                atoms: vec![atom.clone()],
            });
            alloc_counts.push(vec![data.len()]);
        }
    }
    Ok(FiniteTrace {
        sampler: FiniteSampler::GlobalMh,
        draws,
        acceptance: AcceptanceRates {
            joint: counter.rate(),
            ..Default::default()
        },
        alloc_counts,
        numerical_warnings: 0,
    })
}

impl From<FiniteTrace> for Vec<FiniteParams> {
    fn from(t: FiniteTrace) -> Self {
        t.draws
    }
}
