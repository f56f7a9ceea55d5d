//! Slice sampler for the Dirichlet-process beta mixture.
//!
//! Sticks are kept on the log scale as `(ln v_k, ln(1 - v_k))` so that
//! weights far below the smallest normal double, which are routine for small
//! concentrations, still compare correctly against the slice variables. The
//! slices are stored as `ln u_t` for the same reason.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::finite::{mh_mu_nu_atom, mh_omega_atom, AcceptanceRates, BetaSuffStats, Counter, McmcConfig};
use crate::model::{Allocation, Atom, AtomPrior, Hyperparams, PsiPrior};
use crate::pool::{EvaluatedSeries, ForecastSeries};
use crate::sampling::{self, categorical_from_logs, open_uniform, seeded_rng};
use crate::special::BetaKernel;

pub const DEFAULT_MAX_STICKS: usize = 10_000;

/// Full state of the slice sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct DpState {
    /// `(ln v_k, ln(1 - v_k))` per stick.
    pub sticks: Vec<(f64, f64)>,
    pub atoms: Vec<Atom>,
    /// `ln u_t` per observation.
    pub ln_slices: Vec<f64>,
    pub alloc: Allocation,
    pub psi: f64,
    pub max_sticks: usize,
}

impl DpState {
    /// Every observation in a single component with identity calibration.
    pub fn initial(t: usize, m: usize, psi: f64) -> Self {
        let half = 0.5f64.ln();
        Self {
            sticks: vec![(half, half)],
            atoms: vec![Atom::identity(m)],
            ln_slices: vec![f64::NEG_INFINITY; t],
            alloc: Allocation(vec![0; t]),
            psi,
            max_sticks: DEFAULT_MAX_STICKS,
        }
    }

    /// Replaces the sticks by the given `v_k` values.
    pub fn set_sticks(&mut self, v: &[f64]) {
        self.sticks = v.iter().map(|&v| (v.ln(), (-v).ln_1p())).collect();
    }

    /// `ln w_k = ln v_k + sum_{l<k} ln(1 - v_l)`.
    pub fn ln_weights(&self) -> Vec<f64> {
        let mut rest = 0.0;
        self.sticks
            .iter()
            .map(|&(lv, l1v)| {
                let lw = lv + rest;
                rest += l1v;
                lw
            })
            .collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.ln_weights().into_iter().map(f64::exp).collect()
    }

    /// `ln` of the mass not yet assigned to any stick.
    pub fn ln_remaining(&self) -> f64 {
        self.sticks.iter().map(|s| s.1).sum()
    }

    /// Number of components with at least one observation.
    pub fn occupied(&self) -> usize {
        self.counts().iter().filter(|&&c| c > 0).count()
    }

    /// `D*`: one past the largest occupied index.
    pub fn max_occupied(&self) -> usize {
        self.alloc.0.iter().max().map_or(0, |d| d + 1)
    }

    pub fn counts(&self) -> Vec<usize> {
        self.alloc.counts(self.sticks.len().max(self.max_occupied()))
    }

    /// `N*`: the shortest prefix of sticks whose mass exceeds `1 - min_t u_t`.
    pub fn n_star(&self) -> usize {
        let min_u = self.ln_slices.iter().copied().fold(f64::INFINITY, f64::min);
        let mut rest = 0.0;
        for (k, s) in self.sticks.iter().enumerate() {
            rest += s.1;
            if rest < min_u {
                return k + 1;
            }
        }
        self.sticks.len()
    }

    /// Checks slice bounds, stick coverage and atom count.
    pub fn check_invariants(&self) -> Result<()> {
        if self.atoms.len() != self.sticks.len() {
            return contract("atoms and sticks out of step");
        }
        let lw = self.ln_weights();
        for (t, (&d, &lu)) in self.alloc.0.iter().zip(&self.ln_slices).enumerate() {
            if d >= lw.len() || lu >= lw[d] {
                return contract(format!("slice bound violated at observation {t}"));
            }
        }
        let min_u = self.ln_slices.iter().copied().fold(f64::INFINITY, f64::min);
        if !self.ln_slices.is_empty() && self.ln_remaining() >= min_u {
            return contract("sticks do not cover the smallest slice");
        }
        Ok(())
    }
}

/// `v_k ~ Beta(a_k + 1, b_k + psi)` for `k < D*`, with `a_k = #{d_t = k}` and
/// `b_k = #{d_t > k}`. Sticks and atoms beyond `D*` are discarded; they are
/// regenerated from the prior by [`extend_sticks`].
pub fn update_sticks_occupied<R: Rng + ?Sized>(state: &mut DpState, rng: &mut R) {
    let d_star = state.max_occupied();
    let counts = state.alloc.counts(d_star);
    let mut above = state.alloc.len();
    state.sticks.truncate(d_star);
    state.atoms.truncate(d_star);
    for (k, &a) in counts.iter().enumerate() {
        above -= a;
        state.sticks[k] = sampling::ln_beta_pair(a as f64 + 1.0, above as f64 + state.psi, rng);
    }
}

/// `u_t ~ U(0, w_{d_t})`.
pub fn update_slices<R: Rng + ?Sized>(state: &mut DpState, rng: &mut R) -> Result<()> {
    let lw = state.ln_weights();
    for (lu, &d) in state.ln_slices.iter_mut().zip(&state.alloc.0) {
        if lw[d] == f64::NEG_INFINITY {
            return contract(format!("occupied component {d} has zero weight"));
        }
        *lu = lw[d] + open_uniform(rng).ln();
    }
    Ok(())
}

/// Appends `Beta(1, psi)` sticks with atoms from the base measure until the
/// sticks cover `1 - min_t u_t`. Returns `N*`.
pub fn extend_sticks<R: Rng + ?Sized>(state: &mut DpState, base: &AtomPrior, m: usize, rng: &mut R) -> Result<usize> {
    let min_u = state.ln_slices.iter().copied().fold(f64::INFINITY, f64::min);
    let mut rest = state.ln_remaining();
    while rest >= min_u {
        if state.sticks.len() >= state.max_sticks {
            return Err(Error::Numerical(format!(
                "stick extension exceeded {} sticks (psi = {}, min ln u = {min_u}, ln remaining = {rest})",
                state.max_sticks, state.psi
            )));
        }
        let s = sampling::ln_beta_pair(1.0, state.psi, rng);
        rest += s.1;
        state.sticks.push(s);
        state.atoms.push(base.sample(m, rng));
    }
    Ok(state.n_star())
}

/// Acceptance flags of one atom update, for occupied atoms only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AtomMoves {
    pub mu_nu: Vec<bool>,
    pub omega: Vec<bool>,
}

/// Occupied atoms take one `(mu, nu)` step and then one `omega` step with
/// the finite-mixture kernels under the base measure; every other atom is
/// redrawn from the base measure.
pub fn update_atoms<R: Rng + ?Sized>(
    state: &mut DpState,
    data: &EvaluatedSeries,
    base: &AtomPrior,
    rw_var: f64,
    rng: &mut R,
) -> AtomMoves {
    let members = state.alloc.members(state.atoms.len());
    let mut moves = AtomMoves::default();
    for (atom, mem) in state.atoms.iter_mut().zip(&members) {
        if !mem.is_empty() {
            let stats = BetaSuffStats::from_members(mem, atom.omega.as_slice(), data);
            let (cal, acc) = mh_mu_nu_atom(atom.cal, &stats, base, rw_var, rng);
            atom.cal = cal;
            moves.mu_nu.push(acc);
        }
    }
    for (atom, mem) in state.atoms.iter_mut().zip(&members) {
        if !mem.is_empty() {
            let (omega, acc) = mh_omega_atom(atom, mem, data, base, rng);
            atom.omega = omega;
            moves.omega.push(acc);
        }
    }
    for (atom, mem) in state.atoms.iter_mut().zip(&members) {
        if mem.is_empty() {
            *atom = base.sample(data.m(), rng);
        }
    }
    moves
}

/// `d_t` drawn over `{k : u_t < w_k}` with probabilities proportional to
/// `b*_k(H_t) h_t`. Returns the number of observations whose admissible
/// kernels all underflowed; those keep a uniformly chosen admissible index.
pub fn update_allocations_dp<R: Rng + ?Sized>(
    state: &mut DpState,
    data: &EvaluatedSeries,
    rng: &mut R,
) -> Result<usize> {
    let lw = state.ln_weights();
    let kernels: Vec<BetaKernel> = state.atoms.iter().map(|a| a.cal.kernel()).collect();
    let mut admissible = Vec::new();
    let mut logs = Vec::new();
    let mut degenerate = 0;
    for t in 0..data.len() {
        let lu = state.ln_slices[t];
        admissible.clear();
        admissible.extend((0..lw.len()).filter(|&k| lu < lw[k]));
        let d = match admissible.len() {
            0 => return contract(format!("no admissible component for observation {t}")),
            1 => admissible[0],
            _ => {
                logs.clear();
                logs.extend(admissible.iter().map(|&k| {
                    let (hc, hp) = data.pooled(t, state.atoms[k].omega.as_slice());
                    if hp > 0.0 {
                        kernels[k].ln_pdf(hc) + hp.ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                }));
                match categorical_from_logs(&logs, rng) {
                    Some(i) => admissible[i],
                    None => {
                        degenerate += 1;
                        admissible[rng.random_range(0..admissible.len())]
                    }
                }
            }
        };
        state.alloc.0[t] = d;
    }
    Ok(degenerate)
}

/// Escobar–West update of the concentration under a `Gamma(c, d)` prior
/// given `k` occupied components and `t` observations.
pub fn update_psi<R: Rng + ?Sized>(psi: f64, k: usize, t: usize, c: f64, d: f64, rng: &mut R) -> f64 {
    let (t, k) = (t as f64, k as f64);
    let ln_eta = sampling::ln_beta_pair(psi + 1.0, t, rng).0;
    let rate = d - ln_eta;
    let odds = (c + k - 1.0) / (t * rate);
    let shape = if rng.random::<f64>() < odds / (1.0 + odds) {
        c + k
    } else {
        c + k - 1.0
    };
    sampling::gamma_rate(shape, rate, rng)
}

/// Stored draw of the random measure, truncated at `N*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpDraw {
    pub weights: Vec<f64>,
    pub atoms: Vec<Atom>,
    /// Occupancy of each retained component.
    pub counts: Vec<usize>,
    pub psi: f64,
}

impl DpDraw {
    pub fn occupied(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Weights rescaled to sum to one over the retained components.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let s: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpTrace {
    pub draws: Vec<DpDraw>,
    /// Number of occupied components at each stored draw.
    pub cluster_counts: Vec<usize>,
    pub acceptance: AcceptanceRates,
    pub numerical_warnings: usize,
}

impl DpTrace {
    /// Posterior pmf of the number of occupied components; index `i` holds
    /// `P(K = i + 1)`.
    pub fn cluster_count_pmf(&self) -> Vec<f64> {
        let max = self.cluster_counts.iter().copied().max().unwrap_or(0);
        let mut pmf = vec![0.0; max];
        for &k in &self.cluster_counts {
            pmf[k - 1] += 1.0;
        }
        let n = self.cluster_counts.len() as f64;
        pmf.iter_mut().for_each(|p| *p /= n);
        pmf
    }

    pub fn cluster_count_mode(&self) -> usize {
        let pmf = self.cluster_count_pmf();
        pmf.iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0
            + 1
    }

    pub fn psi_mean(&self) -> f64 {
        self.draws.iter().map(|d| d.psi).sum::<f64>() / self.draws.len() as f64
    }
}

/// Mutable chain of the slice sampler.
#[derive(Debug, Clone)]
pub struct SliceSampler {
    pub state: DpState,
    hyper: Hyperparams,
    base: AtomPrior,
    rw_var: f64,
    mu_nu: Counter,
    omega: Counter,
    warnings: usize,
}

impl SliceSampler {
    pub fn new(data: &EvaluatedSeries, hyper: Hyperparams, rw_var: f64) -> Self {
        Self {
            state: DpState::initial(data.len(), data.m(), hyper.psi.initial()),
            base: hyper.dp_base_measure(),
            hyper,
            rw_var,
            mu_nu: Counter::default(),
            omega: Counter::default(),
            warnings: 0,
        }
    }

    /// One sweep: atoms, then sticks, slices and extension, then allocations,
    /// then the concentration.
    pub fn sweep<R: Rng + ?Sized>(&mut self, data: &EvaluatedSeries, rng: &mut R) -> Result<()> {
        let moves = update_atoms(&mut self.state, data, &self.base, self.rw_var, rng);
        moves.mu_nu.iter().for_each(|&a| self.mu_nu.record(a));
        moves.omega.iter().for_each(|&a| self.omega.record(a));
        update_sticks_occupied(&mut self.state, rng);
        update_slices(&mut self.state, rng)?;
        extend_sticks(&mut self.state, &self.base, data.m(), rng)?;
        self.warnings += update_allocations_dp(&mut self.state, data, rng)?;
        if let PsiPrior::Gamma { c, d } = self.hyper.psi {
            self.state.psi = update_psi(self.state.psi, self.state.occupied(), data.len(), c, d, rng);
        }
        if cfg!(debug_assertions) {
            self.state.check_invariants()?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> DpDraw {
        let n = self.state.n_star();
        let mut counts = self.state.alloc.counts(self.state.sticks.len());
        counts.truncate(n);
        DpDraw {
            weights: self.state.weights()[..n].to_vec(),
            atoms: self.state.atoms[..n].to_vec(),
            counts,
            psi: self.state.psi,
        }
    }

    fn reset_counters(&mut self) {
        self.mu_nu = Counter::default();
        self.omega = Counter::default();
    }
}

pub fn run_slice_sampler(series: &ForecastSeries, hyper: &Hyperparams, config: &McmcConfig) -> Result<DpTrace> {
    if series.is_empty() {
        return contract("cannot fit an empty forecast series");
    }
    run_slice_sampler_evaluated(&EvaluatedSeries::from_series(series), hyper, config)
}

pub fn run_slice_sampler_evaluated(
    data: &EvaluatedSeries,
    hyper: &Hyperparams,
    config: &McmcConfig,
) -> Result<DpTrace> {
    config.validate()?;
    hyper.validate()?;
    if data.is_empty() {
        return contract("cannot fit an empty forecast series");
    }
    let mut rng = seeded_rng(config.seed);
    let mut chain = SliceSampler::new(data, *hyper, config.rw_scale_mu_nu);
    let mut draws = Vec::with_capacity(config.stored_draws());
    for iter in 0..config.iterations {
        if iter == config.burn_in {
            chain.reset_counters();
        }
        chain.sweep(data, &mut rng)?;
        if config.keeps(iter) {
            draws.push(chain.snapshot());
        }
    }
    let cluster_counts = draws.iter().map(DpDraw::occupied).collect();
    Ok(DpTrace {
        draws,
        cluster_counts,
        acceptance: AcceptanceRates {
            mu_nu: chain.mu_nu.rate(),
            omega: chain.omega.rate(),
            joint: None,
        },
        numerical_warnings: chain.warnings,
    })
}
