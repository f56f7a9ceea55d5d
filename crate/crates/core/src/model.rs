//! Parameter containers, priors and density evaluation for beta-mixture
//! calibrated pools.
//!
//! A mixture atom pairs a calibration beta `(mu, nu)` with its own pooling
//! weights `omega`. A mixture of `K` atoms with weights `w` has cdf
//! `sum_k w_k B*_k(H(y | omega_k))` and density
//! `sum_k w_k b*_k(H(y | omega_k)) h(y | omega_k)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, domain, Result};
use crate::pool::{check_simplex, pool_cdf_from_values, pool_from_values, ComponentForecast, PoolWeights};
use crate::sampling;
use crate::special::{clamp_prob, ln_beta_fn, ln_gamma, BetaKernel, BetaMeanPrecision};

/// One mixture component: a calibration beta and the pool it transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub cal: BetaMeanPrecision,
    pub omega: PoolWeights,
}

impl Atom {
    pub fn new(cal: BetaMeanPrecision, omega: PoolWeights) -> Self {
        Self { cal, omega }
    }

    /// Identity calibration over the equally weighted pool.
    pub fn identity(m: usize) -> Self {
        Self {
            cal: BetaMeanPrecision::uniform(),
            omega: PoolWeights::uniform(m),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cal.validate()?;
        check_simplex(self.omega.as_slice(), "atom pool weights")
    }
}

/// Parameters of a finite beta mixture: weights `w` and `K` atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteParams {
    pub weights: Vec<f64>,
    pub atoms: Vec<Atom>,
}

impl FiniteParams {
    pub fn new(weights: Vec<f64>, atoms: Vec<Atom>) -> Result<Self> {
        let p = Self { weights, atoms };
        p.validate()?;
        Ok(p)
    }

    /// `K` identical identity-calibration atoms with equal weights.
    pub fn identity(k: usize, m: usize) -> Self {
        Self {
            weights: vec![1.0 / k as f64; k],
            atoms: vec![Atom::identity(m); k],
        }
    }

    pub fn k(&self) -> usize {
        self.atoms.len()
    }

    pub fn m(&self) -> usize {
        self.atoms.first().map_or(0, |a| a.omega.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.atoms.len() {
            return contract(format!(
                "{} mixture weights for {} atoms",
                self.weights.len(),
                self.atoms.len()
            ));
        }
        check_simplex(&self.weights, "mixture weights")?;
        let m = self.m();
        for a in &self.atoms {
            a.validate()?;
            if a.omega.len() != m {
                return contract("atoms disagree on the number of pooled components");
            }
        }
        Ok(())
    }
}

/// Prior on the DP concentration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsiPrior {
    Fixed { psi: f64 },
    /// `Gamma(shape = c, rate = d)`.
    Gamma { c: f64, d: f64 },
}

impl PsiPrior {
    pub fn initial(&self) -> f64 {
        match *self {
            PsiPrior::Fixed { psi } => psi,
            PsiPrior::Gamma { c, d } => c / d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub xi_w: f64,
    pub xi_mu: f64,
    pub xi_nu: f64,
    pub xi_omega: f64,
    pub psi: PsiPrior,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            xi_w: 1.0,
            xi_mu: 2.0,
            xi_nu: 0.1,
            xi_omega: 1.0,
            psi: PsiPrior::Gamma { c: 2.0, d: 2.0 },
        }
    }
}

impl Hyperparams {
    pub fn with_fixed_psi(mut self, psi: f64) -> Self {
        self.psi = PsiPrior::Fixed { psi };
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.xi_w, self.xi_mu, self.xi_nu, self.xi_omega];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return domain(format!("hyperparameters must be positive: {self:?}"));
        }
        match self.psi {
            PsiPrior::Fixed { psi } if !(psi.is_finite() && psi > 0.0) => {
                domain(format!("fixed concentration must be positive, got {psi}"))
            }
            PsiPrior::Gamma { c, d } if !(c > 0.0 && d > 0.0 && c.is_finite() && d.is_finite()) => {
                domain(format!("concentration prior needs c, d > 0, got ({c}, {d})"))
            }
            _ => Ok(()),
        }
    }

    /// Atom prior of the finite mixture: `Be(xi_mu, xi_mu) x Ga(xi_nu, xi_nu)
    /// x Dir(xi_omega)`.
    pub fn finite_atom_prior(&self) -> AtomPrior {
        AtomPrior {
            mu_shape: self.xi_mu,
            nu_shape: self.xi_nu,
            nu_rate: self.xi_nu,
            omega_conc: self.xi_omega,
        }
    }

    /// Base measure of the Dirichlet process: `Be(xi_mu, xi_mu) x
    /// Ga(xi_nu / 2, xi_nu / 2) x Dir(xi_omega)`.
    pub fn dp_base_measure(&self) -> AtomPrior {
        AtomPrior {
            mu_shape: self.xi_mu,
            nu_shape: 0.5 * self.xi_nu,
            nu_rate: 0.5 * self.xi_nu,
            omega_conc: self.xi_omega,
        }
    }
}

/// Independent prior on one atom: symmetric beta on `mu`, shape/rate gamma
/// on `nu`, symmetric Dirichlet on `omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomPrior {
    pub mu_shape: f64,
    pub nu_shape: f64,
    pub nu_rate: f64,
    pub omega_conc: f64,
}

impl AtomPrior {
    pub fn ln_density_mu(&self, mu: f64) -> f64 {
        if !(mu > 0.0 && mu < 1.0) {
            return f64::NEG_INFINITY;
        }
        let a = self.mu_shape;
        (a - 1.0) * (mu.ln() + (-mu).ln_1p()) - ln_beta_fn(a, a)
    }

    pub fn ln_density_nu(&self, nu: f64) -> f64 {
        ln_gamma_density(nu, self.nu_shape, self.nu_rate)
    }

    pub fn ln_density_omega(&self, omega: &[f64]) -> f64 {
        ln_symmetric_dirichlet_density(omega, self.omega_conc)
    }

    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Atom {
        let mu = sampling::beta(self.mu_shape, self.mu_shape, rng).clamp(1e-15, 1.0 - 1e-15);
        let nu = sampling::gamma_rate(self.nu_shape, self.nu_rate, rng);
        let omega = sampling::symmetric_dirichlet(self.omega_conc, m, rng);
        Atom {
            cal: BetaMeanPrecision { mu, nu },
            omega: PoolWeights::from_normalized(omega),
        }
    }
}

/// Log density of `Gamma(shape, rate)` at `x`; `-inf` off the support.
pub fn ln_gamma_density(x: f64, shape: f64, rate: f64) -> f64 {
    if !(x > 0.0 && x.is_finite()) {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Log density of the symmetric Dirichlet on the simplex; a point with a
/// zero coordinate counts as boundary and gets `-inf`.
pub fn ln_symmetric_dirichlet_density(p: &[f64], conc: f64) -> f64 {
    let n = p.len();
    if n <= 1 {
        return 0.0;
    }
    if p.iter().any(|&v| v <= 0.0) {
        return f64::NEG_INFINITY;
    }
    ln_gamma(conc * n as f64) - n as f64 * ln_gamma(conc)
        + (conc - 1.0) * p.iter().map(|v| v.ln()).sum::<f64>()
}

/// Allocation of each observation to a mixture component (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Allocation(pub Vec<usize>);

impl Allocation {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Occupancy `T_k` for `k < k_max`.
    pub fn counts(&self, k_max: usize) -> Vec<usize> {
        let mut c = vec![0; k_max];
        for &d in &self.0 {
            c[d] += 1;
        }
        c
    }

    /// Observation indices allocated to each of the first `k_max` components.
    pub fn members(&self, k_max: usize) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); k_max];
        for (t, &d) in self.0.iter().enumerate() {
            m[d].push(t);
        }
        m
    }
}

/// A mixture prepared for repeated evaluation: log-beta normalizers cached.
#[derive(Debug, Clone)]
pub struct PreparedMixture {
    weights: Vec<f64>,
    kernels: Vec<BetaKernel>,
    omegas: Vec<Vec<f64>>,
}

impl PreparedMixture {
    pub fn new(params: &FiniteParams) -> Self {
        Self::from_parts(&params.weights, &params.atoms)
    }

    pub fn from_parts(weights: &[f64], atoms: &[Atom]) -> Self {
        Self {
            weights: weights.to_vec(),
            kernels: atoms.iter().map(|a| a.cal.kernel()).collect(),
            omegas: atoms.iter().map(|a| a.omega.as_slice().to_vec()).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mixture cdf given per-component cdf values `F_m(y)`.
    pub fn cdf_from_values(&self, cdfs: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((w, k), om) in self.weights.iter().zip(&self.kernels).zip(&self.omegas) {
            if *w == 0.0 {
                continue;
            }
            let h = pool_cdf_from_values(om, cdfs);
            acc += w * k.cdf(h.clamp(0.0, 1.0));
        }
        acc.clamp(0.0, 1.0)
    }

    /// Mixture density given per-component cdf and pdf values.
    pub fn pdf_from_values(&self, cdfs: &[f64], pdfs: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((w, k), om) in self.weights.iter().zip(&self.kernels).zip(&self.omegas) {
            if *w == 0.0 {
                continue;
            }
            let (hc, hp) = pool_from_values(om, cdfs, pdfs);
            if hp > 0.0 {
                acc += w * (k.ln_pdf(hc) + hp.ln()).exp();
            }
        }
        acc
    }

    /// Generalized weights `sum_k omega_km w_k b*_k(H(y | omega_k))`.
    pub fn generalized_weights_from_values(&self, cdfs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; cdfs.len()];
        for ((w, k), om) in self.weights.iter().zip(&self.kernels).zip(&self.omegas) {
            let h = pool_cdf_from_values(om, cdfs);
            let b = k.ln_pdf(h).exp();
            for (o, a) in out.iter_mut().zip(om) {
                *o += a * w * b;
            }
        }
        out
    }
}

fn component_values(y: f64, tuple: &[ComponentForecast]) -> (Vec<f64>, Vec<f64>) {
    (
        tuple.iter().map(|c| c.cdf(y)).collect(),
        tuple.iter().map(|c| c.pdf(y)).collect(),
    )
}

fn check_params(theta: &FiniteParams, tuple: &[ComponentForecast]) -> Result<()> {
    theta.validate()?;
    if theta.m() != tuple.len() {
        return contract(format!(
            "parameters pool {} components but the tuple has {}",
            theta.m(),
            tuple.len()
        ));
    }
    tuple.iter().try_for_each(ComponentForecast::validate)
}

/// `b*_{mu,nu}(H(y | omega)) h(y | omega)`, with `H` clamped away from 0 and 1.
pub fn kernel_pdf(y: f64, atom: &Atom, tuple: &[ComponentForecast]) -> Result<f64> {
    atom.validate()?;
    if atom.omega.len() != tuple.len() {
        return contract("atom and tuple disagree on the number of components");
    }
    tuple.iter().try_for_each(ComponentForecast::validate)?;
    let (c, p) = component_values(y, tuple);
    let (hc, hp) = pool_from_values(atom.omega.as_slice(), &c, &p);
    if hp <= 0.0 {
        return Ok(0.0);
    }
    Ok((atom.cal.kernel().ln_pdf(clamp_prob(hc)) + hp.ln()).exp())
}

pub fn bmk_cdf(y: f64, theta: &FiniteParams, tuple: &[ComponentForecast]) -> Result<f64> {
    check_params(theta, tuple)?;
    let cdfs: Vec<f64> = tuple.iter().map(|c| c.cdf(y)).collect();
    Ok(PreparedMixture::new(theta).cdf_from_values(&cdfs))
}

pub fn bmk_pdf(y: f64, theta: &FiniteParams, tuple: &[ComponentForecast]) -> Result<f64> {
    check_params(theta, tuple)?;
    let (c, p) = component_values(y, tuple);
    Ok(PreparedMixture::new(theta).pdf_from_values(&c, &p))
}

/// Weight functions `w~_m(y)` with `bmk_pdf(y) = sum_m w~_m(y) f_m(y)`.
pub fn generalized_weights(
    y: f64,
    theta: &FiniteParams,
    tuple: &[ComponentForecast],
) -> Result<Vec<f64>> {
    check_params(theta, tuple)?;
    let cdfs: Vec<f64> = tuple.iter().map(|c| c.cdf(y)).collect();
    Ok(PreparedMixture::new(theta).generalized_weights_from_values(&cdfs))
}

/// Log prior density of a finite-mixture parameter.
pub fn prior_log_density(theta: &FiniteParams, hyper: &Hyperparams) -> Result<f64> {
    hyper.validate()?;
    if theta.weights.len() != theta.atoms.len() {
        return contract("weights and atoms differ in length");
    }
    let prior = hyper.finite_atom_prior();
    let mut total = ln_symmetric_dirichlet_density(&theta.weights, hyper.xi_w);
    for a in &theta.atoms {
        total += prior.ln_density_mu(a.cal.mu)
            + prior.ln_density_nu(a.cal.nu)
            + prior.ln_density_omega(a.omega.as_slice());
    }
    Ok(total)
}

/// Independent prior draw of `(w, mu, nu, omega)`.
pub fn prior_sample<R: Rng + ?Sized>(hyper: &Hyperparams, k: usize, m: usize, rng: &mut R) -> FiniteParams {
    let weights = sampling::symmetric_dirichlet(hyper.xi_w, k, rng);
    let prior = hyper.finite_atom_prior();
    let atoms = (0..k).map(|_| prior.sample(m, rng)).collect();
    FiniteParams { weights, atoms }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{pool_cdf, pool_pdf};
    use crate::sampling::seeded_rng;

    fn tuple() -> Vec<ComponentForecast> {
        vec![ComponentForecast::normal(-1.0, 1.0), ComponentForecast::normal(2.0, 1.0)]
    }

    fn atom(mu: f64, nu: f64, omega: &[f64]) -> Atom {
        Atom::new(BetaMeanPrecision::new(mu, nu).unwrap(), PoolWeights::new(omega.to_vec()).unwrap())
    }

    #[test]
    fn kernel_pdf_examples() {
        let tp = tuple();
        let a = atom(0.5, 2.0, &[0.3, 0.7]);
        for y in [-2.0, 0.0, 1.5] {
            let want = pool_pdf(y, &a.omega, &tp).unwrap();
            assert!((kernel_pdf(y, &a, &tp).unwrap() - want).abs() < 1e-14);
        }
        let a = atom(0.5, 2.0, &[1.0, 0.0]);
        assert!((kernel_pdf(0.4, &a, &tp).unwrap() - tp[0].pdf(0.4)).abs() < 1e-15);
        // b*_{0.4,5}(H(0)) h(0) from the composed oracles
        let a = atom(0.4, 5.0, &[0.3, 0.7]);
        assert!((kernel_pdf(0.0, &a, &tp).unwrap() - 0.190_278_613_435_395_07).abs() < 1e-13);
    }

    #[test]
    fn bmk_cdf_examples() {
        let tp = tuple();
        let omega = PoolWeights::new(vec![0.3, 0.7]).unwrap();
        let k1 = FiniteParams::new(vec![1.0], vec![Atom::new(BetaMeanPrecision::uniform(), omega.clone())]).unwrap();
        for y in [-3.0, 0.2, 2.2] {
            let a = bmk_cdf(y, &k1, &tp).unwrap();
            let b = pool_cdf(y, &omega, &tp).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(bmk_cdf(60.0, &k1, &tp).unwrap(), 1.0);
        let a = atom(0.4, 5.0, &[0.3, 0.7]);
        let one = FiniteParams::new(vec![1.0], vec![a.clone()]).unwrap();
        let two = FiniteParams::new(vec![0.5, 0.5], vec![a.clone(), a]).unwrap();
        for y in [-1.0, 0.0, 3.0] {
            let v1 = bmk_cdf(y, &one, &tp).unwrap();
            assert!((v1 - bmk_cdf(y, &two, &tp).unwrap()).abs() < 1e-15);
            assert!((bmk_pdf(y, &one, &tp).unwrap() - bmk_pdf(y, &two, &tp).unwrap()).abs() < 1e-15);
        }
        assert!((bmk_cdf(0.0, &one, &tp).unwrap() - 0.292_995_600_030_563_77).abs() < 1e-13);
    }

    #[test]
    fn bmk_pdf_is_derivative_of_cdf() {
        let tp = tuple();
        let theta = FiniteParams::new(
            vec![0.35, 0.65],
            vec![atom(0.4, 5.0, &[0.3, 0.7]), atom(0.7, 12.0, &[0.8, 0.2])],
        )
        .unwrap();
        let h = 1e-6;
        for y in [-2.0, -0.5, 0.0, 0.7, 2.5] {
            let fd = (bmk_cdf(y + h, &theta, &tp).unwrap() - bmk_cdf(y - h, &theta, &tp).unwrap()) / (2.0 * h);
            let pdf = bmk_pdf(y, &theta, &tp).unwrap();
            assert!((fd - pdf).abs() <= 1e-4 * pdf, "y={y}: {fd} vs {pdf}");
        }
    }

    #[test]
    fn generalized_weights_examples() {
        let tp = tuple();
        let one = FiniteParams::new(vec![1.0], vec![atom(0.5, 2.0, &[0.3, 0.7])]).unwrap();
        let g = generalized_weights(1.3, &one, &tp).unwrap();
        assert!((g[0] - 0.3).abs() < 1e-12 && (g[1] - 0.7).abs() < 1e-12);
        let one = FiniteParams::new(vec![1.0], vec![atom(0.4, 5.0, &[0.3, 0.7])]).unwrap();
        let g = generalized_weights(0.0, &one, &tp).unwrap();
        assert!((g[0] - 0.517_132_209_001_241_4).abs() < 1e-12);
        assert!((g[1] - 1.206_641_821_002_896_5).abs() < 1e-12);
        let theta = FiniteParams::new(
            vec![0.35, 0.65],
            vec![atom(0.4, 5.0, &[0.3, 0.7]), atom(0.7, 12.0, &[0.8, 0.2])],
        )
        .unwrap();
        for i in 0..=100 {
            let y = -4.0 + 0.09 * i as f64;
            let g = generalized_weights(y, &theta, &tp).unwrap();
            let rebuilt: f64 = g.iter().zip(&tp).map(|(w, c)| w * c.pdf(y)).sum();
            assert!((rebuilt - bmk_pdf(y, &theta, &tp).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn prior_log_density_examples() {
        let flat = Hyperparams { xi_w: 1.0, xi_mu: 1.0, xi_nu: 1.0, xi_omega: 1.0, ..Default::default() };
        let a = FiniteParams::new(vec![1.0], vec![atom(0.2, 3.0, &[0.1, 0.9])]).unwrap();
        let b = FiniteParams::new(vec![1.0], vec![atom(0.9, 3.0, &[0.6, 0.4])]).unwrap();
        let da = prior_log_density(&a, &flat).unwrap();
        let db = prior_log_density(&b, &flat).unwrap();
        assert!((da - db).abs() < 1e-14);

        let h = Hyperparams::default();
        let prior = h.finite_atom_prior();
        assert!((prior.ln_density_nu(1.0) - (-2.582_971_161_033_610_5)).abs() < 1e-12);

        let hm = Hyperparams { xi_mu: 2.0, ..Default::default() };
        let p = hm.finite_atom_prior();
        for mu in [0.1, 0.3, 0.49, 0.51, 0.8] {
            assert!(p.ln_density_mu(0.5) > p.ln_density_mu(mu));
        }
        let edge = FiniteParams { weights: vec![1.0], atoms: vec![Atom { cal: BetaMeanPrecision { mu: 0.0, nu: 1.0 }, omega: PoolWeights::uniform(2) }] };
        assert_eq!(prior_log_density(&edge, &h).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn prior_sample_moments() {
        let mut rng = seeded_rng(11);
        let h = Hyperparams::default();
        let n = 100_000;
        let (mut s_mu, mut s_nu, mut s_nu2) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let th = prior_sample(&h, 1, 2, &mut rng);
            th.validate().unwrap();
            s_mu += th.atoms[0].cal.mu;
            s_nu += th.atoms[0].cal.nu;
            s_nu2 += th.atoms[0].cal.nu.powi(2);
        }
        let n = n as f64;
        // Beta(2,2): var 1/20
        assert!((s_mu / n - 0.5).abs() < 3.0 * (0.05 / n).sqrt());
        let var_nu = s_nu2 / n - (s_nu / n).powi(2);
        assert!((s_nu / n - 1.0).abs() < 3.0 * (var_nu / n).sqrt());

        let tight = Hyperparams { xi_w: 1e4, ..Default::default() };
        let draws: Vec<f64> = (0..10_000).map(|_| prior_sample(&tight, 3, 2, &mut rng).weights[0]).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!(var < 1e-4, "{var}");
    }

    #[test]
    fn identity_calibration_reduces_to_average_of_pools() {
        let tp = tuple();
        let theta = FiniteParams::new(
            vec![0.25, 0.75],
            vec![atom(0.5, 2.0, &[0.3, 0.7]), atom(0.5, 2.0, &[0.9, 0.1])],
        )
        .unwrap();
        for y in [-1.0, 0.5, 2.0] {
            let want = 0.25 * pool_cdf(y, &theta.atoms[0].omega, &tp).unwrap()
                + 0.75 * pool_cdf(y, &theta.atoms[1].omega, &tp).unwrap();
            assert!((bmk_cdf(y, &theta, &tp).unwrap() - want).abs() < 1e-14);
        }
    }
}
