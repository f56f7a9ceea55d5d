//! Random variate helpers that stay well defined for tiny shape parameters.
//!
//! Gamma variates are generated on the log scale so that Dirichlet and beta
//! draws with shapes far below one (a `Gamma(0.05, 0.05)` base measure, a
//! `Beta(1, 0.1)` stick) never collapse to `0/0`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

pub type SamplerRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SamplerRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform on the open interval `(0, 1)`.
#[inline]
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `ln X` for `X ~ Gamma(shape, 1)`.
pub fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape >= 1.0 {
        Gamma::new(shape, 1.0)
            .expect("valid gamma shape")
            .sample(rng)
            .ln()
    } else {
        // Gamma(a) = Gamma(a + 1) * U^(1/a)
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("valid gamma shape").sample(rng);
        g.ln() + open_uniform(rng).ln() / shape
    }
}

/// Gamma variate in shape/rate form, floored at `1e-300`.
pub fn gamma_rate<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    (ln_gamma_variate(shape, rng) - rate.ln()).exp().max(1e-300)
}

/// `Beta(a, b)` through two log-gamma variates; may return exactly 0 or 1
/// when one shape is tiny.
pub fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let la = ln_gamma_variate(a, rng);
    let lb = ln_gamma_variate(b, rng);
    1.0 / (1.0 + (lb - la).exp())
}

/// `(ln X, ln(1 - X))` for `X ~ Beta(a, b)`, accurate when `X` is within
/// rounding of 0 or 1.
pub fn ln_beta_pair<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> (f64, f64) {
    let la = ln_gamma_variate(a, rng);
    let lb = ln_gamma_variate(b, rng);
    let ls = crate::special::log_add_exp(la, lb);
    (la - ls, lb - ls)
}

/// Dirichlet draw with the given concentration vector.
pub fn dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = alpha.iter().map(|&a| ln_gamma_variate(a, rng)).collect();
    normalize_logs(&logs)
}

pub fn symmetric_dirichlet<R: Rng + ?Sized>(conc: f64, dim: usize, rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = (0..dim).map(|_| ln_gamma_variate(conc, rng)).collect();
    normalize_logs(&logs)
}

fn normalize_logs(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut v: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= sum);
    v
}

/// Index drawn with probabilities proportional to `exp(log_weights)`.
/// Returns `None` when every weight is zero.
pub fn categorical_from_logs<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Option<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return None;
    }
    let total: f64 = log_weights.iter().map(|l| (l - max).exp()).sum();
    let mut target = rng.random::<f64>() * total;
    for (i, l) in log_weights.iter().enumerate() {
        let p = (l - max).exp();
        if target < p {
            return Some(i);
        }
        target -= p;
    }
    // rounding: fall back to the last index with positive weight
    log_weights.iter().rposition(|l| *l > f64::NEG_INFINITY)
}

/// Metropolis–Hastings accept/reject on log targets. Always consumes one
/// uniform so that the random stream does not depend on the branch taken.
pub fn mh_accept<R: Rng + ?Sized>(current: f64, proposed: f64, rng: &mut R) -> bool {
    let ln_u = open_uniform(rng).ln();
    if proposed.is_nan() || proposed == f64::NEG_INFINITY {
        return false;
    }
    if current == f64::NEG_INFINITY || current.is_nan() {
        return true;
    }
    ln_u < proposed - current
}
