use betamix::io::{read_forecast_series, write_forecast_series};
use betamix::model::{bmk_cdf, bmk_pdf, Atom, FiniteParams};
use betamix::pool::{pool_cdf, ComponentForecast, ForecastSeries, ForecastStep, PoolWeights};
use betamix::predict::{crps, Predictive};
use betamix::special::{beta_cdf, beta_inv_cdf, std_normal_cdf, std_normal_pdf, BetaMeanPrecision};
use proptest::prelude::*;

fn weights(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, m).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn tuple(m: usize) -> impl Strategy<Value = Vec<ComponentForecast>> {
    prop::collection::vec((-5.0f64..5.0, 0.2f64..3.0), m)
        .prop_map(|v| v.into_iter().map(|(l, s)| ComponentForecast::normal(l, s)).collect())
}

fn mixture() -> impl Strategy<Value = (FiniteParams, Vec<ComponentForecast>)> {
    (1usize..4, 1usize..4).prop_flat_map(|(k, m)| {
        let atoms = prop::collection::vec((0.05f64..0.95, 0.3f64..30.0, weights(m)), k);
        (weights(k), atoms, tuple(m)).prop_map(|(w, atoms, tup)| {
            let atoms = atoms
                .into_iter()
                .map(|(mu, nu, om)| Atom::new(BetaMeanPrecision::new(mu, nu).unwrap(), PoolWeights::new(om).unwrap()))
                .collect();
            (FiniteParams::new(w, atoms).unwrap(), tup)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn beta_cdf_monotone_and_bounded(mu in 0.02f64..0.98, nu in 0.1f64..100.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let p = BetaMeanPrecision::new(mu, nu).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (fl, fh) = (beta_cdf(lo, p).unwrap(), beta_cdf(hi, p).unwrap());
        prop_assert!((0.0..=1.0).contains(&fl) && (0.0..=1.0).contains(&fh));
        prop_assert!(fl <= fh + 1e-15);
    }

    #[test]
    fn beta_inverse_roundtrip(mu in 0.05f64..0.95, nu in 0.5f64..50.0, q in 0.001f64..0.999) {
        let p = BetaMeanPrecision::new(mu, nu).unwrap();
        let x = beta_inv_cdf(q, p).unwrap();
        prop_assert!((beta_cdf(x, p).unwrap() - q).abs() < 1e-9);
    }

    #[test]
    fn mixture_cdf_monotone_with_positive_density((theta, tup) in mixture(), ys in prop::collection::vec(-8.0f64..8.0, 2..20)) {
        let mut ys = ys;
        ys.sort_by(f64::total_cmp);
        let mut prev = 0.0;
        for y in ys {
            let f = bmk_cdf(y, &theta, &tup).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert!(f >= prev - 1e-14);
            prop_assert!(bmk_pdf(y, &theta, &tup).unwrap() >= 0.0);
            prev = f;
        }
    }

    #[test]
    fn predictive_from_draws_is_average((a, tup) in mixture(), y in -6.0f64..6.0) {
        let b = FiniteParams::identity(a.k(), a.m());
        let pred = Predictive::new(&betamix::predict::Posterior::Finite(vec![a.clone(), b.clone()])).unwrap();
        let want = 0.5 * (bmk_cdf(y, &a, &tup).unwrap() + bmk_cdf(y, &b, &tup).unwrap());
        prop_assert!((pred.cdf(y, &tup) - want).abs() < 1e-12);
        let pooled = pool_cdf(y, &b.atoms[0].omega, &tup).unwrap();
        prop_assert!((bmk_cdf(y, &b, &tup).unwrap() - pooled).abs() < 1e-12);
    }

    #[test]
    fn crps_matches_normal_closed_form(mu in -5.0f64..5.0, sigma in 0.1f64..4.0, z in -5.0f64..5.0) {
        let y = mu + sigma * z;
        let c = ComponentForecast::normal(mu, sigma);
        let got = crps(&|x| c.cdf(x), mu - 12.0 * sigma, mu + 12.0 * sigma, y).unwrap();
        let want = sigma * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z) - 1.0 / std::f64::consts::PI.sqrt());
        prop_assert!((got - want).abs() < 1e-6);
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn forecast_series_roundtrips_bitwise(ys in prop::collection::vec(-1e6f64..1e6, 1..10), tup in tuple(2)) {
        let steps: Vec<ForecastStep> = ys.iter().map(|&y| ForecastStep { components: tup.clone(), y }).collect();
        let series = ForecastSeries::new(steps).unwrap();
        let mut buf = Vec::new();
        write_forecast_series(&series, &mut buf).unwrap();
        let back = read_forecast_series(buf.as_slice()).unwrap();
        prop_assert_eq!(back, series);
    }
}
