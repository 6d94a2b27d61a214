use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use resttrap_core::observables::{fit_gamma_mu, TimeSeries, ValueKind};

const TRUTH: (f64, f64, f64) = (0.31, -20.0, 0.2);

fn synthetic(noise: f64, seed: u64) -> (TimeSeries, TimeSeries) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise).unwrap();
    let t: Vec<f64> = (0..30).map(|i| 20.0 + 16.0 * i as f64).collect();
    let mu: Vec<f64> = (0..30).map(|i| 110.0 - 40.0 * i as f64 / 29.0).collect();
    let g: Vec<f64> = mu
        .iter()
        .map(|m| (TRUTH.0 + (TRUTH.1 + TRUTH.2 * m).exp()) * (1.0 + normal.sample(&mut rng)))
        .collect();
    (
        TimeSeries::new(t.clone(), g, ValueKind::DecayRate).unwrap(),
        TimeSeries::new(t, mu, ValueKind::ChemicalPotential).unwrap(),
    )
}

#[test]
fn beta_recovered_under_five_percent_noise() {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (g, mu) = synthetic(0.05, seed);
        let fit = fit_gamma_mu(&g, &mu, TRUTH.0, 200.0).unwrap();
        let err = (fit.beta / TRUTH.2 - 1.0).abs();
        worst = worst.max(err);
        assert!(fit.beta_stderr().is_finite() && fit.beta_stderr() > 0.0);
    }
    assert!(worst < 0.1, "worst relative beta error {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fit_is_invariant_under_reordering(seed in 0u64..1000) {
        let (g, mu) = synthetic(0.05, seed);
        let base = fit_gamma_mu(&g, &mu, TRUTH.0, 200.0).unwrap();
        // Present the samples in a shuffled order under fresh increasing stamps.
        let mut idx: Vec<usize> = (0..g.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
        let t: Vec<f64> = (0..idx.len()).map(|i| i as f64).collect();
        let g2 = TimeSeries::new(t.clone(), idx.iter().map(|&i| g.values()[i]).collect(), ValueKind::DecayRate).unwrap();
        let m2 = TimeSeries::new(t, idx.iter().map(|&i| mu.values()[i]).collect(), ValueKind::ChemicalPotential).unwrap();
        let fit = fit_gamma_mu(&g2, &m2, TRUTH.0, 200.0).unwrap();
        prop_assert!((fit.beta - base.beta).abs() < 1e-9 * base.beta.abs(), "{:?} {:?}", (fit.beta, fit.iterations, fit.residual_norm), (base.beta, base.iterations, base.residual_norm));
        prop_assert!((fit.residual_norm - base.residual_norm).abs() < 1e-9 * (1.0 + base.residual_norm));
    }
}
