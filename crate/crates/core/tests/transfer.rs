use approx::assert_relative_eq;
use proptest::prelude::*;
use resttrap_core::transfer::{
    beta_slope, converged_log_transmission, refinement_delta, transmission, wkb_log_transmission, BarrierProfile1D, WidthConvention,
};
use resttrap_core::units::constants::{HBAR, NANOKELVIN};
use resttrap_core::{RestTrap, Species, TrapConfig};

const UM: f64 = 1e-6;

fn rb() -> Species {
    Species::rubidium87()
}

fn kappa(v0: f64, e: f64) -> f64 {
    (2.0 * rb().mass * (v0 - e) * NANOKELVIN).sqrt() / HBAR
}

fn square_t(v0: f64, a: f64, e: f64) -> f64 {
    let s = (kappa(v0, e) * a).sinh();
    1.0 / (1.0 + v0 * v0 * s * s / (4.0 * e * (v0 - e)))
}

/// d ln T / dE of the closed form, nK⁻¹.
fn square_dlnt_de(v0: f64, a: f64, e: f64) -> f64 {
    let k = kappa(v0, e);
    let s = (k * a).sinh();
    let x = v0 * v0 * s * s / (4.0 * e * (v0 - e));
    let dk_de = -rb().mass * NANOKELVIN / (HBAR * HBAR * k);
    let dlnx = 2.0 * a * dk_de / (k * a).tanh() - 1.0 / e + 1.0 / (v0 - e);
    -x * dlnx / (1.0 + x)
}

#[test]
fn square_barrier_fifty_energies() {
    let (v0, a) = (120.0, 0.8 * UM);
    let p = BarrierProfile1D::square(v0, a, 1, 3).unwrap();
    for i in 0..50 {
        let e = 1.0 + (v0 - 2.0) * i as f64 / 49.0;
        let tr = transmission(&p, e, &rb()).unwrap();
        assert_relative_eq!(tr.t, square_t(v0, a, e), max_relative = 1e-12);
        assert!((tr.t + tr.r - 1.0).abs() < 1e-10);
    }
}

#[test]
fn split_square_barrier_is_still_exact() {
    let (v0, a) = (80.0, 1.2 * UM);
    let p = BarrierProfile1D::square(v0, a, 64, 8).unwrap();
    for e in [3.0, 40.0, 79.0] {
        let t = transmission(&p, e, &rb()).unwrap().t;
        assert_relative_eq!(t, square_t(v0, a, e), max_relative = 1e-10);
    }
}

#[test]
fn convergence_order_on_gaussian() {
    let h_ref = 400;
    let mut d = Vec::new();
    for level in 0..3 {
        let p = BarrierProfile1D::gaussian(200.0, 1.3 * UM, WidthConvention::Waist, h_ref << level).unwrap();
        d.push(transmission(&p, 100.0, &rb()).unwrap().ln_t);
    }
    let order = ((d[0] - d[1]) / (d[1] - d[2])).abs().log2();
    assert!(order >= 1.9, "observed order {order}");
}

#[test]
fn refinement_check_at_production_resolution() {
    let w = 2.0 * UM;
    let v = |y: f64| 92.0 * (-2.0 * y * y / (w * w)).exp();
    for e in [60.0, 75.0, 90.0] {
        let (ln_t, n) = converged_log_transmission(v, -5.0 * w, 5.0 * w, 2000, e, &rb()).unwrap();
        let finer = transmission(&BarrierProfile1D::from_fn(v, -5.0 * w, 5.0 * w, 2 * n).unwrap(), e, &rb()).unwrap();
        assert!((finer.ln_t - ln_t).abs() < 1e-6);
    }
    // Linear resampling of a fine profile also stays close.
    let p = BarrierProfile1D::gaussian(92.0, w, WidthConvention::Waist, 4000).unwrap();
    assert!(refinement_delta(&p, 75.0, &rb()).unwrap() < 1e-4);
}

#[test]
fn wkb_agrees_with_matrix_in_deep_tunneling() {
    let p = BarrierProfile1D::gaussian(200.0, 1.3 * UM, WidthConvention::Waist, 4000).unwrap();
    let mut checked = 0;
    for i in 0..40 {
        let e = 5.0 + 190.0 * i as f64 / 39.0;
        let tm = transmission(&p, e, &rb()).unwrap().ln_t;
        if tm < -5.0 {
            let w = wkb_log_transmission(&p, e, &rb()).unwrap();
            assert!(((w - tm) / tm).abs() < 0.1, "E={e}: wkb {w} tm {tm}");
            checked += 1;
        }
    }
    assert!(checked > 20);
}

#[test]
fn square_beta_matches_derivative() {
    let (v0, a) = (100.0, 1.0 * UM);
    let p = BarrierProfile1D::square(v0, a, 1, 2).unwrap();
    for e in [30.0, 60.0, 85.0] {
        let b = beta_slope(&p, e - 1.0, e + 1.0, 9, &rb()).unwrap();
        assert_relative_eq!(b, square_dlnt_de(v0, a, e), max_relative = 1e-2);
    }
}

#[test]
fn saddle_profile_beta_in_band() {
    let s = rb();
    let mut betas = Vec::new();
    for u0 in [240.0, 290.0, 330.0] {
        let geo = RestTrap::new(TrapConfig::standard(u0), &s).unwrap().find_geometry().unwrap();
        let p = BarrierProfile1D::saddle_point(&geo, WidthConvention::Waist, 3000).unwrap();
        let (_, peak) = p.peak();
        let b = beta_slope(&p, peak - 20.0, peak, 11, &s).unwrap();
        assert!((0.15..=0.3).contains(&b), "U0={u0}: beta {b}");
        betas.push(b);
    }
    assert!(betas[0] > betas[1] && betas[1] > betas[2]);
}

#[test]
fn thicker_barrier_gives_larger_beta() {
    let s = rb();
    let thin = BarrierProfile1D::gaussian(90.0, 2.0 * UM, WidthConvention::Waist, 2000).unwrap();
    let thick = BarrierProfile1D::gaussian(90.0, 4.0 * UM, WidthConvention::Waist, 4000).unwrap();
    let a = beta_slope(&thin, 70.0, 89.0, 7, &s).unwrap();
    let b = beta_slope(&thick, 70.0, 89.0, 7, &s).unwrap();
    assert!(b > a);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unitarity(e in 0.5f64..300.0, h in 20.0f64..250.0, w in 0.5f64..3.0) {
        let p = BarrierProfile1D::gaussian(h, w * UM, WidthConvention::Waist, 600).unwrap();
        let tr = transmission(&p, e, &rb()).unwrap();
        prop_assert!((0.0..=1.0).contains(&tr.t));
        // R underflows to exactly 1 in deep tunneling, T + R tracks the mantissa.
        prop_assert!((tr.t + tr.r - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ln_t_increases_below_peak(e in 1.0f64..120.0, de in 0.1f64..5.0, h in 130.0f64..250.0) {
        let p = BarrierProfile1D::gaussian(h, 1.5 * UM, WidthConvention::Waist, 800).unwrap();
        let a = transmission(&p, e, &rb()).unwrap().ln_t;
        let b = transmission(&p, e + de, &rb()).unwrap().ln_t;
        prop_assert!(b > a);
    }

    #[test]
    fn beta_energy_scaling(lambda in 0.3f64..4.0) {
        let s = rb();
        let p = BarrierProfile1D::gaussian(90.0, 2.0 * UM, WidthConvention::Waist, 1000).unwrap();
        let b = beta_slope(&p, 70.0, 88.0, 5, &s).unwrap();
        let q = p.scaled(lambda, 1.0 / lambda.sqrt());
        let bq = beta_slope(&q, 70.0 * lambda, 88.0 * lambda, 5, &s).unwrap();
        prop_assert!((bq * lambda / b - 1.0).abs() < 1e-9);
    }
}
