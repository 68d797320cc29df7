//! Limiting density identities and Monte-Carlo spectra.

mod common;

use std::f64::consts::PI;

use bnscope::rmt::{
    condition_report, density, ks_distance, marchenko_pastur_density, phi_of_x, sample_product_spectrum, x_of_phi,
    FussCatalanDensity, PHI_TOL,
};
use common::mass_in_x;
use proptest::prelude::*;

#[test]
fn parametrization_strictly_decreasing_for_m_up_to_ten() {
    for m in 1..=10 {
        let top = PI / (m + 1) as f64;
        let grid: Vec<f64> = (1..2000).map(|i| top * i as f64 / 2000.0).collect();
        let xs: Vec<f64> = grid.iter().map(|&p| x_of_phi(m, p).unwrap()).collect();
        assert!(xs.windows(2).all(|w| w[1] < w[0]), "M={m}");
    }
}

#[test]
fn m1_density_is_marchenko_pastur() {
    for i in 0..1000 {
        let x = 0.01 + 3.98 * i as f64 / 999.0;
        let (got, want) = (density(1, x).unwrap(), marchenko_pastur_density(x));
        assert!((got - want).abs() <= 1e-10 * want, "x={x}: {got} vs {want}");
    }
}

#[test]
fn density_integrates_to_one() {
    for m in 1..=5 {
        let mass = mass_in_x(m);
        assert!((mass - 1.0).abs() < 1e-6, "M={m}: {mass}");
        assert!((FussCatalanDensity::new(m).unwrap().total_mass() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn support_edges() {
    assert_eq!(FussCatalanDensity::new(1).unwrap().support_upper(), 4.0);
    assert_eq!(FussCatalanDensity::new(2).unwrap().support_upper(), 27.0 / 4.0);
    assert!(density(2, 27.0 / 4.0).is_err());
    assert!(density(2, 27.0 / 4.0 - 1e-9).unwrap() >= 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn inverse_round_trip(m in 1usize..=10, u in 0.001f64..0.999) {
        let phi = u * PI / (m + 1) as f64;
        let x = x_of_phi(m, phi).unwrap();
        let back = phi_of_x(m, x, PHI_TOL).unwrap();
        // Near φ = 0 the map flattens, so compare through x where φ is ill-conditioned.
        prop_assert!((back - phi).abs() < 1e-10 || (x_of_phi(m, back).unwrap() - x).abs() <= PHI_TOL * x.max(1.0));
    }

    #[test]
    fn density_is_non_negative(m in 1usize..=8, u in 0.0001f64..0.9999) {
        let x = u * FussCatalanDensity::new(m).unwrap().support_upper();
        prop_assert!(density(m, x).unwrap() >= 0.0);
    }
}

#[test]
fn inverse_round_trip_on_interior_grid() {
    for m in 1..=6 {
        for i in 1..100 {
            let phi = (0.05 + 0.9 * i as f64 / 100.0) * PI / (m + 1) as f64;
            let back = phi_of_x(m, x_of_phi(m, phi).unwrap(), PHI_TOL).unwrap();
            assert!((back - phi).abs() < 1e-10, "M={m} φ={phi}");
        }
    }
}

#[test]
fn rescaled_spectrum_is_scale_invariant() {
    let base = sample_product_spectrum(3, 20, &[1.0, 2.0, 0.5], 2, 7).unwrap();
    let k: f64 = 1.7;
    let scaled = sample_product_spectrum(3, 20, &[k, 2.0 * k, 0.5 * k], 2, 7).unwrap();
    for (a, b) in base.raw_eigenvalues().iter().zip(scaled.raw_eigenvalues()) {
        assert!((b - a * k.powi(6)).abs() <= 1e-9 * b.abs().max(1e-300));
    }
    for (a, b) in base.eigenvalues().iter().zip(scaled.eigenvalues()) {
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-300));
    }
}

#[test]
fn product_spectra_grow_heavier_near_zero() {
    let frac = |m: usize| {
        let ev = sample_product_spectrum(m, 200, &vec![1.0; m], 10, 11).unwrap().eigenvalues();
        ev.iter().filter(|&&v| v < 0.1).count() as f64 / ev.len() as f64
    };
    assert!(frac(5) > frac(1));
}

#[test]
fn first_moment_is_one_for_a_single_matrix() {
    let s = sample_product_spectrum(1, 100, &[1.0], 10, 12).unwrap();
    let per_trial: Vec<f64> = s.rescaled.iter().map(|ev| ev.iter().sum::<f64>() / ev.len() as f64).collect();
    let n = per_trial.len() as f64;
    let mean = per_trial.iter().sum::<f64>() / n;
    let se = (per_trial.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean} ± {se}");
}

#[test]
fn uniform_sample_is_close_to_uniform_cdf() {
    let mut rng = bnscope::SeededRng::new(13, 0);
    let mut v: Vec<f64> = (0..10_000).map(|_| rng.uniform()).collect();
    v.sort_by(f64::total_cmp);
    assert!(ks_distance(&v, |x| x.clamp(0.0, 1.0)).unwrap() < 0.025);
}

#[test]
fn condition_numbers_grow_with_depth() {
    let samples: Vec<_> = [1, 2, 4]
        .iter()
        .map(|&m| sample_product_spectrum(m, 40, &vec![1.0; m], 3, 14).unwrap())
        .collect();
    let r = condition_report(&samples).unwrap();
    assert!(r.rows.iter().all(|row| row.kappa >= 1.0));
    let k: Vec<f64> = r.summaries.iter().map(|s| s.median_kappa).collect();
    assert!(k[0] < k[1] && k[1] < k[2], "{k:?}");
}
