//! Longitudinal spectra of the Gaussian correlation profile.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waveguide_core::medium::{damped_pair, z_fourier, z_half_transform, CovarianceModel, TrigKind};
use waveguide_core::Error;

fn unit() -> CovarianceModel {
    CovarianceModel::gaussian_isotropic(1.0, 1.0).unwrap()
}

/// Dawson's integral `F(x) = e^{-x²} ∫_0^x e^{t²} dt` by its power series.
fn dawson(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term.abs() > 1e-18 * sum.abs().max(1e-300) {
        n += 1.0;
        term *= -2.0 * x * x / (2.0 * n + 1.0);
        sum += term;
    }
    sum
}

/// Composite Simpson rule on `[0, b]` with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, b: f64, n: usize) -> f64 {
    let h = b / n as f64;
    let mut s = f(0.0) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn full_line_transform_is_nonnegative_and_decreasing() {
    let m = unit();
    let k = 2.0 * PI;
    let mut prev = f64::INFINITY;
    for i in 0..=400 {
        let beta = 4.0 * k * i as f64 / 400.0;
        let v = m.g_hat(beta);
        assert!(v >= 0.0);
        assert!(v <= prev);
        prev = v;
    }
    assert!((m.g_hat(0.0) - (2.0 * PI).sqrt()).abs() < 1e-14);
}

#[test]
fn half_cosine_transform_is_half_the_full_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for ell in [0.3, 1.0, 2.5] {
        let m = CovarianceModel::gaussian_isotropic(ell, 1.0).unwrap();
        for _ in 0..20 {
            let beta = rng.random::<f64>() * 4.0 * 2.0 * PI;
            let h = z_half_transform(&m, TrigKind::Cos, beta, 0.0, 0).unwrap();
            assert!((2.0 * h - m.g_hat(beta)).abs() <= 1e-9, "ell {ell}, beta {beta}");
            assert!((m.h_cos(beta) - h).abs() <= 1e-9);
        }
    }
}

#[test]
fn half_sine_transform_matches_dawson_integral() {
    // ∫_0^∞ e^{-z²/2} sin(βz) dz = √2 F(β/√2).
    let m = unit();
    for beta in [0.0, 0.1, 0.7, 1.5, 3.0, 6.0] {
        let expect = 2f64.sqrt() * dawson(beta / 2f64.sqrt());
        let got = m.h_sin(beta).unwrap();
        assert!((got - expect).abs() <= 1e-9 * expect.abs().max(1.0), "beta {beta}: {got} vs {expect}");
    }
}

#[test]
fn derivative_transforms_follow_integration_by_parts() {
    let m = CovarianceModel::gaussian_isotropic(0.8, 2.0).unwrap();
    for beta in [0.0, 0.5, 2.0, 7.0] {
        let g = m.g_hat(beta);
        assert_eq!(z_fourier(&m, beta, 0), Complex64::new(g, 0.0));
        assert!((z_fourier(&m, beta, 1) - Complex64::new(0.0, -beta * g)).norm() < 1e-15);
        assert!((z_fourier(&m, beta, 2) - Complex64::new(-beta * beta * g, 0.0)).norm() < 1e-13);
        // The full line transform of g' is 2i times the half-line sine transform of g'.
        let half_sin = z_half_transform(&m, TrigKind::Sin, beta, 0.0, 1).unwrap();
        assert!((z_fourier(&m, beta, 1).im - 2.0 * half_sin).abs() <= 1e-9);
        let half_cos2 = z_half_transform(&m, TrigKind::Cos, beta, 0.0, 2).unwrap();
        assert!((z_fourier(&m, beta, 2).re - 2.0 * half_cos2).abs() <= 1e-9);
    }
}

#[test]
fn damped_transforms_match_simpson_oracle() {
    let m = CovarianceModel::gaussian_isotropic(1.3, 1.0).unwrap();
    let ell = 1.3;
    for (beta, decay) in [(0.0, 0.2), (1.1, 0.05), (4.0, 1.0), (9.0, 0.3)] {
        let g = |z: f64| (-z * z / (2.0 * ell * ell)).exp() * (-decay * z).exp();
        let c = simpson(|z| g(z) * (beta * z).cos(), 12.0 * ell, 20000);
        let s = simpson(|z| g(z) * (beta * z).sin(), 12.0 * ell, 20000);
        let (dc, ds) = damped_pair(&m, beta, decay).unwrap();
        assert!((dc - c).abs() <= 1e-10, "cos at ({beta}, {decay}): {dc} vs {c}");
        assert!((ds - s).abs() <= 1e-10, "sin at ({beta}, {decay}): {ds} vs {s}");
    }
}

#[test]
fn zero_frequency_half_transform_is_half_gaussian_integral() {
    let m = CovarianceModel::gaussian_isotropic(0.5, 1.0).unwrap();
    let v = z_half_transform(&m, TrigKind::Cos, 0.0, 0.0, 0).unwrap();
    assert!((v - 0.5 * (2.0 * PI).sqrt() * 0.5).abs() < 1e-12);
    assert_eq!(z_half_transform(&m, TrigKind::Sin, 0.0, 0.0, 0).unwrap(), 0.0);
}

#[test]
fn covariance_is_separable_with_variance_prefactor() {
    let m = CovarianceModel::custom_separable(0.5, 2.0, 1.5, 0.3).unwrap();
    let (x, y, z) = ([0.2, 1.0], [0.9, -0.4], 0.7);
    let expect = 0.3
        * (-(0.7f64).powi(2) / (2.0 * 0.25)).exp()
        * (-(1.4f64).powi(2) / (2.0 * 4.0)).exp()
        * (-(0.7f64).powi(2) / (2.0 * 2.25)).exp();
    assert!((m.covariance(x, y, z) - expect).abs() < 1e-15);
    assert_eq!(m.with_sigma2(0.0).covariance(x, y, z), 0.0);
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(matches!(CovarianceModel::gaussian_isotropic(0.0, 1.0), Err(Error::InvalidModel(_))));
    assert!(matches!(CovarianceModel::gaussian_isotropic(1.0, -1.0), Err(Error::InvalidModel(_))));
    assert!(matches!(CovarianceModel::custom_separable(1.0, f64::NAN, 1.0, 1.0), Err(Error::InvalidModel(_))));
    assert!(matches!(z_half_transform(&unit(), TrigKind::Cos, 1.0, -0.1, 0), Err(Error::InvalidArgument(_))));
}
