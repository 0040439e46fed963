//! Synthesis of the coupling processes and the forward Monte Carlo ensemble.

use std::sync::OnceLock;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use waveguide_core::coupling::{assemble_coupling_tensor, AssemblyOptions, CouplingTensor};
use waveguide_core::medium::CovarianceModel;
use waveguide_core::modes::{count_evanescent_below, enumerate_modes, Geometry, ModeBasis};
use waveguide_core::moments::{compute_moments, scattering_mean_free_paths, MomentOptions};
use waveguide_core::montecarlo::{
    estimate_and_compare, forward_limit, integrate_forward, run_monte_carlo, ForwardSystem, McConfig, McResult,
    ModeIndex, ProcessSynthesizer,
};

struct Small {
    basis: ModeBasis,
    model: CovarianceModel,
    tensor: CouplingTensor,
    min_s: f64,
    dz: f64,
}

fn small() -> &'static Small {
    static CELL: OnceLock<Small> = OnceLock::new();
    CELL.get_or_init(|| {
        let g = Geometry::unit_wavelength(1.3, 2.1).unwrap();
        let model = CovarianceModel::gaussian_isotropic(1.0, 1.0).unwrap();
        let basis = enumerate_modes(&g, count_evanescent_below(&g, 16.0 * g.k * g.k)).unwrap();
        let tensor = assemble_coupling_tensor(&basis, &model, &AssemblyOptions::default()).unwrap();
        let moments = compute_moments(&basis, &tensor, &model, &MomentOptions::default()).unwrap();
        let s = scattering_mean_free_paths(&moments.c()).unwrap().s;
        let min_s = s.iter().copied().fold(f64::INFINITY, f64::min);
        let max_beta = basis.propagating.iter().map(|g| g.beta).fold(0.0, f64::max);
        let dz = (1.0f64).min(2.0 * std::f64::consts::PI / max_beta) / 10.0;
        Small { basis, model, tensor, min_s, dz }
    })
}

fn unit_start(n: usize) -> Vec<Complex64> {
    let mut a0 = vec![Complex64::new(0.0, 0.0); n];
    a0[0] = Complex64::new(1.0, 0.0);
    a0
}

fn config(epsilon: f64, fractions: &[f64], n: usize, seed: u64) -> McConfig {
    let s = small();
    McConfig {
        epsilon,
        checkpoints: fractions.iter().map(|f| f * s.min_s).collect(),
        dz: s.dz,
        n_realizations: n,
        seed,
        a0: unit_start(ModeIndex::new(&s.basis).len()),
    }
}

fn run(cfg: &McConfig) -> McResult {
    let s = small();
    run_monte_carlo(&s.basis, &s.tensor, &s.model, cfg).unwrap()
}

/// Composite Simpson approximation of `∫∫ exp(-(x-y)²/2) cos(πmx/L) cos(πm'y/L) dx dy`.
fn gram_entry(length: f64, m: usize, mp: usize) -> f64 {
    let n = 400;
    let h = length / n as f64;
    let w = |i: usize| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
    let mut acc = 0.0;
    for i in 0..=n {
        let x = i as f64 * h;
        let cx = (std::f64::consts::PI * m as f64 * x / length).cos();
        for k in 0..=n {
            let y = k as f64 * h;
            let cy = (std::f64::consts::PI * mp as f64 * y / length).cos();
            acc += w(i) * w(k) * (-(x - y).powi(2) / 2.0).exp() * cx * cy;
        }
    }
    acc * (h / 3.0).powi(2)
}

#[test]
fn synthesized_projections_have_the_target_covariance() {
    let s = small();
    let h = 0.05;
    let synth = ProcessSynthesizer::new(&s.tensor, &s.model, (2, 2), h, 201).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let n = 2000;
    let lag = |ell: f64| (ell / h).round() as usize;
    // (projection a, projection b, lag in points); index = m * 2 + n.
    let checks = [(0usize, 0usize, 0usize), (0, 0, lag(1.0)), (0, 0, lag(2.0)), (3, 3, 0), (3, 3, lag(1.0)), (0, 2, 0), (1, 1, 0)];
    let mut sums = vec![(0.0, 0.0); checks.len()];
    for _ in 0..n {
        let path = synth.sample(&mut rng);
        for (c, (a, b, l)) in checks.iter().enumerate() {
            let v = path.values[50][*a] * path.values[50 + l][*b];
            sums[c].0 += v;
            sums[c].1 += v * v;
        }
    }
    let (l1, l2) = (1.3, 2.1);
    for (c, (a, b, l)) in checks.iter().enumerate() {
        let (m, q) = (a / 2, a % 2);
        let (mp, qp) = (b / 2, b % 2);
        let expect = gram_entry(l1, m, mp) * gram_entry(l2, q, qp) * (-((*l as f64) * h).powi(2) / 2.0).exp();
        let mean = sums[c].0 / n as f64;
        let se = ((sums[c].1 / n as f64 - mean * mean) / (n as f64 - 1.0)).sqrt();
        assert!((mean - expect).abs() <= 3.0 * se, "check {c}: {mean} ± {se} vs {expect}");
    }
}

#[test]
fn zero_variance_leaves_amplitudes_unchanged() {
    let s = small();
    let model = s.model.with_sigma2(0.0);
    let tensor = assemble_coupling_tensor(&s.basis, &model, &AssemblyOptions::default()).unwrap();
    let system = ForwardSystem::new(&s.basis);
    let synth = ProcessSynthesizer::new(&tensor, &model, system.m_counts, 0.05, 41).unwrap();
    let path = synth.sample(&mut ChaCha8Rng::seed_from_u64(1));
    assert!(path.values.iter().flatten().all(|v| *v == 0.0));
    let cfg = config(0.1, &[0.0, 0.2], 8, 3);
    let r = run_monte_carlo(&s.basis, &tensor, &model, &cfg).unwrap();
    for cp in &r.checkpoints {
        // Without fluctuations only the deterministic phase remains.
        for (m, a) in cp.mean.iter().zip(&cfg.a0) {
            assert!((m.norm() - a.norm()).abs() < 1e-12);
        }
        assert!(cp.mean_se.iter().all(|(a, b)| *a < 1e-12 && *b < 1e-12));
    }
}

#[test]
fn zero_strength_integration_returns_initial_state() {
    let s = small();
    let system = ForwardSystem::new(&s.basis);
    let synth = ProcessSynthesizer::new(&s.tensor, &s.model, system.m_counts, 0.5 * s.dz, 201).unwrap();
    let path = synth.sample(&mut ChaCha8Rng::seed_from_u64(2));
    let a0 = unit_start(system.index.len());
    let out = integrate_forward(&system, &path, 0.0, &a0, s.dz, &[0, 50, 100]).unwrap();
    for st in &out.states {
        for (x, y) in st.iter().zip(&a0) {
            assert_eq!(x, y);
        }
    }
}

#[test]
fn fixed_seed_replays_exactly_across_thread_counts() {
    let cfg = config(0.1, &[0.0, 0.1, 0.3], 130, 77);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run(&cfg));
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| run(&cfg));
    assert_eq!(one, three);
    assert_eq!(run(&cfg), one);
    let other = run(&McConfig { seed: 78, ..cfg.clone() });
    assert_ne!(other.checkpoints[1].mean, one.checkpoints[1].mean);
}

#[test]
fn energy_drift_halves_with_strength() {
    // The raw energy carries a bounded oscillation of size ε once the physical
    // range Z / ε² spans several correlation lengths; Z = 0.05 is 5 ℓ at ε = 0.1.
    let at = |epsilon: f64| McConfig { checkpoints: vec![0.0, 0.05], ..config(epsilon, &[0.0], 64, 5) };
    let coarse = run(&at(0.1));
    let fine = run(&at(0.05));
    let (a, b) = (coarse.checkpoints[1].drift_mean, fine.checkpoints[1].drift_mean);
    let ratio = b / a;
    assert!((0.25..=1.0).contains(&ratio), "drift {a:e} -> {b:e}, ratio {ratio}");
    for r in [&coarse, &fine] {
        let eps = r.config.epsilon;
        assert!(r.checkpoints.iter().all(|cp| cp.drift_max <= 10.0 * eps));
        assert!(r.checkpoints.iter().all(|cp| cp.corrected_drift_max <= 0.1));
    }
}

#[test]
fn comparison_rows_at_the_source_are_exact() {
    let s = small();
    let cfg = config(0.1, &[0.0, 0.1], 64, 9);
    let r = run(&cfg);
    let moments = compute_moments(&s.basis, &s.tensor, &s.model, &MomentOptions::default()).unwrap();
    let (q, op) = forward_limit(&s.basis, &s.tensor, &s.model, &moments).unwrap();
    let report = estimate_and_compare(&r, &q, &op, &ModeIndex::new(&s.basis)).unwrap();
    let at_source: Vec<_> = report.rows.iter().filter(|row| row.z == 0.0).collect();
    assert!(!at_source.is_empty());
    assert!(at_source.iter().all(|row| row.zscore == 0.0 && row.se == 0.0));
    assert!(report.rows.iter().any(|row| row.z > 0.0 && row.quantity == "power"));
    assert!(report.rows.iter().any(|row| row.quantity == "mean"));
}

#[test]
fn invalid_configurations_are_rejected() {
    let s = small();
    let base = config(0.1, &[0.0, 0.1], 8, 1);
    let bad = |cfg: McConfig| run_monte_carlo(&s.basis, &s.tensor, &s.model, &cfg).is_err();
    assert!(bad(McConfig { epsilon: 0.0, ..base.clone() }));
    assert!(bad(McConfig { n_realizations: 1, ..base.clone() }));
    assert!(bad(McConfig { checkpoints: vec![0.2, 0.1], ..base.clone() }));
    assert!(bad(McConfig { dz: 10.0 * s.dz, ..base.clone() }));
    assert!(bad(McConfig { a0: vec![Complex64::new(0.0, 0.0); base.a0.len()], ..base.clone() }));
    assert!(bad(McConfig { a0: vec![Complex64::new(1.0, 0.0)], ..base }));
}
