//! Moment and transport properties on the 3.03 x 5.84 guide with the
//! isotropic Gaussian covariance (ell = 1 wavelength, unit variance).

use std::sync::OnceLock;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waveguide_core::coupling::{assemble_coupling_tensor, AssemblyOptions, CouplingTensor};
use waveguide_core::linalg::{self, CMatrix};
use waveguide_core::medium::CovarianceModel;
use waveguide_core::modes::{count_evanescent_below, enumerate_modes, Geometry, ModeBasis, Polarization};
use waveguide_core::moments::{
    coherence_bounds, compute_moments, mean_amplitude_evolution, scattering_mean_free_paths, MeanFreePaths,
    ModeMoments, MomentOptions,
};
use waveguide_core::transport::{
    assemble_transport, depolarization_report, equipartition_distance, integrate_power, spectrum, PowerTrajectory,
    SpectralResult, TransportOperator,
};

struct Reference {
    basis: ModeBasis,
    moments: ModeMoments,
    paths: MeanFreePaths,
    op: TransportOperator,
    spec: SpectralResult,
    trajectory: PowerTrajectory,
}

fn reference() -> &'static Reference {
    static CELL: OnceLock<Reference> = OnceLock::new();
    CELL.get_or_init(|| {
        let g = Geometry::unit_wavelength(3.03, 5.84).unwrap();
        let model = CovarianceModel::gaussian_isotropic(1.0, 1.0).unwrap();
        let basis = enumerate_modes(&g, count_evanescent_below(&g, 256.0 * g.k * g.k)).unwrap();
        let tensor: CouplingTensor = assemble_coupling_tensor(&basis, &model, &AssemblyOptions::default()).unwrap();
        let moments = compute_moments(&basis, &tensor, &model, &MomentOptions::default()).unwrap();
        let paths = scattering_mean_free_paths(&moments.c()).unwrap();
        let op = assemble_transport(&basis, &tensor, &model, &moments).unwrap();
        let spec = spectrum(&op).unwrap();
        let p0 = op.hbasis.single_mode(0, Polarization::Te).unwrap();
        let z: Vec<f64> = (0..=100).map(|i| 3.0 * spec.l_eq * i as f64 / 100.0).collect();
        let trajectory = integrate_power(&op, &p0, &z).unwrap();
        Reference { basis, moments, paths, op, spec, trajectory }
    })
}

fn trace(b: &CMatrix) -> f64 {
    (0..b.nrows()).map(|i| b[(i, i)].re).sum()
}

fn random_psd(rng: &mut ChaCha8Rng, m: usize) -> CMatrix {
    let a = CMatrix::from_fn(m, m, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    &a * a.adjoint()
}

#[test]
fn balance_identity_holds_for_every_block() {
    let r = reference();
    assert_eq!(r.basis.n_propagating(), 64);
    for (j, b) in r.moments.blocks.iter().enumerate() {
        assert!(b.balance_residual() <= 1e-6, "block {j}: {:e}", b.balance_residual());
    }
}

#[test]
fn power_spectral_densities_are_hermitian_positive_definite() {
    let r = reference();
    for (j, b) in r.moments.blocks.iter().enumerate() {
        assert!(linalg::frobenius(&(&b.c - b.c.adjoint())) <= 1e-14 * linalg::frobenius(&b.c));
        assert!(b.c_asymmetry <= 1e-10, "block {j}: {:e}", b.c_asymmetry);
        let e = linalg::hermitian_eigenvalues(&b.c);
        assert!(e[0] > 0.0);
        // Mean amplitudes decay: the Hermitian part of Q is negative definite.
        let h = linalg::hermitian_eigenvalues(&linalg::hermitian_part(&b.q));
        assert!(h.iter().all(|v| *v < 0.0));
        // Trace of the balance identity: 2 Re tr Q = -tr C.
        let tq: Complex64 = b.q.trace();
        let tc = b.c.trace().re;
        assert!((2.0 * tq.re + tc).abs() <= 1e-6 * tc);
    }
}

#[test]
fn mean_free_paths_decrease_with_mode_index() {
    let s = &reference().paths.s;
    let n = s.len();
    let d = n.div_ceil(10);
    let median = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        let k = v.len();
        if k % 2 == 1 {
            v[k / 2]
        } else {
            0.5 * (v[k / 2 - 1] + v[k / 2])
        }
    };
    assert!(median(&s[n - d..]) <= 0.2 * median(&s[..d]));
    let mu = &reference().paths.mu;
    for (j, m) in mu.iter().enumerate() {
        assert!(m.windows(2).all(|w| w[0] <= w[1]));
        assert!((s[j] * m[0] - 1.0).abs() < 1e-14);
    }
}

#[test]
fn coherent_amplitudes_stay_within_eigenvalue_bounds() {
    let r = reference();
    let q = r.moments.q();
    let max_s = r.paths.s.iter().copied().fold(0.0, f64::max);
    let z: Vec<f64> = (0..100).map(|i| 3.0 * max_s * i as f64 / 99.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let a0: Vec<Vec<Complex64>> = r
        .basis
        .propagating
        .iter()
        .map(|g| (0..g.multiplicity()).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect())
        .collect();
    let evolution = mean_amplitude_evolution(&q, &a0, &z).unwrap();
    for (k, zk) in z.iter().enumerate() {
        for (j, aj) in evolution[k].iter().enumerate() {
            let norm2: f64 = aj.iter().map(|v| v.norm_sqr()).sum();
            let (lo, hi) = coherence_bounds(&r.paths.mu[j], &a0[j], *zk);
            let slack = 1e-6 * hi.max(1e-300) + 1e-300;
            assert!(norm2 <= hi + slack && norm2 >= lo - slack, "Z={zk}, j={j}: {lo} <= {norm2} <= {hi}");
        }
    }
    // Single-polarization groups evolve as a complex exponential.
    for (j, g) in r.basis.propagating.iter().enumerate().filter(|(_, g)| g.multiplicity() == 1) {
        let qj = q[j][(0, 0)];
        for (k, zk) in z.iter().enumerate() {
            let expect = (qj * zk).exp() * a0[j][0];
            let got = evolution[k][j][0];
            assert!((got - expect).norm() <= 1e-9 * a0[j][0].norm(), "({}, {}) at Z={zk}", g.j1, g.j2);
        }
    }
}

#[test]
fn total_power_is_an_invariant_of_the_transport_operator() {
    let r = reference();
    assert!(r.op.adjoint_kernel_residual() <= 1e-8, "{:e}", r.op.adjoint_kernel_residual());
}

#[test]
fn spectrum_has_one_dimensional_kernel_and_no_growth() {
    let s = &reference().spec;
    assert_eq!(s.kernel_dim, 1);
    assert!(s.max_real_ratio() <= 1e-8);
    assert!(s.kernel_residual <= 1e-8);
    assert!(s.cone_violation >= -1e-10);
    assert!(s.lambda_gap.re < 0.0);
    assert!((s.l_eq * s.lambda_gap.re.abs() - 1.0).abs() < 1e-14);
}

#[test]
fn gain_maps_positive_semidefinite_blocks_to_positive_semidefinite_blocks() {
    let r = reference();
    let hb = &r.op.hbasis;
    let n = hb.n_groups();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let (j, l) = (rng.random_range(0..n), rng.random_range(0..n));
        let u = random_psd(&mut rng, hb.sizes[l]);
        let out = r.op.apply_gain_block(j, l, &u);
        let e = linalg::hermitian_eigenvalues(&out);
        let scale = trace(&out).abs().max(1e-300);
        assert!(e[0] >= -1e-10 * scale, "({j},{l}): {e:?}");
        assert!(linalg::frobenius(&(&out - out.adjoint())) <= 1e-12 * linalg::frobenius(&out).max(1e-300));
    }
    // The pure TE projector of every two-polarization group.
    for l in (0..n).filter(|l| hb.sizes[*l] == 2) {
        let u = linalg::diag(&[1.0, 0.0]);
        for j in 0..n {
            let e = linalg::hermitian_eigenvalues(&r.op.apply_gain_block(j, l, &u));
            assert!(e[0] >= -1e-10 * e.last().unwrap().abs().max(1e-300));
        }
    }
}

#[test]
fn trajectory_conserves_power_and_stays_in_the_cone() {
    let d = reference().trajectory.diagnostics;
    assert!(d.max_trace_drift <= 1e-8, "{:e}", d.max_trace_drift);
    assert!(d.min_relative_eigenvalue >= -1e-10, "{:e}", d.min_relative_eigenvalue);
}

#[test]
fn equipartition_state_is_stationary_and_nearly_diagonal() {
    let r = reference();
    let out = r.op.apply(&r.spec.u_o).unwrap();
    let x = r.op.hbasis.coords(&r.spec.u_o).unwrap();
    let y = r.op.hbasis.coords(&out).unwrap();
    assert!(y.norm() <= 1e-8 * r.op.norm() * x.norm());
    let total: f64 = r.spec.u_o.iter().map(trace).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!(r.spec.u_o.iter().all(|b| linalg::hermitian_eigenvalues(b)[0] >= 0.0));
    assert!(r.spec.off_diagonal_ratio() <= 0.05, "{}", r.spec.off_diagonal_ratio());
}

#[test]
fn power_spreads_to_every_mode_and_approaches_equipartition() {
    let r = reference();
    let last = r.trajectory.states.last().unwrap();
    assert!(last.iter().all(|b| trace(b) > 0.0));
    let dist = equipartition_distance(&r.trajectory, &r.spec.u_o, &r.op.hbasis).unwrap();
    assert!(dist.last().unwrap() < &(0.1 * dist[0]));
    // Beyond one equipartition distance the approach is monotone.
    assert!(dist[34..].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
}

#[test]
fn distance_to_equipartition_decays_at_the_gap_rate() {
    let r = reference();
    let dist = equipartition_distance(&r.trajectory, &r.spec.u_o, &r.op.hbasis).unwrap();
    let z = &r.trajectory.z;
    // Log-linear fit on [1.5, 3] equipartition distances.
    let pts: Vec<(f64, f64)> = (50..=100).map(|k| (z[k], dist[k].ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let rate = r.spec.lambda_gap.re;
    assert!((slope - rate).abs() <= 0.1 * rate.abs(), "slope {slope}, gap {rate}");
}

#[test]
fn source_block_depolarizes() {
    let r = reference();
    let report = depolarization_report(&r.trajectory);
    let n = r.basis.n_propagating();
    let first = &report[..n];
    let last = &report[report.len() - n..];
    assert_eq!(first[0].degree, 1.0);
    assert_eq!(first[0].tm_power, 0.0);
    // Two-polarization groups end close to the equipartition split.
    for (e, u) in last.iter().zip(&r.spec.u_o) {
        if u.nrows() == 2 {
            let expect = (u[(0, 0)].re - u[(1, 1)].re).abs() / trace(u);
            assert!((e.degree - expect).abs() <= 0.1, "group {}: {} vs {}", e.j, e.degree, expect);
            assert!(e.tm_power > 0.0);
        }
    }
}

#[test]
fn identity_coordinates_measure_total_power() {
    let r = reference();
    let one = r.op.hbasis.identity_coords();
    for (zk, state) in r.trajectory.z.iter().zip(&r.trajectory.states).step_by(10) {
        let x = r.op.hbasis.coords(state).unwrap();
        let total: f64 = state.iter().map(trace).sum();
        assert!((x.dot(&one) - total).abs() < 1e-13, "Z={zk}");
    }
}
