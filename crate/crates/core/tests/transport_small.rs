//! Transport operator on the small 1.3 x 2.1 guide.

use std::sync::OnceLock;

use num_complex::Complex64;
use waveguide_core::coupling::{assemble_coupling_tensor, AssemblyOptions, CouplingTensor};
use waveguide_core::linalg::{self, CMatrix};
use waveguide_core::medium::CovarianceModel;
use waveguide_core::modes::{count_evanescent_below, enumerate_modes, Geometry, ModeBasis, Polarization};
use waveguide_core::moments::{compute_moments, ModeMoments, MomentOptions};
use waveguide_core::transport::{
    assemble_transport, integrate_power, integrate_power_rk4, spectrum, HermitianBasis,
};
use waveguide_core::Error;

struct Small {
    basis: ModeBasis,
    model: CovarianceModel,
    tensor: CouplingTensor,
    moments: ModeMoments,
}

fn small() -> &'static Small {
    static CELL: OnceLock<Small> = OnceLock::new();
    CELL.get_or_init(|| {
        let g = Geometry::unit_wavelength(1.3, 2.1).unwrap();
        let model = CovarianceModel::gaussian_isotropic(1.0, 1.0).unwrap();
        let basis = enumerate_modes(&g, count_evanescent_below(&g, 16.0 * g.k * g.k)).unwrap();
        let tensor = assemble_coupling_tensor(&basis, &model, &AssemblyOptions::default()).unwrap();
        let moments = compute_moments(&basis, &tensor, &model, &MomentOptions::default()).unwrap();
        Small { basis, model, tensor, moments }
    })
}

#[test]
fn zero_variance_gives_zero_operator() {
    let s = small();
    let model = s.model.with_sigma2(0.0);
    let tensor = assemble_coupling_tensor(&s.basis, &model, &AssemblyOptions::default()).unwrap();
    let moments = compute_moments(&s.basis, &tensor, &model, &MomentOptions::default()).unwrap();
    assert!(moments.blocks.iter().all(|b| b.q.iter().all(|v| v.norm() == 0.0) && b.c.iter().all(|v| v.norm() == 0.0)));
    let op = assemble_transport(&s.basis, &tensor, &model, &moments).unwrap();
    assert_eq!(op.matrix.amax(), 0.0);
    assert!(matches!(spectrum(&op), Err(Error::TrivialKernel { .. })));
}

#[test]
fn operator_scales_linearly_with_variance() {
    let s = small();
    let op1 = assemble_transport(&s.basis, &s.tensor, &s.model, &s.moments).unwrap();
    let model = s.model.with_sigma2(0.25);
    let tensor = assemble_coupling_tensor(&s.basis, &model, &AssemblyOptions::default()).unwrap();
    let moments = compute_moments(&s.basis, &tensor, &model, &MomentOptions::default()).unwrap();
    let op2 = assemble_transport(&s.basis, &tensor, &model, &moments).unwrap();
    assert!((&op1.matrix * 0.25 - &op2.matrix).amax() <= 1e-14 * op1.matrix.amax());
}

#[test]
fn rk4_agrees_with_matrix_exponential() {
    let s = small();
    let op = assemble_transport(&s.basis, &s.tensor, &s.model, &s.moments).unwrap();
    let spec = spectrum(&op).unwrap();
    let p0 = op.hbasis.single_mode(0, Polarization::Te).unwrap();
    let z: Vec<f64> = (0..=20).map(|i| 2.0 * spec.l_eq * i as f64 / 20.0).collect();
    let exact = integrate_power(&op, &p0, &z).unwrap();
    let rk = integrate_power_rk4(&op, &p0, &z, 0.05 / op.norm()).unwrap();
    for (a, b) in exact.states.iter().zip(&rk.states) {
        for (x, y) in a.iter().zip(b) {
            assert!(linalg::frobenius(&(x - y)) <= 1e-8);
        }
    }
    // d(tr P)/dZ = (Υᵀ 1) · x and ‖x‖ ≤ tr P for positive blocks, so the
    // drift is bounded by the adjoint residual times the range.
    let bound = op.adjoint_kernel_residual() * op.norm() * z.last().unwrap();
    assert!(exact.diagnostics.max_trace_drift <= bound, "{:e} > {bound:e}", exact.diagnostics.max_trace_drift);
}

#[test]
fn hermitian_coordinates_round_trip() {
    let hb = HermitianBasis::from_sizes(vec![1, 2, 2, 1]);
    assert_eq!(hb.dim, 10);
    assert_eq!(hb.offsets, vec![0, 1, 5, 9]);
    let blocks = vec![
        linalg::diag(&[0.3]),
        CMatrix::from_row_slice(2, 2, &[Complex64::new(0.5, 0.0), Complex64::new(0.1, 0.2), Complex64::new(0.1, -0.2), Complex64::new(0.4, 0.0)]),
        linalg::diag(&[0.0, 1.0]),
        linalg::diag(&[2.0]),
    ];
    let x = hb.coords(&blocks).unwrap();
    // Orthonormal coordinates preserve the Frobenius norm.
    let norm2: f64 = blocks.iter().map(|b| linalg::frobenius(b).powi(2)).sum();
    assert!((x.norm_squared() - norm2).abs() < 1e-14);
    let back = hb.blocks(&x);
    for (a, b) in back.iter().zip(&blocks) {
        assert!(linalg::frobenius(&(a - b)) < 1e-15);
    }
    assert!(hb.coords(&blocks[..3]).is_err());
    assert!(hb.single_mode(0, Polarization::Tm).is_err());
}

#[test]
fn invalid_trajectory_inputs_are_rejected() {
    let s = small();
    let op = assemble_transport(&s.basis, &s.tensor, &s.model, &s.moments).unwrap();
    let p0 = op.hbasis.single_mode(0, Polarization::Te).unwrap();
    assert!(integrate_power(&op, &p0, &[1.0, 0.5]).is_err());
    assert!(integrate_power(&op, &p0, &[-1.0]).is_err());
    let zero: Vec<CMatrix> = op.hbasis.sizes.iter().map(|m| linalg::zeros(*m)).collect();
    assert!(integrate_power(&op, &zero, &[1.0]).is_err());
    assert!(integrate_power_rk4(&op, &p0, &[1.0], 0.0).is_err());
}
