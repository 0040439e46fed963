//! Energy transport between propagating modes.
//!
//! The mean power matrices `P_j = E{A_j A_j*}` of the propagating groups
//! evolve by the linear system `dP/dZ = Υ(P)` with
//! `Υ(P)_j = Σ_l Υ⁺_jl(P_l) + Q_j P_j + P_j Q_j*`, where the gain block
//! `Υ⁺_jl(U)` is the two-sided spectral density of `M_jl(z) U M_jl(0)*` at
//! `β_l - β_j`. The operator is represented as a real `D × D` matrix in an
//! orthonormal basis of the Hermitian matrices of each group.

use std::collections::HashMap;
use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::CouplingTensor;
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix};
use crate::medium::CovarianceModel;
use crate::modes::{ModeBasis, Polarization};
use crate::moments::{coupling_terms, cross_spectrum, ModeMoments, ProcessTerm};

/// Relative eigenvalue threshold separating the kernel from the rest of the spectrum.
pub const KERNEL_TOL: f64 = 1e-10;

/// Orthonormal basis (under `(U, V) = tr(U V*)`) of the Hermitian matrices of
/// every propagating group. For a pair of polarizations the elements are
/// `diag(1, 0)`, `diag(0, 1)`, `[[0, 1], [1, 0]]/√2` and `[[0, i], [-i, 0]]/√2`;
/// a single polarization uses the scalar `1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermitianBasis {
    /// Polarization count of each group.
    pub sizes: Vec<usize>,
    /// First coordinate of each group.
    pub offsets: Vec<usize>,
    /// Total dimension `Σ m_j²`.
    pub dim: usize,
}

impl HermitianBasis {
    pub fn new(basis: &ModeBasis) -> Self {
        Self::from_sizes(basis.propagating.iter().map(|g| g.multiplicity()).collect())
    }

    pub fn from_sizes(sizes: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut dim = 0;
        for m in &sizes {
            offsets.push(dim);
            dim += m * m;
        }
        Self { sizes, offsets, dim }
    }

    pub fn n_groups(&self) -> usize {
        self.sizes.len()
    }

    /// Basis element `slot` for a group with `m` polarizations.
    pub fn element(m: usize, slot: usize) -> CMatrix {
        let mut e = linalg::zeros(m);
        match (m, slot) {
            (1, 0) => e[(0, 0)] = c(1.0, 0.0),
            (2, 0) => e[(0, 0)] = c(1.0, 0.0),
            (2, 1) => e[(1, 1)] = c(1.0, 0.0),
            (2, 2) => {
                e[(0, 1)] = c(FRAC_1_SQRT_2, 0.0);
                e[(1, 0)] = c(FRAC_1_SQRT_2, 0.0);
            }
            (2, 3) => {
                e[(0, 1)] = c(0.0, FRAC_1_SQRT_2);
                e[(1, 0)] = c(0.0, -FRAC_1_SQRT_2);
            }
            _ => panic!("no basis element {slot} for size {m}"),
        }
        e
    }

    /// Coordinates `tr(U E_k)` of one block (real part; exact for Hermitian `U`).
    pub fn block_coords(u: &CMatrix) -> Vec<f64> {
        match u.nrows() {
            1 => vec![u[(0, 0)].re],
            2 => {
                let off = 0.5 * (u[(0, 1)] + u[(1, 0)].conj());
                vec![u[(0, 0)].re, u[(1, 1)].re, 2.0 * FRAC_1_SQRT_2 * off.re, 2.0 * FRAC_1_SQRT_2 * off.im]
            }
            m => panic!("unsupported block size {m}"),
        }
    }

    /// Block assembled from its coordinates.
    pub fn block_from_coords(x: &[f64]) -> CMatrix {
        match x.len() {
            1 => CMatrix::from_element(1, 1, c(x[0], 0.0)),
            4 => {
                let off = c(x[2] * FRAC_1_SQRT_2, x[3] * FRAC_1_SQRT_2);
                CMatrix::from_row_slice(2, 2, &[c(x[0], 0.0), off, off.conj(), c(x[1], 0.0)])
            }
            n => panic!("unsupported coordinate count {n}"),
        }
    }

    /// Coordinate vector of a list of Hermitian blocks.
    pub fn coords(&self, blocks: &[CMatrix]) -> Result<DVector<f64>> {
        if blocks.len() != self.n_groups() {
            return Err(Error::Dimension(format!("expected {} blocks, got {}", self.n_groups(), blocks.len())));
        }
        let mut x = DVector::zeros(self.dim);
        for (j, b) in blocks.iter().enumerate() {
            if b.nrows() != self.sizes[j] || b.ncols() != self.sizes[j] {
                return Err(Error::Dimension(format!("block {j} must be {0}x{0}", self.sizes[j])));
            }
            for (k, v) in Self::block_coords(b).into_iter().enumerate() {
                x[self.offsets[j] + k] = v;
            }
        }
        Ok(x)
    }

    /// Blocks from a coordinate vector.
    pub fn blocks(&self, x: &DVector<f64>) -> Vec<CMatrix> {
        self.sizes
            .iter()
            .zip(&self.offsets)
            .map(|(m, o)| Self::block_from_coords(&x.as_slice()[*o..*o + m * m]))
            .collect()
    }

    /// Coordinates of the identity in every block.
    pub fn identity_coords(&self) -> DVector<f64> {
        let blocks: Vec<CMatrix> = self.sizes.iter().map(|m| CMatrix::identity(*m, *m)).collect();
        self.coords(&blocks).expect("sizes match by construction")
    }

    /// Single polarization `s` of group `j` carrying unit power.
    pub fn single_mode(&self, j: usize, s: Polarization) -> Result<Vec<CMatrix>> {
        if j >= self.n_groups() || s.slot() >= self.sizes[j] {
            return Err(Error::InvalidArgument(format!("mode ({j}, {}) not present", s.number())));
        }
        let mut blocks: Vec<CMatrix> = self.sizes.iter().map(|m| linalg::zeros(*m)).collect();
        blocks[j][(s.slot(), s.slot())] = c(1.0, 0.0);
        Ok(blocks)
    }
}

/// Real matrix representation of `Υ`, split into gain and loss parts.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportOperator {
    pub hbasis: HermitianBasis,
    /// `Σ_l Υ⁺_jl` in coordinates.
    pub gain: DMatrix<f64>,
    /// Block-diagonal `Q_j U + U Q_j*` in coordinates.
    pub loss: DMatrix<f64>,
    /// `gain + loss`.
    pub matrix: DMatrix<f64>,
}

impl TransportOperator {
    pub fn dim(&self) -> usize {
        self.hbasis.dim
    }

    /// Spectral norm of the matrix representation.
    pub fn norm(&self) -> f64 {
        self.matrix.clone().svd(false, false).singular_values.max()
    }

    /// `Υ(U)` for a list of Hermitian blocks.
    pub fn apply(&self, blocks: &[CMatrix]) -> Result<Vec<CMatrix>> {
        let x = self.hbasis.coords(blocks)?;
        Ok(self.hbasis.blocks(&(&self.matrix * x)))
    }

    /// `Υ⁺_jl(U)` for a Hermitian block `U` of group `l`.
    pub fn apply_gain_block(&self, j: usize, l: usize, u: &CMatrix) -> CMatrix {
        let hb = &self.hbasis;
        let (mj, ml) = (hb.sizes[j], hb.sizes[l]);
        let sub = self.gain.view((hb.offsets[j], hb.offsets[l]), (mj * mj, ml * ml));
        let x = DVector::from_vec(HermitianBasis::block_coords(u));
        let y = sub * x;
        HermitianBasis::block_from_coords(y.as_slice())
    }

    /// `‖Υᵀ 1‖ / ‖Υ‖`: the total trace is conserved when this vanishes.
    pub fn adjoint_kernel_residual(&self) -> f64 {
        let one = self.hbasis.identity_coords();
        let r = self.matrix.transpose() * one;
        let n = self.norm();
        if n == 0.0 {
            0.0
        } else {
            r.norm() / n
        }
    }
}

fn conj_terms(terms: [ProcessTerm; 3]) -> [ProcessTerm; 3] {
    terms.map(|t| ProcessTerm { coef: t.coef.conj(), ..t })
}

/// Spectral densities `T[s][s'][q][q'] = ∫ E{M_jl^{sq}(z) M_jl^{s'q'}(0)*} e^{iΔz} dz`.
fn gain_densities(
    basis: &ModeBasis,
    tensor: &CouplingTensor,
    model: &CovarianceModel,
    j: usize,
    l: usize,
) -> Result<Vec<Complex64>> {
    let k = basis.geometry.k;
    let kernel = tensor.propagating_pair(basis, j, l)?;
    let pj = kernel.left.polarizations();
    let pl = kernel.right.polarizations();
    let (mj, ml) = (pj.len(), pl.len());
    let delta = kernel.right.beta - kernel.left.beta;
    let mut out = vec![c(0.0, 0.0); mj * mj * ml * ml];
    for (si, s) in pj.iter().enumerate() {
        for (qi, q) in pl.iter().enumerate() {
            let x = coupling_terms(&kernel, *s, *q, k);
            for (sj, s2) in pj.iter().enumerate() {
                for (qj, q2) in pl.iter().enumerate() {
                    let y = conj_terms(coupling_terms(&kernel, *s2, *q2, k));
                    out[((si * mj + sj) * ml + qi) * ml + qj] = cross_spectrum(&kernel, model, &x, &y, delta);
                }
            }
        }
    }
    Ok(out)
}

/// Assemble `Υ` from the coupling tensor and the mean-amplitude generators.
pub fn assemble_transport(
    basis: &ModeBasis,
    tensor: &CouplingTensor,
    model: &CovarianceModel,
    moments: &ModeMoments,
) -> Result<TransportOperator> {
    let n = basis.n_propagating();
    if moments.blocks.len() != n || tensor.n_propagating() != n {
        return Err(Error::Dimension("moments, tensor and basis differ in group count".into()));
    }
    let hbasis = HermitianBasis::new(basis);
    for (j, b) in moments.blocks.iter().enumerate() {
        if b.q.nrows() != hbasis.sizes[j] {
            return Err(Error::Dimension(format!("Q block {j} has the wrong size")));
        }
    }
    let dim = hbasis.dim;
    let blocks: Vec<(usize, usize, DMatrix<f64>)> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (j, l) = (idx / n, idx % n);
            let (mj, ml) = (hbasis.sizes[j], hbasis.sizes[l]);
            let dens = gain_densities(basis, tensor, model, j, l)?;
            let mut block = DMatrix::zeros(mj * mj, ml * ml);
            for b in 0..ml * ml {
                let e = HermitianBasis::element(ml, b);
                let out = CMatrix::from_fn(mj, mj, |s, s2| {
                    let mut acc = c(0.0, 0.0);
                    for q in 0..ml {
                        for q2 in 0..ml {
                            acc += dens[((s * mj + s2) * ml + q) * ml + q2] * e[(q, q2)];
                        }
                    }
                    acc
                });
                for (a, v) in HermitianBasis::block_coords(&out).into_iter().enumerate() {
                    block[(a, b)] = v;
                }
            }
            Ok((j, l, block))
        })
        .collect::<Result<_>>()?;
    let mut gain = DMatrix::zeros(dim, dim);
    for (j, l, block) in blocks {
        gain.view_mut((hbasis.offsets[j], hbasis.offsets[l]), block.shape()).copy_from(&block);
    }
    let mut loss = DMatrix::zeros(dim, dim);
    for (j, mb) in moments.blocks.iter().enumerate() {
        let m = hbasis.sizes[j];
        let o = hbasis.offsets[j];
        for b in 0..m * m {
            let e = HermitianBasis::element(m, b);
            let out = &mb.q * &e + &e * mb.q.adjoint();
            for (a, v) in HermitianBasis::block_coords(&out).into_iter().enumerate() {
                loss[(o + a, o + b)] = v;
            }
        }
    }
    let matrix = &gain + &loss;
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("transport operator".into()));
    }
    Ok(TransportOperator { hbasis, gain, loss, matrix })
}

/// Spectrum, kernel and equipartition state of `Υ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    /// Eigenvalues ordered by decreasing real part (slowest decay first).
    pub eigenvalues: Vec<Complex64>,
    /// Spectral norm of `Υ`.
    pub norm: f64,
    /// Number of eigenvalues with `|λ| ≤ KERNEL_TOL · max|λ|`.
    pub kernel_dim: usize,
    /// Equipartition state, Hermitian PSD blocks with unit total trace.
    pub u_o: Vec<CMatrix>,
    /// Most negative block eigenvalue of the raw kernel vector relative to its trace.
    pub cone_violation: f64,
    /// Slowest decaying non-kernel eigenvalue.
    pub lambda_gap: Complex64,
    /// Multiplicity of `lambda_gap` (relative tolerance 1e-6).
    pub gap_multiplicity: usize,
    /// Equipartition distance `1 / |Re λ_gap|`.
    pub l_eq: f64,
    /// `‖Υ(U_o)‖ / ‖Υ‖` in coordinates (`U_o` has unit coordinate norm scale).
    pub kernel_residual: f64,
}

impl SpectralResult {
    /// Largest `|Im λ| / ‖Υ‖`.
    pub fn max_imag_ratio(&self) -> f64 {
        self.eigenvalues.iter().map(|e| e.im.abs()).fold(0.0, f64::max) / self.norm
    }

    /// Largest `Re λ / ‖Υ‖`.
    pub fn max_real_ratio(&self) -> f64 {
        self.eigenvalues.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max) / self.norm
    }

    /// Frobenius mass of the off-diagonal entries of `U_o` over that of the diagonal.
    pub fn off_diagonal_ratio(&self) -> f64 {
        let (mut off, mut on) = (0.0, 0.0);
        for b in &self.u_o {
            for ((r, cidx), v) in b.iter().enumerate().map(|(i, v)| ((i % b.nrows(), i / b.nrows()), v)) {
                if r == cidx {
                    on += v.norm_sqr();
                } else {
                    off += v.norm_sqr();
                }
            }
        }
        (off / on).sqrt()
    }
}

/// Project a Hermitian block onto the PSD cone, returning the clipped block
/// and its most negative eigenvalue.
fn clip_block(b: &CMatrix) -> (CMatrix, f64) {
    let h = linalg::hermitian_part(b);
    let eig = h.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min >= 0.0 {
        return (h, min);
    }
    let vals = eig.eigenvalues.map(|v| c(v.max(0.0), 0.0));
    let v = &eig.eigenvectors;
    (v * CMatrix::from_diagonal(&vals) * v.adjoint(), min)
}

/// Eigenvalues, kernel and equipartition state.
pub fn spectrum(op: &TransportOperator) -> Result<SpectralResult> {
    let norm = op.norm();
    if norm == 0.0 {
        return Err(Error::TrivialKernel { smallest: 0.0 });
    }
    let mut eigenvalues: Vec<Complex64> = op.matrix.clone().complex_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
    let max_abs = eigenvalues.iter().map(|e| e.norm()).fold(0.0, f64::max);
    let thresh = KERNEL_TOL * max_abs;
    let kernel_dim = eigenvalues.iter().filter(|e| e.norm() <= thresh).count();
    if kernel_dim == 0 {
        let smallest = eigenvalues.iter().map(|e| e.norm()).fold(f64::INFINITY, f64::min);
        return Err(Error::TrivialKernel { smallest });
    }
    if kernel_dim > 1 {
        log::warn!(
            "transport kernel has dimension {kernel_dim}; positive energy flux between all modes may fail for this covariance"
        );
    }
    let rest: Vec<Complex64> = eigenvalues.iter().copied().filter(|e| e.norm() > thresh).collect();
    let lambda_gap = rest.first().copied().unwrap_or(c(0.0, 0.0));
    let gap_multiplicity = rest.iter().filter(|e| (**e - lambda_gap).norm() <= 1e-6 * lambda_gap.norm()).count();
    let l_eq = 1.0 / lambda_gap.re.abs();

    let svd = op.matrix.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().ok_or(Error::NonFinite("SVD of transport operator".into()))?;
    let imin = svd.singular_values.imin();
    let mut x: DVector<f64> = v_t.row(imin).transpose();
    let blocks = op.hbasis.blocks(&x);
    let total: f64 = blocks.iter().map(|b| (0..b.nrows()).map(|i| b[(i, i)].re).sum::<f64>()).sum();
    if total == 0.0 {
        return Err(Error::TrivialKernel { smallest: svd.singular_values[imin] });
    }
    x /= total;
    let kernel_residual = (&op.matrix * &x).norm() / (norm * x.norm());
    let mut cone_violation: f64 = 0.0;
    let mut u_o = Vec::with_capacity(blocks.len());
    for (j, b) in op.hbasis.blocks(&x).iter().enumerate() {
        let tr: f64 = (0..b.nrows()).map(|i| b[(i, i)].re).sum();
        let (clipped, min) = clip_block(b);
        let rel = min / tr.abs().max(f64::MIN_POSITIVE);
        if rel < 0.0 {
            cone_violation = cone_violation.min(rel);
            if min < -1e-12 {
                log::warn!("equipartition block {j} clipped: eigenvalue {min:e}, relative {rel:e}");
            }
        }
        u_o.push(clipped);
    }
    let clipped_total: f64 = u_o.iter().map(|b| (0..b.nrows()).map(|i| b[(i, i)].re).sum::<f64>()).sum();
    for b in &mut u_o {
        *b /= c(clipped_total, 0.0);
    }
    Ok(SpectralResult {
        eigenvalues,
        norm,
        kernel_dim,
        u_o,
        cone_violation,
        lambda_gap,
        gap_multiplicity,
        l_eq,
        kernel_residual,
    })
}

/// Invariant checks gathered along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDiagnostics {
    /// Largest `|Σ tr P(Z) - Σ tr P_o| / Σ tr P_o`.
    pub max_trace_drift: f64,
    /// Smallest block eigenvalue relative to the block trace (or to the total
    /// trace when the block trace vanishes).
    pub min_relative_eigenvalue: f64,
}

/// Mean power matrices on a range grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrajectory {
    pub z: Vec<f64>,
    /// `states[k][j]` is `P_j(z[k])`.
    pub states: Vec<Vec<CMatrix>>,
    pub diagnostics: TrajectoryDiagnostics,
}

fn check_grid(z_grid: &[f64]) -> Result<()> {
    if z_grid.first().is_some_and(|z| *z < 0.0) || z_grid.iter().any(|z| !z.is_finite()) {
        return Err(Error::InvalidArgument("range grid must be finite and nonnegative".into()));
    }
    if z_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("range grid must be ascending".into()));
    }
    Ok(())
}

fn trace(b: &CMatrix) -> f64 {
    (0..b.nrows()).map(|i| b[(i, i)].re).sum()
}

fn finish_trajectory(hb: &HermitianBasis, z: &[f64], coords: Vec<DVector<f64>>, p0_total: f64) -> Result<PowerTrajectory> {
    let mut max_trace_drift: f64 = 0.0;
    let mut min_rel = f64::INFINITY;
    let mut states = Vec::with_capacity(coords.len());
    for (zk, x) in z.iter().zip(&coords) {
        let blocks = hb.blocks(x);
        let total: f64 = blocks.iter().map(trace).sum();
        max_trace_drift = max_trace_drift.max((total - p0_total).abs() / p0_total.abs());
        for (j, b) in blocks.iter().enumerate() {
            let e = linalg::hermitian_eigenvalues(b)[0];
            let scale = trace(b).max(1e-300);
            let rel = if trace(b) > 1e-14 * p0_total { e / scale } else { e / p0_total };
            min_rel = min_rel.min(rel);
            if rel < -1e-8 {
                return Err(Error::ConeViolation { j, eig: e, z: *zk });
            }
        }
        states.push(blocks);
    }
    Ok(PowerTrajectory {
        z: z.to_vec(),
        states,
        diagnostics: TrajectoryDiagnostics { max_trace_drift, min_relative_eigenvalue: min_rel },
    })
}

/// `P(Z) = exp(Υ Z) P_o` on an ascending grid, stepping with cached
/// propagators `exp(Υ ΔZ)` computed by scaling and squaring.
pub fn integrate_power(op: &TransportOperator, p0: &[CMatrix], z_grid: &[f64]) -> Result<PowerTrajectory> {
    check_grid(z_grid)?;
    let hb = &op.hbasis;
    let x0 = hb.coords(p0)?;
    let p0_total: f64 = p0.iter().map(trace).sum();
    if !(p0_total > 0.0) {
        return Err(Error::InvalidArgument("initial power must have positive total trace".into()));
    }
    let mut cache: HashMap<u64, DMatrix<f64>> = HashMap::new();
    let mut coords = Vec::with_capacity(z_grid.len());
    let mut x = x0;
    let mut z_prev = 0.0;
    for z in z_grid {
        let dz = z - z_prev;
        if dz > 0.0 {
            let prop = cache.entry(dz.to_bits()).or_insert_with(|| (&op.matrix * dz).exp());
            x = &*prop * x;
        }
        coords.push(x.clone());
        z_prev = *z;
    }
    finish_trajectory(hb, z_grid, coords, p0_total)
}

/// Classical fourth-order Runge–Kutta integration with step at most `dz`,
/// landing exactly on every grid point.
pub fn integrate_power_rk4(op: &TransportOperator, p0: &[CMatrix], z_grid: &[f64], dz: f64) -> Result<PowerTrajectory> {
    check_grid(z_grid)?;
    if !(dz > 0.0) {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    let hb = &op.hbasis;
    let a = &op.matrix;
    let mut x = hb.coords(p0)?;
    let p0_total: f64 = p0.iter().map(trace).sum();
    let mut coords = Vec::with_capacity(z_grid.len());
    let mut z_prev = 0.0;
    for z in z_grid {
        let span = z - z_prev;
        let steps = (span / dz).ceil() as usize;
        if steps > 0 {
            let h = span / steps as f64;
            for _ in 0..steps {
                let k1 = a * &x;
                let k2 = a * (&x + &k1 * (0.5 * h));
                let k3 = a * (&x + &k2 * (0.5 * h));
                let k4 = a * (&x + &k3 * h);
                x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
        }
        coords.push(x.clone());
        z_prev = *z;
    }
    finish_trajectory(hb, z_grid, coords, p0_total)
}

/// Polarization split of one group at one range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepolarizationEntry {
    pub z: f64,
    pub j: usize,
    pub te_power: f64,
    pub tm_power: f64,
    /// `|P^{11} - P^{22}| / tr P`; groups with a single polarization report 1.
    pub degree: f64,
}

pub fn depolarization_report(traj: &PowerTrajectory) -> Vec<DepolarizationEntry> {
    let mut out = Vec::new();
    for (z, blocks) in traj.z.iter().zip(&traj.states) {
        for (j, b) in blocks.iter().enumerate() {
            let te = b[(0, 0)].re;
            let tm = if b.nrows() == 2 { b[(1, 1)].re } else { 0.0 };
            let tr = te + tm;
            let degree = if tr.abs() > 0.0 { (te - tm).abs() / tr } else { 0.0 };
            out.push(DepolarizationEntry { z: *z, j, te_power: te, tm_power: tm, degree });
        }
    }
    out
}

/// Frobenius distance `‖P(Z) - tr(P_o) U_o‖` in coordinates at every grid point.
pub fn equipartition_distance(traj: &PowerTrajectory, u_o: &[CMatrix], hb: &HermitianBasis) -> Result<Vec<f64>> {
    let target = hb.coords(u_o)?;
    let total: f64 = traj.states.first().map(|s| s.iter().map(trace).sum()).unwrap_or(0.0);
    traj.states.iter().map(|s| Ok((hb.coords(s)? - &target * total).norm())).collect()
}
