//! Monte Carlo simulation of the forward coupled-amplitude equations.
//!
//! The coupling processes are linear in the cosine projections
//! `ξ_mn(z) = ∫ ν(x, z) cos(mπx1/L1) cos(nπx2/L2) dx` of the fluctuations.
//! For the separable covariance these satisfy
//! `E{ξ_mn(z) ξ_m'n'(z')} = σ² G1[m, m'] G2[n, n'] g(z - z')`, so
//! `ξ = σ L1 H L2ᵀ` with `G_a = L_a L_aᵀ` and `H` a matrix of independent
//! unit processes with correlation `g`. The unit processes come from
//! circulant embedding on a uniform grid; their range derivatives are taken
//! spectrally from the same realization.
//!
//! Each realization integrates `dA/dz = ε M(z) A` with
//! `M_{(j,s),(l,q)}(z) = M_jl^{sq}(z) e^{i(β_l - β_j)z}` by classical RK4 up
//! to the physical range `Z / ε²` of the last checkpoint.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::coupling::{CouplingTensor, FieldKind, PairField};
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix};
use crate::medium::{CovarianceModel, GaussianProfile};
use crate::modes::{ModeBasis, Polarization};
use crate::moments::{phase_shift, u_weight, w_weight, ModeMoments};
use crate::transport::{assemble_transport, integrate_power, TransportOperator};

/// Relative tolerance for negative eigenvalues of a Gram matrix or of the
/// circulant embedding before the input is declared inconsistent.
pub const GRAM_TOL: f64 = 1e-10;

/// Symmetric factor `L` with `G = L Lᵀ`, clipping round-off negatives.
pub fn psd_factor(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = g.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -GRAM_TOL * max {
        return Err(Error::IndefiniteGram(min / max));
    }
    if min < 0.0 {
        log::debug!("Gram factor: clipped eigenvalue {min:e} (relative {:e})", min / max);
    }
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

/// Circulant-embedding generator for stationary unit-variance processes with
/// correlation `g` on the grid `z_i = i h`, `0 ≤ i < n_points`.
pub struct ScalarProcessTable {
    pub h: f64,
    pub n_points: usize,
    /// Embedding length.
    pub len: usize,
    /// `sqrt(eigenvalue / len)` of the circulant covariance.
    amplitude: Vec<f64>,
    /// Signed angular frequency of each Fourier index (zero at Nyquist).
    omega: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ScalarProcessTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarProcessTable").field("h", &self.h).field("n_points", &self.n_points).field("len", &self.len).finish()
    }
}

impl ScalarProcessTable {
    pub fn new(profile: GaussianProfile, h: f64, n_points: usize) -> Result<Self> {
        if !(h > 0.0) || n_points == 0 {
            return Err(Error::InvalidArgument("grid step and length must be positive".into()));
        }
        let pad = (profile.support() / h).ceil() as usize;
        let len = (2 * (n_points + pad)).next_power_of_two();
        let mut row: Vec<Complex64> = (0..len).map(|k| c(profile.value(k.min(len - k) as f64 * h), 0.0)).collect();
        let fft = FftPlanner::new().plan_fft_forward(len);
        fft.process(&mut row);
        let max = row.iter().map(|v| v.re).fold(0.0, f64::max);
        let min = row.iter().map(|v| v.re).fold(f64::INFINITY, f64::min);
        if min < -GRAM_TOL * max {
            return Err(Error::IndefiniteGram(min / max));
        }
        let amplitude = row.iter().map(|v| (v.re.max(0.0) / len as f64).sqrt()).collect();
        let omega = (0..len)
            .map(|k| {
                let signed = if 2 * k < len {
                    k as f64
                } else if 2 * k == len {
                    0.0
                } else {
                    k as f64 - len as f64
                };
                2.0 * PI * signed / (len as f64 * h)
            })
            .collect();
        Ok(Self { h, n_points, len, amplitude, omega, fft })
    }

    /// Two independent processes and their range derivatives:
    /// `([x_a, x_b], [dx_a, dx_b])`, each of length `n_points`.
    pub fn sample_pair(&self, rng: &mut ChaCha8Rng) -> ([Vec<f64>; 2], [Vec<f64>; 2]) {
        let mut spec: Vec<Complex64> = self
            .amplitude
            .iter()
            .map(|a| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                c(a * re, a * im)
            })
            .collect();
        // The forward transform sums X_k e^{-iω_k z}, so d/dz multiplies by -iω_k.
        let mut deriv: Vec<Complex64> = spec.iter().zip(&self.omega).map(|(x, w)| x * c(0.0, -w)).collect();
        self.fft.process(&mut spec);
        self.fft.process(&mut deriv);
        let n = self.n_points;
        (
            [spec[..n].iter().map(|v| v.re).collect(), spec[..n].iter().map(|v| v.im).collect()],
            [deriv[..n].iter().map(|v| v.re).collect(), deriv[..n].iter().map(|v| v.im).collect()],
        )
    }
}

/// Realization machinery for the cosine projections `ξ_mn(z)` and their derivatives.
#[derive(Debug)]
pub struct ProcessSynthesizer {
    /// `σ L1`, `(m1 × m1)`.
    pub factor1: DMatrix<f64>,
    /// `L2`, `(m2 × m2)`.
    pub factor2: DMatrix<f64>,
    pub table: ScalarProcessTable,
}

/// One realization of the projections on the synthesis grid, stored
/// `[point][m * m2 + n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPath {
    pub m2: usize,
    pub values: Vec<Vec<f64>>,
    pub derivatives: Vec<Vec<f64>>,
}

impl ProcessSynthesizer {
    /// Factor the leading `(m1, m2)` blocks of the tensor's Gram matrices and
    /// prepare a grid of `n_points` values with spacing `h`.
    pub fn new(
        tensor: &CouplingTensor,
        model: &CovarianceModel,
        m_counts: (usize, usize),
        h: f64,
        n_points: usize,
    ) -> Result<Self> {
        let (m1, m2) = m_counts;
        let [g1, g2] = &tensor.grams;
        if m1 > g1.matrix.nrows() || m2 > g2.matrix.nrows() || m1 == 0 || m2 == 0 {
            return Err(Error::Dimension("requested projections exceed the tensor Gram size".into()));
        }
        let f1 = psd_factor(&g1.matrix.view((0, 0), (m1, m1)).into_owned())? * model.sigma2.sqrt();
        let f2 = psd_factor(&g2.matrix.view((0, 0), (m2, m2)).into_owned())?;
        let table = ScalarProcessTable::new(model.longitudinal, h, n_points)?;
        Ok(Self { factor1: f1, factor2: f2, table })
    }

    pub fn n_projections(&self) -> usize {
        self.factor1.nrows() * self.factor2.nrows()
    }

    /// Draw one realization.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> ProjectionPath {
        let (m1, m2) = (self.factor1.nrows(), self.factor2.nrows());
        let count = m1 * m2;
        let n = self.table.n_points;
        let mut raw = Vec::with_capacity(count);
        let mut raw_d = Vec::with_capacity(count);
        while raw.len() < count {
            let ([a, b], [da, db]) = self.table.sample_pair(rng);
            raw.push(a);
            raw_d.push(da);
            if raw.len() < count {
                raw.push(b);
                raw_d.push(db);
            }
        }
        let mix = |src: &Vec<Vec<f64>>, i: usize| -> Vec<f64> {
            let h = DMatrix::from_fn(m1, m2, |a, b| src[a * m2 + b][i]);
            let x = &self.factor1 * h * self.factor2.transpose();
            (0..count).map(|k| x[(k / m2, k % m2)]).collect()
        };
        ProjectionPath {
            m2,
            values: (0..n).map(|i| mix(&raw, i)).collect(),
            derivatives: (0..n).map(|i| mix(&raw_d, i)).collect(),
        }
    }
}

/// Flattened propagating modes `(group, polarization)` in block order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeIndex {
    pub modes: Vec<(usize, Polarization)>,
    /// First flattened index of each group.
    pub offsets: Vec<usize>,
}

impl ModeIndex {
    pub fn new(basis: &ModeBasis) -> Self {
        let mut modes = Vec::new();
        let mut offsets = Vec::new();
        for (j, g) in basis.propagating.iter().enumerate() {
            offsets.push(modes.len());
            for s in g.polarizations() {
                modes.push((j, *s));
            }
        }
        Self { modes, offsets }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Split a flattened vector into per-group blocks.
    pub fn blocks(&self, a: &[Complex64]) -> Vec<Vec<Complex64>> {
        let mut out: Vec<Vec<Complex64>> = Vec::with_capacity(self.offsets.len());
        for (k, &(j, _)) in self.modes.iter().enumerate() {
            if out.len() <= j {
                out.push(Vec::new());
            }
            out[j].push(a[k]);
        }
        out
    }
}

/// Leading-order forward coupling matrix as a linear function of the projections:
/// `M(z) = Σ_p ξ_p(z) value_terms[p] + ξ_p'(z) derivative_terms[p]` before phases.
#[derive(Debug, Clone)]
pub struct ForwardSystem {
    pub index: ModeIndex,
    pub betas: Vec<f64>,
    pub value_terms: Vec<CMatrix>,
    pub derivative_terms: Vec<CMatrix>,
    /// Real symmetric matrices `B_p` with `M + M* = d/dz Σ_p ξ_p B̃_p(z)`,
    /// where `B̃_p` carries the same phases as `M`.
    pub boundary_terms: Vec<DMatrix<f64>>,
    pub m_counts: (usize, usize),
}

impl ForwardSystem {
    pub fn new(basis: &ModeBasis) -> Self {
        let k = basis.geometry.k;
        let index = ModeIndex::new(basis);
        let (j1max, j2max) = basis
            .propagating
            .iter()
            .fold((0u32, 0u32), |(a, b), g| (a.max(g.j1), b.max(g.j2)));
        let m1 = 2 * j1max as usize + 1;
        let m2 = 2 * j2max as usize + 1;
        let n = index.len();
        let mut value_terms = vec![linalg::zeros(n); m1 * m2];
        let mut derivative_terms = vec![linalg::zeros(n); m1 * m2];
        let betas = index.modes.iter().map(|(j, _)| basis.propagating[*j].beta).collect();
        for (a, &(j, s)) in index.modes.iter().enumerate() {
            let gj = basis.propagating[j];
            for (b, &(l, q)) in index.modes.iter().enumerate() {
                let gl = basis.propagating[l];
                let pre = 0.5 * u_weight(s, gj.beta, k) * w_weight(q, gl.beta, k);
                let psi_coef = c(0.0, pre * (gl.beta + phase_shift(s, &gj)));
                let theta_coef = c(0.0, pre / gl.beta);
                for (kind, weight) in [(FieldKind::Psi, psi_coef), (FieldKind::Theta, theta_coef)] {
                    for term in PairField::new((gj, s), (gl, q), kind).terms() {
                        for (m, ca) in term.axis1.iter() {
                            for (nn, cb) in term.axis2.iter() {
                                let p = m * m2 + nn;
                                let v = term.coef * ca * cb;
                                value_terms[p][(a, b)] += weight * v;
                                if kind == FieldKind::Psi {
                                    derivative_terms[p][(a, b)] += c(pre * v, 0.0);
                                }
                            }
                        }
                    }
                }
            }
        }
        let boundary_terms = derivative_terms
            .iter()
            .map(|d| {
                let re = d.map(|v| v.re);
                &re + re.transpose()
            })
            .collect();
        Self { index, betas, value_terms, derivative_terms, boundary_terms, m_counts: (m1, m2) }
    }

    /// `ε M(z)` including the phases, at synthesis point `i` (range `z`).
    fn coupling(&self, path: &ProjectionPath, i: usize, z: f64, epsilon: f64) -> CMatrix {
        let n = self.index.len();
        let mut m = linalg::zeros(n);
        for (p, (tv, td)) in self.value_terms.iter().zip(&self.derivative_terms).enumerate() {
            let xv = path.values[i][p];
            let xd = path.derivatives[i][p];
            m.zip_zip_apply(tv, td, |acc, a, b| *acc += a * xv + b * xd);
        }
        let phase: Vec<Complex64> = self.betas.iter().map(|b| c(0.0, b * z).exp()).collect();
        for a in 0..n {
            for b in 0..n {
                m[(a, b)] *= phase[b] * phase[a].conj() * epsilon;
            }
        }
        m
    }

    /// `ε A* B̃(z) A`: the bounded part of `|A|²` produced by the total-derivative
    /// component of `M + M*`.
    fn boundary_energy(&self, path: &ProjectionPath, i: usize, z: f64, epsilon: f64, a: &DVector<Complex64>) -> f64 {
        let shifted: Vec<Complex64> = a.iter().zip(&self.betas).map(|(v, b)| v * c(0.0, b * z).exp()).collect();
        let mut acc = 0.0;
        for (p, bp) in self.boundary_terms.iter().enumerate() {
            let x = path.values[i][p];
            if x == 0.0 {
                continue;
            }
            let mut form = c(0.0, 0.0);
            for (r, ar) in shifted.iter().enumerate() {
                let mut row = c(0.0, 0.0);
                for (s, as_) in shifted.iter().enumerate() {
                    row += as_ * bp[(r, s)];
                }
                form += ar.conj() * row;
            }
            acc += x * form.re;
        }
        epsilon * acc
    }
}

/// Monte Carlo run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub epsilon: f64,
    /// Checkpoints in diffusion range units; physical range is `Z / ε²`.
    pub checkpoints: Vec<f64>,
    /// Requested RK4 step in physical range.
    pub dz: f64,
    pub n_realizations: usize,
    pub seed: u64,
    /// Initial amplitudes in flattened mode order.
    pub a0: Vec<Complex64>,
}

/// Ensemble statistics at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct McCheckpoint {
    /// Diffusion range actually reached (a multiple of the step).
    pub z: f64,
    pub mean: Vec<Complex64>,
    /// Standard errors of the real and imaginary parts of `mean`.
    pub mean_se: Vec<(f64, f64)>,
    /// Empirical `E{A_j A_j*}` per group.
    pub power: Vec<CMatrix>,
    /// Standard errors of real and imaginary parts of `power` entries.
    pub power_se: Vec<DMatrix<(f64, f64)>>,
    /// Mean and maximum over realizations of the relative energy drift.
    pub drift_mean: f64,
    pub drift_max: f64,
    /// Maximum over realizations of the change of `|A|² - ε A* B̃ A`.
    pub corrected_drift_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub config: McConfig,
    /// Physical step used.
    pub dz: f64,
    pub checkpoints: Vec<McCheckpoint>,
}

/// Amplitudes of one realization at the requested steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPath {
    pub states: Vec<DVector<Complex64>>,
    /// Relative change of `|A|² - ε A* B̃ A` at each requested step.
    pub corrected_drift: Vec<f64>,
}

/// Integrate one realization; returns the amplitudes at the requested step indices.
///
/// `M + M*` is a range derivative, so `|A|²` carries a bounded `O(ε)`
/// oscillation even for an exact solution. Step instability is detected on
/// `|A|² - ε A* B̃ A`, which only changes at second order; a relative change
/// above 10% is reported as [`Error::Unstable`].
pub fn integrate_forward(
    system: &ForwardSystem,
    path: &ProjectionPath,
    epsilon: f64,
    a0: &[Complex64],
    dz: f64,
    stops: &[usize],
) -> Result<ForwardPath> {
    if a0.len() != system.index.len() {
        return Err(Error::Dimension("initial amplitudes do not match the mode count".into()));
    }
    let last = stops.iter().copied().max().unwrap_or(0);
    if 2 * last >= path.values.len() {
        return Err(Error::Dimension("synthesized path shorter than the integration range".into()));
    }
    let e0: f64 = a0.iter().map(|v| v.norm_sqr()).sum();
    let mut a = DVector::from_column_slice(a0);
    let corrected0 = e0 - system.boundary_energy(path, 0, 0.0, epsilon, &a);
    let mut out = Vec::with_capacity(stops.len());
    let mut corrected_drift = Vec::with_capacity(stops.len());
    let mut drift = 0.0;
    let mut next_stop = 0;
    let mut m_left = system.coupling(path, 0, 0.0, epsilon);
    for step in 0..=last {
        while next_stop < stops.len() && stops[next_stop] == step {
            out.push(a.clone());
            corrected_drift.push(drift);
            next_stop += 1;
        }
        if step == last {
            break;
        }
        let z = step as f64 * dz;
        let m_mid = system.coupling(path, 2 * step + 1, z + 0.5 * dz, epsilon);
        let m_right = system.coupling(path, 2 * step + 2, z + dz, epsilon);
        let h = c(dz, 0.0);
        let k1 = &m_left * &a;
        let k2 = &m_mid * (&a + &k1 * (h * 0.5));
        let k3 = &m_mid * (&a + &k2 * (h * 0.5));
        let k4 = &m_right * (&a + &k3 * h);
        a += (k1 + k2 * c(2.0, 0.0) + k3 * c(2.0, 0.0) + k4) * (h / 6.0);
        m_left = m_right;
        let e: f64 = a.iter().map(|v| v.norm_sqr()).sum();
        let corrected = e - system.boundary_energy(path, 2 * step + 2, z + dz, epsilon, &a);
        drift = (corrected - corrected0).abs() / e0;
        if !(drift <= 0.1) {
            return Err(Error::Unstable { drift });
        }
    }
    Ok(ForwardPath { states: out, corrected_drift })
}

/// Per-chunk running sums, combined in a fixed order.
#[derive(Clone)]
struct Accumulator {
    count: usize,
    sum: Vec<Vec<Complex64>>,
    sum_sq: Vec<Vec<(f64, f64)>>,
    power: Vec<Vec<CMatrix>>,
    power_sq: Vec<Vec<DMatrix<(f64, f64)>>>,
    drift_sum: Vec<f64>,
    drift_max: Vec<f64>,
    corrected_max: Vec<f64>,
}

impl Accumulator {
    fn new(n_checkpoints: usize, index: &ModeIndex, sizes: &[usize]) -> Self {
        let n = index.len();
        Self {
            count: 0,
            sum: vec![vec![c(0.0, 0.0); n]; n_checkpoints],
            sum_sq: vec![vec![(0.0, 0.0); n]; n_checkpoints],
            power: vec![sizes.iter().map(|m| linalg::zeros(*m)).collect(); n_checkpoints],
            power_sq: vec![sizes.iter().map(|m| DMatrix::from_element(*m, *m, (0.0, 0.0))).collect(); n_checkpoints],
            drift_sum: vec![0.0; n_checkpoints],
            drift_max: vec![0.0; n_checkpoints],
            corrected_max: vec![0.0; n_checkpoints],
        }
    }

    fn add(&mut self, path: &ForwardPath, index: &ModeIndex, e0: f64) {
        self.count += 1;
        for (k, a) in path.states.iter().enumerate() {
            self.corrected_max[k] = self.corrected_max[k].max(path.corrected_drift[k]);
            for (i, v) in a.iter().enumerate() {
                self.sum[k][i] += v;
                let sq = &mut self.sum_sq[k][i];
                sq.0 += v.re * v.re;
                sq.1 += v.im * v.im;
            }
            for (j, o) in index.offsets.iter().enumerate() {
                let m = self.power[k][j].nrows();
                for r in 0..m {
                    for s in 0..m {
                        let p = a[o + r] * a[o + s].conj();
                        self.power[k][j][(r, s)] += p;
                        let e = &mut self.power_sq[k][j][(r, s)];
                        e.0 += p.re * p.re;
                        e.1 += p.im * p.im;
                    }
                }
            }
            let e: f64 = a.iter().map(|v| v.norm_sqr()).sum();
            let d = (e - e0).abs() / e0;
            self.drift_sum[k] += d;
            self.drift_max[k] = self.drift_max[k].max(d);
        }
    }

    fn merge(&mut self, other: &Self) {
        self.count += other.count;
        for k in 0..self.sum.len() {
            for i in 0..self.sum[k].len() {
                self.sum[k][i] += other.sum[k][i];
                self.sum_sq[k][i].0 += other.sum_sq[k][i].0;
                self.sum_sq[k][i].1 += other.sum_sq[k][i].1;
            }
            for j in 0..self.power[k].len() {
                self.power[k][j] += &other.power[k][j];
                self.power_sq[k][j].zip_apply(&other.power_sq[k][j], |a, b| {
                    a.0 += b.0;
                    a.1 += b.1;
                });
            }
            self.drift_sum[k] += other.drift_sum[k];
            self.drift_max[k] = self.drift_max[k].max(other.drift_max[k]);
            self.corrected_max[k] = self.corrected_max[k].max(other.corrected_max[k]);
        }
    }
}

fn standard_error(sum: f64, sum_sq: f64, n: usize) -> f64 {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq / nf - mean * mean) * nf / (nf - 1.0).max(1.0)).max(0.0);
    (var / nf).sqrt()
}

/// Realizations per deterministic reduction chunk.
const CHUNK: usize = 64;

/// Simulate the ensemble and collect statistics at the checkpoints.
pub fn run_monte_carlo(basis: &ModeBasis, tensor: &CouplingTensor, model: &CovarianceModel, config: &McConfig) -> Result<McResult> {
    if !(config.epsilon > 0.0 && config.epsilon < 1.0) {
        return Err(Error::InvalidArgument("epsilon must lie in (0, 1)".into()));
    }
    if config.n_realizations < 2 {
        return Err(Error::InvalidArgument("at least two realizations are needed".into()));
    }
    if config.checkpoints.iter().any(|z| !(*z >= 0.0)) || config.checkpoints.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("checkpoints must be nonnegative and ascending".into()));
    }
    let max_beta = basis.propagating.iter().map(|g| g.beta).fold(0.0, f64::max);
    let dz_limit = model.longitudinal.ell.min(2.0 * PI / max_beta) / 10.0;
    if !(config.dz > 0.0 && config.dz <= dz_limit * (1.0 + 1e-12)) {
        return Err(Error::InvalidArgument(format!("step {} exceeds the limit {dz_limit}", config.dz)));
    }
    let system = ForwardSystem::new(basis);
    if config.a0.len() != system.index.len() {
        return Err(Error::Dimension(format!("initial amplitudes need {} entries", system.index.len())));
    }
    let e0: f64 = config.a0.iter().map(|v| v.norm_sqr()).sum();
    if !(e0 > 0.0) {
        return Err(Error::InvalidArgument("initial amplitudes must carry energy".into()));
    }
    let eps2 = config.epsilon * config.epsilon;
    let z_end = config.checkpoints.last().copied().unwrap_or(0.0) / eps2;
    let n_steps = (z_end / config.dz).ceil().max(1.0) as usize;
    let dz = if z_end > 0.0 { z_end / n_steps as f64 } else { config.dz };
    let stops: Vec<usize> = config.checkpoints.iter().map(|z| ((z / eps2) / dz).round() as usize).collect();
    let synth = ProcessSynthesizer::new(tensor, model, system.m_counts, 0.5 * dz, 2 * n_steps + 1)?;
    let sizes: Vec<usize> = basis.propagating.iter().map(|g| g.multiplicity()).collect();
    let n_chunks = config.n_realizations.div_ceil(CHUNK);
    let partial: Vec<Accumulator> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut acc = Accumulator::new(stops.len(), &system.index, &sizes);
            let lo = chunk * CHUNK;
            let hi = (lo + CHUNK).min(config.n_realizations);
            for r in lo..hi {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(r as u64);
                let path = synth.sample(&mut rng);
                let fwd = integrate_forward(&system, &path, config.epsilon, &config.a0, dz, &stops)?;
                acc.add(&fwd, &system.index, e0);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = Accumulator::new(stops.len(), &system.index, &sizes);
    for p in &partial {
        total.merge(p);
    }
    let n = total.count;
    let nf = n as f64;
    let checkpoints = stops
        .iter()
        .enumerate()
        .map(|(k, stop)| McCheckpoint {
            z: *stop as f64 * dz * eps2,
            mean: total.sum[k].iter().map(|v| v / nf).collect(),
            mean_se: total.sum[k]
                .iter()
                .zip(&total.sum_sq[k])
                .map(|(s, q)| (standard_error(s.re, q.0, n), standard_error(s.im, q.1, n)))
                .collect(),
            power: total.power[k].iter().map(|p| p / c(nf, 0.0)).collect(),
            power_se: total.power[k]
                .iter()
                .zip(&total.power_sq[k])
                .map(|(p, q)| {
                    DMatrix::from_fn(p.nrows(), p.ncols(), |r, s| {
                        (standard_error(p[(r, s)].re, q[(r, s)].0, n), standard_error(p[(r, s)].im, q[(r, s)].1, n))
                    })
                })
                .collect(),
            drift_mean: total.drift_sum[k] / nf,
            drift_max: total.drift_max[k],
            corrected_drift_max: total.corrected_max[k],
        })
        .collect();
    Ok(McResult { config: config.clone(), dz, checkpoints })
}

/// Diffusion-limit predictions for the simulated (forward, leading-order) system:
/// generators without equal-range or backward-intermediate corrections and
/// the transport operator built from them.
pub fn forward_limit(
    basis: &ModeBasis,
    tensor: &CouplingTensor,
    model: &CovarianceModel,
    moments: &ModeMoments,
) -> Result<(Vec<CMatrix>, TransportOperator)> {
    let k = basis.geometry.k;
    let mut reduced = moments.clone();
    for (b, g) in reduced.blocks.iter_mut().zip(&basis.propagating) {
        b.q = b.q_forward(g, k);
    }
    let op = assemble_transport(basis, tensor, model, &reduced)?;
    Ok((reduced.q(), op))
}

/// One compared quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub z: f64,
    /// `"mean"` or `"power"`.
    pub quantity: String,
    pub j: usize,
    pub row: usize,
    pub col: usize,
    /// `"re"` or `"im"`.
    pub part: String,
    pub empirical: f64,
    pub analytic: f64,
    pub se: f64,
    pub zscore: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    /// Bonferroni-corrected two-sided threshold at the family level of 3σ.
    pub threshold: f64,
    pub max_abs_z: f64,
    /// Count of rows beyond 3 standard errors.
    pub beyond_three: usize,
    pub pass: bool,
    /// Largest absolute deviation of a power entry from its prediction.
    pub max_power_error: f64,
    /// Largest absolute deviation of a mean amplitude from its prediction.
    pub max_mean_error: f64,
}

/// Compare ensemble statistics with `e^{QZ} A_o` and with the power trajectory.
pub fn estimate_and_compare(result: &McResult, q: &[CMatrix], op: &TransportOperator, index: &ModeIndex) -> Result<ComparisonReport> {
    let a0 = index.blocks(&result.config.a0);
    if a0.len() != q.len() {
        return Err(Error::Dimension("generator count does not match the mode index".into()));
    }
    let p0: Vec<CMatrix> = a0
        .iter()
        .map(|a| {
            let v = DVector::from_column_slice(a);
            &v * v.adjoint()
        })
        .collect();
    let zs: Vec<f64> = result.checkpoints.iter().map(|c| c.z).collect();
    let traj = integrate_power(op, &p0, &zs)?;
    let mut rows = Vec::new();
    let push = |rows: &mut Vec<ComparisonRow>, z, quantity: &str, j, row, col, part: &str, emp: f64, ana: f64, se: f64| {
        let zscore = if se > 0.0 {
            (emp - ana) / se
        } else if (emp - ana).abs() <= 1e-12 * (1.0 + ana.abs()) {
            0.0
        } else {
            f64::INFINITY
        };
        rows.push(ComparisonRow {
            z,
            quantity: quantity.into(),
            j,
            row,
            col,
            part: part.into(),
            empirical: emp,
            analytic: ana,
            se,
            zscore,
        });
    };
    let mut max_power_error: f64 = 0.0;
    let mut max_mean_error: f64 = 0.0;
    for (cp, powers) in result.checkpoints.iter().zip(&traj.states) {
        let mean_blocks = index.blocks(&cp.mean);
        let se_flat: Vec<(f64, f64)> = cp.mean_se.clone();
        let mut flat = 0;
        for (j, qj) in q.iter().enumerate() {
            let expected = linalg::expm_small(&(qj * c(cp.z, 0.0))) * DVector::from_column_slice(&a0[j]);
            for (s, emp) in mean_blocks[j].iter().enumerate() {
                let (se_re, se_im) = se_flat[flat];
                flat += 1;
                max_mean_error = max_mean_error.max((emp - expected[s]).norm());
                push(&mut rows, cp.z, "mean", j, s, 0, "re", emp.re, expected[s].re, se_re);
                push(&mut rows, cp.z, "mean", j, s, 0, "im", emp.im, expected[s].im, se_im);
            }
            let m = qj.nrows();
            for r in 0..m {
                for s in r..m {
                    let emp = cp.power[j][(r, s)];
                    let ana = powers[j][(r, s)];
                    let (se_re, se_im) = cp.power_se[j][(r, s)];
                    max_power_error = max_power_error.max((emp - ana).norm());
                    push(&mut rows, cp.z, "power", j, r, s, "re", emp.re, ana.re, se_re);
                    if r != s {
                        push(&mut rows, cp.z, "power", j, r, s, "im", emp.im, ana.im, se_im);
                    }
                }
            }
        }
    }
    let tested = rows.iter().filter(|r| r.se > 0.0).count().max(1);
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let family = 2.0 * (1.0 - normal.cdf(3.0));
    let threshold = normal.inverse_cdf(1.0 - family / (2.0 * tested as f64));
    let max_abs_z = rows.iter().map(|r| r.zscore.abs()).fold(0.0, f64::max);
    let beyond_three = rows.iter().filter(|r| r.zscore.abs() > 3.0).count();
    Ok(ComparisonReport { rows, threshold, max_abs_z, beyond_three, pass: max_abs_z <= threshold, max_power_error, max_mean_error })
}
