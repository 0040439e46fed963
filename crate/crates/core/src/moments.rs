//! Diffusion-limit moment matrices of the mode amplitudes.
//!
//! Notation for a propagating group `j` with polarizations `s, t`:
//!
//! * `u_j^s = sqrt(β_j/k)` for TE and `sqrt(k/β_j)` for TM, `w_j^s = 1/u_j^s`;
//! * `a_j^s = k²/β_j` for TE and `β_j` for TM;
//! * `c_j^s = λ_j/β_j` for TE and `0` for TM.
//!
//! The leading-order forward coupling coefficient is
//! `M_jl^{sq} = ½ u_j^s w_l^q [∂Ψ_jl + i(β_l + c_j^s) Ψ_jl + (i/β_l) Θ_jl]`,
//! with the pair fields `Ψ`, `Θ` of [`crate::coupling`].
//!
//! * `C_j` is the summed power spectral density of `M_lj` at `β_l - β_j`;
//!   it is evaluated by expanding `M_lj` into the processes `∂Ψ, Ψ, Θ` and
//!   reducing every derivative covariance to a transform of `g`.
//! * `Q_j = diag(u_j) U_j diag(w_j) + i κ_j`, where `U_j` collects the
//!   one-sided integrals of `E{M_jl(z) M_lj(0)}` (through forward
//!   intermediate modes, plus the reactive part of the path through
//!   backward intermediate modes) and `κ_j` the equal-range second-order
//!   terms, including coupling through evanescent modes.
//!
//! `C_j` and `U_j` share only the pair-field covariances, so the balance
//! `Q_j + Q_j* + C_j = 0` is a genuine cross-check of both.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{AssemblyOptions, CouplingTensor, FieldKind, PairKernel};
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix};
use crate::medium::{damped_pair, z_fourier, CovarianceModel};
use crate::modes::{enumerate_modes, Geometry, ModeBasis, ModeGroup, Polarization};

/// Scale factor `u_j^s`.
pub fn u_weight(s: Polarization, beta: f64, k: f64) -> f64 {
    match s {
        Polarization::Te => (beta / k).sqrt(),
        Polarization::Tm => (k / beta).sqrt(),
    }
}

/// Scale factor `w_j^s = 1 / u_j^s`.
pub fn w_weight(s: Polarization, beta: f64, k: f64) -> f64 {
    1.0 / u_weight(s, beta, k)
}

/// Effective wavenumber `a_j^s`.
pub fn a_weight(s: Polarization, beta: f64, k: f64) -> f64 {
    match s {
        Polarization::Te => k * k / beta,
        Polarization::Tm => beta,
    }
}

/// Phase shift `c_j^s`.
pub fn phase_shift(s: Polarization, group: &ModeGroup) -> f64 {
    match s {
        Polarization::Te => group.lambda / group.beta,
        Polarization::Tm => 0.0,
    }
}

/// Weighting of the divergence fields in the forward-intermediate sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaWeighting {
    /// `Θ/(β_j β_l)` on both factors.
    Symmetric,
    /// `Θ/β_j²` on the left factor and `Θ/β_l²` on the right factor.
    Asymmetric,
}

/// Choices entering the moment computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentOptions {
    pub theta_weighting: ThetaWeighting,
    /// Include the reactive path through backward intermediate modes.
    pub backward_virtual: bool,
    /// Include coupling through evanescent modes in `κ_j`.
    pub include_evanescent: bool,
    /// Number of evanescent groups to sum; `None` uses all in the basis.
    pub n_ev: Option<usize>,
}

impl Default for MomentOptions {
    fn default() -> Self {
        Self { theta_weighting: ThetaWeighting::Symmetric, backward_virtual: true, include_evanescent: true, n_ev: None }
    }
}

/// Moment matrices of one propagating group.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentBlock {
    /// Mean-amplitude generator `Q_j`.
    pub q: CMatrix,
    /// Hermitian power-spectral-density matrix `C_j` (symmetrized).
    pub c: CMatrix,
    /// Relative anti-Hermitian part of `C_j` before symmetrization.
    pub c_asymmetry: f64,
    /// `U_j` (forward and backward-reactive parts) before weight conjugation.
    pub u: CMatrix,
    /// Forward-intermediate part of `U_j` alone.
    pub u_forward: CMatrix,
    /// Real equal-range correction `κ_j`.
    pub kappa: DMatrix<f64>,
    /// Evanescent sum before weight conjugation.
    pub m_evanescent: DMatrix<f64>,
    /// Second-order mean of the self-coupling before weight conjugation.
    pub m_second_order: DMatrix<f64>,
}

impl MomentBlock {
    /// Generator of the forward-only amplitude equations (no equal-range or
    /// backward-intermediate terms), the limit reached by forward simulation.
    pub fn q_forward(&self, group: &ModeGroup, k: f64) -> CMatrix {
        let (u, w) = weights(group, k);
        linalg::diag(&u) * &self.u_forward * linalg::diag(&w)
    }

    /// `‖Q + Q* + C‖ / (‖Q‖ + ‖C‖)` in the Frobenius norm.
    pub fn balance_residual(&self) -> f64 {
        balance_residual(&self.q, &self.c)
    }
}

/// Relative Frobenius residual of `Q + Q* + C`.
pub fn balance_residual(q: &CMatrix, cmat: &CMatrix) -> f64 {
    let r = q + q.adjoint() + cmat;
    let denom = linalg::frobenius(q) + linalg::frobenius(cmat);
    if denom == 0.0 {
        0.0
    } else {
        linalg::frobenius(&r) / denom
    }
}

/// Moments of every propagating group.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeMoments {
    pub blocks: Vec<MomentBlock>,
    pub options: MomentOptions,
    /// Number of evanescent groups actually summed.
    pub n_ev_used: usize,
}

impl ModeMoments {
    pub fn q(&self) -> Vec<CMatrix> {
        self.blocks.iter().map(|b| b.q.clone()).collect()
    }

    pub fn c(&self) -> Vec<CMatrix> {
        self.blocks.iter().map(|b| b.c.clone()).collect()
    }

    /// Largest balance residual over all groups.
    pub fn max_balance_residual(&self) -> f64 {
        self.blocks.iter().map(MomentBlock::balance_residual).fold(0.0, f64::max)
    }
}

fn weights(group: &ModeGroup, k: f64) -> (Vec<f64>, Vec<f64>) {
    let pols = group.polarizations();
    (
        pols.iter().map(|s| u_weight(*s, group.beta, k)).collect(),
        pols.iter().map(|s| w_weight(*s, group.beta, k)).collect(),
    )
}

/// One process entering a coupling coefficient: a pair field of the kernel,
/// the order of its range derivative, and a complex weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessTerm {
    pub kind: FieldKind,
    pub left: Polarization,
    pub right: Polarization,
    pub deriv: u8,
    pub coef: Complex64,
}

/// `M_jl^{sq}` as a combination of `∂Ψ_jl, Ψ_jl, Θ_jl` for the kernel `(j, l)`.
pub fn coupling_terms(kernel: &PairKernel, s: Polarization, q: Polarization, k: f64) -> [ProcessTerm; 3] {
    let gj = &kernel.left;
    let gl = &kernel.right;
    let pre = 0.5 * u_weight(s, gj.beta, k) * w_weight(q, gl.beta, k);
    let term = |kind, deriv, coef| ProcessTerm { kind, left: s, right: q, deriv, coef };
    [
        term(FieldKind::Psi, 1, c(pre, 0.0)),
        term(FieldKind::Psi, 0, c(0.0, pre * (gl.beta + phase_shift(s, gj)))),
        term(FieldKind::Theta, 0, c(0.0, pre / gl.beta)),
    ]
}

/// `∫ E{X(z) Y(0)} e^{iΔz} dz` for `X = Σ a_i P_i`, `Y = Σ b_i P_i`, where
/// the processes are pair fields of one kernel and their range derivatives.
///
/// With `E{P(z1) P'(z2)} = B(P, P') g(z1 - z2)`, a derivative on the first
/// factor contributes `g'` and one on the second factor `-g'`.
pub fn cross_spectrum(
    kernel: &PairKernel,
    model: &CovarianceModel,
    x: &[ProcessTerm],
    y: &[ProcessTerm],
    delta: f64,
) -> Complex64 {
    let mut acc = c(0.0, 0.0);
    for a in x {
        for b in y {
            let bval = kernel.value(a.kind, a.left, a.right, b.kind, b.left, b.right);
            if bval == 0.0 {
                continue;
            }
            let sign = if b.deriv % 2 == 1 { -1.0 } else { 1.0 };
            acc += a.coef * b.coef * bval * sign * z_fourier(model, delta, a.deriv + b.deriv);
        }
    }
    acc
}

fn conj_terms(terms: &[ProcessTerm; 3]) -> [ProcessTerm; 3] {
    terms.map(|t| ProcessTerm { coef: t.coef.conj(), ..t })
}

/// `C_j` for every propagating group, with the relative anti-Hermitian part
/// found before symmetrization.
pub fn compute_c(basis: &ModeBasis, tensor: &CouplingTensor, model: &CovarianceModel) -> Result<Vec<(CMatrix, f64)>> {
    let n = basis.n_propagating();
    let k = basis.geometry.k;
    (0..n)
        .into_par_iter()
        .map(|j| {
            let gj = basis.propagating[j];
            let pols = gj.polarizations();
            let m = pols.len();
            let mut cm = linalg::zeros(m);
            for l in 0..n {
                let kernel = tensor.propagating_pair(basis, l, j)?;
                let gl = kernel.left;
                let delta = gl.beta - gj.beta;
                for q in gl.polarizations() {
                    for (si, s) in pols.iter().enumerate() {
                        let left = conj_terms(&coupling_terms(&kernel, *q, *s, k));
                        for (ti, t) in pols.iter().enumerate() {
                            let right = coupling_terms(&kernel, *q, *t, k);
                            cm[(si, ti)] += cross_spectrum(&kernel, model, &left, &right, delta);
                        }
                    }
                }
            }
            let scale = linalg::frobenius(&cm);
            let asym = if scale > 0.0 { linalg::frobenius(&(&cm - cm.adjoint())) / scale } else { 0.0 };
            if asym > 1e-9 {
                log::warn!("C block {j} has relative anti-Hermitian part {asym:e}");
            }
            Ok((linalg::hermitian_part(&cm), asym))
        })
        .collect()
}

/// Sine transforms `H_s(β_l - β_j)` and `H_s(β_l + β_j)` over propagating pairs.
struct SineTable {
    n: usize,
    diff: Vec<f64>,
    sum: Vec<f64>,
}

impl SineTable {
    fn new(basis: &ModeBasis, model: &CovarianceModel) -> Result<Self> {
        let n = basis.n_propagating();
        let entries: Vec<(f64, f64)> = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let (j, l) = (idx / n, idx % n);
                let bj = basis.propagating[j].beta;
                let bl = basis.propagating[l].beta;
                Ok((model.h_sin(bl - bj)?, model.h_sin(bl + bj)?))
            })
            .collect::<Result<_>>()?;
        let (diff, sum) = entries.into_iter().unzip();
        Ok(Self { n, diff, sum })
    }

    fn diff(&self, j: usize, l: usize) -> f64 {
        self.diff[j * self.n + l]
    }

    fn sum(&self, j: usize, l: usize) -> f64 {
        self.sum[j * self.n + l]
    }
}

/// One-sided generator integral of a product of two coupling coefficients.
///
/// The left coefficient is `∂Ψ_L + i c_L Ψ_L + i t_L Θ_L` at range `z`, the
/// right one `∂Ψ_R + i c_R Ψ_R + i t_R Θ_R` at range `0`, and the phase is
/// `e^{iΔz}`. `transform` is the one-sided transform of `g` at `Δ`. The
/// sandwich `[ΨΨ, ΨΘ, ΘΨ, ΘΘ]` holds the pair-field covariances.
#[allow(clippy::too_many_arguments)]
pub fn generator_term(
    sandwich: [f64; 4],
    delta: f64,
    c_left: f64,
    t_left: f64,
    c_right: f64,
    t_right: f64,
    transform: Complex64,
) -> Complex64 {
    let [pp, pt, tp, tt] = sandwich;
    let i = c(0.0, 1.0);
    let it = transform;
    let mut v = pp * (-i * delta + delta * delta * it);
    v += (-1.0 - i * delta * it) * i * (c_right * pp + t_right * pt);
    v += (1.0 + i * delta * it) * i * (c_left * pp + t_left * tp);
    v -= it * (c_left * c_right * pp + c_left * t_right * pt + t_left * c_right * tp + t_left * t_right * tt);
    0.25 * v
}

/// Forward-intermediate part of `U_j` in closed form.
fn forward_u_block(
    basis: &ModeBasis,
    tensor: &CouplingTensor,
    model: &CovarianceModel,
    table: &SineTable,
    j: usize,
    weighting: ThetaWeighting,
) -> Result<CMatrix> {
    let k = basis.geometry.k;
    let gj = basis.propagating[j];
    let pols = gj.polarizations();
    let mut u = linalg::zeros(pols.len());
    let i = c(0.0, 1.0);
    for l in 0..basis.n_propagating() {
        let kernel = tensor.propagating_pair(basis, j, l)?;
        let gl = kernel.right;
        let (bj, bl) = (gj.beta, gl.beta);
        let transform = c(model.h_cos(bl - bj), table.diff(j, l));
        for q in gl.polarizations() {
            for (si, s) in pols.iter().enumerate() {
                for (ti, t) in pols.iter().enumerate() {
                    let [pp, pt, tp, tt] = kernel.sandwich(*s, *q, *t);
                    let equal_range = (phase_shift(*s, &gj) - phase_shift(*q, &gl)) * pp - pt / bj + tp / bl;
                    let crossed = match weighting {
                        ThetaWeighting::Symmetric => {
                            let r = 1.0 / (bj * bl);
                            pp + (pt + tp) * r + tt * r * r
                        }
                        ThetaWeighting::Asymmetric => {
                            pp + pt / (bl * bl) + tp / (bj * bj) + tt / (bj * bj * bl * bl)
                        }
                    };
                    let aa = a_weight(*s, bj, k) * a_weight(*q, bl, k);
                    u[(si, ti)] += 0.25 * (i * equal_range - aa * transform * crossed);
                }
            }
        }
    }
    Ok(u)
}

/// Forward-intermediate part of `U_j` from the generic generator term.
pub fn forward_u_by_generator(
    basis: &ModeBasis,
    tensor: &CouplingTensor,
    model: &CovarianceModel,
    j: usize,
) -> Result<CMatrix> {
    let gj = basis.propagating[j];
    let pols = gj.polarizations();
    let mut u = linalg::zeros(pols.len());
    for l in 0..basis.n_propagating() {
        let kernel = tensor.propagating_pair(basis, j, l)?;
        let gl = kernel.right;
        let delta = gl.beta - gj.beta;
        let transform = c(model.h_cos(delta), model.h_sin(delta)?);
        for q in gl.polarizations() {
            for (si, s) in pols.iter().enumerate() {
                for (ti, t) in pols.iter().enumerate() {
                    u[(si, ti)] += generator_term(
                        kernel.sandwich(*s, *q, *t),
                        delta,
                        gl.beta + phase_shift(*s, &gj),
                        1.0 / gl.beta,
                        gj.beta + phase_shift(*q, &gl),
                        1.0 / gj.beta,
                        transform,
                    );
                }
            }
        }
    }
    Ok(u)
}

/// Reactive part of the path through backward intermediate modes.
fn backward_u_block(basis: &ModeBasis, tensor: &CouplingTensor, table: &SineTable, j: usize) -> Result<CMatrix> {
    let gj = basis.propagating[j];
    let pols = gj.polarizations();
    let mut u = linalg::zeros(pols.len());
    for l in 0..basis.n_propagating() {
        let kernel = tensor.propagating_pair(basis, j, l)?;
        let gl = kernel.right;
        let delta = -(gl.beta + gj.beta);
        // H_s is odd.
        let transform = c(0.0, -table.sum(j, l));
        for q in gl.polarizations() {
            for (si, s) in pols.iter().enumerate() {
                for (ti, t) in pols.iter().enumerate() {
                    u[(si, ti)] += generator_term(
                        kernel.sandwich(*s, *q, *t),
                        delta,
                        -gl.beta + phase_shift(*s, &gj),
                        -1.0 / gl.beta,
                        gj.beta - phase_shift(*q, &gl),
                        1.0 / gj.beta,
                        transform,
                    );
                }
            }
        }
    }
    Ok(u)
}

/// `U_j` for every propagating group: `(forward + backward, forward)`.
pub fn compute_u(
    basis: &ModeBasis,
    tensor: &CouplingTensor,
    model: &CovarianceModel,
    options: &MomentOptions,
) -> Result<Vec<(CMatrix, CMatrix)>> {
    let table = SineTable::new(basis, model)?;
    (0..basis.n_propagating())
        .into_par_iter()
        .map(|j| {
            let fwd = forward_u_block(basis, tensor, model, &table, j, options.theta_weighting)?;
            let total = if options.backward_virtual {
                &fwd + backward_u_block(basis, tensor, &table, j)?
            } else {
                fwd.clone()
            };
            Ok((total, fwd))
        })
        .collect()
}

/// Evanescent sum of one group over the first `n_ev` evanescent groups.
fn evanescent_block(
    basis: &ModeBasis,
    tensor: &CouplingTensor,
    model: &CovarianceModel,
    j: usize,
    n_ev: usize,
) -> Result<DMatrix<f64>> {
    let gj = basis.propagating[j];
    let pols = gj.polarizations();
    let m = pols.len();
    let (bj, lj) = (gj.beta, gj.lambda);
    let mut me = DMatrix::zeros(m, m);
    for gl in basis.evanescent.iter().take(n_ev) {
        let kernel = tensor.pair(&gj, gl)?;
        let (bl, ll) = (gl.beta, gl.lambda);
        let (jc, js) = damped_pair(model, bj, bl)?;
        for q in gl.polarizations() {
            let te_l = if *q == Polarization::Te { ll / (bl * bl) } else { 0.0 };
            for (si, s) in pols.iter().enumerate() {
                let te_j = *s == Polarization::Te;
                let f = 1.0 + if te_j { lj / (bj * bj) } else { 0.0 };
                for (ti, t) in pols.iter().enumerate() {
                    let [pp, pt, tp, tt] = kernel.sandwich(*s, *q, *t);
                    let mut v = (if te_j { lj * pp } else { 0.0 } - pt) / bj;
                    v += js * (tp + f * pt);
                    v += jc * (tt / (bj * bl) + bj * bl * f * (te_l - 1.0) * pp);
                    me[(si, ti)] += v;
                }
            }
        }
    }
    Ok(me)
}

/// Second-order mean of the self-coupling: `-λ_j σ²/β_j` in the TE slot.
fn second_order_block(group: &ModeGroup, sigma2: f64) -> DMatrix<f64> {
    let m = group.multiplicity();
    let mut out = DMatrix::zeros(m, m);
    out[(0, 0)] = -group.lambda * sigma2 / group.beta;
    out
}

/// Parts of `κ_j`: `(κ_j, evanescent sum, second-order mean)`.
pub type KappaParts = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);

/// `κ_j = ½ diag(u) (M^e + M) diag(w)` for every propagating group.
pub fn compute_kappa(
    basis: &ModeBasis,
    tensor: &CouplingTensor,
    model: &CovarianceModel,
    include_evanescent: bool,
    n_ev: usize,
) -> Result<Vec<KappaParts>> {
    let k = basis.geometry.k;
    let n_ev = if include_evanescent { n_ev.min(basis.n_evanescent()) } else { 0 };
    if include_evanescent && n_ev == 0 {
        log::warn!("evanescent coupling enabled with no evanescent groups; kappa holds the self-coupling term only");
    }
    (0..basis.n_propagating())
        .into_par_iter()
        .map(|j| {
            let gj = basis.propagating[j];
            let me = if n_ev > 0 {
                evanescent_block(basis, tensor, model, j, n_ev)?
            } else {
                DMatrix::zeros(gj.multiplicity(), gj.multiplicity())
            };
            let m2 = second_order_block(&gj, model.sigma2);
            let (u, w) = weights(&gj, k);
            let total = &me + &m2;
            let kappa = DMatrix::from_fn(total.nrows(), total.ncols(), |a, b| 0.5 * u[a] * total[(a, b)] * w[b]);
            Ok((kappa, me, m2))
        })
        .collect()
}

/// `Q_j = diag(u) U_j diag(w) + i κ_j`.
pub fn assemble_q(u: &[CMatrix], kappa: &[DMatrix<f64>], basis: &ModeBasis) -> Result<Vec<CMatrix>> {
    if u.len() != basis.n_propagating() || kappa.len() != u.len() {
        return Err(Error::Dimension("U, kappa and basis sizes differ".into()));
    }
    let k = basis.geometry.k;
    u.iter()
        .zip(kappa)
        .zip(&basis.propagating)
        .map(|((uj, kj), g)| {
            let m = g.multiplicity();
            if uj.nrows() != m || kj.nrows() != m {
                return Err(Error::Dimension(format!("block ({},{}) expects size {m}", g.j1, g.j2)));
            }
            let (uw, ww) = weights(g, k);
            Ok(linalg::diag(&uw) * uj * linalg::diag(&ww) + linalg::complexify(kj) * c(0.0, 1.0))
        })
        .collect()
}

/// All moment matrices for a basis and tensor.
pub fn compute_moments(
    basis: &ModeBasis,
    tensor: &CouplingTensor,
    model: &CovarianceModel,
    options: &MomentOptions,
) -> Result<ModeMoments> {
    if tensor.n_propagating() != basis.n_propagating() {
        return Err(Error::Dimension("tensor and basis have different propagating sets".into()));
    }
    let n_ev = options.n_ev.unwrap_or(basis.n_evanescent()).min(basis.n_evanescent());
    let cs = compute_c(basis, tensor, model)?;
    let us = compute_u(basis, tensor, model, options)?;
    let kappas = compute_kappa(basis, tensor, model, options.include_evanescent, n_ev)?;
    let u_tot: Vec<CMatrix> = us.iter().map(|p| p.0.clone()).collect();
    let kap: Vec<DMatrix<f64>> = kappas.iter().map(|p| p.0.clone()).collect();
    let qs = assemble_q(&u_tot, &kap, basis)?;
    let blocks = qs
        .into_iter()
        .zip(cs)
        .zip(us)
        .zip(kappas)
        .map(|(((q, (cm, asym)), (u, u_forward)), (kappa, me, m2))| MomentBlock {
            q,
            c: cm,
            c_asymmetry: asym,
            u,
            u_forward,
            kappa,
            m_evanescent: me,
            m_second_order: m2,
        })
        .collect();
    let n_ev_used = if options.include_evanescent { n_ev } else { 0 };
    Ok(ModeMoments { blocks, options: *options, n_ev_used })
}

/// Smallest evanescent count whose `κ` changes by less than `tolerance`
/// (relative, Frobenius, worst group) when the count is doubled.
pub fn auto_evanescent_count(
    geometry: &Geometry,
    model: &CovarianceModel,
    assembly: &AssemblyOptions,
    start: usize,
    tolerance: f64,
    max_count: usize,
) -> Result<usize> {
    let mut n = start.max(1);
    loop {
        let basis = enumerate_modes(geometry, 2 * n)?;
        let tensor = crate::coupling::assemble_coupling_tensor(&basis, model, assembly)?;
        let coarse = compute_kappa(&basis, &tensor, model, true, n)?;
        let fine = compute_kappa(&basis, &tensor, model, true, 2 * n)?;
        let change = coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| {
                let d = (&a.0 - &b.0).norm();
                let s = b.0.norm();
                if s > 0.0 {
                    d / s
                } else {
                    d
                }
            })
            .fold(0.0, f64::max);
        log::info!("evanescent probe: n_ev = {n}, relative kappa change on doubling {change:e}");
        if change < tolerance {
            return Ok(n);
        }
        if 2 * n > max_count {
            log::warn!("evanescent probe stopped at {n} groups with change {change:e}");
            return Ok(n);
        }
        n *= 2;
    }
}

/// Scattering mean free paths from the smallest eigenvalue of each `C_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFreePaths {
    /// Ascending eigenvalues of each `C_j`.
    pub mu: Vec<Vec<f64>>,
    /// `S_j = 1 / μ_{j,1}` in diffusion range units.
    pub s: Vec<f64>,
}

pub fn scattering_mean_free_paths(c_blocks: &[CMatrix]) -> Result<MeanFreePaths> {
    let mut mu = Vec::with_capacity(c_blocks.len());
    let mut s = Vec::with_capacity(c_blocks.len());
    for (j, cm) in c_blocks.iter().enumerate() {
        let e = linalg::hermitian_eigenvalues(cm);
        if !(e[0] > 0.0) {
            return Err(Error::NotPositiveDefinite { j, mu: e[0] });
        }
        s.push(1.0 / e[0]);
        mu.push(e);
    }
    Ok(MeanFreePaths { mu, s })
}

/// `⟨A_j⟩(Z) = exp(Q_j Z) A_{j,o}` on a grid; output indexed `[z][j][s]`.
pub fn mean_amplitude_evolution(
    q: &[CMatrix],
    a0: &[Vec<Complex64>],
    z_grid: &[f64],
) -> Result<Vec<Vec<Vec<Complex64>>>> {
    if q.len() != a0.len() {
        return Err(Error::Dimension("Q blocks and initial amplitudes differ in count".into()));
    }
    if z_grid.iter().any(|z| !(*z >= 0.0)) || z_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("range grid must be nonnegative and ascending".into()));
    }
    Ok(z_grid
        .iter()
        .map(|z| {
            q.iter()
                .zip(a0)
                .map(|(qj, aj)| {
                    if *z == 0.0 {
                        return aj.clone();
                    }
                    let e = linalg::expm_small(&(qj * c(*z, 0.0)));
                    let v = nalgebra::DVector::from_column_slice(aj);
                    (e * v).iter().copied().collect()
                })
                .collect()
        })
        .collect())
}

/// Bounds `e^{-μ_2 Z}‖A_o‖² ≤ ‖⟨A⟩(Z)‖² ≤ e^{-μ_1 Z}‖A_o‖²` for one group.
pub fn coherence_bounds(mu: &[f64], a0: &[Complex64], z: f64) -> (f64, f64) {
    let norm2: f64 = a0.iter().map(|a| a.norm_sqr()).sum();
    let lo = mu.last().copied().unwrap_or(0.0);
    let hi = mu.first().copied().unwrap_or(0.0);
    ((-lo * z).exp() * norm2, (-hi * z).exp() * norm2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::assemble_coupling_tensor;

    fn setup(n_ev: usize) -> (ModeBasis, CouplingTensor, CovarianceModel) {
        let g = Geometry::unit_wavelength(1.3, 2.1).unwrap();
        let basis = enumerate_modes(&g, n_ev).unwrap();
        let model = CovarianceModel::gaussian_isotropic(1.0, 1.0).unwrap();
        let tensor = assemble_coupling_tensor(&basis, &model, &AssemblyOptions::default()).unwrap();
        (basis, tensor, model)
    }

    #[test]
    fn closed_form_forward_part_equals_generator_expansion() {
        let (basis, tensor, model) = setup(0);
        let table = SineTable::new(&basis, &model).unwrap();
        for j in 0..basis.n_propagating() {
            let a = forward_u_block(&basis, &tensor, &model, &table, j, ThetaWeighting::Symmetric).unwrap();
            let b = forward_u_by_generator(&basis, &tensor, &model, j).unwrap();
            assert!(linalg::frobenius(&(&a - &b)) <= 1e-12 * linalg::frobenius(&b));
        }
    }

    #[test]
    fn weights_satisfy_identity() {
        let k = 2.0 * std::f64::consts::PI;
        for s in [Polarization::Te, Polarization::Tm] {
            let beta = 3.7;
            let lhs = u_weight(s, beta, k) * a_weight(s, beta, k);
            assert!((lhs - k * w_weight(s, beta, k)).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_variance_gives_zero_moments() {
        let (basis, _, model) = setup(6);
        let model = model.with_sigma2(0.0);
        let tensor = assemble_coupling_tensor(&basis, &model, &AssemblyOptions::default()).unwrap();
        let m = compute_moments(&basis, &tensor, &model, &MomentOptions::default()).unwrap();
        for b in &m.blocks {
            assert_eq!(linalg::frobenius(&b.q), 0.0);
            assert_eq!(linalg::frobenius(&b.c), 0.0);
            assert_eq!(b.kappa.norm(), 0.0);
        }
    }

    #[test]
    fn scalar_block_mean_free_path() {
        let cm = CMatrix::from_element(1, 1, c(0.25, 0.0));
        let mfp = scattering_mean_free_paths(&[cm]).unwrap();
        assert!((mfp.s[0] - 4.0).abs() < 1e-15);
        let bad = CMatrix::from_element(1, 1, c(-0.25, 0.0));
        assert!(matches!(scattering_mean_free_paths(&[bad]), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn evolution_at_zero_is_identity() {
        let q = vec![CMatrix::from_element(1, 1, c(-1.0, 2.0))];
        let a0 = vec![vec![c(0.3, -0.2)]];
        let out = mean_amplitude_evolution(&q, &a0, &[0.0, 1.0]).unwrap();
        assert_eq!(out[0][0], a0[0]);
        let expect = a0[0][0] * c(-1.0, 2.0).exp();
        assert!((out[1][0][0] - expect).norm() < 1e-15);
        assert!(mean_amplitude_evolution(&q, &a0, &[1.0, 0.5]).is_err());
    }
}
