//! Subcommand pipelines: build the basis and coupling tensor, run the
//! requested computation and emit its artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context as _;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use waveguide_core::coupling::{assembly_key, assemble_coupling_tensor, AssemblyOptions, CouplingTensor};
use waveguide_core::linalg::CMatrix;
use waveguide_core::medium::CovarianceModel;
use waveguide_core::modes::{count_evanescent_below, enumerate_modes, Geometry, ModeBasis};
use waveguide_core::moments::{
    auto_evanescent_count, compute_moments, mean_amplitude_evolution, scattering_mean_free_paths, MeanFreePaths,
    MomentOptions, ModeMoments,
};
use waveguide_core::montecarlo::{estimate_and_compare, forward_limit, run_monte_carlo, McConfig, ModeIndex};
use waveguide_core::transport::{
    assemble_transport, depolarization_report, equipartition_distance, integrate_power, spectrum, HermitianBasis,
    PowerTrajectory, SpectralResult, TransportOperator,
};

use crate::artifacts::{num, write_json, CsvArtifact};
use crate::config::{ConfigError, CovarianceKindConfig, EvanescentCount, RunConfig};
use crate::source::initial_amplitudes;

/// Side lengths (in wavelengths) of the two reference geometries.
pub const REFERENCE_GEOMETRIES: [(f64, f64); 2] = [(3.03, 5.84), (4.08, 5.77)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Modes,
    Moments,
    Transport,
    Equipartition,
    MonteCarlo,
    ReproduceFigures,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Modes => "modes",
            Subcommand::Moments => "moments",
            Subcommand::Transport => "transport",
            Subcommand::Equipartition => "equipartition",
            Subcommand::MonteCarlo => "montecarlo",
            Subcommand::ReproduceFigures => "reproduce-figures",
        }
    }
}

/// Options that come from the command line rather than the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Fail instead of assembling when the tensor cache is missing.
    pub no_assemble: bool,
}

/// Wall-clock durations of the pipeline stages, in seconds.
#[derive(Debug, Default, Clone, Serialize)]
pub struct Timings(BTreeMap<String, f64>);

impl Timings {
    pub fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.0.entry(name.to_string()).or_insert(0.0) += start.elapsed().as_secs_f64();
        out
    }
}

/// Everything the numerical stages share for one geometry.
pub struct Context {
    pub model: CovarianceModel,
    pub basis: ModeBasis,
    pub tensor: CouplingTensor,
    pub tensor_path: PathBuf,
    pub tensor_from_cache: bool,
}

pub fn covariance_model(cfg: &RunConfig) -> anyhow::Result<CovarianceModel> {
    let c = &cfg.covariance;
    let model = match c.kind {
        CovarianceKindConfig::GaussianIsotropic => CovarianceModel::gaussian_isotropic(c.ell, c.sigma2),
        CovarianceKindConfig::CustomSeparable => CovarianceModel::custom_separable(
            c.ell1.unwrap_or(c.ell),
            c.ell2.unwrap_or(c.ell),
            c.ell_z.unwrap_or(c.ell),
            c.sigma2,
        ),
    };
    model.map_err(|e| ConfigError::new("covariance", e.to_string()).into())
}

pub fn assembly_options(cfg: &RunConfig) -> AssemblyOptions {
    AssemblyOptions { order: cfg.quadrature.order, check_resolution: cfg.quadrature.check_resolution }
}

pub fn moment_options(cfg: &RunConfig) -> MomentOptions {
    MomentOptions {
        theta_weighting: cfg.evanescent.theta_weighting,
        backward_virtual: cfg.evanescent.backward_virtual,
        include_evanescent: cfg.evanescent.enabled,
        n_ev: None,
    }
}

fn evanescent_count(
    cfg: &RunConfig,
    geometry: &Geometry,
    model: &CovarianceModel,
    opts: &RunOptions,
) -> anyhow::Result<usize> {
    let ev = &cfg.evanescent;
    if !ev.enabled {
        return Ok(0);
    }
    Ok(match ev.n_ev {
        Some(EvanescentCount::Fixed(n)) => n,
        Some(EvanescentCount::Auto(_)) => {
            anyhow::ensure!(!opts.no_assemble, "evanescent.n_ev = \"auto\" assembles probe tensors and cannot run with --no-assemble");
            auto_evanescent_count(geometry, model, &assembly_options(cfg), 16, ev.auto_tolerance, ev.auto_max)?
        }
        None => count_evanescent_below(geometry, ev.cutoff_factor * geometry.k * geometry.k),
    })
}

/// Enumerate modes and load or assemble the coupling tensor.
pub fn build_context(
    cfg: &RunConfig,
    geometry: Geometry,
    opts: &RunOptions,
    timings: &mut Timings,
) -> anyhow::Result<Context> {
    let model = covariance_model(cfg)?;
    let n_ev = evanescent_count(cfg, &geometry, &model, opts)?;
    let basis = timings.time("modes", || enumerate_modes(&geometry, n_ev))?;
    let assembly = assembly_options(cfg);
    let key = assembly_key(&basis, &model, &assembly);
    let tensor_path = opts.out_dir.join("cache").join(format!("tensor_{key}.bin"));
    let (tensor, tensor_from_cache) = if tensor_path.exists() {
        let tensor = timings.time("tensor_load", || CouplingTensor::load(&tensor_path))?;
        anyhow::ensure!(
            tensor.matches(&basis, &model),
            "tensor cache {} does not match the configured basis and covariance",
            tensor_path.display()
        );
        (tensor, true)
    } else {
        anyhow::ensure!(
            !opts.no_assemble,
            "--no-assemble was given but no cached tensor exists at {}",
            tensor_path.display()
        );
        let tensor = timings.time("tensor_assembly", || assemble_coupling_tensor(&basis, &model, &assembly))?;
        tensor.save(&tensor_path)?;
        (tensor, false)
    };
    Ok(Context { model, basis, tensor, tensor_path, tensor_from_cache })
}

fn geometry_of(cfg: &RunConfig) -> anyhow::Result<Geometry> {
    Geometry::new(cfg.geometry.l1, cfg.geometry.l2, cfg.geometry.k)
        .map_err(|e| ConfigError::new("geometry", e.to_string()).into())
}

fn linspace(end: f64, points: usize) -> Vec<f64> {
    (0..points).map(|i| end * i as f64 / (points - 1) as f64).collect()
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `max |κ - κᵀ| / max |κ|` over all groups.
fn kappa_asymmetry(moments: &ModeMoments) -> f64 {
    let (mut diff, mut scale): (f64, f64) = (0.0, 0.0);
    for b in &moments.blocks {
        diff = diff.max((&b.kappa - b.kappa.transpose()).amax());
        scale = scale.max(b.kappa.amax());
    }
    if scale > 0.0 {
        diff / scale
    } else {
        0.0
    }
}

fn context_summary(ctx: &Context) -> Value {
    json!({
        "N": ctx.basis.n_propagating(),
        "n_modes": ctx.basis.n_propagating_modes(),
        "n_evanescent": ctx.basis.n_evanescent(),
        "has_ties": ctx.basis.has_ties,
        "tensor_hash": ctx.tensor.header.hash,
        "tensor_orders": ctx.tensor.header.orders,
        "tensor_cache": ctx.tensor_path.display().to_string(),
        "tensor_from_cache": ctx.tensor_from_cache,
    })
}

fn moment_stage(ctx: &Context, cfg: &RunConfig, timings: &mut Timings) -> anyhow::Result<(ModeMoments, MeanFreePaths)> {
    let moments =
        timings.time("moments", || compute_moments(&ctx.basis, &ctx.tensor, &ctx.model, &moment_options(cfg)))?;
    let mfp = scattering_mean_free_paths(&moments.c())?;
    Ok((moments, mfp))
}

fn transport_stage(
    ctx: &Context,
    moments: &ModeMoments,
    timings: &mut Timings,
) -> anyhow::Result<(TransportOperator, SpectralResult)> {
    let op = timings.time("transport_assembly", || assemble_transport(&ctx.basis, &ctx.tensor, &ctx.model, moments))?;
    let spec = timings.time("transport_spectrum", || spectrum(&op))?;
    Ok((op, spec))
}

fn moment_summary(moments: &ModeMoments, mfp: &MeanFreePaths) -> Value {
    json!({
        "max_S": max_of(&mfp.s),
        "min_S": min_of(&mfp.s),
        "max_balance_residual": moments.max_balance_residual(),
        "max_c_asymmetry": moments.blocks.iter().map(|b| b.c_asymmetry).fold(0.0, f64::max),
        "kappa_asymmetry": kappa_asymmetry(moments),
        "n_ev_used": moments.n_ev_used,
    })
}

fn spectral_summary(op: &TransportOperator, spec: &SpectralResult, mfp: &MeanFreePaths) -> Value {
    let max_s = max_of(&mfp.s);
    json!({
        "L_eq": spec.l_eq,
        "max_S": max_s,
        "ratio": spec.l_eq / max_s,
        "dimension": op.dim(),
        "norm": spec.norm,
        "kernel_dim": spec.kernel_dim,
        "lambda_gap": [spec.lambda_gap.re, spec.lambda_gap.im],
        "gap_multiplicity": spec.gap_multiplicity,
        "max_imag_ratio": spec.max_imag_ratio(),
        "max_real_ratio": spec.max_real_ratio(),
        "adjoint_kernel_residual": op.adjoint_kernel_residual(),
        "kernel_residual": spec.kernel_residual,
        "cone_violation": spec.cone_violation,
        "off_diagonal_ratio": spec.off_diagonal_ratio(),
    })
}

fn write_modes(dir: &Path, basis: &ModeBasis) -> anyhow::Result<()> {
    let mut modes = CsvArtifact::create(dir, "modes.csv", &["j1", "j2", "s", "lambda", "beta", "kind", "alpha"])?;
    for r in basis.propagating_records().iter().chain(&basis.evanescent_records()) {
        modes.row(&[
            r.j1.to_string(),
            r.j2.to_string(),
            r.s.number().to_string(),
            num(r.lambda),
            num(r.beta),
            r.kind.as_str().to_string(),
            num(r.alpha),
        ])?;
    }
    modes.finish()?;
    let mut wn = CsvArtifact::create(dir, "wavenumbers.csv", &["j", "j1", "j2", "lambda", "beta", "multiplicity"])?;
    for (j, g) in basis.propagating.iter().enumerate() {
        wn.row(&[
            (j + 1).to_string(),
            g.j1.to_string(),
            g.j2.to_string(),
            num(g.lambda),
            num(g.beta),
            g.multiplicity().to_string(),
        ])?;
    }
    wn.finish()?;
    Ok(())
}

fn write_blocks(dir: &Path, name: &str, blocks: &[CMatrix]) -> anyhow::Result<()> {
    let mut csv = CsvArtifact::create(dir, name, &["j", "row", "col", "re", "im"])?;
    for (j, b) in blocks.iter().enumerate() {
        for r in 0..b.nrows() {
            for c in 0..b.ncols() {
                csv.row(&[(j + 1).to_string(), (r + 1).to_string(), (c + 1).to_string(), num(b[(r, c)].re), num(b[(r, c)].im)])?;
            }
        }
    }
    csv.finish()?;
    Ok(())
}

fn write_real_blocks(dir: &Path, name: &str, blocks: &[&DMatrix<f64>]) -> anyhow::Result<()> {
    let mut csv = CsvArtifact::create(dir, name, &["j", "row", "col", "value"])?;
    for (j, b) in blocks.iter().enumerate() {
        for r in 0..b.nrows() {
            for c in 0..b.ncols() {
                csv.row(&[(j + 1).to_string(), (r + 1).to_string(), (c + 1).to_string(), num(b[(r, c)])])?;
            }
        }
    }
    csv.finish()?;
    Ok(())
}

fn write_mean_free_paths(dir: &Path, basis: &ModeBasis, mfp: &MeanFreePaths) -> anyhow::Result<()> {
    let mut csv = CsvArtifact::create(dir, "mean_free_paths.csv", &["j", "j1", "j2", "mu1", "mu2", "S_j"])?;
    for (j, g) in basis.propagating.iter().enumerate() {
        let mu = &mfp.mu[j];
        let mu2 = if mu.len() > 1 { num(mu[1]) } else { String::new() };
        csv.row(&[(j + 1).to_string(), g.j1.to_string(), g.j2.to_string(), num(mu[0]), mu2, num(mfp.s[j])])?;
    }
    csv.finish()?;
    Ok(())
}

fn write_mean_amplitudes(
    dir: &Path,
    basis: &ModeBasis,
    moments: &ModeMoments,
    a0: &[Vec<Complex64>],
    z: &[f64],
) -> anyhow::Result<()> {
    let evo = mean_amplitude_evolution(&moments.q(), a0, z)?;
    let mut csv = CsvArtifact::create(dir, "mean_amplitudes.csv", &["Z", "j", "s", "re", "im"])?;
    for (zi, blocks) in z.iter().zip(&evo) {
        for (j, block) in blocks.iter().enumerate() {
            for (s, v) in basis.propagating[j].polarizations().iter().zip(block) {
                csv.row(&[num(*zi), (j + 1).to_string(), s.number().to_string(), num(v.re), num(v.im)])?;
            }
        }
    }
    csv.finish()?;
    Ok(())
}

fn write_spectrum(dir: &Path, spec: &SpectralResult) -> anyhow::Result<()> {
    let mut csv = CsvArtifact::create(dir, "transport_spectrum.csv", &["index", "re", "im"])?;
    for (i, e) in spec.eigenvalues.iter().enumerate() {
        csv.row(&[(i + 1).to_string(), num(e.re), num(e.im)])?;
    }
    csv.finish()?;
    Ok(())
}

fn write_equipartition(dir: &Path, spec: &SpectralResult) -> anyhow::Result<()> {
    let mut csv = CsvArtifact::create(dir, "equipartition.csv", &["j", "s", "s_prime", "re", "im"])?;
    for (j, b) in spec.u_o.iter().enumerate() {
        for r in 0..b.nrows() {
            for c in 0..b.ncols() {
                csv.row(&[(j + 1).to_string(), (r + 1).to_string(), (c + 1).to_string(), num(b[(r, c)].re), num(b[(r, c)].im)])?;
            }
        }
    }
    csv.finish()?;
    Ok(())
}

fn write_trajectory(dir: &Path, traj: &PowerTrajectory) -> anyhow::Result<()> {
    let mut csv = CsvArtifact::create(dir, "power_trajectory.csv", &["Z", "j", "s", "s_prime", "re", "im"])?;
    for (z, blocks) in traj.z.iter().zip(&traj.states) {
        for (j, b) in blocks.iter().enumerate() {
            for r in 0..b.nrows() {
                for c in 0..b.ncols() {
                    csv.row(&[
                        num(*z),
                        (j + 1).to_string(),
                        (r + 1).to_string(),
                        (c + 1).to_string(),
                        num(b[(r, c)].re),
                        num(b[(r, c)].im),
                    ])?;
                }
            }
        }
    }
    csv.finish()?;
    let mut dep = CsvArtifact::create(dir, "depolarization.csv", &["Z", "j", "te_power", "tm_power", "degree"])?;
    for e in depolarization_report(traj) {
        dep.row(&[num(e.z), (e.j + 1).to_string(), num(e.te_power), num(e.tm_power), num(e.degree)])?;
    }
    dep.finish()?;
    Ok(())
}

fn initial_powers(a0: &[Vec<Complex64>]) -> Vec<CMatrix> {
    a0.iter()
        .map(|a| {
            let v = nalgebra::DVector::from_column_slice(a);
            &v * v.adjoint()
        })
        .collect()
}

/// Mode-level matrix of `U_o` (block diagonal over groups), scaled to unit maximum magnitude.
pub fn stationary_matrix(spec: &SpectralResult) -> DMatrix<f64> {
    let m: usize = spec.u_o.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(m, m);
    let mut off = 0;
    for b in &spec.u_o {
        for r in 0..b.nrows() {
            for c in 0..b.ncols() {
                out[(off + r, off + c)] = b[(r, c)].norm();
            }
        }
        off += b.nrows();
    }
    let max = out.amax();
    if max > 0.0 {
        out /= max;
    }
    out
}

fn run_modes(cfg: &RunConfig, opts: &RunOptions, timings: &mut Timings) -> anyhow::Result<Value> {
    let geometry = geometry_of(cfg)?;
    let n_ev = if cfg.evanescent.enabled {
        match cfg.evanescent.n_ev {
            Some(EvanescentCount::Fixed(n)) => n,
            _ => count_evanescent_below(&geometry, cfg.evanescent.cutoff_factor * geometry.k * geometry.k),
        }
    } else {
        0
    };
    let basis = timings.time("modes", || enumerate_modes(&geometry, n_ev))?;
    write_modes(&opts.out_dir, &basis)?;
    Ok(json!({
        "N": basis.n_propagating(),
        "n_modes": basis.n_propagating_modes(),
        "n_evanescent": basis.n_evanescent(),
        "has_ties": basis.has_ties,
    }))
}

fn run_moments(cfg: &RunConfig, opts: &RunOptions, timings: &mut Timings) -> anyhow::Result<Value> {
    let ctx = build_context(cfg, geometry_of(cfg)?, opts, timings)?;
    let a0 = initial_amplitudes(&cfg.source, &ctx.basis, cfg.quadrature.order)?;
    let (moments, mfp) = moment_stage(&ctx, cfg, timings)?;
    let dir = &opts.out_dir;
    write_mean_free_paths(dir, &ctx.basis, &mfp)?;
    write_blocks(dir, "moments_Qj.csv", &moments.q())?;
    write_blocks(dir, "moments_Cj.csv", &moments.c())?;
    write_real_blocks(dir, "kappa.csv", &moments.blocks.iter().map(|b| &b.kappa).collect::<Vec<_>>())?;
    let z = linspace(cfg.moments.z_max_factor * max_of(&mfp.s), cfg.moments.points);
    write_mean_amplitudes(dir, &ctx.basis, &moments, &a0, &z)?;
    Ok(json!({ "basis": context_summary(&ctx), "moments": moment_summary(&moments, &mfp) }))
}

fn run_transport(cfg: &RunConfig, opts: &RunOptions, timings: &mut Timings, full: bool) -> anyhow::Result<Value> {
    let ctx = build_context(cfg, geometry_of(cfg)?, opts, timings)?;
    let (moments, mfp) = moment_stage(&ctx, cfg, timings)?;
    let (op, spec) = transport_stage(&ctx, &moments, timings)?;
    let dir = &opts.out_dir;
    write_spectrum(dir, &spec)?;
    write_equipartition(dir, &spec)?;
    let mut summary = json!({
        "basis": context_summary(&ctx),
        "moments": moment_summary(&moments, &mfp),
        "transport": spectral_summary(&op, &spec, &mfp),
    });
    let a0 = initial_amplitudes(&cfg.source, &ctx.basis, cfg.quadrature.order)?;
    let z = cfg.transport.z.clone().unwrap_or_else(|| linspace(cfg.transport.z_max_factor * spec.l_eq, cfg.transport.points));
    let traj = timings.time("power_trajectory", || integrate_power(&op, &initial_powers(&a0), &z))?;
    let hb = HermitianBasis::new(&ctx.basis);
    let distance = equipartition_distance(&traj, &spec.u_o, &hb)?;
    let mut csv = CsvArtifact::create(dir, "equipartition_distance.csv", &["Z", "distance"])?;
    for (zi, d) in z.iter().zip(&distance) {
        csv.row(&[num(*zi), num(*d)])?;
    }
    csv.finish()?;
    summary["trajectory"] = json!({
        "max_trace_drift": traj.diagnostics.max_trace_drift,
        "min_relative_eigenvalue": traj.diagnostics.min_relative_eigenvalue,
        "final_distance": distance.last().copied().unwrap_or(0.0),
    });
    if full {
        write_trajectory(dir, &traj)?;
        write_mean_free_paths(dir, &ctx.basis, &mfp)?;
    }
    Ok(summary)
}

fn run_montecarlo(cfg: &RunConfig, opts: &RunOptions, timings: &mut Timings) -> anyhow::Result<Value> {
    let ctx = build_context(cfg, geometry_of(cfg)?, opts, timings)?;
    let (moments, mfp) = moment_stage(&ctx, cfg, timings)?;
    let a0 = initial_amplitudes(&cfg.source, &ctx.basis, cfg.quadrature.order)?;
    let index = ModeIndex::new(&ctx.basis);
    let mc = &cfg.montecarlo;
    let min_s = min_of(&mfp.s);
    let max_beta = max_of(&ctx.basis.propagating.iter().map(|g| g.beta).collect::<Vec<_>>());
    let dz_limit = ctx.model.longitudinal.ell.min(2.0 * std::f64::consts::PI / max_beta) / 10.0;
    let config = McConfig {
        epsilon: mc.epsilon,
        checkpoints: mc.checkpoints.iter().map(|f| f * min_s).collect(),
        dz: mc.dz.unwrap_or(dz_limit),
        n_realizations: mc.realizations,
        seed: mc.seed,
        a0: a0.iter().flatten().copied().collect(),
    };
    let result = timings.time("montecarlo", || run_monte_carlo(&ctx.basis, &ctx.tensor, &ctx.model, &config))?;
    let (q, op) = timings.time("forward_limit", || forward_limit(&ctx.basis, &ctx.tensor, &ctx.model, &moments))?;
    let report = estimate_and_compare(&result, &q, &op, &index)?;
    let dir = &opts.out_dir;
    let mut means = CsvArtifact::create(dir, "mc_mean_amplitudes.csv", &["Z", "j", "s", "re", "im", "se_re", "se_im"])?;
    let mut powers =
        CsvArtifact::create(dir, "mc_powers.csv", &["Z", "j", "row", "col", "re", "im", "se_re", "se_im"])?;
    for cp in &result.checkpoints {
        for (k, (j, s)) in index.modes.iter().enumerate() {
            let v = cp.mean[k];
            let se = cp.mean_se[k];
            means.row(&[num(cp.z), (j + 1).to_string(), s.number().to_string(), num(v.re), num(v.im), num(se.0), num(se.1)])?;
        }
        for (j, (p, se)) in cp.power.iter().zip(&cp.power_se).enumerate() {
            for r in 0..p.nrows() {
                for c in 0..p.ncols() {
                    powers.row(&[
                        num(cp.z),
                        (j + 1).to_string(),
                        (r + 1).to_string(),
                        (c + 1).to_string(),
                        num(p[(r, c)].re),
                        num(p[(r, c)].im),
                        num(se[(r, c)].0),
                        num(se[(r, c)].1),
                    ])?;
                }
            }
        }
    }
    means.finish()?;
    powers.finish()?;
    let mut cmp = CsvArtifact::create(
        dir,
        "mc_comparison.csv",
        &["Z", "quantity", "j", "row", "col", "part", "empirical", "analytic", "se", "zscore"],
    )?;
    for r in &report.rows {
        cmp.row(&[
            num(r.z),
            r.quantity.clone(),
            (r.j + 1).to_string(),
            (r.row + 1).to_string(),
            (r.col + 1).to_string(),
            r.part.clone(),
            num(r.empirical),
            num(r.analytic),
            num(r.se),
            num(r.zscore),
        ])?;
    }
    cmp.finish()?;
    Ok(json!({
        "basis": context_summary(&ctx),
        "moments": moment_summary(&moments, &mfp),
        "montecarlo": {
            "epsilon": mc.epsilon,
            "realizations": mc.realizations,
            "seed": mc.seed,
            "dz": result.dz,
            "checkpoints": result.checkpoints.iter().map(|c| c.z).collect::<Vec<_>>(),
            "pass": report.pass,
            "threshold": report.threshold,
            "max_abs_z": report.max_abs_z,
            "beyond_three": report.beyond_three,
            "compared": report.rows.len(),
            "max_power_error": report.max_power_error,
            "max_mean_error": report.max_mean_error,
            "max_drift": result.checkpoints.iter().map(|c| c.drift_max).fold(0.0, f64::max),
            "max_corrected_drift": result.checkpoints.iter().map(|c| c.corrected_drift_max).fold(0.0, f64::max),
        },
    }))
}

fn run_figures(cfg: &RunConfig, opts: &RunOptions, timings: &mut Timings) -> anyhow::Result<Value> {
    let mut geometries = Vec::new();
    for (idx, (l1, l2)) in REFERENCE_GEOMETRIES.iter().enumerate() {
        let tag = idx + 1;
        let geometry = Geometry::new(*l1, *l2, cfg.geometry.k)?;
        let mut local = Timings::default();
        let ctx = build_context(cfg, geometry, opts, &mut local)?;
        let (moments, mfp) = moment_stage(&ctx, cfg, &mut local)?;
        let (op, spec) = transport_stage(&ctx, &moments, &mut local)?;
        let mut coherent = CsvArtifact::create(
            &opts.out_dir,
            &format!("coherent_geom{tag}.csv"),
            &["j", "j1", "j2", "S_j", "inv_mu_max", "L_eq"],
        )?;
        for (j, g) in ctx.basis.propagating.iter().enumerate() {
            let mu_max = max_of(&mfp.mu[j]);
            coherent.row(&[
                (j + 1).to_string(),
                g.j1.to_string(),
                g.j2.to_string(),
                num(mfp.s[j]),
                num(1.0 / mu_max),
                num(spec.l_eq),
            ])?;
        }
        coherent.finish()?;
        let matrix = stationary_matrix(&spec);
        let mut stationary =
            CsvArtifact::create(&opts.out_dir, &format!("stationary_geom{tag}.csv"), &["row", "col", "value"])?;
        for r in 0..matrix.nrows() {
            for c in 0..matrix.ncols() {
                stationary.row(&[(r + 1).to_string(), (c + 1).to_string(), num(matrix[(r, c)])])?;
            }
        }
        stationary.finish()?;
        for (name, secs) in &local.0 {
            timings.0.insert(format!("geom{tag}.{name}"), *secs);
        }
        geometries.push(json!({
            "name": format!("geom{tag}"),
            "l1": l1,
            "l2": l2,
            "basis": context_summary(&ctx),
            "moments": moment_summary(&moments, &mfp),
            "transport": spectral_summary(&op, &spec, &mfp),
        }));
    }
    Ok(json!({ "geometries": geometries }))
}

/// SHA-256 of the canonical JSON form of the resolved config.
pub fn config_hash(cfg: &RunConfig) -> anyhow::Result<String> {
    let text = serde_json::to_string(cfg)?;
    Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

/// Run one subcommand and write its artifacts plus `summary.json`.
///
/// The summary is written whether or not the run succeeds; a failed run
/// records its error message there.
pub fn run(sub: Subcommand, cfg: &RunConfig, opts: &RunOptions) -> anyhow::Result<Value> {
    std::fs::create_dir_all(&opts.out_dir)
        .with_context(|| format!("cannot create output directory {}", opts.out_dir.display()))?;
    let mut timings = Timings::default();
    let start = Instant::now();
    let outcome = match sub {
        Subcommand::Modes => run_modes(cfg, opts, &mut timings),
        Subcommand::Moments => run_moments(cfg, opts, &mut timings),
        Subcommand::Transport => run_transport(cfg, opts, &mut timings, true),
        Subcommand::Equipartition => run_transport(cfg, opts, &mut timings, false),
        Subcommand::MonteCarlo => run_montecarlo(cfg, opts, &mut timings),
        Subcommand::ReproduceFigures => run_figures(cfg, opts, &mut timings),
    };
    timings.0.insert("total".into(), start.elapsed().as_secs_f64());
    let mut summary = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": sub.name(),
        "config_hash": config_hash(cfg)?,
        "config": cfg,
        "timings": timings,
    });
    match &outcome {
        Ok(results) => {
            summary["status"] = json!("ok");
            if let Value::Object(map) = results {
                for (k, v) in map {
                    summary[k] = v.clone();
                }
            }
            // Headline numbers at the top level.
            let transport = &results["transport"];
            if !transport.is_null() {
                for key in ["L_eq", "max_S", "ratio"] {
                    summary[key] = transport[key].clone();
                }
            }
            if !results["basis"].is_null() {
                summary["N"] = results["basis"]["N"].clone();
            } else if !results["N"].is_null() {
                summary["N"] = results["N"].clone();
            }
        }
        Err(e) => {
            summary["status"] = json!("error");
            summary["error"] = json!(format!("{e:#}"));
        }
    }
    write_json(&opts.out_dir.join("summary.json"), &summary)?;
    outcome.map(|_| summary)
}
