//! Initial forward amplitudes from the configured source preset.

use std::path::Path;

use anyhow::Context as _;
use num_complex::Complex64;
use waveguide_core::modes::{
    ideal_flux, project_source, GridField, ModeBasis, Polarization, SourceAmplitudes, SourceSpec,
};
use waveguide_core::quadrature::QuadratureGrid;

use crate::config::{ConfigError, PolarizationConfig, SourceConfig, SourcePreset};

pub fn polarization(p: PolarizationConfig) -> Polarization {
    match p {
        PolarizationConfig::Te => Polarization::Te,
        PolarizationConfig::Tm => Polarization::Tm,
    }
}

/// Read a `x1,x2,J1,J2,Jz` table covering a full tensor grid.
pub fn read_grid(path: &Path) -> anyhow::Result<GridField> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header = reader.headers()?.clone();
    let expected = ["x1", "x2", "J1", "J2", "Jz"];
    for (k, name) in expected.iter().enumerate() {
        anyhow::ensure!(
            header.get(k).map(str::trim) == Some(*name),
            "{}: column {} must be `{name}`",
            path.display(),
            k + 1
        );
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let mut vals = [0.0; 5];
        for (k, v) in vals.iter_mut().enumerate() {
            let field = record.get(k).unwrap_or("");
            *v = field
                .trim()
                .parse()
                .with_context(|| format!("{}: row {}, column `{}` is not a number", path.display(), line + 2, expected[k]))?;
        }
        rows.push(vals);
    }
    let axis = |c: usize| {
        let mut v: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let (x1, x2) = (axis(0), axis(1));
    anyhow::ensure!(rows.len() == x1.len() * x2.len(), "{}: samples do not form a complete tensor grid", path.display());
    let mut values = [vec![f64::NAN; rows.len()], vec![f64::NAN; rows.len()], vec![f64::NAN; rows.len()]];
    for r in &rows {
        let i = x1.partition_point(|v| *v < r[0]);
        let k = x2.partition_point(|v| *v < r[1]);
        for (c, channel) in values.iter_mut().enumerate() {
            channel[i * x2.len() + k] = r[2 + c];
        }
    }
    anyhow::ensure!(
        values.iter().flatten().all(|v| v.is_finite()),
        "{}: duplicate grid points leave some samples unset",
        path.display()
    );
    Ok(GridField::new(x1, x2, values)?)
}

/// Forward amplitudes `A_o`, one vector per propagating group.
pub fn initial_amplitudes(cfg: &SourceConfig, basis: &ModeBasis, order: usize) -> anyhow::Result<Vec<Vec<Complex64>>> {
    let amps = match cfg.preset {
        SourcePreset::SingleMode => {
            let j = basis.position(cfg.j1, cfg.j2).ok_or_else(|| {
                ConfigError::new("source.j1", format!("mode ({}, {}) is not a propagating mode", cfg.j1, cfg.j2))
            })?;
            let s = polarization(cfg.polarization);
            if !basis.propagating[j].has(s) {
                return Err(ConfigError::new(
                    "source.polarization",
                    format!("mode ({}, {}) has no {:?} polarization", cfg.j1, cfg.j2, s),
                )
                .into());
            }
            SourceAmplitudes::unit(basis, j, s, Complex64::new(1.0, 0.0))
        }
        SourcePreset::Uniform => project(basis, &SourceSpec::uniform(cfg.current), order)?,
        SourcePreset::CustomGrid => {
            let path = cfg.file.as_deref().ok_or_else(|| ConfigError::new("source.file", "missing"))?;
            project(basis, &SourceSpec::from_grid(read_grid(path)?), order)?
        }
    };
    anyhow::ensure!(ideal_flux(&amps) > 0.0, "the source excites no propagating mode");
    Ok(amps.forward)
}

fn project(basis: &ModeBasis, spec: &SourceSpec, order: usize) -> anyhow::Result<SourceAmplitudes> {
    // Only forward amplitudes are needed, so the projection skips evanescent groups.
    let propagating = ModeBasis { evanescent: Vec::new(), ..basis.clone() };
    let quad = if order > 0 {
        QuadratureGrid::new(basis.geometry.l1, basis.geometry.l2, order, order)
    } else {
        propagating.default_quadrature()
    };
    Ok(project_source(&propagating, spec, &quad)?)
}
