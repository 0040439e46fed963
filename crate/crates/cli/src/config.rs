//! Run configuration read from a TOML file.
//!
//! Every section and key is optional; missing values take the defaults
//! listed on each field. Unknown keys are rejected so that typos surface
//! as errors instead of silently falling back to defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use waveguide_core::moments::ThetaWeighting;

/// Validation failure naming the offending key.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: &str, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub covariance: CovarianceConfig,
    pub quadrature: QuadratureConfig,
    pub evanescent: EvanescentConfig,
    pub source: SourceConfig,
    pub moments: MomentsConfig,
    pub transport: TransportConfig,
    pub montecarlo: MonteCarloConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            covariance: CovarianceConfig::default(),
            quadrature: QuadratureConfig::default(),
            evanescent: EvanescentConfig::default(),
            source: SourceConfig::default(),
            moments: MomentsConfig::default(),
            transport: TransportConfig::default(),
            montecarlo: MonteCarloConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Cross-section side lengths and wavenumber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Default 3.03.
    pub l1: f64,
    /// Default 5.84.
    pub l2: f64,
    /// Default 2π (unit wavelength).
    pub k: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { l1: 3.03, l2: 5.84, k: 2.0 * std::f64::consts::PI }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceKindConfig {
    GaussianIsotropic,
    CustomSeparable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceConfig {
    /// Default `gaussian-isotropic`.
    pub kind: CovarianceKindConfig,
    /// Correlation length of the isotropic model. Default 1.
    pub ell: f64,
    /// Variance of the fluctuations. Default 1.
    pub sigma2: f64,
    /// Per-direction lengths of the separable model; each defaults to `ell`.
    pub ell1: Option<f64>,
    pub ell2: Option<f64>,
    pub ell_z: Option<f64>,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        Self {
            kind: CovarianceKindConfig::GaussianIsotropic,
            ell: 1.0,
            sigma2: 1.0,
            ell1: None,
            ell2: None,
            ell_z: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Gauss–Legendre points per axis; 0 selects `4 * max_index + 8`. Default 0.
    pub order: usize,
    /// Repeat the Gram assembly with twice the points and keep the finer
    /// rule when they differ by more than 1e-6. Default false.
    pub check_resolution: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { order: 0, check_resolution: false }
    }
}

/// Number of evanescent groups: a fixed count or the automatic probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EvanescentCount {
    Fixed(usize),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvanescentConfig {
    /// Include the evanescent phase corrections. Default true.
    pub enabled: bool,
    /// Explicit group count or `"auto"`; takes precedence over `cutoff_factor`.
    pub n_ev: Option<EvanescentCount>,
    /// Use every evanescent group with eigenvalue below `cutoff_factor * k^2`.
    /// Applies when `n_ev` is absent. Default 256.
    pub cutoff_factor: f64,
    /// Relative change of the phase corrections on doubling at which the
    /// automatic probe stops. Default 0.01.
    pub auto_tolerance: f64,
    /// Upper limit of the automatic probe. Default 4096.
    pub auto_max: usize,
    /// Include reactive coupling through virtual backward modes. Default true.
    pub backward_virtual: bool,
    /// Weights of the Θ corrections: `symmetric` (default) or `asymmetric`.
    pub theta_weighting: ThetaWeighting,
}

impl Default for EvanescentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            n_ev: None,
            cutoff_factor: 256.0,
            auto_tolerance: 0.01,
            auto_max: 4096,
            backward_virtual: true,
            theta_weighting: ThetaWeighting::Symmetric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourcePreset {
    SingleMode,
    Uniform,
    CustomGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolarizationConfig {
    Te,
    Tm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    /// Default `single-mode`.
    pub preset: SourcePreset,
    /// Mode indices of the `single-mode` preset. Default (0, 1).
    pub j1: u32,
    pub j2: u32,
    /// Default `te`.
    pub polarization: PolarizationConfig,
    /// Constant transverse current of the `uniform` preset. Default (1, 0).
    pub current: [f64; 2],
    /// CSV with columns `x1,x2,J1,J2,Jz` for the `custom-grid` preset,
    /// relative to the config file.
    pub file: Option<PathBuf>,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            preset: SourcePreset::SingleMode,
            j1: 0,
            j2: 1,
            polarization: PolarizationConfig::Te,
            current: [1.0, 0.0],
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsConfig {
    /// Mean amplitudes are tabulated up to this multiple of max_j S_j. Default 3.
    pub z_max_factor: f64,
    /// Grid points of the mean-amplitude table. Default 100.
    pub points: usize,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        Self { z_max_factor: 3.0, points: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    /// Power trajectories run to this multiple of L_eq. Default 3.
    pub z_max_factor: f64,
    /// Grid points of the trajectory. Default 101.
    pub points: usize,
    /// Explicit ascending range grid; replaces the two keys above.
    pub z: Option<Vec<f64>>,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self { z_max_factor: 3.0, points: 101, z: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    /// Fluctuation strength. Default 0.05.
    pub epsilon: f64,
    /// Number of realizations. Default 10000.
    pub realizations: usize,
    /// Seed of the random streams. Default 20240601.
    pub seed: u64,
    /// Integration step in the fast range variable; default is the largest
    /// allowed, `min(ell_z, 2π / max β) / 10`.
    pub dz: Option<f64>,
    /// Checkpoints as fractions of min_j S_j. Default [0, 0.1, 0.25, 0.5, 1].
    pub checkpoints: Vec<f64>,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { epsilon: 0.05, realizations: 10_000, seed: 20_240_601, dz: None, checkpoints: vec![0.0, 0.1, 0.25, 0.5, 1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Artifact directory, relative to the working directory. Default `out`.
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be a positive finite number, got {v}")))
    }
}

/// Dotted key path of the assignment or table header containing byte `offset`.
fn key_at(text: &str, offset: usize) -> String {
    let line_start = text[..offset.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("").trim();
    if line.starts_with('[') {
        return line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
    }
    let key = line.split('=').next().unwrap_or("").trim();
    let table = text[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim());
    match table {
        Some(t) if !key.is_empty() => format!("{t}.{key}"),
        _ => key.to_string(),
    }
}

impl RunConfig {
    /// Parse TOML text and validate it.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| key_at(text, s.start)).unwrap_or_default();
            ConfigError::new(if field.is_empty() { "<document>" } else { &field }, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file. Relative source paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("<file>", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(file), Some(dir)) = (&cfg.source.file, path.parent()) {
            if file.is_relative() {
                cfg.source.file = Some(dir.join(file));
            }
        }
        Ok(cfg)
    }

    /// Check every physical parameter independently of the mode basis.
    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("geometry.l1", self.geometry.l1)?;
        positive("geometry.l2", self.geometry.l2)?;
        positive("geometry.k", self.geometry.k)?;
        let cov = &self.covariance;
        positive("covariance.ell", cov.ell)?;
        if !(cov.sigma2.is_finite() && cov.sigma2 >= 0.0) {
            return Err(ConfigError::new("covariance.sigma2", "must be nonnegative and finite"));
        }
        for (name, v) in [("covariance.ell1", cov.ell1), ("covariance.ell2", cov.ell2), ("covariance.ell_z", cov.ell_z)] {
            if let Some(v) = v {
                positive(name, v)?;
                if cov.kind == CovarianceKindConfig::GaussianIsotropic {
                    return Err(ConfigError::new(name, "only valid with kind = \"custom-separable\""));
                }
            }
        }
        let ev = &self.evanescent;
        positive("evanescent.cutoff_factor", ev.cutoff_factor)?;
        if ev.cutoff_factor <= 1.0 {
            return Err(ConfigError::new("evanescent.cutoff_factor", "must exceed 1"));
        }
        positive("evanescent.auto_tolerance", ev.auto_tolerance)?;
        if ev.auto_max == 0 {
            return Err(ConfigError::new("evanescent.auto_max", "must be at least 1"));
        }
        if self.source.preset == SourcePreset::CustomGrid && self.source.file.is_none() {
            return Err(ConfigError::new("source.file", "required by preset \"custom-grid\""));
        }
        if self.source.current.iter().any(|v| !v.is_finite()) {
            return Err(ConfigError::new("source.current", "must be finite"));
        }
        positive("moments.z_max_factor", self.moments.z_max_factor)?;
        if self.moments.points < 2 {
            return Err(ConfigError::new("moments.points", "must be at least 2"));
        }
        positive("transport.z_max_factor", self.transport.z_max_factor)?;
        if self.transport.points < 2 {
            return Err(ConfigError::new("transport.points", "must be at least 2"));
        }
        if let Some(z) = &self.transport.z {
            if z.is_empty() || z.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || z.windows(2).any(|w| w[1] <= w[0]) {
                return Err(ConfigError::new("transport.z", "must be a nonempty strictly ascending list of nonnegative numbers"));
            }
        }
        let mc = &self.montecarlo;
        if !(mc.epsilon > 0.0 && mc.epsilon < 1.0) {
            return Err(ConfigError::new("montecarlo.epsilon", "must lie in (0, 1)"));
        }
        if mc.realizations < 2 {
            return Err(ConfigError::new("montecarlo.realizations", "must be at least 2"));
        }
        if let Some(dz) = mc.dz {
            positive("montecarlo.dz", dz)?;
        }
        if mc.checkpoints.is_empty()
            || mc.checkpoints.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || mc.checkpoints.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(ConfigError::new(
                "montecarlo.checkpoints",
                "must be a nonempty strictly ascending list of nonnegative numbers",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn evanescent_count_accepts_integer_and_auto() {
        let cfg = RunConfig::from_toml("[evanescent]\nn_ev = 40\n").unwrap();
        assert_eq!(cfg.evanescent.n_ev, Some(EvanescentCount::Fixed(40)));
        let cfg = RunConfig::from_toml("[evanescent]\nn_ev = \"auto\"\n").unwrap();
        assert_eq!(cfg.evanescent.n_ev, Some(EvanescentCount::Auto(AutoTag::Auto)));
    }

    #[test]
    fn negative_length_names_the_field() {
        let err = RunConfig::from_toml("[geometry]\nl1 = -2.0\n").unwrap_err();
        assert_eq!(err.field, "geometry.l1");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::from_toml("[geometry]\nwidth = 2.0\n").unwrap_err();
        assert!(err.message.contains("width"), "{err}");
    }

    #[test]
    fn wrong_type_names_the_dotted_key() {
        let err = RunConfig::from_toml("[geometry]\nl1 = 2.0\n\n[montecarlo]\nepsilon = \"small\"\n").unwrap_err();
        assert_eq!(err.field, "montecarlo.epsilon");
    }

    #[test]
    fn custom_grid_requires_a_file() {
        let err = RunConfig::from_toml("[source]\npreset = \"custom-grid\"\n").unwrap_err();
        assert_eq!(err.field, "source.file");
    }
}
