//! Statistics of the medium fluctuations and the longitudinal spectral
//! transforms used by the moment formulas.
//!
//! The covariance is separable:
//! `R(x, x', z) = sigma2 * k1(x1 - x1') * k2(x2 - x2') * g(z)`, with Gaussian
//! factors of unit height. Mean free paths scale as `1 / sigma2`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::adaptive_gauss_kronrod;

/// Relative tolerance of the half-line transforms.
pub const HALF_TRANSFORM_TOL: f64 = 1e-10;

/// Gaussian correlation profile `exp(-z^2 / (2 ell^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianProfile {
    pub ell: f64,
}

impl GaussianProfile {
    pub fn value(&self, z: f64) -> f64 {
        (-z * z / (2.0 * self.ell * self.ell)).exp()
    }

    /// Derivative of order `deriv` (0, 1 or 2).
    pub fn derivative(&self, z: f64, deriv: u8) -> f64 {
        let l2 = self.ell * self.ell;
        let g = self.value(z);
        match deriv {
            0 => g,
            1 => -z / l2 * g,
            2 => (z * z / l2 - 1.0) / l2 * g,
            _ => panic!("derivative order {deriv} not supported"),
        }
    }

    /// Full-line Fourier transform `∫ g(z) e^{iβz} dz`.
    pub fn fourier(&self, beta: f64) -> f64 {
        (2.0 * PI).sqrt() * self.ell * (-0.5 * beta * beta * self.ell * self.ell).exp()
    }

    /// Range beyond which the profile and its first two derivatives are
    /// below `1e-16` relative to their peak.
    pub fn support(&self) -> f64 {
        9.5 * self.ell
    }
}

/// Which covariance family is in use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceKind {
    /// One correlation length for all three directions.
    GaussianIsotropic,
    /// Independent Gaussian correlation lengths per direction.
    CustomSeparable,
}

/// Separable Gaussian covariance of the fluctuations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    pub kind: CovarianceKind,
    pub sigma2: f64,
    pub transverse: [GaussianProfile; 2],
    pub longitudinal: GaussianProfile,
}

impl CovarianceModel {
    /// Isotropic Gaussian covariance with correlation length `ell`.
    pub fn gaussian_isotropic(ell: f64, sigma2: f64) -> Result<Self> {
        Self::validate(&[ell], sigma2)?;
        let p = GaussianProfile { ell };
        Ok(Self { kind: CovarianceKind::GaussianIsotropic, sigma2, transverse: [p, p], longitudinal: p })
    }

    /// Gaussian covariance with separate lengths along `x1`, `x2` and `z`.
    pub fn custom_separable(ell1: f64, ell2: f64, ell_z: f64, sigma2: f64) -> Result<Self> {
        Self::validate(&[ell1, ell2, ell_z], sigma2)?;
        Ok(Self {
            kind: CovarianceKind::CustomSeparable,
            sigma2,
            transverse: [GaussianProfile { ell: ell1 }, GaussianProfile { ell: ell2 }],
            longitudinal: GaussianProfile { ell: ell_z },
        })
    }

    fn validate(lengths: &[f64], sigma2: f64) -> Result<()> {
        if lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidModel("correlation lengths must be positive".into()));
        }
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(Error::InvalidModel("variance must be nonnegative".into()));
        }
        Ok(())
    }

    /// Same model with a different variance.
    pub fn with_sigma2(mut self, sigma2: f64) -> Self {
        self.sigma2 = sigma2;
        self
    }

    /// Transverse kernel `k1(x1 - x1') k2(x2 - x2')` (unit height).
    pub fn transverse_kernel(&self, x: [f64; 2], y: [f64; 2]) -> f64 {
        self.transverse[0].value(x[0] - y[0]) * self.transverse[1].value(x[1] - y[1])
    }

    /// Full covariance `R(x, x', z)`.
    pub fn covariance(&self, x: [f64; 2], y: [f64; 2], z: f64) -> f64 {
        self.sigma2 * self.transverse_kernel(x, y) * self.longitudinal.value(z)
    }

    /// Longitudinal correlation `g(z)`.
    pub fn g(&self, z: f64) -> f64 {
        self.longitudinal.value(z)
    }

    /// Full-line transform `ĝ(β)`.
    pub fn g_hat(&self, beta: f64) -> f64 {
        self.longitudinal.fourier(beta)
    }

    /// Half-line cosine transform `H_c(β) = ĝ(β) / 2` (g is even).
    pub fn h_cos(&self, beta: f64) -> f64 {
        0.5 * self.g_hat(beta)
    }

    /// Half-line sine transform `H_s(β)` by adaptive quadrature.
    pub fn h_sin(&self, beta: f64) -> Result<f64> {
        z_half_transform(self, TrigKind::Sin, beta, 0.0, 0)
    }
}

/// Full-line transform `∫ g^{(deriv)}(z) e^{iβz} dz`.
///
/// Integration by parts gives `(-iβ)^deriv ĝ(β)`.
pub fn z_fourier(model: &CovarianceModel, beta: f64, deriv: u8) -> Complex64 {
    let g = model.g_hat(beta);
    match deriv {
        0 => Complex64::new(g, 0.0),
        1 => Complex64::new(0.0, -beta * g),
        2 => Complex64::new(-beta * beta * g, 0.0),
        _ => panic!("derivative order {deriv} not supported"),
    }
}

/// Trigonometric factor of a half-line transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrigKind {
    Cos,
    Sin,
}

/// `∫_0^∞ e^{-a z} trig(β z) g^{(deriv)}(z) dz` by adaptive Gauss–Kronrod
/// on the effective support of `g`.
pub fn z_half_transform(
    model: &CovarianceModel,
    kind: TrigKind,
    beta: f64,
    decay: f64,
    deriv: u8,
) -> Result<f64> {
    if !(decay >= 0.0) {
        return Err(Error::InvalidArgument(format!("decay must be nonnegative, got {decay}")));
    }
    let p = model.longitudinal;
    let zc = p.support();
    let f = |z: f64| {
        let t = match kind {
            TrigKind::Cos => (beta * z).cos(),
            TrigKind::Sin => (beta * z).sin(),
        };
        (-decay * z).exp() * t * p.derivative(z, deriv)
    };
    let abs_tol = 1e-15 * p.ell;
    adaptive_gauss_kronrod(f, 0.0, zc, HALF_TRANSFORM_TOL, abs_tol, 4000).map(|r| r.value)
}

/// Damped transforms `(D_c, D_s)` of `g` at decay `a` and frequency `β`.
pub fn damped_pair(model: &CovarianceModel, beta: f64, decay: f64) -> Result<(f64, f64)> {
    Ok((
        z_half_transform(model, TrigKind::Cos, beta, decay, 0)?,
        z_half_transform(model, TrigKind::Sin, beta, decay, 0)?,
    ))
}
