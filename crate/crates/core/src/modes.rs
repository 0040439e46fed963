//! TE/TM vector eigenmodes of the ideal rectangular waveguide: enumeration,
//! pointwise evaluation, cross-section inner products and source projection.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::QuadratureGrid;

/// Relative gap `|k^2 - lambda| / k^2` below which a mode is treated as a
/// standing wave at cutoff.
pub const CUTOFF_GAP: f64 = 1e-9;

/// Rectangular cross-section `(0, l1) x (0, l2)` and the wavenumber `k`.
/// Lengths are in units of the wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub l1: f64,
    pub l2: f64,
    pub k: f64,
}

impl Geometry {
    pub fn new(l1: f64, l2: f64, k: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(l1) || !ok(l2) || !ok(k) {
            return Err(Error::InvalidGeometry(format!(
                "side lengths and wavenumber must be positive and finite (l1={l1}, l2={l2}, k={k})"
            )));
        }
        Ok(Self { l1, l2, k })
    }

    /// Geometry with `k = 2π`, i.e. lengths measured in wavelengths.
    pub fn unit_wavelength(l1: f64, l2: f64) -> Result<Self> {
        Self::new(l1, l2, 2.0 * PI)
    }

    pub fn area(&self) -> f64 {
        self.l1 * self.l2
    }

    /// Transverse eigenvalue of the index pair `(j1, j2)`.
    pub fn eigenvalue(&self, j1: u32, j2: u32) -> f64 {
        let p1 = PI * j1 as f64 / self.l1;
        let p2 = PI * j2 as f64 / self.l2;
        p1 * p1 + p2 * p2
    }
}

/// Polarization of a vector mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarization {
    /// Transverse electric, numbered 1.
    Te,
    /// Transverse magnetic, numbered 2.
    Tm,
}

impl Polarization {
    /// Conventional number: 1 for TE, 2 for TM.
    pub fn number(self) -> u8 {
        match self {
            Polarization::Te => 1,
            Polarization::Tm => 2,
        }
    }

    /// Zero-based slot inside a mode group.
    pub fn slot(self) -> usize {
        match self {
            Polarization::Te => 0,
            Polarization::Tm => 1,
        }
    }

    pub fn from_number(s: u8) -> Option<Self> {
        match s {
            1 => Some(Polarization::Te),
            2 => Some(Polarization::Tm),
            _ => None,
        }
    }

    pub fn from_slot(slot: usize) -> Self {
        if slot == 0 {
            Polarization::Te
        } else {
            Polarization::Tm
        }
    }
}

/// Whether a mode carries energy along the guide or decays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeKind {
    Propagating,
    Evanescent,
}

impl ModeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeKind::Propagating => "propagating",
            ModeKind::Evanescent => "evanescent",
        }
    }
}

/// All polarizations sharing one index pair `(j1, j2)`, hence one
/// eigenvalue and one longitudinal wavenumber.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeGroup {
    pub j1: u32,
    pub j2: u32,
    pub lambda: f64,
    pub beta: f64,
    pub alpha: f64,
    pub kind: ModeKind,
    /// `p1 = π j1 / l1`.
    pub p1: f64,
    /// `p2 = π j2 / l2`.
    pub p2: f64,
}

/// One vector mode: a group together with a polarization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeRecord {
    pub j1: u32,
    pub j2: u32,
    pub s: Polarization,
    pub lambda: f64,
    pub beta: f64,
    pub kind: ModeKind,
    pub alpha: f64,
    pub multiplicity: usize,
}

impl ModeGroup {
    fn new(geometry: &Geometry, j1: u32, j2: u32) -> Self {
        let lambda = geometry.eigenvalue(j1, j2);
        let k2 = geometry.k * geometry.k;
        let beta = (k2 - lambda).abs().sqrt();
        let kind = if lambda < k2 { ModeKind::Propagating } else { ModeKind::Evanescent };
        let alpha = if j1 * j2 != 0 {
            2.0 / (lambda * geometry.area()).sqrt()
        } else {
            (2.0 / (lambda * geometry.area())).sqrt()
        };
        Self {
            j1,
            j2,
            lambda,
            beta,
            alpha,
            kind,
            p1: PI * j1 as f64 / geometry.l1,
            p2: PI * j2 as f64 / geometry.l2,
        }
    }

    /// Number of polarizations: 2 when both indices are nonzero, else 1 (TE).
    pub fn multiplicity(&self) -> usize {
        if self.j1 * self.j2 != 0 {
            2
        } else {
            1
        }
    }

    pub fn polarizations(&self) -> &'static [Polarization] {
        if self.multiplicity() == 2 {
            &[Polarization::Te, Polarization::Tm]
        } else {
            &[Polarization::Te]
        }
    }

    pub fn has(&self, s: Polarization) -> bool {
        s == Polarization::Te || self.multiplicity() == 2
    }

    pub fn record(&self, s: Polarization) -> ModeRecord {
        ModeRecord {
            j1: self.j1,
            j2: self.j2,
            s,
            lambda: self.lambda,
            beta: self.beta,
            kind: self.kind,
            alpha: self.alpha,
            multiplicity: self.multiplicity(),
        }
    }

    /// Amplitudes `(a, b)` of the field `α (a cos(p1 x1) sin(p2 x2), b sin(p1 x1) cos(p2 x2))`.
    pub fn amplitudes(&self, s: Polarization) -> (f64, f64) {
        match s {
            Polarization::Te => (self.p2, -self.p1),
            Polarization::Tm => (self.p1, self.p2),
        }
    }

    /// Vector mode shape at `(x1, x2)`.
    pub fn field(&self, s: Polarization, x1: f64, x2: f64) -> [f64; 2] {
        let (a, b) = self.amplitudes(s);
        let (s1, c1) = (self.p1 * x1).sin_cos();
        let (s2, c2) = (self.p2 * x2).sin_cos();
        [self.alpha * a * c1 * s2, self.alpha * b * s1 * c2]
    }

    /// Divergence of the mode shape, from analytic derivatives.
    pub fn divergence(&self, s: Polarization, x1: f64, x2: f64) -> f64 {
        let (a, b) = self.amplitudes(s);
        let (s1, _) = (self.p1 * x1).sin_cos();
        let (s2, _) = (self.p2 * x2).sin_cos();
        -self.alpha * (a * self.p1 + b * self.p2) * s1 * s2
    }

    /// Scalar curl `∂1 φ2 - ∂2 φ1`, from analytic derivatives.
    pub fn curl(&self, s: Polarization, x1: f64, x2: f64) -> f64 {
        let (a, b) = self.amplitudes(s);
        let c1 = (self.p1 * x1).cos();
        let c2 = (self.p2 * x2).cos();
        self.alpha * (b * self.p1 - a * self.p2) * c1 * c2
    }

    /// Gradient of the divergence, from analytic derivatives.
    pub fn grad_divergence(&self, s: Polarization, x1: f64, x2: f64) -> [f64; 2] {
        let (a, b) = self.amplitudes(s);
        let (s1, c1) = (self.p1 * x1).sin_cos();
        let (s2, c2) = (self.p2 * x2).sin_cos();
        let amp = -self.alpha * (a * self.p1 + b * self.p2);
        [amp * self.p1 * c1 * s2, amp * self.p2 * s1 * c2]
    }
}

/// Ordered catalogue of propagating and evanescent mode groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeBasis {
    pub geometry: Geometry,
    /// Groups with `lambda < k^2`, ascending by `(lambda, j1, j2)`.
    pub propagating: Vec<ModeGroup>,
    /// The smallest requested number of groups with `lambda > k^2`.
    pub evanescent: Vec<ModeGroup>,
    /// True when two groups share an eigenvalue and were ordered by index.
    pub has_ties: bool,
}

impl ModeBasis {
    /// Number of propagating wavenumbers `N`.
    pub fn n_propagating(&self) -> usize {
        self.propagating.len()
    }

    pub fn n_evanescent(&self) -> usize {
        self.evanescent.len()
    }

    /// Propagating modes flattened to records, ordered by group then polarization.
    pub fn propagating_records(&self) -> Vec<ModeRecord> {
        flatten(&self.propagating)
    }

    pub fn evanescent_records(&self) -> Vec<ModeRecord> {
        flatten(&self.evanescent)
    }

    /// Total number of propagating vector modes `Σ_j multiplicity_j`.
    pub fn n_propagating_modes(&self) -> usize {
        self.propagating.iter().map(ModeGroup::multiplicity).sum()
    }

    /// Largest index among all enumerated groups.
    pub fn max_index(&self) -> u32 {
        self.propagating
            .iter()
            .chain(&self.evanescent)
            .map(|g| g.j1.max(g.j2))
            .max()
            .unwrap_or(0)
    }

    /// Largest `j1` and `j2` among all enumerated groups.
    pub fn max_indices(&self) -> (u32, u32) {
        let it = self.propagating.iter().chain(&self.evanescent);
        let m1 = it.clone().map(|g| g.j1).max().unwrap_or(0);
        let m2 = it.map(|g| g.j2).max().unwrap_or(0);
        (m1, m2)
    }

    /// Default per-axis Gauss–Legendre order `4 * max_index + 8`.
    pub fn default_quadrature(&self) -> QuadratureGrid {
        let n = 4 * self.max_index() as usize + 8;
        QuadratureGrid::new(self.geometry.l1, self.geometry.l2, n, n)
    }

    /// Find the position of a propagating group by its index pair.
    pub fn position(&self, j1: u32, j2: u32) -> Option<usize> {
        self.propagating.iter().position(|g| g.j1 == j1 && g.j2 == j2)
    }
}

fn flatten(groups: &[ModeGroup]) -> Vec<ModeRecord> {
    groups
        .iter()
        .flat_map(|g| g.polarizations().iter().map(move |s| g.record(*s)))
        .collect()
}

fn groups_below(geometry: &Geometry, bound: f64) -> Vec<ModeGroup> {
    let j1_max = (bound.sqrt() * geometry.l1 / PI).floor() as u32 + 1;
    let j2_max = (bound.sqrt() * geometry.l2 / PI).floor() as u32 + 1;
    let mut out = Vec::new();
    for j1 in 0..=j1_max {
        for j2 in 0..=j2_max {
            if j1 == 0 && j2 == 0 {
                continue;
            }
            if geometry.eigenvalue(j1, j2) < bound {
                out.push(ModeGroup::new(geometry, j1, j2));
            }
        }
    }
    out.sort_by(|a, b| {
        a.lambda
            .total_cmp(&b.lambda)
            .then(a.j1.cmp(&b.j1))
            .then(a.j2.cmp(&b.j2))
    });
    out
}

/// Enumerate every propagating group and the `n_evanescent` evanescent
/// groups with the smallest eigenvalues.
pub fn enumerate_modes(geometry: &Geometry, n_evanescent: usize) -> Result<ModeBasis> {
    let geometry = Geometry::new(geometry.l1, geometry.l2, geometry.k)?;
    let k2 = geometry.k * geometry.k;
    // Grow the eigenvalue bound until enough evanescent groups are present.
    let mut bound = 2.0 * k2;
    let mut all = groups_below(&geometry, bound);
    loop {
        let n_ev = all.iter().filter(|g| g.lambda >= k2).count();
        if n_ev > n_evanescent {
            break;
        }
        bound *= 2.0;
        all = groups_below(&geometry, bound);
    }
    let n_prop = all.iter().take_while(|g| g.lambda < k2).count();
    for g in all.iter().take(n_prop + n_evanescent) {
        let gap = (k2 - g.lambda).abs();
        if gap < CUTOFF_GAP * k2 {
            return Err(Error::StandingWave { j1: g.j1, j2: g.j2, gap });
        }
    }
    let propagating: Vec<ModeGroup> = all[..n_prop].to_vec();
    let evanescent: Vec<ModeGroup> = all[n_prop..n_prop + n_evanescent].to_vec();
    let has_ties = propagating
        .iter()
        .chain(&evanescent)
        .collect::<Vec<_>>()
        .windows(2)
        .any(|w| (w[1].lambda - w[0].lambda).abs() <= 1e-12 * w[1].lambda);
    if has_ties {
        log::warn!(
            "mode eigenvalues coincide (rational side ratio {}/{}); ties are ordered by (j1, j2, s)",
            geometry.l1,
            geometry.l2
        );
    }
    Ok(ModeBasis { geometry, propagating, evanescent, has_ties })
}

/// Number of groups with eigenvalue in `(k^2, bound)`.
pub fn count_evanescent_below(geometry: &Geometry, bound: f64) -> usize {
    let k2 = geometry.k * geometry.k;
    groups_below(geometry, bound).iter().filter(|g| g.lambda > k2).count()
}

/// Cross-section inner product of two vector modes by quadrature.
pub fn mode_inner_product(
    a: (&ModeGroup, Polarization),
    b: (&ModeGroup, Polarization),
    quad: &QuadratureGrid,
) -> f64 {
    quad.integrate(|x1, x2| {
        let fa = a.0.field(a.1, x1, x2);
        let fb = b.0.field(b.1, x1, x2);
        fa[0] * fb[0] + fa[1] * fb[1]
    })
}

type VectorSampler = Box<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>;
type ScalarSampler = Box<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Source currents on the cross-section: transverse current `J`,
/// longitudinal current `J_z`, and the reference speed `c_o`.
pub struct SourceSpec {
    pub current: VectorSampler,
    pub longitudinal: Option<ScalarSampler>,
    /// Gradient of `J_z`; central differences of `longitudinal` are used when absent.
    pub longitudinal_gradient: Option<VectorSampler>,
    pub speed: f64,
}

impl SourceSpec {
    /// Source with `J = scale * c_o * φ` for one mode and no longitudinal current.
    pub fn single_mode(group: ModeGroup, s: Polarization, scale: f64) -> Self {
        Self {
            current: Box::new(move |x1, x2| {
                let f = group.field(s, x1, x2);
                [scale * f[0], scale * f[1]]
            }),
            longitudinal: None,
            longitudinal_gradient: None,
            speed: 1.0,
        }
    }

    /// Spatially constant transverse current.
    pub fn uniform(current: [f64; 2]) -> Self {
        Self {
            current: Box::new(move |_, _| current),
            longitudinal: None,
            longitudinal_gradient: None,
            speed: 1.0,
        }
    }

    /// Currents sampled on a rectangular grid, bilinearly interpolated.
    pub fn from_grid(grid: GridField) -> Self {
        let grid = std::sync::Arc::new(grid);
        let (g1, g2, g3) = (grid.clone(), grid.clone(), grid);
        Self {
            current: Box::new(move |x1, x2| [g1.sample(0, x1, x2), g1.sample(1, x1, x2)]),
            longitudinal: Some(Box::new(move |x1, x2| g2.sample(2, x1, x2))),
            longitudinal_gradient: Some(Box::new(move |x1, x2| g3.gradient(2, x1, x2))),
            speed: 1.0,
        }
    }

    pub fn zero() -> Self {
        Self::uniform([0.0, 0.0])
    }

    fn jz_gradient(&self, x1: f64, x2: f64) -> [f64; 2] {
        if let Some(g) = &self.longitudinal_gradient {
            return g(x1, x2);
        }
        match &self.longitudinal {
            None => [0.0, 0.0],
            Some(f) => {
                let h = 1e-6;
                [
                    (f(x1 + h, x2) - f(x1 - h, x2)) / (2.0 * h),
                    (f(x1, x2 + h) - f(x1, x2 - h)) / (2.0 * h),
                ]
            }
        }
    }
}

/// Three scalar channels `(J1, J2, Jz)` on a tensor grid of sample points.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// `values[c][i * x2.len() + k]` is channel `c` at `(x1[i], x2[k])`.
    pub values: [Vec<f64>; 3],
}

impl GridField {
    pub fn new(x1: Vec<f64>, x2: Vec<f64>, values: [Vec<f64>; 3]) -> Result<Self> {
        let n = x1.len() * x2.len();
        if x1.len() < 2 || x2.len() < 2 {
            return Err(Error::InvalidArgument("grid source needs at least 2x2 samples".into()));
        }
        if values.iter().any(|v| v.len() != n) {
            return Err(Error::Dimension(format!("grid source expects {n} samples per channel")));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&x1) || !increasing(&x2) {
            return Err(Error::InvalidArgument("grid coordinates must be strictly increasing".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid source samples".into()));
        }
        Ok(Self { x1, x2, values })
    }

    fn cell(axis: &[f64], x: f64) -> (usize, f64) {
        let n = axis.len();
        let i = match axis.partition_point(|v| *v <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let t = (x - axis[i]) / (axis[i + 1] - axis[i]);
        (i, t.clamp(0.0, 1.0))
    }

    fn corners(&self, c: usize, i: usize, k: usize) -> [f64; 4] {
        let n2 = self.x2.len();
        let v = &self.values[c];
        [v[i * n2 + k], v[(i + 1) * n2 + k], v[i * n2 + k + 1], v[(i + 1) * n2 + k + 1]]
    }

    /// Bilinear interpolation of channel `c`.
    pub fn sample(&self, c: usize, x1: f64, x2: f64) -> f64 {
        let (i, t) = Self::cell(&self.x1, x1);
        let (k, u) = Self::cell(&self.x2, x2);
        let [f00, f10, f01, f11] = self.corners(c, i, k);
        (1.0 - t) * (1.0 - u) * f00 + t * (1.0 - u) * f10 + (1.0 - t) * u * f01 + t * u * f11
    }

    /// Gradient of the bilinear interpolant of channel `c`.
    pub fn gradient(&self, c: usize, x1: f64, x2: f64) -> [f64; 2] {
        let (i, t) = Self::cell(&self.x1, x1);
        let (k, u) = Self::cell(&self.x2, x2);
        let [f00, f10, f01, f11] = self.corners(c, i, k);
        let h1 = self.x1[i + 1] - self.x1[i];
        let h2 = self.x2[k + 1] - self.x2[k];
        [
            ((1.0 - u) * (f10 - f00) + u * (f11 - f01)) / h1,
            ((1.0 - t) * (f01 - f00) + t * (f11 - f10)) / h2,
        ]
    }
}

/// Mode amplitudes generated by a source at range zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceAmplitudes {
    /// Forward amplitudes at `z = 0+`, one vector per propagating group.
    pub forward: Vec<Vec<Complex64>>,
    /// Backward amplitudes at `z = 0-`, one vector per propagating group.
    pub backward: Vec<Vec<Complex64>>,
    /// Evanescent amplitudes for `z > 0`, one vector per evanescent group.
    pub evanescent: Vec<Vec<Complex64>>,
}

impl SourceAmplitudes {
    /// Amplitudes that are zero except for one forward entry.
    pub fn unit(basis: &ModeBasis, j: usize, s: Polarization, value: Complex64) -> Self {
        let mut amps = Self::zeros(basis);
        amps.forward[j][s.slot()] = value;
        amps
    }

    pub fn zeros(basis: &ModeBasis) -> Self {
        let zeros = |gs: &[ModeGroup]| -> Vec<Vec<Complex64>> {
            gs.iter().map(|g| vec![Complex64::new(0.0, 0.0); g.multiplicity()]).collect()
        };
        Self {
            forward: zeros(&basis.propagating),
            backward: zeros(&basis.propagating),
            evanescent: zeros(&basis.evanescent),
        }
    }
}

/// Project a source onto the mode basis.
pub fn project_source(
    basis: &ModeBasis,
    src: &SourceSpec,
    quad: &QuadratureGrid,
) -> Result<SourceAmplitudes> {
    let k = basis.geometry.k;
    let c = src.speed;
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidArgument("source speed must be positive".into()));
    }
    // Sample the source once on the grid.
    let mut samples = Vec::with_capacity(quad.len());
    for (x1, x2, w) in quad.points() {
        let j = (src.current)(x1, x2);
        let g = src.jz_gradient(x1, x2);
        if !(j[0].is_finite() && j[1].is_finite() && g[0].is_finite() && g[1].is_finite()) {
            return Err(Error::NonFinite(format!("source sample at ({x1}, {x2})")));
        }
        samples.push((x1, x2, w, j, g));
    }
    let projections = |group: &ModeGroup, s: Polarization| -> (f64, f64) {
        let mut pj = 0.0;
        let mut pg = 0.0;
        for (x1, x2, w, j, g) in &samples {
            let f = group.field(s, *x1, *x2);
            pj += w * (f[0] * j[0] + f[1] * j[1]);
            pg += w * (f[0] * g[0] + f[1] * g[1]);
        }
        (pj, pg)
    };
    let i = Complex64::new(0.0, 1.0);
    let mut amps = SourceAmplitudes::zeros(basis);
    for (jx, group) in basis.propagating.iter().enumerate() {
        let b = group.beta;
        for s in group.polarizations() {
            let (pj, pg) = projections(group, *s);
            let (wa, wb) = match s {
                Polarization::Te => ((k / b).sqrt(), (b / k).sqrt()),
                Polarization::Tm => ((b / k).sqrt(), (k / b).sqrt()),
            };
            let first = -wa * pj / (2.0 * c);
            let second = i * wb * pg / (2.0 * c * k);
            amps.forward[jx][s.slot()] = first - second;
            amps.backward[jx][s.slot()] = first + second;
        }
    }
    for (jx, group) in basis.evanescent.iter().enumerate() {
        let b = group.beta;
        for s in group.polarizations() {
            let (pj, pg) = projections(group, *s);
            let (wa, wb) = match s {
                Polarization::Te => ((k / b).sqrt(), (b / k).sqrt()),
                Polarization::Tm => (-(b / k).sqrt(), (k / b).sqrt()),
            };
            amps.evanescent[jx][s.slot()] = i * wa * pj / (2.0 * c) - i * wb * pg / (2.0 * c * k);
        }
    }
    Ok(amps)
}

/// Scaled forward energy flux `Σ |A|^2`; evanescent amplitudes carry no flux.
pub fn ideal_flux(amps: &SourceAmplitudes) -> f64 {
    amps.forward.iter().flatten().map(|a| a.norm_sqr()).sum()
}
