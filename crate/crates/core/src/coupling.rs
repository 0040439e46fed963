//! Equal-range covariances of the coupling processes between mode pairs.
//!
//! For modes `a = (j, s)` and `b = (l, q)` the pair fields are
//! `Ψ_ab(x) = φ_a(x) · φ_b(x)` and `Θ_ab(x) = (∇·φ_a)(x) (∇·φ_b)(x)`.
//! The covariance of two pair fields is
//! `B(f, h) = sigma2 ∫∫ k(x - x') f(x) h(x') dx dx'`.
//!
//! Every pair field is a sum of at most two products `c(x1) c(x2)`, each
//! factor being a combination of at most two cosines `cos(π m x / L)`.
//! With a separable kernel, `B` reduces to contractions against the
//! per-axis matrices `G[m][m'] = ∫∫ k(x - x') cos(π m x / L) cos(π m' x' / L)`.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::medium::{CovarianceModel, GaussianProfile};
use crate::modes::{Geometry, ModeBasis, ModeGroup, Polarization};
use crate::quadrature::GaussLegendre;

/// Format version of the tensor and its cache file.
pub const TENSOR_VERSION: u32 = 1;

const CACHE_MAGIC: &str = "WAVEGUIDE-COUPLING-TENSOR";

/// A combination of at most two cosines `Σ c_i cos(π m_i x / L)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosinePair {
    pub terms: [(usize, f64); 2],
    pub len: usize,
}

impl CosinePair {
    fn from_terms(a: (usize, f64), b: (usize, f64)) -> Self {
        if a.0 == b.0 {
            let c = a.1 + b.1;
            if c == 0.0 {
                Self { terms: [(0, 0.0); 2], len: 0 }
            } else {
                Self { terms: [(a.0, c), (0, 0.0)], len: 1 }
            }
        } else {
            Self { terms: [a, b], len: 2 }
        }
    }

    /// `cos(π p x / L) cos(π q x / L)` expanded in cosines.
    pub fn cos_cos(p: u32, q: u32) -> Self {
        let d = p.abs_diff(q) as usize;
        let s = (p + q) as usize;
        Self::from_terms((d, 0.5), (s, 0.5))
    }

    /// `sin(π p x / L) sin(π q x / L)` expanded in cosines.
    pub fn sin_sin(p: u32, q: u32) -> Self {
        let d = p.abs_diff(q) as usize;
        let s = (p + q) as usize;
        Self::from_terms((d, 0.5), (s, -0.5))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.terms[..self.len].iter().copied()
    }

    pub fn max_index(&self) -> usize {
        self.iter().map(|t| t.0).max().unwrap_or(0)
    }

    /// Pointwise value on an axis of length `length`.
    pub fn eval(&self, x: f64, length: f64) -> f64 {
        self.iter().map(|(m, c)| c * (PI * m as f64 * x / length).cos()).sum()
    }
}

/// Cosine Gram matrix of a one-dimensional kernel on `(0, length)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisGram {
    pub length: f64,
    pub order: usize,
    /// `(m_max + 1) x (m_max + 1)`, symmetric.
    pub matrix: DMatrix<f64>,
}

impl AxisGram {
    /// Gram matrix of an arbitrary stationary kernel `k(x - x')` with
    /// `order` Gauss–Legendre points.
    pub fn from_kernel(length: f64, m_max: usize, order: usize, kernel: impl Fn(f64) -> f64 + Sync) -> Self {
        let rule = GaussLegendre::on_interval(order, 0.0, length);
        let n = rule.len();
        let cw = DMatrix::from_fn(m_max + 1, n, |m, i| {
            rule.weights[i] * (PI * m as f64 * rule.nodes[i] / length).cos()
        });
        let kmat = DMatrix::from_fn(n, n, |i, k| kernel(rule.nodes[i] - rule.nodes[k]));
        let half = &cw * kmat;
        let g = &half * cw.transpose();
        let matrix = (&g + g.transpose()) * 0.5;
        Self { length, order, matrix }
    }

    pub fn gaussian(length: f64, profile: GaussianProfile, m_max: usize, order: usize) -> Self {
        Self::from_kernel(length, m_max, order, move |d| profile.value(d))
    }

    pub fn m_max(&self) -> usize {
        self.matrix.nrows() - 1
    }

    /// `aᵀ G b` for two cosine combinations.
    pub fn contract(&self, a: &CosinePair, b: &CosinePair) -> f64 {
        let mut acc = 0.0;
        for (m, ca) in a.iter() {
            for (n, cb) in b.iter() {
                acc += ca * cb * self.matrix[(m, n)];
            }
        }
        acc
    }
}

/// Kind of a pair field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FieldKind {
    /// Product of the two mode shapes.
    Psi,
    /// Product of the two mode divergences.
    Theta,
}

/// Pair field between two vector modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairField {
    pub left: (ModeGroup, Polarization),
    pub right: (ModeGroup, Polarization),
    pub kind: FieldKind,
}

/// One separable term `coef * f1(x1) * f2(x2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparableTerm {
    pub coef: f64,
    pub axis1: CosinePair,
    pub axis2: CosinePair,
}

impl PairField {
    pub fn new(left: (ModeGroup, Polarization), right: (ModeGroup, Polarization), kind: FieldKind) -> Self {
        Self { left, right, kind }
    }

    /// Separable expansion of the field.
    pub fn terms(&self) -> Vec<SeparableTerm> {
        let (gj, s) = self.left;
        let (gl, q) = self.right;
        let norm = gj.alpha * gl.alpha;
        match self.kind {
            FieldKind::Psi => {
                let (a1, b1) = gj.amplitudes(s);
                let (a2, b2) = gl.amplitudes(q);
                vec![
                    SeparableTerm {
                        coef: norm * a1 * a2,
                        axis1: CosinePair::cos_cos(gj.j1, gl.j1),
                        axis2: CosinePair::sin_sin(gj.j2, gl.j2),
                    },
                    SeparableTerm {
                        coef: norm * b1 * b2,
                        axis1: CosinePair::sin_sin(gj.j1, gl.j1),
                        axis2: CosinePair::cos_cos(gj.j2, gl.j2),
                    },
                ]
            }
            FieldKind::Theta => {
                if s == Polarization::Tm && q == Polarization::Tm {
                    vec![SeparableTerm {
                        coef: norm * gj.lambda * gl.lambda,
                        axis1: CosinePair::sin_sin(gj.j1, gl.j1),
                        axis2: CosinePair::sin_sin(gj.j2, gl.j2),
                    }]
                } else {
                    Vec::new()
                }
            }
        }
    }

    /// Pointwise value, from the mode shapes directly.
    pub fn sample(&self, x1: f64, x2: f64) -> f64 {
        let (gj, s) = self.left;
        let (gl, q) = self.right;
        match self.kind {
            FieldKind::Psi => {
                let a = gj.field(s, x1, x2);
                let b = gl.field(q, x1, x2);
                a[0] * b[0] + a[1] * b[1]
            }
            FieldKind::Theta => gj.divergence(s, x1, x2) * gl.divergence(q, x1, x2),
        }
    }
}

/// Covariance `B(f, h)` of two pair fields from the per-axis Gram matrices.
pub fn covariance_from_grams(sigma2: f64, g1: &AxisGram, g2: &AxisGram, f: &PairField, h: &PairField) -> Result<f64> {
    let tf = f.terms();
    let th = h.terms();
    let fits = |t: &SeparableTerm| t.axis1.max_index() <= g1.m_max() && t.axis2.max_index() <= g2.m_max();
    if !tf.iter().chain(&th).all(fits) {
        return Err(Error::InvalidArgument(
            "pair field indices exceed the Gram matrix size; enlarge the tensor".into(),
        ));
    }
    let mut acc = 0.0;
    for a in &tf {
        for b in &th {
            acc += a.coef * b.coef * g1.contract(&a.axis1, &b.axis1) * g2.contract(&a.axis2, &b.axis2);
        }
    }
    Ok(sigma2 * acc)
}

/// Covariance of two pair fields, building Gram matrices of the size needed.
pub fn cross_range_covariance(
    geometry: &Geometry,
    model: &CovarianceModel,
    f: &PairField,
    h: &PairField,
    order: usize,
) -> Result<f64> {
    let m1 = [f.left.0.j1 + f.right.0.j1, h.left.0.j1 + h.right.0.j1].into_iter().max().unwrap_or(0) as usize;
    let m2 = [f.left.0.j2 + f.right.0.j2, h.left.0.j2 + h.right.0.j2].into_iter().max().unwrap_or(0) as usize;
    let g1 = AxisGram::gaussian(geometry.l1, model.transverse[0], m1, order);
    let g2 = AxisGram::gaussian(geometry.l2, model.transverse[1], m2, order);
    covariance_from_grams(model.sigma2, &g1, &g2, f, h)
}

/// Contractions that determine every covariance between the pair fields
/// of one group pair `(j, l)`.
///
/// `axis1[u][v]` contracts the x1 factors, with `u, v = 0` for
/// `cos·cos` and `1` for `sin·sin`; `axis2` likewise for x2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairContractions {
    pub axis1: [[f64; 2]; 2],
    pub axis2: [[f64; 2]; 2],
}

impl PairContractions {
    fn compute(g1: &AxisGram, g2: &AxisGram, gj: &ModeGroup, gl: &ModeGroup) -> Self {
        let f1 = [CosinePair::cos_cos(gj.j1, gl.j1), CosinePair::sin_sin(gj.j1, gl.j1)];
        let f2 = [CosinePair::cos_cos(gj.j2, gl.j2), CosinePair::sin_sin(gj.j2, gl.j2)];
        let mut axis1 = [[0.0; 2]; 2];
        let mut axis2 = [[0.0; 2]; 2];
        for u in 0..2 {
            for v in u..2 {
                axis1[u][v] = g1.contract(&f1[u], &f1[v]);
                axis2[u][v] = g2.contract(&f2[u], &f2[v]);
                axis1[v][u] = axis1[u][v];
                axis2[v][u] = axis2[u][v];
            }
        }
        Self { axis1, axis2 }
    }

    fn to_array(self) -> [f64; 6] {
        [self.axis1[0][0], self.axis1[0][1], self.axis1[1][1], self.axis2[0][0], self.axis2[0][1], self.axis2[1][1]]
    }

    fn from_array(a: &[f64]) -> Self {
        Self { axis1: [[a[0], a[1]], [a[1], a[2]]], axis2: [[a[3], a[4]], [a[4], a[5]]] }
    }
}

/// Covariances between the pair fields of a fixed group pair `(j, l)`.
///
/// `value(F, s, q, H, t, r)` is `B(F_jl^{sq}, H_jl^{tr})`. Because
/// `F_lj^{qt} = F_jl^{tq}`, this also covers the transposed index order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairKernel {
    pub left: ModeGroup,
    pub right: ModeGroup,
    pub sigma2: f64,
    pub contractions: PairContractions,
}

impl PairKernel {
    // Terms of a field: (coef, x1 factor, x2 factor) with 0 = cos·cos, 1 = sin·sin.
    fn field_terms(&self, kind: FieldKind, s: Polarization, q: Polarization) -> ([(f64, usize, usize); 2], usize) {
        let norm = self.left.alpha * self.right.alpha;
        match kind {
            FieldKind::Psi => {
                let (a1, b1) = self.left.amplitudes(s);
                let (a2, b2) = self.right.amplitudes(q);
                ([(norm * a1 * a2, 0, 1), (norm * b1 * b2, 1, 0)], 2)
            }
            FieldKind::Theta => {
                if s == Polarization::Tm && q == Polarization::Tm {
                    ([(norm * self.left.lambda * self.right.lambda, 1, 1), (0.0, 0, 0)], 1)
                } else {
                    ([(0.0, 0, 0); 2], 0)
                }
            }
        }
    }

    pub fn value(
        &self,
        kind_a: FieldKind,
        s: Polarization,
        q: Polarization,
        kind_b: FieldKind,
        t: Polarization,
        r: Polarization,
    ) -> f64 {
        let (fa, na) = self.field_terms(kind_a, s, q);
        let (fb, nb) = self.field_terms(kind_b, t, r);
        let c = &self.contractions;
        let mut acc = 0.0;
        for a in &fa[..na] {
            for b in &fb[..nb] {
                acc += a.0 * b.0 * c.axis1[a.1][b.1] * c.axis2[a.2][b.2];
            }
        }
        self.sigma2 * acc
    }

    /// The four covariances `(ΨΨ, ΨΘ, ΘΨ, ΘΘ)` between `F_jl^{sq}` and `F_lj^{qt}`.
    pub fn sandwich(&self, s: Polarization, q: Polarization, t: Polarization) -> [f64; 4] {
        use FieldKind::{Psi, Theta};
        [
            self.value(Psi, s, q, Psi, t, q),
            self.value(Psi, s, q, Theta, t, q),
            self.value(Theta, s, q, Psi, t, q),
            self.value(Theta, s, q, Theta, t, q),
        ]
    }
}

/// Options controlling the assembly of the coupling tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    /// Gauss–Legendre points per axis; 0 selects `4 * max_index + 8`.
    pub order: usize,
    /// Compare against a rule with twice the points and warn above `1e-6`.
    pub check_resolution: bool,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self { order: 0, check_resolution: false }
    }
}

/// Serializable description of what a tensor was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub version: u32,
    pub geometry: Geometry,
    pub model: CovarianceModel,
    pub orders: [usize; 2],
    pub m_max: [usize; 2],
    pub groups: Vec<(u32, u32)>,
    pub hash: String,
}

/// Per-axis Gram matrices plus the contractions of every propagating pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTensor {
    pub header: TensorHeader,
    pub grams: [AxisGram; 2],
    /// Row-major `N x N` table over propagating groups.
    pub pairs: Vec<PairContractions>,
    n: usize,
}

/// Content hash of the inputs that determine a tensor.
pub fn tensor_hash(basis: &ModeBasis, model: &CovarianceModel, orders: [usize; 2], m_max: [usize; 2]) -> String {
    let groups: Vec<(u32, u32)> = basis.propagating.iter().chain(&basis.evanescent).map(|g| (g.j1, g.j2)).collect();
    let payload = serde_json::json!({
        "version": TENSOR_VERSION,
        "geometry": basis.geometry,
        "model": model,
        "orders": orders,
        "m_max": m_max,
        "groups": groups,
    });
    let digest = Sha256::digest(payload.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Key identifying the tensor that [`assemble_coupling_tensor`] would build
/// for these inputs, usable before assembly (for example as a cache name).
pub fn assembly_key(basis: &ModeBasis, model: &CovarianceModel, options: &AssemblyOptions) -> String {
    let (m_max, orders) = sizes(basis, options);
    let hash = tensor_hash(basis, model, orders, m_max);
    if options.check_resolution {
        format!("{hash}-checked")
    } else {
        hash
    }
}

fn sizes(basis: &ModeBasis, options: &AssemblyOptions) -> ([usize; 2], [usize; 2]) {
    let (j1, j2) = basis.max_indices();
    let m_max = [2 * j1 as usize, 2 * j2 as usize];
    let orders = if options.order > 0 {
        [options.order, options.order]
    } else {
        [4 * j1 as usize + 8, 4 * j2 as usize + 8]
    };
    (m_max, orders)
}

/// Assemble the tensor for a basis. Evanescent groups in the basis are
/// covered by the Gram matrices; only propagating pairs are tabulated.
pub fn assemble_coupling_tensor(
    basis: &ModeBasis,
    model: &CovarianceModel,
    options: &AssemblyOptions,
) -> Result<CouplingTensor> {
    let geom = basis.geometry;
    let (m_max, mut orders) = sizes(basis, options);
    let build = |orders: [usize; 2]| {
        rayon::join(
            || AxisGram::gaussian(geom.l1, model.transverse[0], m_max[0], orders[0]),
            || AxisGram::gaussian(geom.l2, model.transverse[1], m_max[1], orders[1]),
        )
    };
    let (mut g1, mut g2) = build(orders);
    if options.check_resolution {
        let refined = [2 * orders[0], 2 * orders[1]];
        let (r1, r2) = build(refined);
        let rel = |a: &AxisGram, b: &AxisGram| (&a.matrix - &b.matrix).amax() / b.matrix.amax().max(f64::MIN_POSITIVE);
        let worst = rel(&g1, &r1).max(rel(&g2, &r2));
        if worst > 1e-6 {
            log::warn!("Gram quadrature under-resolved (relative change {worst:e} on doubling); using the refined rule");
            g1 = r1;
            g2 = r2;
            orders = refined;
        }
    }
    let n = basis.n_propagating();
    let pairs: Vec<PairContractions> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (j, l) = (idx / n, idx % n);
            PairContractions::compute(&g1, &g2, &basis.propagating[j], &basis.propagating[l])
        })
        .collect();
    let header = TensorHeader {
        version: TENSOR_VERSION,
        geometry: geom,
        model: *model,
        orders,
        m_max,
        groups: basis.propagating.iter().chain(&basis.evanescent).map(|g| (g.j1, g.j2)).collect(),
        hash: tensor_hash(basis, model, orders, m_max),
    };
    Ok(CouplingTensor { header, grams: [g1, g2], pairs, n })
}

impl CouplingTensor {
    pub fn n_propagating(&self) -> usize {
        self.n
    }

    pub fn sigma2(&self) -> f64 {
        self.header.model.sigma2
    }

    /// Kernel of the propagating pair `(j, l)` from the table.
    pub fn propagating_pair(&self, basis: &ModeBasis, j: usize, l: usize) -> Result<PairKernel> {
        if j >= self.n || l >= self.n || basis.n_propagating() != self.n {
            return Err(Error::MissingEntry(j, l));
        }
        Ok(PairKernel {
            left: basis.propagating[j],
            right: basis.propagating[l],
            sigma2: self.sigma2(),
            contractions: self.pairs[j * self.n + l],
        })
    }

    /// Kernel of an arbitrary group pair covered by the Gram matrices.
    pub fn pair(&self, left: &ModeGroup, right: &ModeGroup) -> Result<PairKernel> {
        let fits = (left.j1 + right.j1) as usize <= self.grams[0].m_max()
            && (left.j2 + right.j2) as usize <= self.grams[1].m_max();
        if !fits {
            return Err(Error::InvalidArgument(format!(
                "group pair ({},{})-({},{}) exceeds the tensor index range",
                left.j1, left.j2, right.j1, right.j2
            )));
        }
        Ok(PairKernel {
            left: *left,
            right: *right,
            sigma2: self.sigma2(),
            contractions: PairContractions::compute(&self.grams[0], &self.grams[1], left, right),
        })
    }

    /// Covariance between two arbitrary pair fields.
    pub fn covariance(&self, f: &PairField, h: &PairField) -> Result<f64> {
        covariance_from_grams(self.sigma2(), &self.grams[0], &self.grams[1], f, h)
    }

    /// Check that the tensor was built for this basis and model.
    pub fn matches(&self, basis: &ModeBasis, model: &CovarianceModel) -> bool {
        let hash = tensor_hash(basis, model, self.header.orders, self.header.m_max);
        hash == self.header.hash
    }

    /// Write the tensor as a JSON header line followed by little-endian doubles.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{CACHE_MAGIC} {TENSOR_VERSION}")?;
        let header = serde_json::to_string(&self.header).map_err(|e| Error::Cache(e.to_string()))?;
        writeln!(out, "{header}")?;
        for g in &self.grams {
            for v in g.matrix.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        for p in &self.pairs {
            for v in p.to_array() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Read a tensor written by [`CouplingTensor::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Cache(format!("cannot open tensor cache {}: {e}", path.display())))?;
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        if line.trim_end() != format!("{CACHE_MAGIC} {TENSOR_VERSION}") {
            return Err(Error::Cache(format!("{} is not a version {TENSOR_VERSION} tensor cache", path.display())));
        }
        line.clear();
        reader.read_line(&mut line)?;
        let header: TensorHeader = serde_json::from_str(line.trim_end()).map_err(|e| Error::Cache(e.to_string()))?;
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        let values: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        let s1 = (header.m_max[0] + 1).pow(2);
        let s2 = (header.m_max[1] + 1).pow(2);
        let n = header.groups.len();
        let n_prop = values.len().saturating_sub(s1 + s2) / 6;
        let n_prop = (n_prop as f64).sqrt().round() as usize;
        if values.len() != s1 + s2 + 6 * n_prop * n_prop || n_prop > n {
            return Err(Error::Cache("tensor cache payload has an unexpected size".into()));
        }
        let g1 = DMatrix::from_column_slice(header.m_max[0] + 1, header.m_max[0] + 1, &values[..s1]);
        let g2 = DMatrix::from_column_slice(header.m_max[1] + 1, header.m_max[1] + 1, &values[s1..s1 + s2]);
        let pairs = values[s1 + s2..].chunks_exact(6).map(PairContractions::from_array).collect();
        let grams = [
            AxisGram { length: header.geometry.l1, order: header.orders[0], matrix: g1 },
            AxisGram { length: header.geometry.l2, order: header.orders[1], matrix: g2 },
        ];
        Ok(Self { header, grams, pairs, n: n_prop })
    }
}
