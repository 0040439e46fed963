//! One-dimensional Gauss–Legendre rules, tensor grids on the cross-section,
//! and adaptive Gauss–Kronrod integration.

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Rule with `n` points on `[-1, 1]`, computed by Newton iteration on the
    /// three-term Legendre recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "Gauss-Legendre order must be positive");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..(n + 1) / 2 {
            // Tricomi initial guess for the i-th largest root.
            let theta = std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5);
            let mut x = (1.0 - (nf - 1.0) / (8.0 * nf * nf * nf)) * theta.cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_and_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                    let (_, d) = legendre_and_derivative(n, x);
                    dp = d;
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Rule with `n` points mapped affinely onto `[a, b]`.
    pub fn on_interval(n: usize, a: f64, b: f64) -> Self {
        let base = Self::new(n);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        Self {
            nodes: base.nodes.iter().map(|x| mid + half * x).collect(),
            weights: base.weights.iter().map(|w| half * w).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integral of `f` with this rule.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for m in 2..=n {
        let mf = m as f64;
        let p2 = ((2.0 * mf - 1.0) * x * p1 - (mf - 1.0) * p0) / mf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p, d)
}

/// Tensor-product Gauss–Legendre grid on the rectangle `(0, l1) x (0, l2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub axis1: GaussLegendre,
    pub axis2: GaussLegendre,
}

impl QuadratureGrid {
    pub fn new(l1: f64, l2: f64, order1: usize, order2: usize) -> Self {
        Self {
            axis1: GaussLegendre::on_interval(order1, 0.0, l1),
            axis2: GaussLegendre::on_interval(order2, 0.0, l2),
        }
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.axis1.len() * self.axis2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Iterator over `(x1, x2, weight)` triples.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.axis1
            .nodes
            .iter()
            .zip(&self.axis1.weights)
            .flat_map(move |(x1, w1)| {
                self.axis2
                    .nodes
                    .iter()
                    .zip(&self.axis2.weights)
                    .map(move |(x2, w2)| (*x1, *x2, w1 * w2))
            })
    }

    /// Integral of a scalar function over the rectangle.
    pub fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.points().map(|(x1, x2, w)| w * f(x1, x2)).sum()
    }
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS_K: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WEIGHTS_G: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut kron = GK_WEIGHTS_K[7] * fc;
    let mut gauss = GK_WEIGHTS_G[3] * fc;
    for i in 0..7 {
        let dx = half * GK_NODES[i];
        let s = f(mid - dx) + f(mid + dx);
        kron += GK_WEIGHTS_K[i] * s;
        if i % 2 == 1 {
            gauss += GK_WEIGHTS_G[i / 2] * s;
        }
    }
    (kron * half, ((kron - gauss) * half).abs())
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

/// Adaptive Gauss–Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// Subintervals are bisected, largest error first, until the summed error
/// estimate is below `max(rel_tol * |value|, abs_tol)`.
pub fn adaptive_gauss_kronrod(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_intervals: usize,
) -> Result<Integral> {
    let mut intervals: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(64);
    let (v, e) = gk15(&f, a, b);
    intervals.push((a, b, v, e));
    loop {
        let value: f64 = intervals.iter().map(|t| t.2).sum();
        let error: f64 = intervals.iter().map(|t| t.3).sum();
        if !value.is_finite() {
            return Err(Error::NonFinite("adaptive quadrature".into()));
        }
        let target = (rel_tol * value.abs()).max(abs_tol);
        if error <= target {
            return Ok(Integral { value, error });
        }
        if intervals.len() >= max_intervals {
            let achieved = if value != 0.0 { error / value.abs() } else { error };
            return Err(Error::Quadrature { achieved, requested: rel_tol });
        }
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty interval list");
        let (lo, hi, _, _) = intervals.swap_remove(idx);
        let m = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, m);
        let (v2, e2) = gk15(&f, m, hi);
        intervals.push((lo, m, v1, e1));
        intervals.push((m, hi, v2, e2));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = GaussLegendre::new(7);
        // Degree 13 is the highest exact degree for 7 points.
        let v = rule.integrate(|x| x.powi(12) + 3.0 * x.powi(13));
        assert!((v - 2.0 / 13.0).abs() < 1e-14);
        let w: f64 = rule.weights.iter().sum();
        assert!((w - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gauss_legendre_large_order_is_accurate() {
        let rule = GaussLegendre::on_interval(1500, 0.0, 3.0);
        let v = rule.integrate(|x| (40.0 * x).cos());
        assert!((v - (120.0f64).sin() / 40.0).abs() < 1e-13);
        assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn grid_integrates_separable_product() {
        let g = QuadratureGrid::new(1.5, 2.0, 20, 22);
        let v = g.integrate(|x, y| x * x * y);
        assert!((v - (1.5f64.powi(3) / 3.0) * 2.0).abs() < 1e-12);
        assert_eq!(g.len(), 440);
    }

    #[test]
    fn adaptive_integrates_oscillatory_gaussian() {
        let r = adaptive_gauss_kronrod(
            |z| (-z * z / 2.0).exp() * (3.0 * z).cos(),
            0.0,
            12.0,
            1e-12,
            1e-15,
            1000,
        )
        .unwrap();
        let exact = 0.5 * (2.0 * std::f64::consts::PI).sqrt() * (-4.5f64).exp();
        assert!((r.value - exact).abs() < 1e-13);
    }

    #[test]
    fn adaptive_reports_non_convergence() {
        let r = adaptive_gauss_kronrod(|z| (1.0 / z).sin(), 1e-8, 1.0, 1e-14, 0.0, 4);
        assert!(matches!(r, Err(Error::Quadrature { .. })));
    }
}
