//! Small dense complex matrix helpers for the 1x1 and 2x2 mode blocks.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Dense complex matrix.
pub type CMatrix = DMatrix<Complex64>;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn zeros(n: usize) -> CMatrix {
    CMatrix::from_element(n, n, c(0.0, 0.0))
}

/// Conjugate transpose.
pub fn adjoint(m: &CMatrix) -> CMatrix {
    m.adjoint()
}

/// Frobenius norm.
pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Real diagonal matrix as a complex matrix.
pub fn diag(values: &[f64]) -> CMatrix {
    let n = values.len();
    CMatrix::from_fn(n, n, |i, k| if i == k { c(values[i], 0.0) } else { c(0.0, 0.0) })
}

/// Real matrix promoted to complex.
pub fn complexify(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| c(v, 0.0))
}

/// `(m + m*) / 2`.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5, 0.0)
}

/// Ascending eigenvalues of a Hermitian 1x1 or 2x2 matrix (closed form).
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    match m.nrows() {
        0 => Vec::new(),
        1 => vec![m[(0, 0)].re],
        2 => {
            let a = m[(0, 0)].re;
            let d = m[(1, 1)].re;
            let b = 0.5 * (m[(0, 1)] + m[(1, 0)].conj());
            let mean = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
            vec![mean - rad, mean + rad]
        }
        n => {
            let h = hermitian_part(m);
            let mut e: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
            e.sort_by(f64::total_cmp);
            debug_assert_eq!(e.len(), n);
            e
        }
    }
}

/// `exp(m)` for a 1x1 or 2x2 complex matrix in closed form.
///
/// Writing `m = μ I + N` with `N` traceless gives `N² = δ² I`, so
/// `exp(m) = e^μ (cosh δ I + sinh δ / δ N)`.
pub fn expm_small(m: &CMatrix) -> CMatrix {
    match m.nrows() {
        0 => m.clone(),
        1 => CMatrix::from_element(1, 1, m[(0, 0)].exp()),
        2 => {
            let mu = 0.5 * (m[(0, 0)] + m[(1, 1)]);
            let n00 = m[(0, 0)] - mu;
            let n01 = m[(0, 1)];
            let n10 = m[(1, 0)];
            let delta = (n00 * n00 + n01 * n10).sqrt();
            let (ch, shc) = if delta.norm() < 1e-4 {
                let d2 = delta * delta;
                (c(1.0, 0.0) + d2 / 2.0 + d2 * d2 / 24.0, c(1.0, 0.0) + d2 / 6.0 + d2 * d2 / 120.0)
            } else {
                (delta.cosh(), delta.sinh() / delta)
            };
            let e = mu.exp();
            CMatrix::from_row_slice(
                2,
                2,
                &[e * (ch + shc * n00), e * shc * n01, e * shc * n10, e * (ch - shc * n00)],
            )
        }
        _ => panic!("closed-form exponential supports only 1x1 and 2x2 blocks"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_expm(m: &CMatrix) -> CMatrix {
        let n = m.nrows();
        let mut term = CMatrix::identity(n, n);
        let mut sum = term.clone();
        for k in 1..60 {
            term = &term * m / c(k as f64, 0.0);
            sum += &term;
        }
        sum
    }

    #[test]
    fn closed_form_exponential_matches_series() {
        let m = CMatrix::from_row_slice(2, 2, &[c(-0.3, 0.8), c(0.2, -0.1), c(-0.4, 0.05), c(-0.9, -0.2)]);
        let diff = frobenius(&(expm_small(&m) - series_expm(&m)));
        assert!(diff < 1e-13);
    }

    #[test]
    fn closed_form_exponential_near_degenerate() {
        let m = CMatrix::from_row_slice(2, 2, &[c(-0.5, 0.1), c(1e-7, 0.0), c(0.0, 0.0), c(-0.5, 0.1)]);
        let diff = frobenius(&(expm_small(&m) - series_expm(&m)));
        assert!(diff < 1e-15);
    }

    #[test]
    fn hermitian_eigenvalues_closed_form() {
        let m = CMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.5, 1.0), c(0.5, -1.0), c(-1.0, 0.0)]);
        let e = hermitian_eigenvalues(&m);
        let disc = (1.5f64 * 1.5 + 1.25).sqrt();
        assert!((e[0] - (0.5 - disc)).abs() < 1e-14);
        assert!((e[1] - (0.5 + disc)).abs() < 1e-14);
    }
}
