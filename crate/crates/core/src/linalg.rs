//! Hermitian eigendecomposition, backed by nalgebra on an `f64` copy.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex;

use crate::cmatrix::CMatrix;
use crate::scalar::Real;

/// Eigenpairs of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEigen<T> {
    /// Eigenvalues in descending order.
    pub values: Vec<T>,
    /// Column `k` is the eigenvector of `values[k]`, normalized, with its
    /// largest-modulus component real and positive.
    pub vectors: CMatrix<T>,
}

/// Decomposes a Hermitian matrix. The strictly lower triangle is ignored.
pub fn hermitian_eigen<T: Real>(m: &CMatrix<T>) -> HermitianEigen<T> {
    assert!(m.is_square(), "eigendecomposition needs a square matrix");
    let n = m.rows();
    let dm = DMatrix::<Complex<f64>>::from_fn(n, n, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        let z = m[(a, b)];
        let z = Complex::new(z.re.as_f64(), z.im.as_f64());
        if i <= j {
            z
        } else {
            z.conj()
        }
    });
    let eig = SymmetricEigen::new(dm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let values = order.iter().map(|&k| T::lit(eig.eigenvalues[k])).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let mut pivot = 0;
        for i in 1..n {
            if v[i].norm() > v[pivot].norm() + 1e-12 {
                pivot = i;
            }
        }
        let ph = if v[pivot].norm() > 0.0 {
            v[pivot].conj() / v[pivot].norm()
        } else {
            Complex::new(1.0, 0.0)
        };
        for i in 0..n {
            let z = v[i] * ph;
            vectors[(i, col)] = Complex::new(T::lit(z.re), T::lit(z.im));
        }
    }
    HermitianEigen { values, vectors }
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue<T: Real>(m: &CMatrix<T>) -> T {
    hermitian_eigen(m).values.last().copied().unwrap_or_else(T::zero)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pauli_y_spectrum() {
        let m = CMatrix::<f64>::from_rows(&[
            vec![Complex::new(0.0, 0.0), Complex::new(0.0, -1.0)],
            vec![Complex::new(0.0, 1.0), Complex::new(0.0, 0.0)],
        ]);
        let e = hermitian_eigen(&m);
        assert!((e.values[0] - 1.0).abs() < 1e-12);
        assert!((e.values[1] + 1.0).abs() < 1e-12);
        // phase convention: largest component real positive
        for k in 0..2 {
            let col: Vec<_> = (0..2).map(|i| e.vectors[(i, k)]).collect();
            let top = col.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let big = col.iter().find(|z| z.norm() > top - 1e-12).unwrap();
            assert!(big.im.abs() < 1e-12 && big.re > 0.0);
        }
    }

    #[test]
    fn reconstructs_matrix() {
        let m = CMatrix::<f64>::from_rows(&[
            vec![Complex::new(2.0, 0.0), Complex::new(0.5, 0.3), Complex::new(0.0, 0.1)],
            vec![Complex::new(0.5, -0.3), Complex::new(1.0, 0.0), Complex::new(0.2, 0.0)],
            vec![Complex::new(0.0, -0.1), Complex::new(0.2, 0.0), Complex::new(0.5, 0.0)],
        ]);
        let e = hermitian_eigen(&m);
        let d = CMatrix::from_fn(3, 3, |i, j| {
            if i == j {
                Complex::new(e.values[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            }
        });
        let back = &(&e.vectors * &d) * &e.vectors.adjoint();
        assert!(back.sub(&m).max_abs() < 1e-12);
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }
}
