//! Dense symmetric-matrix helpers shared by the geometry and inference code.
//!
//! Matrix functions go through the symmetric eigendecomposition; every matrix
//! handled here is small (at most 10x10 for SPD points, at most 55x55 for
//! covariance blocks).

use crate::error::{invalid, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenvalue gap below which divided differences switch to the derivative.
pub const DIVIDED_DIFFERENCE_GAP: f64 = 1e-8;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.norm();
    (m - m.transpose()).norm() <= rel_tol * scale.max(f64::MIN_POSITIVE)
}

pub fn eigh(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrize(m))
}

/// `Q diag(f(l)) Q^T` for a symmetric matrix.
pub fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = eigh(m);
    reassemble(&eig.eigenvectors, &eig.eigenvalues.map(f))
}

pub fn reassemble(vectors: &DMatrix<f64>, values: &DVector<f64>) -> DMatrix<f64> {
    let scaled = vectors * DMatrix::from_diagonal(values);
    symmetrize(&(scaled * vectors.transpose()))
}

pub fn sym_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_apply(m, f64::exp)
}

pub fn sym_log(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_apply(m, f64::ln)
}

/// Frechet derivative of the matrix exponential at symmetric `a` in the
/// direction `w` (Daleckii-Krein).
pub fn exp_frechet_derivative(a: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = eigh(a);
    let q = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    let k = lam.len();
    let mut inner = q.transpose() * w * q;
    for i in 0..k {
        for j in 0..k {
            inner[(i, j)] *= exp_divided_difference(lam[i], lam[j]);
        }
    }
    symmetrize(&(q * inner * q.transpose()))
}

/// `(e^a - e^b) / (a - b)`, with the limit `e^a` for near-equal arguments.
pub fn exp_divided_difference(a: f64, b: f64) -> f64 {
    let gap = a - b;
    if gap.abs() < DIVIDED_DIFFERENCE_GAP {
        (0.5 * (a + b)).exp()
    } else {
        b.exp() * gap.exp_m1() / gap
    }
}

/// Half-vectorization length for a `k x k` symmetric matrix.
pub fn vecd_len(k: usize) -> usize {
    k * (k + 1) / 2
}

/// Index pairs in vecd order: the diagonal first, then the strict upper
/// triangle in row-major order.
pub fn vecd_pairs(k: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..k).map(|i| (i, i)).collect();
    for i in 0..k {
        for j in (i + 1)..k {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Isometric half-vectorization: `|vecd(S)|_2 = |S|_F`.
pub fn vecd(s: &DMatrix<f64>) -> Result<DVector<f64>> {
    if !is_symmetric(s, 1e-10) {
        return Err(invalid("vecd requires a symmetric matrix"));
    }
    Ok(vecd_unchecked(s))
}

pub(crate) fn vecd_unchecked(s: &DMatrix<f64>) -> DVector<f64> {
    let k = s.nrows();
    let pairs = vecd_pairs(k);
    DVector::from_iterator(
        pairs.len(),
        pairs.iter().map(|&(i, j)| {
            if i == j {
                s[(i, i)]
            } else {
                std::f64::consts::SQRT_2 * 0.5 * (s[(i, j)] + s[(j, i)])
            }
        }),
    )
}

pub fn vecd_inv(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let len = v.len();
    // k(k+1)/2 = len
    let k = (((8 * len + 1) as f64).sqrt() as usize - 1) / 2;
    if vecd_len(k) != len {
        return Err(invalid(format!("{len} is not a triangular number")));
    }
    let mut s = DMatrix::zeros(k, k);
    for (idx, (i, j)) in vecd_pairs(k).into_iter().enumerate() {
        if i == j {
            s[(i, i)] = v[idx];
        } else {
            let x = v[idx] / std::f64::consts::SQRT_2;
            s[(i, j)] = x;
            s[(j, i)] = x;
        }
    }
    Ok(s)
}

/// Eigenvalues floored at `floor`, eigenvectors kept. Returns the repaired
/// matrix and the smallest eigenvalue before repair.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, f64) {
    let eig = eigh(m);
    let min = eig.eigenvalues.min();
    let vals = eig.eigenvalues.map(|l| l.max(floor));
    (reassemble(&eig.eigenvectors, &vals), min)
}

/// Inverse square root of a symmetric positive-definite matrix.
pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_apply(m, |l| 1.0 / l.sqrt())
}

/// `tr(A B)` for same-shaped matrices, i.e. the Frobenius pairing of `A^T` and `B`.
pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.transpose().dot(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    #[test]
    fn vecd_diagonal_and_offdiagonal() {
        let d = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 5.0]);
        assert_eq!(vecd(&d).unwrap().as_slice(), &[3.0, 5.0, 0.0]);
        let o = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let v = vecd(&o).unwrap();
        assert!((v[2] - SQRT_2).abs() < 1e-15);
        assert!((v.norm() - o.norm()).abs() < 1e-15);
    }

    #[test]
    fn vecd_rejects_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(vecd(&a).is_err());
    }

    #[test]
    fn vecd_inv_round_trip() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let back = vecd_inv(&vecd(&s).unwrap()).unwrap();
        assert!((back - s).norm() < 1e-14);
        assert!(vecd_inv(&DVector::zeros(4)).is_err());
    }

    #[test]
    fn exp_log_inverse() {
        let s = DMatrix::from_row_slice(2, 2, &[0.3, -0.2, -0.2, 1.1]);
        let back = sym_log(&sym_exp(&s));
        assert!((back - s).norm() < 1e-13);
    }

    #[test]
    fn divided_difference_limit_is_continuous() {
        let a = 0.7;
        let near = exp_divided_difference(a, a + 2e-8);
        let at = exp_divided_difference(a, a);
        assert!((near - at).abs() < 1e-7);
        assert!((at - a.exp()).abs() < 1e-15);
    }

    #[test]
    fn floor_repairs_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -3.0]);
        let (fixed, min) = floor_eigenvalues(&m, 1e-8);
        assert_eq!(min, -3.0);
        assert!((fixed[(1, 1)] - 1e-8).abs() < 1e-15);
    }
}
