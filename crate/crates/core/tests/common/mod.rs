#![allow(dead_code)]

use manifold_dp::manifold::{exp_map, tangent_frame, ManifoldPoint, TangentVector};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_vector<R: Rng>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)))
}

pub fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_iterator(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(rng)))
}

pub fn random_sphere_point<R: Rng>(ambient: usize, rng: &mut R) -> ManifoldPoint {
    let v = gaussian_vector(ambient, rng);
    ManifoldPoint::sphere(&v / v.norm()).unwrap()
}

/// SPD matrix with log-eigenvalues in roughly [-1.5, 1.5].
pub fn random_spd<R: Rng>(m: usize, rng: &mut R) -> ManifoldPoint {
    let q = random_orthogonal(m, rng);
    let d = DMatrix::from_diagonal(&DVector::from_iterator(m, (0..m).map(|_| (rng.random::<f64>() * 3.0 - 1.5).exp())));
    ManifoldPoint::spd(&q * d * q.transpose()).unwrap()
}

pub fn random_orthogonal<R: Rng>(m: usize, rng: &mut R) -> DMatrix<f64> {
    let qr = gaussian_matrix(m, m, rng).qr();
    let (q, r) = (qr.q(), qr.r());
    let signs = DMatrix::from_diagonal(&r.diagonal().map(|x| if x < 0.0 { -1.0 } else { 1.0 }));
    q * signs
}

pub fn random_rotation<R: Rng>(m: usize, rng: &mut R) -> DMatrix<f64> {
    let mut q = random_orthogonal(m, rng);
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

/// Invertible matrix with singular values in [0.5, 2].
pub fn random_invertible<R: Rng>(m: usize, rng: &mut R) -> DMatrix<f64> {
    let u = random_orthogonal(m, rng);
    let v = random_orthogonal(m, rng);
    let s = DMatrix::from_diagonal(&DVector::from_iterator(m, (0..m).map(|_| 0.5 + 1.5 * rng.random::<f64>())));
    u * s * v.transpose()
}

pub fn random_symmetric<R: Rng>(m: usize, rng: &mut R) -> DMatrix<f64> {
    let a = gaussian_matrix(m, m, rng);
    (&a + a.transpose()) * 0.5
}

/// Tangent vector at `p` with frame coordinates uniform in direction and
/// norm uniform on [0, max_norm].
pub fn random_tangent<R: Rng>(p: &ManifoldPoint, max_norm: f64, rng: &mut R) -> TangentVector {
    let frame = tangent_frame(p);
    let z = gaussian_vector(frame.dim(), rng);
    let t = max_norm * rng.random::<f64>();
    frame.vector(&(&z / z.norm() * t)).unwrap()
}

pub fn random_point_near<R: Rng>(p: &ManifoldPoint, max_dist: f64, rng: &mut R) -> ManifoldPoint {
    exp_map(p, &random_tangent(p, max_dist, rng)).unwrap()
}
