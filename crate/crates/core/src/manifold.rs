//! Geometry kernels for the unit sphere `S^d` (embedded in `R^{d+1}`) and for
//! SPD(m) with the affine-invariant metric `<A, B>_P = tr(P^-1 A P^-1 B)`.
//!
//! Points are immutable and cheap to clone. Sphere points and tangent vectors
//! are stored as `(d+1) x 1` column matrices so both manifolds share the same
//! ambient representation.

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, is_symmetric, symmetrize, trace_product, vecd_pairs};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::sync::Arc;

/// Sphere log-map refuses points closer than this to the antipode.
pub const ANTIPODAL_TOLERANCE: f64 = 1e-8;

const SPHERE_NORM_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    /// `S^d` with `ambient_dim = d + 1`.
    Sphere { ambient_dim: usize },
    /// `m x m` SPD matrices, affine-invariant metric.
    Spd { matrix_size: usize },
}

impl ManifoldKind {
    pub fn sphere(ambient_dim: usize) -> Result<Self> {
        let kind = ManifoldKind::Sphere { ambient_dim };
        kind.validate()?;
        Ok(kind)
    }

    pub fn spd(matrix_size: usize) -> Result<Self> {
        let kind = ManifoldKind::Spd { matrix_size };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ManifoldKind::Sphere { ambient_dim } if ambient_dim < 2 => {
                Err(invalid("sphere needs ambient dimension >= 2"))
            }
            ManifoldKind::Spd { matrix_size } if matrix_size < 1 => {
                Err(invalid("SPD matrix size must be >= 1"))
            }
            _ => Ok(()),
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        match *self {
            ManifoldKind::Sphere { ambient_dim } => ambient_dim - 1,
            ManifoldKind::Spd { matrix_size } => linalg::vecd_len(matrix_size),
        }
    }

    /// Upper bound on sectional curvature.
    pub fn curvature_upper(&self) -> f64 {
        match self {
            ManifoldKind::Sphere { .. } => 1.0,
            ManifoldKind::Spd { .. } => 0.0,
        }
    }

    /// Lower bound on sectional curvature.
    pub fn curvature_lower(&self) -> f64 {
        match self {
            ManifoldKind::Sphere { .. } => 1.0,
            ManifoldKind::Spd { .. } => -0.5,
        }
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self, ManifoldKind::Sphere { .. })
    }

    fn ambient_shape(&self) -> (usize, usize) {
        match *self {
            ManifoldKind::Sphere { ambient_dim } => (ambient_dim, 1),
            ManifoldKind::Spd { matrix_size } => (matrix_size, matrix_size),
        }
    }

    pub(crate) fn ensure_same(&self, other: ManifoldKind) -> Result<()> {
        if *self == other {
            Ok(())
        } else {
            Err(Error::KindMismatch {
                expected: *self,
                found: other,
            })
        }
    }
}

impl fmt::Display for ManifoldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifoldKind::Sphere { ambient_dim } => write!(f, "S^{}", ambient_dim - 1),
            ManifoldKind::Spd { matrix_size } => write!(f, "SPD({matrix_size})"),
        }
    }
}

#[derive(Debug)]
struct SpdFactors {
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
    inv: DMatrix<f64>,
}

#[derive(Debug)]
struct PointData {
    kind: ManifoldKind,
    coords: DMatrix<f64>,
    factors: Option<SpdFactors>,
}

/// A point on one of the supported manifolds.
#[derive(Clone)]
pub struct ManifoldPoint(Arc<PointData>);

impl fmt::Debug for ManifoldPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:?}", self.kind(), self.0.coords.as_slice())
    }
}

impl ManifoldPoint {
    /// A unit vector in `R^{d+1}`; the norm must be 1 within 1e-12.
    pub fn sphere(coords: DVector<f64>) -> Result<Self> {
        let kind = ManifoldKind::sphere(coords.len())?;
        let norm = coords.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > SPHERE_NORM_TOL {
            return Err(invalid(format!("sphere point has norm {norm}, expected 1")));
        }
        Ok(Self::wrap(kind, DMatrix::from_column_slice(coords.len(), 1, coords.as_slice()), None))
    }

    pub fn sphere_from_slice(coords: &[f64]) -> Result<Self> {
        Self::sphere(DVector::from_column_slice(coords))
    }

    /// A symmetric positive-definite matrix.
    pub fn spd(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(invalid("SPD point must be a non-empty square matrix"));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(invalid("SPD point has non-finite entries"));
        }
        if !is_symmetric(&matrix, SYMMETRY_TOL) {
            return Err(invalid("SPD point is not symmetric"));
        }
        Self::spd_symmetrized(symmetrize(&matrix))
    }

    pub fn spd_from_row_slice(m: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != m * m {
            return Err(invalid(format!("expected {} entries, got {}", m * m, entries.len())));
        }
        Self::spd(DMatrix::from_row_slice(m, m, entries))
    }

    pub fn identity(m: usize) -> Self {
        Self::spd(DMatrix::identity(m, m)).expect("identity is SPD")
    }

    /// Canonical basis vector `e_axis` of the ambient space.
    pub fn sphere_axis(ambient_dim: usize, axis: usize) -> Self {
        let mut v = DVector::zeros(ambient_dim);
        v[axis] = 1.0;
        Self::sphere(v).expect("basis vector is a unit vector")
    }

    fn spd_symmetrized(matrix: DMatrix<f64>) -> Result<Self> {
        let kind = ManifoldKind::spd(matrix.nrows())?;
        let eig = linalg::eigh(&matrix);
        let min = eig.eigenvalues.min();
        if !(min > 0.0) {
            return Err(invalid(format!("matrix is not positive definite (smallest eigenvalue {min:e})")));
        }
        let q = &eig.eigenvectors;
        let factors = SpdFactors {
            sqrt: linalg::reassemble(q, &eig.eigenvalues.map(f64::sqrt)),
            inv_sqrt: linalg::reassemble(q, &eig.eigenvalues.map(|l| 1.0 / l.sqrt())),
            inv: linalg::reassemble(q, &eig.eigenvalues.map(|l| 1.0 / l)),
        };
        Ok(Self::wrap(kind, matrix, Some(factors)))
    }

    fn sphere_normalized(v: DMatrix<f64>) -> Result<Self> {
        let norm = v.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(invalid("cannot normalize a zero or non-finite vector"));
        }
        let kind = ManifoldKind::sphere(v.nrows())?;
        Ok(Self::wrap(kind, v / norm, None))
    }

    fn wrap(kind: ManifoldKind, coords: DMatrix<f64>, factors: Option<SpdFactors>) -> Self {
        ManifoldPoint(Arc::new(PointData { kind, coords, factors }))
    }

    pub fn kind(&self) -> ManifoldKind {
        self.0.kind
    }

    /// Ambient coordinates: a column for the sphere, the matrix for SPD.
    pub fn coords(&self) -> &DMatrix<f64> {
        &self.0.coords
    }

    /// Row-major flattening of the ambient coordinates.
    pub fn to_row_major(&self) -> Vec<f64> {
        let c = self.coords();
        let mut out = Vec::with_capacity(c.len());
        for i in 0..c.nrows() {
            for j in 0..c.ncols() {
                out.push(c[(i, j)]);
            }
        }
        out
    }

    pub fn ptr_eq(&self, other: &ManifoldPoint) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// Same kind and bitwise-equal coordinates.
    pub fn same_as(&self, other: &ManifoldPoint) -> bool {
        self.ptr_eq(other) || (self.kind() == other.kind() && self.coords() == other.coords())
    }

    fn spd_factors(&self) -> &SpdFactors {
        self.0.factors.as_ref().expect("SPD point carries its factors")
    }

    /// `P^{1/2}` (SPD only).
    pub fn spd_sqrt(&self) -> &DMatrix<f64> {
        &self.spd_factors().sqrt
    }

    /// `P^{-1/2}` (SPD only).
    pub fn spd_inv_sqrt(&self) -> &DMatrix<f64> {
        &self.spd_factors().inv_sqrt
    }

    /// `P^{-1}` (SPD only).
    pub fn spd_inv(&self) -> &DMatrix<f64> {
        &self.spd_factors().inv
    }

    /// Riemannian inner product of two ambient tangent representations at this point.
    pub fn inner(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        match self.kind() {
            ManifoldKind::Sphere { .. } => a.dot(b),
            ManifoldKind::Spd { .. } => {
                let inv = self.spd_inv();
                trace_product(&(inv * a), &(inv * b))
            }
        }
    }

    /// Metric dual `P^-1 A P^-1` of a tangent representation, so that
    /// `<A, B>_P = dual(A) . B` (Frobenius).
    fn lower(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        match self.kind() {
            ManifoldKind::Sphere { .. } => a.clone(),
            ManifoldKind::Spd { .. } => {
                let inv = self.spd_inv();
                symmetrize(&(inv * a * inv))
            }
        }
    }

    /// Applies an isometry: `Q x` on the sphere (Q orthogonal), `A P A^T` on SPD.
    pub fn transform(&self, a: &DMatrix<f64>) -> Result<ManifoldPoint> {
        match self.kind() {
            ManifoldKind::Sphere { .. } => Self::sphere_normalized(a * self.coords()),
            ManifoldKind::Spd { .. } => {
                Self::spd_symmetrized(symmetrize(&(a * self.coords() * a.transpose())))
            }
        }
    }
}

/// A tangent vector in its ambient representation.
#[derive(Clone, Debug)]
pub struct TangentVector {
    base: ManifoldPoint,
    vec: DMatrix<f64>,
}

impl TangentVector {
    pub fn new(base: &ManifoldPoint, vec: DMatrix<f64>) -> Result<Self> {
        let (r, c) = base.kind().ambient_shape();
        if vec.shape() != (r, c) {
            return Err(invalid(format!("tangent vector has shape {:?}, expected {:?}", vec.shape(), (r, c))));
        }
        if vec.iter().any(|x| !x.is_finite()) {
            return Err(invalid("tangent vector has non-finite entries"));
        }
        match base.kind() {
            ManifoldKind::Sphere { .. } => {
                let along = vec.dot(base.coords());
                if along.abs() > 1e-12 * vec.norm().max(1.0) {
                    return Err(invalid("sphere tangent vector is not orthogonal to its base"));
                }
            }
            ManifoldKind::Spd { .. } => {
                if !is_symmetric(&vec, SYMMETRY_TOL) {
                    return Err(invalid("SPD tangent vector is not symmetric"));
                }
            }
        }
        Ok(Self::unchecked(base, vec))
    }

    pub fn zero(base: &ManifoldPoint) -> Self {
        let (r, c) = base.kind().ambient_shape();
        Self::unchecked(base, DMatrix::zeros(r, c))
    }

    pub(crate) fn unchecked(base: &ManifoldPoint, vec: DMatrix<f64>) -> Self {
        TangentVector { base: base.clone(), vec }
    }

    pub fn base(&self) -> &ManifoldPoint {
        &self.base
    }

    pub fn vec(&self) -> &DMatrix<f64> {
        &self.vec
    }

    pub fn into_vec(self) -> DMatrix<f64> {
        self.vec
    }

    /// Norm under the Riemannian metric at the base point.
    pub fn norm(&self) -> f64 {
        match self.base.kind() {
            ManifoldKind::Sphere { .. } => self.vec.norm(),
            ManifoldKind::Spd { .. } => {
                let s = self.base.spd_inv_sqrt();
                (s * &self.vec * s).norm()
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::unchecked(&self.base, &self.vec * factor)
    }
}

fn ensure_based_at(p: &ManifoldPoint, v: &TangentVector) -> Result<()> {
    if v.base.same_as(p) {
        Ok(())
    } else {
        Err(invalid("tangent vector is not based at the given point"))
    }
}

pub fn exp_map(p: &ManifoldPoint, v: &TangentVector) -> Result<ManifoldPoint> {
    ensure_based_at(p, v)?;
    Ok(exp_unchecked(p, v.vec()))
}

pub(crate) fn exp_unchecked(p: &ManifoldPoint, v: &DMatrix<f64>) -> ManifoldPoint {
    match p.kind() {
        ManifoldKind::Sphere { .. } => {
            let t = v.norm();
            if t == 0.0 {
                return p.clone();
            }
            let out = p.coords() * t.cos() + v * (t.sin() / t);
            ManifoldPoint::sphere_normalized(out).expect("exp of a finite tangent vector")
        }
        ManifoldKind::Spd { .. } => {
            if v.iter().all(|&x| x == 0.0) {
                return p.clone();
            }
            let s = p.spd_sqrt();
            let r = p.spd_inv_sqrt();
            let inner = linalg::sym_exp(&symmetrize(&(r * v * r)));
            ManifoldPoint::spd_symmetrized(symmetrize(&(s * inner * s)))
                .expect("exponential of a symmetric matrix is SPD")
        }
    }
}

pub fn log_map(p: &ManifoldPoint, q: &ManifoldPoint) -> Result<TangentVector> {
    p.kind().ensure_same(q.kind())?;
    Ok(TangentVector::unchecked(p, log_unchecked(p, q)?))
}

pub(crate) fn log_unchecked(p: &ManifoldPoint, q: &ManifoldPoint) -> Result<DMatrix<f64>> {
    match p.kind() {
        ManifoldKind::Sphere { .. } => {
            let pc = p.coords();
            let qc = q.coords();
            let theta = sphere_angle(pc, qc);
            if theta > PI - ANTIPODAL_TOLERANCE {
                return Err(Error::CutLocus { distance: theta });
            }
            let w = qc - pc * pc.dot(qc);
            let wn = w.norm();
            if wn == 0.0 || theta == 0.0 {
                return Ok(DMatrix::zeros(pc.nrows(), 1));
            }
            Ok(w * (theta / wn))
        }
        ManifoldKind::Spd { .. } => {
            let s = p.spd_sqrt();
            let r = p.spd_inv_sqrt();
            let inner = linalg::sym_log(&symmetrize(&(r * q.coords() * r)));
            Ok(symmetrize(&(s * inner * s)))
        }
    }
}

fn sphere_angle(p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    // 2 atan2(|p - q|, |p + q|) is accurate near 0 and near pi.
    2.0 * (p - q).norm().atan2((p + q).norm())
}

pub fn distance(p: &ManifoldPoint, q: &ManifoldPoint) -> Result<f64> {
    p.kind().ensure_same(q.kind())?;
    Ok(distance_unchecked(p, q))
}

pub(crate) fn distance_unchecked(p: &ManifoldPoint, q: &ManifoldPoint) -> f64 {
    match p.kind() {
        ManifoldKind::Sphere { .. } => sphere_angle(p.coords(), q.coords()),
        ManifoldKind::Spd { .. } => {
            let r = p.spd_inv_sqrt();
            let eig = linalg::eigh(&(r * q.coords() * r));
            eig.eigenvalues.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt()
        }
    }
}

/// Orthonormal basis of the tangent space at `base`, together with the
/// metric-lowered copies used to read off coordinates.
#[derive(Clone, Debug)]
pub struct TangentFrame {
    base: ManifoldPoint,
    basis: Vec<DMatrix<f64>>,
    dual: Vec<DMatrix<f64>>,
}

impl TangentFrame {
    pub fn base(&self) -> &ManifoldPoint {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[DMatrix<f64>] {
        &self.basis
    }

    pub fn basis_vector(&self, j: usize) -> TangentVector {
        TangentVector::unchecked(&self.base, self.basis[j].clone())
    }

    /// Coordinates of a tangent vector at the frame's base.
    pub fn coords(&self, v: &TangentVector) -> Result<DVector<f64>> {
        ensure_based_at(&self.base, v)?;
        Ok(self.coords_of(v.vec()))
    }

    pub(crate) fn coords_of(&self, v: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dual.len(), self.dual.iter().map(|d| d.dot(v)))
    }

    /// Tangent vector with the given frame coordinates.
    pub fn vector(&self, coords: &DVector<f64>) -> Result<TangentVector> {
        if coords.len() != self.dim() {
            return Err(invalid(format!("expected {} coordinates, got {}", self.dim(), coords.len())));
        }
        Ok(TangentVector::unchecked(&self.base, self.combine(coords)))
    }

    pub(crate) fn combine(&self, coords: &DVector<f64>) -> DMatrix<f64> {
        let (r, c) = self.base.kind().ambient_shape();
        let mut out = DMatrix::zeros(r, c);
        for (b, &x) in self.basis.iter().zip(coords.iter()) {
            out += b * x;
        }
        out
    }

    /// Gram matrix of the basis under the metric at the base.
    pub fn gram(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.dual[i].dot(&self.basis[j]))
    }

    /// Same frame pushed through an isometry (used to check equivariance).
    pub fn transformed(&self, a: &DMatrix<f64>) -> Result<TangentFrame> {
        let base = self.base.transform(a)?;
        let basis: Vec<DMatrix<f64>> = self
            .basis
            .iter()
            .map(|b| match base.kind() {
                ManifoldKind::Sphere { .. } => a * b,
                ManifoldKind::Spd { .. } => symmetrize(&(a * b * a.transpose())),
            })
            .collect();
        let dual = basis.iter().map(|b| base.lower(b)).collect();
        Ok(TangentFrame { base, basis, dual })
    }
}

/// Deterministic orthonormal frame at `p`.
///
/// Sphere: Gram-Schmidt on the canonical axes projected to `T_p`, skipping the
/// axis most aligned with `p`. SPD: the vecd basis `{E_ii, (E_ij + E_ji)/sqrt2}`
/// transported as `B -> P^{1/2} B P^{1/2}`, then orthonormalized in the metric.
pub fn tangent_frame(p: &ManifoldPoint) -> TangentFrame {
    let candidates: Vec<DMatrix<f64>> = match p.kind() {
        ManifoldKind::Sphere { ambient_dim } => {
            let pc = p.coords();
            let skip = (0..ambient_dim)
                .fold(0, |best, k| if pc[k].abs() > pc[best].abs() { k } else { best });
            (0..ambient_dim)
                .filter(|&k| k != skip)
                .map(|k| {
                    let mut e = DMatrix::zeros(ambient_dim, 1);
                    e[k] = 1.0;
                    let along = pc[k];
                    e - pc * along
                })
                .collect()
        }
        ManifoldKind::Spd { matrix_size } => {
            let s = p.spd_sqrt();
            vecd_pairs(matrix_size)
                .into_iter()
                .map(|(i, j)| {
                    let mut b = DMatrix::zeros(matrix_size, matrix_size);
                    if i == j {
                        b[(i, i)] = 1.0;
                    } else {
                        b[(i, j)] = FRAC_1_SQRT_2;
                        b[(j, i)] = FRAC_1_SQRT_2;
                    }
                    symmetrize(&(s * b * s))
                })
                .collect()
        }
    };

    let mut basis: Vec<DMatrix<f64>> = Vec::with_capacity(candidates.len());
    let mut dual: Vec<DMatrix<f64>> = Vec::with_capacity(candidates.len());
    for mut v in candidates {
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for (b, db) in basis.iter().zip(dual.iter()) {
                let c = db.dot(&v);
                v -= b * c;
            }
        }
        if p.kind().is_sphere() {
            // keep exactly in the tangent space
            let along = v.dot(p.coords());
            v -= p.coords() * along;
        }
        let n = p.inner(&v, &v).sqrt();
        let v = v / n;
        dual.push(p.lower(&v));
        basis.push(v);
    }
    TangentFrame {
        base: p.clone(),
        basis,
        dual,
    }
}

/// Directional derivative of `exp_{p0}` at `v` in direction `w`; the result is
/// tangent at `exp_{p0}(v)`.
///
/// SPD uses the Daleckii-Krein formula on the congruence-normalized tangent
/// vectors; the sphere has a closed form splitting `w` along and across `v`.
pub fn differential_of_exp(p0: &ManifoldPoint, v: &TangentVector, w: &TangentVector) -> Result<TangentVector> {
    ensure_based_at(p0, v)?;
    ensure_based_at(p0, w)?;
    let target = exp_unchecked(p0, v.vec());
    Ok(TangentVector::unchecked(&target, exp_differential_unchecked(p0, v.vec(), w.vec())))
}

pub(crate) fn exp_differential_unchecked(p0: &ManifoldPoint, v: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    match p0.kind() {
        ManifoldKind::Sphere { .. } => {
            let t = v.norm();
            if t == 0.0 {
                return w.clone();
            }
            let u = v / t;
            let along = w.dot(&u);
            let across = w - &u * along;
            let p = p0.coords();
            (&u * t.cos() - p * t.sin()) * along + across * (t.sin() / t)
        }
        ManifoldKind::Spd { .. } => {
            let s = p0.spd_sqrt();
            let r = p0.spd_inv_sqrt();
            let vt = symmetrize(&(r * v * r));
            let wt = symmetrize(&(r * w * r));
            symmetrize(&(s * linalg::exp_frechet_derivative(&vt, &wt) * s))
        }
    }
}

/// Normal-coordinate chart `phi = log_base` expressed in a fixed orthonormal
/// frame at `base`.
#[derive(Clone, Debug)]
pub struct Chart {
    frame: TangentFrame,
}

/// A chart point `theta` together with `phi^{-1}(theta)` and the images of the
/// chart's coordinate directions under `D_theta phi^{-1}`.
#[derive(Clone, Debug)]
pub struct ChartLinearization {
    pub point: ManifoldPoint,
    /// `D exp_base(theta)[E_j]`, tangent at `point`, lowered by the metric at
    /// `point` so that pairing with an ambient tangent vector is a dot product.
    pushed_dual: Vec<DMatrix<f64>>,
}

impl ChartLinearization {
    /// `[<D phi^{-1} E_j, w>_point]_j`: the adjoint of the chart differential
    /// applied to `w`, in chart coordinates.
    pub fn pull_back(&self, w: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.pushed_dual.len(), self.pushed_dual.iter().map(|d| d.dot(w)))
    }
}

impl Chart {
    pub fn at(base: &ManifoldPoint) -> Self {
        Chart {
            frame: tangent_frame(base),
        }
    }

    pub fn from_frame(frame: TangentFrame) -> Self {
        Chart { frame }
    }

    pub fn base(&self) -> &ManifoldPoint {
        self.frame.base()
    }

    pub fn frame(&self) -> &TangentFrame {
        &self.frame
    }

    pub fn dim(&self) -> usize {
        self.frame.dim()
    }

    /// `phi(q)`.
    pub fn coords(&self, q: &ManifoldPoint) -> Result<DVector<f64>> {
        self.base().kind().ensure_same(q.kind())?;
        Ok(self.frame.coords_of(&log_unchecked(self.base(), q)?))
    }

    /// `phi^{-1}(theta)`.
    pub fn point(&self, theta: &DVector<f64>) -> Result<ManifoldPoint> {
        let v = self.frame.vector(theta)?;
        Ok(exp_unchecked(self.base(), v.vec()))
    }

    pub fn linearize(&self, theta: &DVector<f64>) -> Result<ChartLinearization> {
        let v = self.frame.vector(theta)?;
        let point = exp_unchecked(self.base(), v.vec());
        let pushed_dual = self
            .frame
            .basis()
            .iter()
            .map(|e| point.lower(&exp_differential_unchecked(self.base(), v.vec(), e)))
            .collect();
        Ok(ChartLinearization { point, pushed_dual })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, FRAC_PI_2};

    fn sphere3(x: f64, y: f64, z: f64) -> ManifoldPoint {
        ManifoldPoint::sphere_from_slice(&[x, y, z]).unwrap()
    }

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn kind_dimensions_and_curvature() {
        assert_eq!(ManifoldKind::sphere(3).unwrap().intrinsic_dim(), 2);
        assert_eq!(ManifoldKind::spd(2).unwrap().intrinsic_dim(), 3);
        assert_eq!(ManifoldKind::spd(5).unwrap().intrinsic_dim(), 15);
        assert!(ManifoldKind::sphere(1).is_err());
        assert!(ManifoldKind::spd(0).is_err());
        let s = ManifoldKind::sphere(3).unwrap();
        assert_eq!((s.curvature_upper(), s.curvature_lower()), (1.0, 1.0));
        let p = ManifoldKind::spd(2).unwrap();
        assert_eq!((p.curvature_upper(), p.curvature_lower()), (0.0, -0.5));
    }

    #[test]
    fn point_validation() {
        assert!(ManifoldPoint::sphere_from_slice(&[1.0, 1.0, 0.0]).is_err());
        assert!(ManifoldPoint::spd_from_row_slice(2, &[1.0, 2.0, 0.0, 1.0]).is_err());
        assert!(ManifoldPoint::spd_from_row_slice(2, &[1.0, 2.0, 2.0, 1.0]).is_err());
        assert!(ManifoldPoint::spd_from_row_slice(2, &[2.0, 1.0, 1.0, 2.0]).is_ok());
    }

    #[test]
    fn sphere_exp_quarter_circle() {
        let p = sphere3(1.0, 0.0, 0.0);
        let v = TangentVector::new(&p, col(&[0.0, FRAC_PI_2, 0.0])).unwrap();
        let q = exp_map(&p, &v).unwrap();
        assert!((q.coords() - col(&[0.0, 1.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn spd_exp_at_identity_is_matrix_exp() {
        let p = ManifoldPoint::identity(2);
        let v = TangentVector::new(&p, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        let q = exp_map(&p, &v).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[E, 0.0, 0.0, 1.0]);
        assert!((q.coords() - expected).norm() < 1e-14);
    }

    #[test]
    fn exp_of_zero_is_identity_map() {
        for p in [sphere3(0.0, 0.6, 0.8), ManifoldPoint::spd_from_row_slice(2, &[2.0, 0.5, 0.5, 1.0]).unwrap()] {
            let q = exp_map(&p, &TangentVector::zero(&p)).unwrap();
            assert!(q.same_as(&p));
        }
    }

    #[test]
    fn tangent_vector_must_match_base() {
        let p = sphere3(1.0, 0.0, 0.0);
        let q = sphere3(0.0, 1.0, 0.0);
        let v = TangentVector::zero(&q);
        assert!(exp_map(&p, &v).is_err());
        assert!(TangentVector::new(&p, col(&[1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn sphere_log_examples() {
        let p = sphere3(1.0, 0.0, 0.0);
        let q = sphere3(0.0, 1.0, 0.0);
        let v = log_map(&p, &q).unwrap();
        assert!((v.vec() - col(&[0.0, FRAC_PI_2, 0.0])).norm() < 1e-15);
        assert_eq!(log_map(&p, &p).unwrap().norm(), 0.0);
        let antipode = sphere3(-1.0, 0.0, 0.0);
        assert!(matches!(log_map(&p, &antipode), Err(Error::CutLocus { .. })));
    }

    #[test]
    fn spd_log_and_distance_match_eigen_oracle() {
        // oracle: Log(diag(e^2, 1)) = diag(2, 0), distance = |(2, 0)| = 2
        let p = ManifoldPoint::identity(2);
        let q = ManifoldPoint::spd_from_row_slice(2, &[E * E, 0.0, 0.0, 1.0]).unwrap();
        let v = log_map(&p, &q).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        assert!((v.vec() - expected).norm() < 1e-14);
        assert!((distance(&p, &q).unwrap() - 2.0).abs() < 1e-14);
        assert!(distance(&q, &q).unwrap() < 1e-15);
    }

    #[test]
    fn sphere_distance_examples() {
        let e1 = sphere3(1.0, 0.0, 0.0);
        let e2 = sphere3(0.0, 1.0, 0.0);
        assert!((distance(&e1, &e2).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(distance(&e1, &e1).unwrap(), 0.0);
        let spd = ManifoldPoint::identity(2);
        assert!(matches!(distance(&e1, &spd), Err(Error::KindMismatch { .. })));
    }

    #[test]
    fn frames_at_reference_points() {
        let pole = sphere3(0.0, 0.0, 1.0);
        let f = tangent_frame(&pole);
        assert_eq!(f.basis()[0], col(&[1.0, 0.0, 0.0]));
        assert_eq!(f.basis()[1], col(&[0.0, 1.0, 0.0]));

        let f = tangent_frame(&ManifoldPoint::identity(2));
        let h = FRAC_1_SQRT_2;
        assert!((&f.basis()[0] - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).norm() < 1e-15);
        assert!((&f.basis()[1] - DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0])).norm() < 1e-15);
        assert!((&f.basis()[2] - DMatrix::from_row_slice(2, 2, &[0.0, h, h, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn frames_are_orthonormal_and_deterministic() {
        let pts = [
            sphere3(0.6, 0.0, 0.8),
            sphere3(1.0 / 3f64.sqrt(), 1.0 / 3f64.sqrt(), 1.0 / 3f64.sqrt()),
            ManifoldPoint::spd_from_row_slice(2, &[3.0, 1.0, 1.0, 0.5]).unwrap(),
            ManifoldPoint::spd_from_row_slice(3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.7]).unwrap(),
        ];
        for p in pts {
            let f = tangent_frame(&p);
            assert_eq!(f.dim(), p.kind().intrinsic_dim());
            let g = f.gram();
            assert!((g - DMatrix::identity(f.dim(), f.dim())).norm() < 1e-10);
            let again = tangent_frame(&p);
            assert_eq!(f.basis(), again.basis());
        }
    }

    #[test]
    fn frame_coordinates_round_trip() {
        let p = ManifoldPoint::spd_from_row_slice(2, &[3.0, 1.0, 1.0, 0.5]).unwrap();
        let f = tangent_frame(&p);
        let c = DVector::from_vec(vec![0.3, -1.2, 0.7]);
        let v = f.vector(&c).unwrap();
        assert!((f.coords(&v).unwrap() - &c).norm() < 1e-13);
        assert!((v.norm() - c.norm()).abs() < 1e-13);
    }

    #[test]
    fn differential_of_exp_at_origin_is_identity() {
        let p = ManifoldPoint::spd_from_row_slice(2, &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let w = TangentVector::new(&p, DMatrix::from_row_slice(2, 2, &[0.1, 0.4, 0.4, -0.3])).unwrap();
        let d = differential_of_exp(&p, &TangentVector::zero(&p), &w).unwrap();
        assert!((d.vec() - w.vec()).norm() < 1e-14);
    }

    #[test]
    fn differential_of_exp_commuting_diagonal_case() {
        // d/dt Exp(diag(1,0) + t diag(1,0)) at 0 = diag(e, 0)
        let p = ManifoldPoint::identity(2);
        let v = TangentVector::new(&p, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        let d = differential_of_exp(&p, &v, &v).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[E, 0.0, 0.0, 0.0]);
        assert!((d.vec() - expected).norm() < 1e-14);
        // finite-difference oracle on the matrix exponential
        let h = 1e-6;
        let plus = linalg::sym_exp(&(v.vec() * (1.0 + h)));
        let minus = linalg::sym_exp(&(v.vec() * (1.0 - h)));
        let fd = (plus - minus) / (2.0 * h);
        assert!((d.vec() - fd).norm() < 1e-8);
    }

    #[test]
    fn isometry_moves_points() {
        let p = ManifoldPoint::spd_from_row_slice(2, &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let q = p.transform(&a).unwrap();
        let expected = &a * p.coords() * a.transpose();
        assert!((q.coords() - expected).norm() < 1e-14);
    }
}
