//! Non-private Frechet estimation: the sample Frechet function, the Karcher
//! mean iteration and the sample Frechet variance.

use crate::error::{invalid, Error, Result};
use crate::manifold::{distance_unchecked, exp_unchecked, log_unchecked, ManifoldKind, ManifoldPoint};
use nalgebra::DMatrix;
use std::f64::consts::FRAC_PI_4;

/// Slack allowed when checking that data lie in the declared ball.
pub const BALL_SLACK: f64 = 1e-9;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 1000;

/// Points contained in a declared geodesic ball `B(center, radius)`.
#[derive(Clone, Debug)]
pub struct Dataset {
    kind: ManifoldKind,
    points: Vec<ManifoldPoint>,
    center: ManifoldPoint,
    radius: f64,
}

impl Dataset {
    /// Validates ball containment; points outside the ball are rejected, not
    /// truncated.
    pub fn new(points: Vec<ManifoldPoint>, center: ManifoldPoint, radius: f64) -> Result<Self> {
        let kind = center.kind();
        if points.is_empty() {
            return Err(invalid("dataset must contain at least one point"));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(invalid(format!("ball radius must be positive and finite, got {radius}")));
        }
        if kind.is_sphere() && radius >= FRAC_PI_4 {
            return Err(invalid(format!("sphere data radius must be below pi/4, got {radius}")));
        }
        for (i, p) in points.iter().enumerate() {
            kind.ensure_same(p.kind())?;
            let d = distance_unchecked(&center, p);
            if d > radius + BALL_SLACK {
                return Err(invalid(format!(
                    "point {} lies at distance {d} from the center, outside the radius {radius}",
                    i + 1
                )));
            }
        }
        Ok(Dataset { kind, points, center, radius })
    }

    pub fn kind(&self) -> ManifoldKind {
        self.kind
    }

    pub fn points(&self) -> &[ManifoldPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn center(&self) -> &ManifoldPoint {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

#[derive(Clone, Debug)]
pub struct FrechetSolution {
    pub mean: ManifoldPoint,
    pub variance: f64,
    pub iterations: usize,
    pub final_gradient_norm: f64,
}

/// `(1/n) sum rho^2(p, X_i)`.
pub fn frechet_function(data: &Dataset, p: &ManifoldPoint) -> Result<f64> {
    data.kind().ensure_same(p.kind())?;
    Ok(mean_power_distance(data.points(), p, 2))
}

pub(crate) fn mean_power_distance(points: &[ManifoldPoint], p: &ManifoldPoint, power: i32) -> f64 {
    let sum: f64 = points.iter().map(|x| distance_unchecked(p, x).powi(power)).sum();
    sum / points.len() as f64
}

pub fn frechet_variance(data: &Dataset, mean: &ManifoldPoint) -> Result<f64> {
    frechet_function(data, mean)
}

/// Sample Frechet mean by unit-step Riemannian gradient descent started at the
/// declared center.
pub fn frechet_mean(data: &Dataset, tol: f64, max_iter: usize) -> Result<FrechetSolution> {
    karcher_mean(data.points(), data.center(), tol, max_iter)
}

/// Karcher iteration `eta <- exp_eta((1/n) sum log_eta X_i)` from `start`,
/// stopping once the mean log vector has norm at most `tol`.
pub fn karcher_mean(points: &[ManifoldPoint], start: &ManifoldPoint, tol: f64, max_iter: usize) -> Result<FrechetSolution> {
    if points.is_empty() {
        return Err(invalid("cannot average an empty set of points"));
    }
    for p in points {
        start.kind().ensure_same(p.kind())?;
    }
    let n = points.len() as f64;
    let mut eta = start.clone();
    let mut iterations = 0;
    loop {
        let step = mean_log(points, &eta)? / n;
        let grad_norm = crate::manifold::TangentVector::unchecked(&eta, step.clone()).norm();
        if grad_norm <= tol {
            let variance = mean_power_distance(points, &eta, 2);
            return Ok(FrechetSolution {
                mean: eta,
                variance,
                iterations,
                final_gradient_norm: grad_norm,
            });
        }
        if iterations >= max_iter || !grad_norm.is_finite() {
            return Err(Error::NonConvergence {
                iterations,
                gradient_norm: grad_norm,
            });
        }
        eta = exp_unchecked(&eta, &step);
        iterations += 1;
    }
}

/// `sum_i log_eta X_i`, accumulated in input order.
fn mean_log(points: &[ManifoldPoint], eta: &ManifoldPoint) -> Result<DMatrix<f64>> {
    let mut acc: Option<DMatrix<f64>> = None;
    for x in points {
        let v = log_unchecked(eta, x)?;
        match acc.as_mut() {
            Some(a) => *a += v,
            None => acc = Some(v),
        }
    }
    Ok(acc.expect("non-empty"))
}
