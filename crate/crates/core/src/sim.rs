//! Monte Carlo harness: synthetic data generators, population truths,
//! replication campaigns over a grid of privacy budgets, and the budget
//! verification campaign.

use crate::error::{invalid, Error, Result};
use crate::frechet::{frechet_mean, Dataset, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::inference::{nonprivate_inference, run_pipeline_parts, ConfidenceRegion, CovarianceBounds};
use crate::linalg::{eigh, vecd_len, vecd_unchecked};
use crate::manifold::{distance_unchecked, exp_unchecked, tangent_frame, ManifoldKind, ManifoldPoint};
use crate::privacy::{mean_sensitivity, verify_privacy_profile, ProfileVerificationConfig};
use crate::rng::{stream, SimRng};
use crate::stats::simpson;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_8, PI};
use std::sync::{Arc, Mutex, OnceLock};

const DATA_STREAM: u64 = 0xda7a;
const BUDGET_STREAM: u64 = 0xb0d6;
const TRUTH_STREAM: u64 = 0x7e57;

/// Largest fraction of failed replications a campaign tolerates.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

pub const DEFAULT_MU_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.5, 0.7, 1.0, 1.5, 2.0, 2.5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterPolicy {
    /// Ambient coordinates (sphere) or row-major entries (SPD).
    Fixed(Vec<f64>),
    RandomPerReplication,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthModel {
    SphereUniformBall,
    SpdTangentUniformBall,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartialExperimentConfig")]
pub struct ExperimentConfig {
    pub manifold: ManifoldKind,
    pub n: usize,
    pub ball_radius: f64,
    pub mu_grid: Vec<f64>,
    pub n_replications: usize,
    pub alpha: f64,
    pub master_seed: u64,
    pub center_policy: CenterPolicy,
    pub truth: TruthModel,
}

/// Configuration document with every field optional; missing fields take
/// the defaults of the chosen manifold.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialExperimentConfig {
    pub manifold: Option<ManifoldKind>,
    pub n: Option<usize>,
    pub ball_radius: Option<f64>,
    pub mu_grid: Option<Vec<f64>>,
    pub n_replications: Option<usize>,
    pub alpha: Option<f64>,
    pub master_seed: Option<u64>,
    pub center_policy: Option<CenterPolicy>,
    pub truth: Option<TruthModel>,
}

impl TryFrom<PartialExperimentConfig> for ExperimentConfig {
    type Error = Error;

    fn try_from(p: PartialExperimentConfig) -> Result<Self> {
        let manifold = p.manifold.unwrap_or(ManifoldKind::Sphere { ambient_dim: 3 });
        manifold.validate()?;
        let base = ExperimentConfig::defaults_for(manifold);
        let config = ExperimentConfig {
            manifold,
            n: p.n.unwrap_or(base.n),
            ball_radius: p.ball_radius.unwrap_or(base.ball_radius),
            mu_grid: p.mu_grid.unwrap_or(base.mu_grid),
            n_replications: p.n_replications.unwrap_or(base.n_replications),
            alpha: p.alpha.unwrap_or(base.alpha),
            master_seed: p.master_seed.unwrap_or(base.master_seed),
            center_policy: p.center_policy.unwrap_or(base.center_policy),
            truth: p.truth.unwrap_or(base.truth),
        };
        config.validate()?;
        Ok(config)
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::sphere_default()
    }
}

impl ExperimentConfig {
    /// `S^2`, n = 600, radius pi/8, centers redrawn per replication.
    pub fn sphere_default() -> Self {
        ExperimentConfig {
            manifold: ManifoldKind::Sphere { ambient_dim: 3 },
            n: 600,
            ball_radius: FRAC_PI_8,
            mu_grid: DEFAULT_MU_GRID.to_vec(),
            n_replications: 1000,
            alpha: 0.05,
            master_seed: 20_240_601,
            center_policy: CenterPolicy::RandomPerReplication,
            truth: TruthModel::SphereUniformBall,
        }
    }

    /// 2x2 SPD matrices, n = 600, tangent ball of radius 1.5 at the identity.
    pub fn spd_default() -> Self {
        ExperimentConfig {
            manifold: ManifoldKind::Spd { matrix_size: 2 },
            ball_radius: 1.5,
            center_policy: CenterPolicy::Fixed(vec![1.0, 0.0, 0.0, 1.0]),
            truth: TruthModel::SpdTangentUniformBall,
            ..ExperimentConfig::sphere_default()
        }
    }

    pub fn defaults_for(kind: ManifoldKind) -> Self {
        match kind {
            ManifoldKind::Sphere { .. } => ExperimentConfig {
                manifold: kind,
                ..ExperimentConfig::sphere_default()
            },
            ManifoldKind::Spd { matrix_size } => {
                let identity = DMatrix::<f64>::identity(matrix_size, matrix_size);
                ExperimentConfig {
                    manifold: kind,
                    center_policy: CenterPolicy::Fixed(identity.transpose().as_slice().to_vec()),
                    ..ExperimentConfig::spd_default()
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.manifold.validate()?;
        if self.n == 0 {
            return Err(invalid("n must be at least 1"));
        }
        if self.n_replications == 0 {
            return Err(invalid("n_replications must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.mu_grid.is_empty() {
            return Err(invalid("mu_grid must not be empty"));
        }
        if self.mu_grid.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(invalid("mu_grid entries must be positive and finite"));
        }
        if self.mu_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("mu_grid must be strictly increasing"));
        }
        if !(self.ball_radius > 0.0 && self.ball_radius.is_finite()) {
            return Err(invalid("ball_radius must be positive"));
        }
        if self.manifold.is_sphere() && self.ball_radius >= PI / 4.0 {
            return Err(invalid("ball_radius must be below pi/4 on the unit sphere"));
        }
        match (self.manifold, self.truth) {
            (ManifoldKind::Sphere { .. }, TruthModel::SphereUniformBall)
            | (ManifoldKind::Spd { .. }, TruthModel::SpdTangentUniformBall) => {}
            _ => return Err(invalid(format!("truth model {:?} does not match manifold {}", self.truth, self.manifold))),
        }
        if let CenterPolicy::Fixed(coords) = &self.center_policy {
            point_from_coords(self.manifold, coords)?;
        } else if !self.manifold.is_sphere() {
            return Err(invalid("random_per_replication centers are only supported on the sphere"));
        }
        Ok(())
    }
}

/// Builds a point from ambient coordinates (sphere, renormalized) or
/// row-major entries (SPD).
pub fn point_from_coords(kind: ManifoldKind, coords: &[f64]) -> Result<ManifoldPoint> {
    match kind {
        ManifoldKind::Sphere { ambient_dim } => {
            if coords.len() != ambient_dim {
                return Err(invalid(format!("expected {ambient_dim} coordinates, got {}", coords.len())));
            }
            let v = DVector::from_column_slice(coords);
            let norm = v.norm();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(invalid("sphere center must be a non-zero finite vector"));
            }
            ManifoldPoint::sphere(v / norm)
        }
        ManifoldKind::Spd { matrix_size } => {
            if coords.len() != matrix_size * matrix_size {
                return Err(invalid(format!(
                    "expected {} matrix entries, got {}",
                    matrix_size * matrix_size,
                    coords.len()
                )));
            }
            ManifoldPoint::spd_from_row_slice(matrix_size, coords)
        }
    }
}

fn unit_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let z: DVector<f64> = DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)));
        let norm = z.norm();
        if norm > 0.0 {
            return z / norm;
        }
    }
}

/// Uniform point on the whole sphere `S^{k-1}`.
pub fn sample_sphere_uniform<R: Rng + ?Sized>(ambient_dim: usize, rng: &mut R) -> Result<ManifoldPoint> {
    ManifoldKind::sphere(ambient_dim)?;
    ManifoldPoint::sphere(unit_direction(ambient_dim, rng))
}

/// Geodesic radius of a uniform draw from `B(center, radius)` on `S^d`.
///
/// `d = 2` inverts `1 - cos t`; otherwise `t = radius U^{1/d}` is accepted
/// with probability `(sin t / t)^{d-1}`.
pub fn sample_sphere_ball_radius<R: Rng + ?Sized>(intrinsic_dim: usize, radius: f64, rng: &mut R) -> f64 {
    match intrinsic_dim {
        1 => radius * rng.random::<f64>(),
        2 => {
            let u: f64 = rng.random();
            let one_minus_cos = 2.0 * (0.5 * radius).sin().powi(2);
            (1.0 - u * one_minus_cos).acos()
        }
        d => loop {
            let t = radius * rng.random::<f64>().powf(1.0 / d as f64);
            let accept = if t > 0.0 { (t.sin() / t).powi(d as i32 - 1) } else { 1.0 };
            if rng.random::<f64>() < accept {
                return t;
            }
        },
    }
}

/// `n` points uniform (surface measure) on the geodesic ball `B(center, radius)`.
pub fn sample_sphere_uniform_ball<R: Rng + ?Sized>(
    center: &ManifoldPoint,
    radius: f64,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if !center.kind().is_sphere() {
        return Err(invalid("sphere ball sampler needs a sphere center"));
    }
    let frame = tangent_frame(center);
    let d = frame.dim();
    let points = (0..n)
        .map(|_| {
            let t = sample_sphere_ball_radius(d, radius, rng);
            let dir = unit_direction(d, rng);
            exp_unchecked(center, &frame.combine(&(dir * t)))
        })
        .collect();
    Dataset::new(points, center.clone(), radius)
}

/// `n` points `exp_center(v)` with frame coordinates of `v` uniform on the
/// Euclidean ball of radius `radius`.
pub fn sample_spd_tangent_uniform_ball<R: Rng + ?Sized>(
    center: &ManifoldPoint,
    radius: f64,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if center.kind().is_sphere() {
        return Err(invalid("tangent ball sampler needs an SPD center"));
    }
    if !(radius > 0.0) {
        return Err(invalid("radius must be positive"));
    }
    let frame = tangent_frame(center);
    let d = frame.dim();
    let points = (0..n)
        .map(|_| {
            let t = radius * rng.random::<f64>().powf(1.0 / d as f64);
            let dir = unit_direction(d, rng);
            exp_unchecked(center, &frame.combine(&(dir * t)))
        })
        .collect();
    Dataset::new(points, center.clone(), radius)
}

/// Population quantities of a truth model, expressed in an orthonormal frame
/// at the population mean (which is the ball center by symmetry).
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationTruth {
    pub variance: f64,
    pub sigma_f2: f64,
    pub lambda: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Monte Carlo standard error of the entries of `lambda`; zero when the
    /// value comes from quadrature.
    pub lambda_standard_error: f64,
}

const QUADRATURE_INTERVALS: usize = 20_000;
/// Draws used for Monte Carlo parts of population truths.
pub const TRUTH_MC_DRAWS: usize = 1_000_000;

fn sphere_ball_truth(intrinsic_dim: usize, radius: f64) -> PopulationTruth {
    let d = intrinsic_dim;
    let w = |t: f64| t.sin().powi(d as i32 - 1);
    let mass = simpson(w, 0.0, radius, QUADRATURE_INTERVALS);
    let moment = |f: &dyn Fn(f64) -> f64| simpson(|t| f(t) * w(t), 0.0, radius, QUADRATURE_INTERVALS) / mass;
    let m2 = moment(&|t| t * t);
    let m4 = moment(&|t| t.powi(4));
    let tangential = moment(&|t| if t > 0.0 { 2.0 * t / t.tan() } else { 2.0 });
    let df = d as f64;
    let eye = DMatrix::identity(d, d);
    PopulationTruth {
        variance: m2,
        sigma_f2: m4 - m2 * m2,
        lambda: &eye * ((2.0 + (df - 1.0) * tangential) / df),
        c: &eye * (4.0 * m2 / df),
        lambda_standard_error: 0.0,
    }
}

/// `g coth(g / 2)`, continuous at 0.
fn gap_curvature(g: f64) -> f64 {
    if g.abs() < 1e-8 {
        2.0
    } else {
        g / (0.5 * g).tanh()
    }
}

/// Hessian at the identity, in vecd coordinates, of `rho^2(exp_I(V), exp_I(.))`.
///
/// In the eigenbasis of `V` the Hessian is diagonal: 2 on the diagonal
/// directions and `g coth(g/2)` on the off-diagonal pair with eigenvalue gap `g`.
pub fn spd_identity_hessian(v: &DMatrix<f64>) -> DMatrix<f64> {
    let m = v.nrows();
    let eig = eigh(v);
    let u = &eig.eigenvectors;
    let dim = vecd_len(m);
    let mut h = DMatrix::zeros(dim, dim);
    for i in 0..m {
        for j in i..m {
            let mut b = DMatrix::zeros(m, m);
            let g = if i == j {
                b[(i, i)] = 1.0;
                2.0
            } else {
                b[(i, j)] = std::f64::consts::FRAC_1_SQRT_2;
                b[(j, i)] = std::f64::consts::FRAC_1_SQRT_2;
                gap_curvature(eig.eigenvalues[i] - eig.eigenvalues[j])
            };
            let w = vecd_unchecked(&(u * b * u.transpose()));
            h += &w * w.transpose() * g;
        }
    }
    h
}

fn spd_ball_truth(matrix_size: usize, radius: f64) -> PopulationTruth {
    let d = vecd_len(matrix_size);
    let df = d as f64;
    let r2 = radius * radius;
    let variance = df * r2 / (df + 2.0);
    let m4 = df * r2 * r2 / (df + 4.0);
    let eye = DMatrix::identity(d, d);
    let (lambda, se) = if matrix_size == 2 {
        (spd2_lambda_quadrature(radius), 0.0)
    } else {
        spd_lambda_monte_carlo(matrix_size, radius, TRUTH_MC_DRAWS, &mut stream(0, &[TRUTH_STREAM]))
    };
    PopulationTruth {
        variance,
        sigma_f2: m4 - variance * variance,
        lambda,
        c: &eye * (4.0 * r2 / (df + 2.0)),
        lambda_standard_error: se,
    }
}

/// For 2x2 matrices the expected Hessian is `2` on the trace direction and
/// `E[(2 + g coth(g/2)) / 2]` on the traceless plane, with `g = sqrt(2) rho`
/// and `rho` the distance from the trace axis of a uniform ball point.
fn spd2_lambda_quadrature(radius: f64) -> DMatrix<f64> {
    let dens = |rho: f64| rho * (radius * radius - rho * rho).max(0.0).sqrt();
    let mass = simpson(dens, 0.0, radius, QUADRATURE_INTERVALS);
    let kappa = simpson(
        |rho| dens(rho) * 0.5 * (2.0 + gap_curvature(std::f64::consts::SQRT_2 * rho)),
        0.0,
        radius,
        QUADRATURE_INTERVALS,
    ) / mass;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let trace = DVector::from_vec(vec![s, s, 0.0]);
    let eye = DMatrix::<f64>::identity(3, 3);
    let proj = &trace * trace.transpose();
    &proj * 2.0 + (eye - &proj) * kappa
}

/// Monte Carlo average of [`spd_identity_hessian`] over the tangent-uniform
/// ball; returns the estimate and the largest entrywise standard error.
pub fn spd_lambda_monte_carlo<R: Rng + ?Sized>(
    matrix_size: usize,
    radius: f64,
    draws: usize,
    rng: &mut R,
) -> (DMatrix<f64>, f64) {
    let d = vecd_len(matrix_size);
    let frame = tangent_frame(&ManifoldPoint::identity(matrix_size));
    let mut sum = DMatrix::zeros(d, d);
    let mut sum_sq = DMatrix::zeros(d, d);
    for _ in 0..draws {
        let t = radius * rng.random::<f64>().powf(1.0 / d as f64);
        let v = frame.combine(&(unit_direction(d, rng) * t));
        let h = spd_identity_hessian(&v);
        sum_sq += h.component_mul(&h);
        sum += h;
    }
    let nf = draws as f64;
    let mean = sum / nf;
    let var = sum_sq / nf - mean.component_mul(&mean);
    let se = var.iter().fold(0.0f64, |a, &v| a.max(v.max(0.0))).sqrt() / nf.sqrt();
    (mean, se)
}

fn truth_cache() -> &'static Mutex<HashMap<String, Arc<PopulationTruth>>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<PopulationTruth>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Population variance, `sigma_F^2`, `Lambda` and `C` of the configured truth
/// model, cached per (manifold, radius, model).
pub fn population_truth(config: &ExperimentConfig) -> Result<Arc<PopulationTruth>> {
    config.validate()?;
    let key = format!("{}|{:016x}|{:?}", config.manifold, config.ball_radius.to_bits(), config.truth);
    if let Some(t) = truth_cache().lock().expect("truth cache poisoned").get(&key) {
        return Ok(t.clone());
    }
    let truth = Arc::new(match config.manifold {
        ManifoldKind::Sphere { .. } => sphere_ball_truth(config.manifold.intrinsic_dim(), config.ball_radius),
        ManifoldKind::Spd { matrix_size } => spd_ball_truth(matrix_size, config.ball_radius),
    });
    truth_cache()
        .lock()
        .expect("truth cache poisoned")
        .insert(key, truth.clone());
    Ok(truth)
}

/// Data for one replication together with the population mean it targets.
pub fn generate_replication(config: &ExperimentConfig, replication: u64) -> Result<(ManifoldPoint, Dataset)> {
    let mut rng = stream(config.master_seed, &[replication, DATA_STREAM]);
    let center = match &config.center_policy {
        CenterPolicy::Fixed(coords) => point_from_coords(config.manifold, coords)?,
        CenterPolicy::RandomPerReplication => match config.manifold {
            ManifoldKind::Sphere { ambient_dim } => sample_sphere_uniform(ambient_dim, &mut rng)?,
            ManifoldKind::Spd { .. } => return Err(invalid("random centers are only supported on the sphere")),
        },
    };
    let data = match config.truth {
        TruthModel::SphereUniformBall => sample_sphere_uniform_ball(&center, config.ball_radius, config.n, &mut rng)?,
        TruthModel::SpdTangentUniformBall => {
            sample_spd_tangent_uniform_ball(&center, config.ball_radius, config.n, &mut rng)?
        }
    };
    Ok((center, data))
}

/// Generator stream of the private releases for one replication and budget.
pub fn mechanism_stream(master_seed: u64, replication: u64, mu: f64) -> SimRng {
    stream(master_seed, &[replication, mu.to_bits()])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication_id: u64,
    pub mu: f64,
    pub rho_mean_nondp: f64,
    pub rho_mean_dp: f64,
    pub abs_var_err_nondp: f64,
    pub abs_var_err_dp: f64,
    pub mean_covered: Option<bool>,
    pub var_covered: Option<bool>,
    pub mean_covered_nondp: Option<bool>,
    pub var_covered_nondp: Option<bool>,
    /// `sqrt(det Gamma_dp)`.
    pub region_volume: Option<f64>,
    /// Quadratic form of the population mean in the private region.
    pub mean_quadratic_form: Option<f64>,
    pub sigma_f2_dp: f64,
    pub failure: Option<String>,
}

impl ReplicationRecord {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

struct NonPrivate {
    solution: crate::frechet::FrechetSolution,
    region: Option<ConfidenceRegion>,
    interval: Option<(f64, f64)>,
}

fn covers(interval: (f64, f64), v: f64) -> bool {
    interval.0 <= v && v <= interval.1
}

fn run_replication(config: &ExperimentConfig, truth: &PopulationTruth, replication: u64) -> Vec<ReplicationRecord> {
    let failed_all = |msg: String| {
        config
            .mu_grid
            .iter()
            .map(|&mu| ReplicationRecord {
                replication_id: replication,
                mu,
                rho_mean_nondp: f64::NAN,
                rho_mean_dp: f64::NAN,
                abs_var_err_nondp: f64::NAN,
                abs_var_err_dp: f64::NAN,
                mean_covered: None,
                var_covered: None,
                mean_covered_nondp: None,
                var_covered_nondp: None,
                region_volume: None,
                mean_quadratic_form: None,
                sigma_f2_dp: f64::NAN,
                failure: Some(msg.clone()),
            })
            .collect()
    };
    let (eta, data) = match generate_replication(config, replication) {
        Ok(x) => x,
        Err(e) => return failed_all(e.to_string()),
    };
    let solution = match frechet_mean(&data, DEFAULT_TOL, DEFAULT_MAX_ITER) {
        Ok(s) => s,
        Err(e) => return failed_all(e.to_string()),
    };
    let nonprivate = match nonprivate_inference(&data, &solution, config.alpha) {
        Ok((region, interval)) => NonPrivate {
            solution,
            region: Some(region),
            interval: Some(interval),
        },
        Err(_) => NonPrivate {
            solution,
            region: None,
            interval: None,
        },
    };
    let rho_nondp = distance_unchecked(&nonprivate.solution.mean, &eta);
    let var_err_nondp = (nonprivate.solution.variance - truth.variance).abs();
    let mean_covered_nondp = nonprivate.region.as_ref().and_then(|r| r.contains(&eta).ok());
    let var_covered_nondp = nonprivate.interval.map(|i| covers(i, truth.variance));

    config
        .mu_grid
        .iter()
        .map(|&mu| {
            let mut rng = mechanism_stream(config.master_seed, replication, mu);
            let mut record = ReplicationRecord {
                replication_id: replication,
                mu,
                rho_mean_nondp: rho_nondp,
                rho_mean_dp: f64::NAN,
                abs_var_err_nondp: var_err_nondp,
                abs_var_err_dp: f64::NAN,
                mean_covered: None,
                var_covered: None,
                mean_covered_nondp,
                var_covered_nondp,
                region_volume: None,
                mean_quadratic_form: None,
                sigma_f2_dp: f64::NAN,
                failure: None,
            };
            let parts = match run_pipeline_parts(
                &data,
                &nonprivate.solution,
                mu,
                config.alpha,
                CovarianceBounds::default(),
                &mut rng,
            ) {
                Ok(p) => p,
                Err(e) => {
                    record.failure = Some(e.to_string());
                    return record;
                }
            };
            record.rho_mean_dp = distance_unchecked(&parts.release.mean_dp, &eta);
            record.abs_var_err_dp = (parts.variance.variance_dp - truth.variance).abs();
            record.var_covered = Some(covers(parts.variance.interval, truth.variance));
            record.sigma_f2_dp = parts.variance.sigma_f2_dp;
            match parts.covariance {
                Ok(cov) => {
                    let gamma = cov.estimate.gamma;
                    record.region_volume = Some(gamma.determinant().max(0.0).sqrt());
                    match ConfidenceRegion::new(parts.chart, &parts.release.mean_dp, gamma, config.alpha)
                        .and_then(|r| Ok((r.quadratic_form(&eta)?, r.threshold())))
                    {
                        Ok((q, threshold)) => {
                            record.mean_quadratic_form = Some(q);
                            record.mean_covered = Some(q <= threshold);
                        }
                        Err(e) => record.failure = Some(e.to_string()),
                    }
                }
                Err(e) => record.failure = Some(e.to_string()),
            }
            record
        })
        .collect()
}

/// Per-budget summary of a campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub mu: f64,
    pub md_mean_dp: f64,
    pub md_mean_nondp: f64,
    pub md_var_dp: f64,
    pub md_var_nondp: f64,
    pub coverage_mean_dp: f64,
    pub coverage_mean_nondp: f64,
    pub coverage_var_dp: f64,
    pub coverage_var_nondp: f64,
    /// Binomial standard error of `coverage_mean_dp`.
    pub se_mean_coverage: f64,
    /// Binomial standard error of `coverage_var_dp`.
    pub se_var_coverage: f64,
    pub replications: usize,
    pub failures: usize,
}

#[derive(Clone, Debug)]
pub struct CampaignResult {
    pub config: ExperimentConfig,
    pub truth: Arc<PopulationTruth>,
    /// Ordered by budget, then replication.
    pub records: Vec<ReplicationRecord>,
    pub table: Vec<AggregateRow>,
}

impl CampaignResult {
    pub fn row(&self, mu: f64) -> Option<&AggregateRow> {
        self.table.iter().find(|r| r.mu == mu)
    }

    pub fn records_for(&self, mu: f64) -> impl Iterator<Item = &ReplicationRecord> {
        self.records.iter().filter(move |r| r.mu == mu)
    }

    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.failed()).count()
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.filter(|v| v.is_finite()).fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

fn proportion(flags: impl Iterator<Item = Option<bool>>) -> (f64, f64) {
    let (hits, count) = flags
        .flatten()
        .fold((0usize, 0usize), |(h, c), f| (h + f as usize, c + 1));
    if count == 0 {
        return (f64::NAN, f64::NAN);
    }
    let p = hits as f64 / count as f64;
    (p, (p * (1.0 - p) / count as f64).sqrt())
}

/// Per-budget MDs and coverage fractions; failed replications are left out
/// of coverage denominators.
pub fn aggregate(mu_grid: &[f64], records: &[ReplicationRecord]) -> Vec<AggregateRow> {
    mu_grid
        .iter()
        .map(|&mu| {
            let rs: Vec<&ReplicationRecord> = records.iter().filter(|r| r.mu == mu).collect();
            let ok = || rs.iter().filter(|r| !r.failed());
            let (cov_mean, se_mean) = proportion(ok().map(|r| r.mean_covered));
            let (cov_var, se_var) = proportion(ok().map(|r| r.var_covered));
            AggregateRow {
                mu,
                md_mean_dp: mean_of(rs.iter().map(|r| r.rho_mean_dp)),
                md_mean_nondp: mean_of(rs.iter().map(|r| r.rho_mean_nondp)),
                md_var_dp: mean_of(rs.iter().map(|r| r.abs_var_err_dp)),
                md_var_nondp: mean_of(rs.iter().map(|r| r.abs_var_err_nondp)),
                coverage_mean_dp: cov_mean,
                coverage_mean_nondp: proportion(rs.iter().map(|r| r.mean_covered_nondp)).0,
                coverage_var_dp: cov_var,
                coverage_var_nondp: proportion(rs.iter().map(|r| r.var_covered_nondp)).0,
                se_mean_coverage: se_mean,
                se_var_coverage: se_var,
                replications: rs.len(),
                failures: rs.iter().filter(|r| r.failed()).count(),
            }
        })
        .collect()
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(invalid("thread count must be at least 1"));
        }
        builder = builder.num_threads(t);
    }
    builder
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))
}

/// Runs every replication at every budget. Results do not depend on the
/// number of worker threads.
pub fn run_campaign(config: &ExperimentConfig, threads: Option<usize>) -> Result<CampaignResult> {
    config.validate()?;
    let truth = population_truth(config)?;
    let pool = thread_pool(threads)?;
    let per_replication: Vec<Vec<ReplicationRecord>> = pool.install(|| {
        (0..config.n_replications as u64)
            .into_par_iter()
            .map(|rep| run_replication(config, &truth, rep))
            .collect()
    });
    let mut records = Vec::with_capacity(config.n_replications * config.mu_grid.len());
    for k in 0..config.mu_grid.len() {
        records.extend(per_replication.iter().map(|rs| rs[k].clone()));
    }
    let failed = records.iter().filter(|r| r.failed()).count();
    if failed as f64 > MAX_FAILURE_FRACTION * records.len() as f64 {
        return Err(Error::CampaignFailed {
            failed,
            total: records.len(),
        });
    }
    let table = aggregate(&config.mu_grid, &records);
    Ok(CampaignResult {
        config: config.clone(),
        truth,
        records,
        table,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub mu: f64,
    pub sigma: f64,
    pub mu_star: f64,
    pub max_standard_error: f64,
}

/// Checks the privacy profile of the calibrated mean mechanism at each budget.
pub fn run_budget_verification(
    config: &ExperimentConfig,
    mu_grid: &[f64],
    verification: &ProfileVerificationConfig,
    threads: Option<usize>,
) -> Result<Vec<BudgetRow>> {
    config.validate()?;
    if !config.manifold.is_sphere() {
        return Err(invalid("budget verification is only available on the sphere"));
    }
    let delta = mean_sensitivity(config.ball_radius, config.manifold.curvature_upper(), config.n)?.delta;
    let pool = thread_pool(threads)?;
    pool.install(|| {
        mu_grid
            .par_iter()
            .map(|&mu| {
                if !(mu > 0.0 && mu.is_finite()) {
                    return Err(invalid(format!("budget must be positive, got {mu}")));
                }
                let sigma = delta / mu;
                let mut rng = stream(config.master_seed, &[BUDGET_STREAM, mu.to_bits()]);
                let v = verify_privacy_profile(config.manifold, sigma, delta, verification, &mut rng)?;
                Ok(BudgetRow {
                    mu,
                    sigma,
                    mu_star: v.mu_star,
                    max_standard_error: v.max_standard_error(),
                })
            })
            .collect()
    })
}
