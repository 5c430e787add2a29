//! Gaussian differential privacy primitives: sensitivities, the Riemannian
//! Gaussian and exponential-wrapped Gaussian samplers, Euclidean Gaussian
//! mechanisms, composition, and a Monte Carlo check of a mechanism's privacy
//! profile against the Gaussian trade-off curve.

use crate::error::{invalid, Error, Result};
use crate::manifold::{
    distance_unchecked, exp_unchecked, log_unchecked, tangent_frame, ManifoldKind, ManifoldPoint, TangentFrame,
};
use crate::stats::normal_cdf;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub mechanism: String,
    pub mu: f64,
}

/// A GDP budget together with the releases charged against it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub mu: f64,
    pub ledger: Vec<LedgerEntry>,
}

impl PrivacyBudget {
    pub fn new(mu: f64) -> Result<Self> {
        check_mu(mu)?;
        Ok(PrivacyBudget { mu, ledger: Vec::new() })
    }

    /// Per-release share when the budget is split evenly over `k` releases.
    pub fn equal_share(&self, k: usize) -> f64 {
        self.mu / (k as f64).sqrt()
    }

    pub fn record(&mut self, mechanism: impl Into<String>, mu: f64) {
        self.ledger.push(LedgerEntry {
            mechanism: mechanism.into(),
            mu,
        });
    }

    /// GDP composition of everything recorded so far.
    pub fn composed(&self) -> f64 {
        compose(self.ledger.iter().map(|e| e.mu))
    }
}

/// `sqrt(sum mu_i^2)`.
pub fn compose(mus: impl IntoIterator<Item = f64>) -> f64 {
    mus.into_iter().map(|m| m * m).sum::<f64>().sqrt()
}

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("privacy budget mu must be positive and finite, got {mu}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityFormula {
    Mean,
    Variance,
    CovarianceC,
    CovarianceLambda,
    SigmaF,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SensitivityInputs {
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_radius_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hessian_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRecord {
    pub delta: f64,
    pub formula: SensitivityFormula,
    pub inputs: SensitivityInputs,
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {x}")))
    }
}

fn check_n(n: usize) -> Result<()> {
    if n >= 1 {
        Ok(())
    } else {
        Err(invalid("sample size must be at least 1"))
    }
}

/// Curvature factor `lambda(r, kappa)` of the Frechet mean sensitivity.
pub fn curvature_factor(r: f64, kappa: f64) -> Result<f64> {
    check_positive("radius", r)?;
    if kappa > 0.0 {
        let angle = 2.0 * r * kappa.sqrt();
        if angle >= FRAC_PI_2 {
            return Err(invalid(format!(
                "radius {r} too large for curvature {kappa}: need 2 r sqrt(kappa) < pi/2"
            )));
        }
        Ok(angle.tan() / (r * kappa.sqrt()) - 1.0)
    } else {
        Ok(1.0)
    }
}

/// Sensitivity of the sample Frechet mean, `2 lambda(r, kappa) r / n`.
pub fn mean_sensitivity(r: f64, kappa: f64, n: usize) -> Result<SensitivityRecord> {
    check_n(n)?;
    let lambda = curvature_factor(r, kappa)?;
    Ok(SensitivityRecord {
        delta: 2.0 * lambda * r / n as f64,
        formula: SensitivityFormula::Mean,
        inputs: SensitivityInputs {
            n,
            r: Some(r),
            kappa: Some(kappa),
            ..Default::default()
        },
    })
}

/// `4 r^2 / n`.
pub fn variance_sensitivity(r: f64, n: usize) -> Result<SensitivityRecord> {
    check_positive("radius", r)?;
    check_n(n)?;
    Ok(SensitivityRecord {
        delta: 4.0 * r * r / n as f64,
        formula: SensitivityFormula::Variance,
        inputs: SensitivityInputs {
            n,
            r: Some(r),
            ..Default::default()
        },
    })
}

/// `(Delta_C, Delta_Lambda) = (6 R^2 / n, 2 B_H / n)`.
pub fn covariance_sensitivities(
    log_radius_bound: f64,
    hessian_bound: f64,
    n: usize,
) -> Result<(SensitivityRecord, SensitivityRecord)> {
    check_positive("log-radius bound R", log_radius_bound)?;
    check_positive("Hessian bound B_H", hessian_bound)?;
    check_n(n)?;
    let nf = n as f64;
    let c = SensitivityRecord {
        delta: 6.0 * log_radius_bound * log_radius_bound / nf,
        formula: SensitivityFormula::CovarianceC,
        inputs: SensitivityInputs {
            n,
            log_radius_bound: Some(log_radius_bound),
            ..Default::default()
        },
    };
    let lambda = SensitivityRecord {
        delta: 2.0 * hessian_bound / nf,
        formula: SensitivityFormula::CovarianceLambda,
        inputs: SensitivityInputs {
            n,
            hessian_bound: Some(hessian_bound),
            ..Default::default()
        },
    };
    Ok((c, lambda))
}

/// `16 r^4 / n`.
pub fn sigma_f_sensitivity(r: f64, n: usize) -> Result<SensitivityRecord> {
    check_positive("radius", r)?;
    check_n(n)?;
    Ok(SensitivityRecord {
        delta: 16.0 * r.powi(4) / n as f64,
        formula: SensitivityFormula::SigmaF,
        inputs: SensitivityInputs {
            n,
            r: Some(r),
            ..Default::default()
        },
    })
}

/// Default bound on the Frobenius norm of per-point Hessians of the squared
/// distance.
///
/// `2 sqrt(d)` when curvature is bounded below by a non-negative constant
/// (Hessian eigenvalues of `rho^2` are at most 2). With negative curvature
/// `-k`, eigenvalues grow like `2 s coth s` for `s = sqrt(k) t`, evaluated at
/// the largest distance `t = 2 r`.
pub fn default_hessian_bound(kind: ManifoldKind, r: f64) -> f64 {
    let d = kind.intrinsic_dim() as f64;
    let k_low = kind.curvature_lower();
    let base = 2.0 * d.sqrt();
    if k_low < 0.0 {
        let s = (-k_low).sqrt() * 2.0 * r;
        base * (s / s.tanh()).max(1.0)
    } else {
        base
    }
}

fn standard_normal_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)))
}

/// Radius of a Riemannian Gaussian on `S^d`: density on `[0, pi]`
/// proportional to `sin(t)^{d-1} exp(-t^2 / 2 sigma^2)`.
///
/// Proposes from the scaled chi law `t^{d-1} exp(-t^2/2 sigma^2)` truncated
/// to `[0, pi]` and accepts with probability `(sin t / t)^{d-1}`.
pub fn sample_rg_radius<R: Rng + ?Sized>(intrinsic_dim: usize, sigma: f64, rng: &mut R) -> f64 {
    let shape = 0.5 * intrinsic_dim as f64;
    let chi2_half = Gamma::new(shape, 1.0).expect("positive shape");
    loop {
        let t = sigma * (2.0 * chi2_half.sample(rng)).sqrt();
        if t > PI {
            continue;
        }
        if intrinsic_dim == 1 || t == 0.0 {
            return t;
        }
        let accept = (t.sin() / t).powi(intrinsic_dim as i32 - 1);
        let u: f64 = rng.random();
        if u < accept {
            return t;
        }
    }
}

/// Riemannian Gaussian noise centered at a sphere point, density
/// proportional to `exp(-rho^2(y, center) / 2 sigma^2)` w.r.t. volume.
pub fn sample_riemannian_gaussian<R: Rng + ?Sized>(
    center: &ManifoldPoint,
    sigma: f64,
    rng: &mut R,
) -> Result<ManifoldPoint> {
    sample_riemannian_gaussian_in_frame(&tangent_frame(center), sigma, rng)
}

/// Same as [`sample_riemannian_gaussian`] with an explicit tangent frame at
/// the center, which fixes how random directions map to tangent vectors.
pub fn sample_riemannian_gaussian_in_frame<R: Rng + ?Sized>(
    frame: &TangentFrame,
    sigma: f64,
    rng: &mut R,
) -> Result<ManifoldPoint> {
    let center = frame.base();
    if !center.kind().is_sphere() {
        return Err(invalid("Riemannian Gaussian sampling is implemented for the sphere only"));
    }
    check_positive("sigma", sigma)?;
    let d = frame.dim();
    let t = sample_rg_radius(d, sigma, rng);
    let z = loop {
        let z = standard_normal_vector(d, rng);
        let norm = z.norm();
        if norm > 0.0 {
            break z / norm;
        }
    };
    Ok(exp_unchecked(center, &(frame.combine(&z) * t)))
}

/// Exponential-wrapped Gaussian: `exp_{m0}(log_{m0}(center) + sigma Z)`
/// with `Z` standard normal in frame coordinates at `footpoint`.
pub fn sample_exp_wrapped_gaussian<R: Rng + ?Sized>(
    footpoint: &ManifoldPoint,
    center: &ManifoldPoint,
    sigma: f64,
    rng: &mut R,
) -> Result<ManifoldPoint> {
    footpoint.kind().ensure_same(center.kind())?;
    check_positive("sigma", sigma)?;
    sample_exp_wrapped_in_frame(&tangent_frame(footpoint), center, sigma, rng)
}

pub(crate) fn sample_exp_wrapped_in_frame<R: Rng + ?Sized>(
    frame: &TangentFrame,
    center: &ManifoldPoint,
    sigma: f64,
    rng: &mut R,
) -> Result<ManifoldPoint> {
    let foot = frame.base();
    let z = standard_normal_vector(frame.dim(), rng);
    let v = log_unchecked(foot, center)? + frame.combine(&z) * sigma;
    Ok(exp_unchecked(foot, &v))
}

/// `value + N(0, (delta/mu)^2)`.
pub fn gaussian_mechanism_scalar<R: Rng + ?Sized>(value: f64, delta: f64, mu: f64, rng: &mut R) -> Result<f64> {
    check_mu(mu)?;
    if !(delta >= 0.0) {
        return Err(invalid(format!("sensitivity must be non-negative, got {delta}")));
    }
    let z: f64 = StandardNormal.sample(rng);
    Ok(value + z * delta / mu)
}

/// Coordinate-wise i.i.d. version of [`gaussian_mechanism_scalar`].
pub fn gaussian_mechanism_vector<R: Rng + ?Sized>(
    value: &DVector<f64>,
    delta: f64,
    mu: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_mu(mu)?;
    if !(delta >= 0.0) {
        return Err(invalid(format!("sensitivity must be non-negative, got {delta}")));
    }
    let z = standard_normal_vector(value.len(), rng);
    Ok(value + z * (delta / mu))
}

/// `delta_mu(eps) = Phi(-eps/mu + mu/2) - e^eps Phi(-eps/mu - mu/2)`.
pub fn gdp_delta_profile(mu: f64, eps: f64) -> f64 {
    assert!(mu > 0.0, "mu must be positive");
    let first = normal_cdf(-eps / mu + mu / 2.0);
    let tail = normal_cdf(-eps / mu - mu / 2.0);
    let second = if tail > 0.0 { (eps + tail.ln()).exp() } else { 0.0 };
    (first - second).clamp(0.0, 1.0)
}

/// How `delta(eps)` is estimated from Monte Carlo draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileEstimator {
    /// One sample from the first output law; the second law's tail is
    /// reweighted by the exact likelihood ratio `e^{-L}`.
    ImportanceWeighted,
    /// Independent samples from both output laws.
    TwoSample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileVerificationConfig {
    pub eps_grid: Vec<f64>,
    pub n_mc: usize,
    /// Absolute resolution of the bisection on mu.
    pub bisection_tol: f64,
    /// Monte Carlo standard errors added to the estimated profile.
    pub se_multiplier: f64,
    /// Largest acceptable standard error of any estimated `delta(eps)`.
    pub max_standard_error: f64,
    pub estimator: ProfileEstimator,
}

/// 64 points, geometric from 1e-3 to 10.
pub fn default_eps_grid() -> Vec<f64> {
    let (lo, hi, k) = (1e-3f64, 10.0f64, 64);
    let ratio = (hi / lo).ln() / (k - 1) as f64;
    (0..k).map(|i| lo * (ratio * i as f64).exp()).collect()
}

impl Default for ProfileVerificationConfig {
    fn default() -> Self {
        ProfileVerificationConfig {
            eps_grid: default_eps_grid(),
            n_mc: 2_000_000,
            bisection_tol: 1e-3,
            se_multiplier: 3.0,
            max_standard_error: 1e-3,
            estimator: ProfileEstimator::ImportanceWeighted,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileVerification {
    pub mu_star: f64,
    pub eps: Vec<f64>,
    pub delta_hat: Vec<f64>,
    pub standard_error: Vec<f64>,
}

impl ProfileVerification {
    pub fn max_standard_error(&self) -> f64 {
        self.standard_error.iter().cloned().fold(0.0, f64::max)
    }
}

/// Estimates the smallest GDP parameter whose trade-off curve dominates the
/// Riemannian Gaussian mechanism with scale `sigma` on two centers at
/// distance `delta_eta`.
///
/// The sphere is homogeneous, so the normalizing constants of both output
/// laws agree and the privacy loss is
/// `L(y) = (rho^2(eta2, y) - rho^2(eta1, y)) / 2 sigma^2`.
pub fn verify_privacy_profile<R: Rng + ?Sized>(
    kind: ManifoldKind,
    sigma: f64,
    delta_eta: f64,
    config: &ProfileVerificationConfig,
    rng: &mut R,
) -> Result<ProfileVerification> {
    let ManifoldKind::Sphere { ambient_dim } = kind else {
        return Err(invalid("privacy profile verification is implemented for the sphere only"));
    };
    check_positive("sigma", sigma)?;
    check_positive("sensitivity", delta_eta)?;
    if delta_eta >= PI {
        return Err(invalid("sensitivity must be below pi on the unit sphere"));
    }
    if config.eps_grid.is_empty() || config.eps_grid.iter().any(|e| !(*e >= 0.0)) {
        return Err(invalid("epsilon grid must be non-empty and non-negative"));
    }
    if config.n_mc < 2 {
        return Err(Error::InsufficientPrecision {
            achieved: f64::INFINITY,
            requested: config.max_standard_error,
        });
    }

    let eta1 = ManifoldPoint::sphere_axis(ambient_dim, ambient_dim - 1);
    let frame1 = tangent_frame(&eta1);
    let eta2 = exp_unchecked(&eta1, &(frame1.basis()[0].clone() * delta_eta));
    let frame2 = tangent_frame(&eta2);
    let two_s2 = 2.0 * sigma * sigma;
    let loss = |y: &ManifoldPoint| {
        let a = distance_unchecked(&eta2, y);
        let b = distance_unchecked(&eta1, y);
        (a * a - b * b) / two_s2
    };

    let n = config.n_mc;
    let nf = n as f64;
    let eps = config.eps_grid.clone();
    let mut losses = Vec::with_capacity(n);
    for _ in 0..n {
        losses.push(loss(&sample_riemannian_gaussian_in_frame(&frame1, sigma, rng)?));
    }

    let (delta_hat, standard_error): (Vec<f64>, Vec<f64>) = match config.estimator {
        ProfileEstimator::ImportanceWeighted => eps
            .iter()
            .map(|&e| {
                let (mut s, mut s2) = (0.0, 0.0);
                for &l in &losses {
                    if l >= e {
                        let w = -(e - l).exp_m1();
                        s += w;
                        s2 += w * w;
                    }
                }
                let mean = s / nf;
                let var = (s2 / nf - mean * mean).max(0.0);
                (mean, (var / (nf - 1.0)).sqrt())
            })
            .unzip(),
        ProfileEstimator::TwoSample => {
            let mut other = Vec::with_capacity(n);
            for _ in 0..n {
                other.push(loss(&sample_riemannian_gaussian_in_frame(&frame2, sigma, rng)?));
            }
            eps.iter()
                .map(|&e| {
                    let p1 = losses.iter().filter(|&&l| l >= e).count() as f64 / nf;
                    let p2 = other.iter().filter(|&&l| l >= e).count() as f64 / nf;
                    let scale = e.exp();
                    let var = p1 * (1.0 - p1) / nf + scale * scale * p2 * (1.0 - p2) / nf;
                    (p1 - scale * p2, var.sqrt())
                })
                .unzip()
        }
    };

    let result = ProfileVerification {
        mu_star: 0.0,
        eps,
        delta_hat,
        standard_error,
    };
    let achieved = result.max_standard_error();
    if achieved > config.max_standard_error {
        return Err(Error::InsufficientPrecision {
            achieved,
            requested: config.max_standard_error,
        });
    }

    let dominated = |mu: f64| {
        result
            .eps
            .iter()
            .zip(result.delta_hat.iter().zip(&result.standard_error))
            .all(|(&e, (&d, &se))| d <= gdp_delta_profile(mu, e) + config.se_multiplier * se)
    };
    let mut hi = 1.0;
    while !dominated(hi) {
        hi *= 2.0;
        if hi > 1e4 {
            return Err(invalid("estimated privacy profile is not dominated by any GDP curve with mu <= 1e4"));
        }
    }
    let mut lo = 0.0;
    while hi - lo > config.bisection_tol {
        let mid = 0.5 * (lo + hi);
        if dominated(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(ProfileVerification { mu_star: hi, ..result })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::stats::{ks_statistic, simpson};

    #[test]
    fn mean_sensitivity_examples() {
        let flat = mean_sensitivity(1.0, 0.0, 100).unwrap();
        assert!((flat.delta - 0.02).abs() < 1e-15);
        let r = PI / 8.0;
        let s = mean_sensitivity(r, 1.0, 600).unwrap();
        assert!((curvature_factor(r, 1.0).unwrap() - (8.0 / PI - 1.0)).abs() < 1e-14);
        assert!((s.delta - (1.0 - PI / 8.0) / 300.0).abs() < 1e-15);
        assert!((s.delta - 2.0243e-3).abs() < 1e-7);
        let doubled = mean_sensitivity(r, 1.0, 1200).unwrap();
        assert!((doubled.delta * 2.0 - s.delta).abs() < 1e-16);
        assert!(mean_sensitivity(PI / 4.0, 1.0, 10).is_err());
    }

    #[test]
    fn variance_and_sigma_f_sensitivities() {
        let r = PI / 8.0;
        assert!((variance_sensitivity(r, 600).unwrap().delta - 1.0281e-3).abs() < 1e-7);
        assert_eq!(variance_sensitivity(1.0, 4).unwrap().delta, 1.0);
        assert!((variance_sensitivity(2.0 * r, 600).unwrap().delta - 4.0 * variance_sensitivity(r, 600).unwrap().delta).abs() < 1e-16);
        assert!((sigma_f_sensitivity(r, 600).unwrap().delta - 6.342e-4).abs() < 1e-7);
        assert_eq!(sigma_f_sensitivity(1.0, 16).unwrap().delta, 1.0);
        assert!((sigma_f_sensitivity(2.0, 10).unwrap().delta - 16.0 * sigma_f_sensitivity(1.0, 10).unwrap().delta).abs() < 1e-12);
    }

    #[test]
    fn covariance_sensitivity_examples() {
        let kind = ManifoldKind::sphere(3).unwrap();
        let bh = default_hessian_bound(kind, PI / 8.0);
        assert!((bh - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        let (c, l) = covariance_sensitivities(PI / 4.0, bh, 600).unwrap();
        assert!((c.delta - 6.1685e-3).abs() < 1e-7);
        assert!((l.delta - 9.428e-3).abs() < 1e-6);
        let (c2, l2) = covariance_sensitivities(PI / 4.0, bh, 1200).unwrap();
        assert!((c2.delta * 2.0 - c.delta).abs() < 1e-16 && (l2.delta * 2.0 - l.delta).abs() < 1e-16);
    }

    #[test]
    fn spd_hessian_bound_exceeds_flat_value() {
        let kind = ManifoldKind::spd(2).unwrap();
        let s = 0.5f64.sqrt() * 3.0;
        let expected = 2.0 * 3f64.sqrt() * s / s.tanh();
        assert!((default_hessian_bound(kind, 1.5) - expected).abs() < 1e-12);
    }

    #[test]
    fn budget_composition() {
        let mut b = PrivacyBudget::new(1.3).unwrap();
        let share = b.equal_share(3);
        for name in ["mean", "lambda", "c"] {
            b.record(name, share);
        }
        assert!((b.composed() - 1.3).abs() < 1e-12);
        assert!(PrivacyBudget::new(0.0).is_err());
    }

    #[test]
    fn gdp_profile_values() {
        assert!((gdp_delta_profile(1.0, 0.0) - 0.382_924_922_548_026_2).abs() < 1e-12);
        assert!(gdp_delta_profile(1.0, 200.0) < 1e-300);
        assert_eq!(gdp_delta_profile(0.5, 1000.0), 0.0);
        let eps: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
        for w in eps.windows(2) {
            assert!(gdp_delta_profile(1.0, w[1]) <= gdp_delta_profile(1.0, w[0]));
        }
        for e in eps {
            assert!(gdp_delta_profile(0.5, e) <= gdp_delta_profile(1.0, e));
        }
    }

    #[test]
    fn gaussian_mechanism_moments() {
        let mut rng = seeded(11);
        assert_eq!(gaussian_mechanism_scalar(3.5, 0.0, 1.0, &mut rng).unwrap(), 3.5);
        let (delta, mu, n) = (0.2, 0.5, 100_000);
        let scale = delta / mu;
        let xs: Vec<f64> = (0..n).map(|_| gaussian_mechanism_scalar(1.0, delta, mu, &mut rng).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 1.0).abs() < 4.0 * scale / (n as f64).sqrt());
        assert!((var / (scale * scale) - 1.0).abs() < 0.03);
        let v = gaussian_mechanism_vector(&DVector::from_vec(vec![1.0, 2.0]), 0.0, 1.0, &mut rng).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 2.0]);
        assert!(gaussian_mechanism_scalar(0.0, 1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn rg_concentrates_for_small_sigma() {
        let c = ManifoldPoint::sphere_from_slice(&[0.0, 0.6, 0.8]).unwrap();
        let mut rng = seeded(3);
        let sigma = 1e-4;
        for _ in 0..2000 {
            let y = sample_riemannian_gaussian(&c, sigma, &mut rng).unwrap();
            assert!(distance_unchecked(&c, &y) <= 5.0 * sigma);
        }
        assert!(sample_riemannian_gaussian(&c, 0.0, &mut rng).is_err());
        assert!(sample_riemannian_gaussian(&ManifoldPoint::identity(2), 0.1, &mut rng).is_err());
    }

    #[test]
    fn rg_radius_small_sample_ks() {
        // quadrature oracle for the target radial CDF
        let (d, sigma) = (2usize, 0.2);
        let dens = |t: f64| t.sin().powi(d as i32 - 1) * (-t * t / (2.0 * sigma * sigma)).exp();
        let total = simpson(dens, 0.0, PI, 20_000);
        let cdf = |x: f64| simpson(dens, 0.0, x.clamp(0.0, PI), 2_000) / total;
        let mut rng = seeded(5);
        let draws: Vec<f64> = (0..5_000).map(|_| sample_rg_radius(d, sigma, &mut rng)).collect();
        assert!(ks_statistic(&draws, cdf) < 0.03);
    }

    #[test]
    fn rg_sampling_is_rotation_equivariant() {
        let c = ManifoldPoint::sphere_from_slice(&[0.0, 0.6, 0.8]).unwrap();
        let frame = tangent_frame(&c);
        let (a, b) = (0.7f64, -0.4f64);
        let rz = nalgebra::DMatrix::from_row_slice(3, 3, &[a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0]);
        let rx = nalgebra::DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, b.cos(), -b.sin(), 0.0, b.sin(), b.cos()]);
        let r = rz * rx;
        let moved = frame.transformed(&r).unwrap();
        let y = sample_riemannian_gaussian_in_frame(&frame, 0.3, &mut seeded(9)).unwrap();
        let y_rot = sample_riemannian_gaussian_in_frame(&moved, 0.3, &mut seeded(9)).unwrap();
        assert!((y.transform(&r).unwrap().coords() - y_rot.coords()).norm() < 1e-14);
    }

    #[test]
    fn ewg_small_sigma_and_identity_limit() {
        let m0 = ManifoldPoint::identity(2);
        let c = ManifoldPoint::spd_from_row_slice(2, &[1.5, 0.2, 0.2, 0.8]).unwrap();
        let mut rng = seeded(1);
        let y = sample_exp_wrapped_gaussian(&m0, &m0, 1e-9, &mut rng).unwrap();
        assert!(distance_unchecked(&m0, &y) < 1e-7);
        let y = sample_exp_wrapped_gaussian(&m0, &c, 1e-12, &mut rng).unwrap();
        assert!(distance_unchecked(&c, &y) < 1e-10);
    }

    #[test]
    fn verifier_rejects_bad_inputs() {
        let kind = ManifoldKind::sphere(3).unwrap();
        let mut rng = seeded(1);
        let cfg = ProfileVerificationConfig {
            n_mc: 1,
            ..Default::default()
        };
        assert!(matches!(
            verify_privacy_profile(kind, 0.01, 0.001, &cfg, &mut rng),
            Err(Error::InsufficientPrecision { .. })
        ));
        let cfg = ProfileVerificationConfig {
            n_mc: 1000,
            max_standard_error: 1e-9,
            ..Default::default()
        };
        assert!(matches!(
            verify_privacy_profile(kind, 0.01, 0.001, &cfg, &mut rng),
            Err(Error::InsufficientPrecision { .. })
        ));
        assert!(verify_privacy_profile(ManifoldKind::spd(2).unwrap(), 0.01, 0.001, &Default::default(), &mut rng).is_err());
    }

    #[test]
    fn verifier_recovers_calibrated_mu_at_small_scale() {
        let kind = ManifoldKind::sphere(3).unwrap();
        let delta = mean_sensitivity(PI / 8.0, 1.0, 600).unwrap().delta;
        let cfg = ProfileVerificationConfig {
            n_mc: 200_000,
            ..Default::default()
        };
        let mu = 1.0;
        let v = verify_privacy_profile(kind, delta / mu, delta, &cfg, &mut seeded(21)).unwrap();
        assert!((v.mu_star - mu).abs() < 0.05, "mu_star = {}", v.mu_star);
        // doubling sigma halves the estimated budget
        let half = verify_privacy_profile(kind, 2.0 * delta / mu, delta, &cfg, &mut seeded(22)).unwrap();
        assert!((half.mu_star - 0.5 * v.mu_star).abs() < 0.03, "{} vs {}", half.mu_star, v.mu_star);
    }

    #[test]
    fn two_sample_estimator_agrees_roughly() {
        let kind = ManifoldKind::sphere(3).unwrap();
        let cfg = ProfileVerificationConfig {
            n_mc: 200_000,
            estimator: ProfileEstimator::TwoSample,
            max_standard_error: 1.0,
            ..Default::default()
        };
        let v = verify_privacy_profile(kind, 0.01, 0.01, &cfg, &mut seeded(4)).unwrap();
        assert!((v.mu_star - 1.0).abs() < 0.1, "mu_star = {}", v.mu_star);
    }
}
