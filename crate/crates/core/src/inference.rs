//! Private Frechet mean and variance releases, plug-in limiting covariance
//! estimation, and the resulting confidence regions and intervals.

use crate::error::{invalid, Error, Result};
use crate::frechet::{frechet_mean, mean_power_distance, Dataset, FrechetSolution, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::linalg::{floor_eigenvalues, symmetrize, vecd_inv, vecd_unchecked};
use crate::manifold::{log_unchecked, tangent_frame, Chart, ChartLinearization, ManifoldKind, ManifoldPoint};
use crate::privacy::{
    covariance_sensitivities, default_hessian_bound, gaussian_mechanism_scalar, gaussian_mechanism_vector,
    mean_sensitivity, sample_exp_wrapped_in_frame, sample_riemannian_gaussian_in_frame, sigma_f_sensitivity,
    variance_sensitivity, PrivacyBudget, SensitivityRecord,
};
use crate::stats::{chi2_quantile, normal_quantile};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Step of the central differences used for per-point Hessians.
pub const HESSIAN_STEP: f64 = 1e-5;
/// Eigenvalue floor applied to the privatized Hessian.
pub const LAMBDA_FLOOR: f64 = 1e-8;
/// Floor applied to the privatized `sigma_F^2`.
pub const SIGMA_F2_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    RiemannianGaussian,
    ExpWrappedGaussian,
}

impl Mechanism {
    pub fn for_kind(kind: ManifoldKind) -> Self {
        if kind.is_sphere() {
            Mechanism::RiemannianGaussian
        } else {
            Mechanism::ExpWrappedGaussian
        }
    }
}

#[derive(Clone, Debug)]
pub struct MeanRelease {
    pub mean_dp: ManifoldPoint,
    pub sigma_n_eta: f64,
    pub mechanism: Mechanism,
    pub sensitivity: SensitivityRecord,
}

#[derive(Clone, Debug)]
pub struct VarianceRelease {
    pub variance_dp: f64,
    pub sigma_n_v: f64,
    /// `F_n(mean_dp)`, the quantity being privatized.
    pub plug_in: f64,
    pub sensitivity: SensitivityRecord,
}

/// Privatizes an already computed sample Frechet mean.
pub fn release_frechet_mean<R: Rng + ?Sized>(
    data: &Dataset,
    solution: &FrechetSolution,
    mu: f64,
    rng: &mut R,
) -> Result<MeanRelease> {
    let kind = data.kind();
    kind.ensure_same(solution.mean.kind())?;
    let sensitivity = mean_sensitivity(data.radius(), kind.curvature_upper(), data.len())?;
    let sigma = sensitivity.delta / mu;
    let mechanism = Mechanism::for_kind(kind);
    let mean_dp = match mechanism {
        Mechanism::RiemannianGaussian => {
            sample_riemannian_gaussian_in_frame(&tangent_frame(&solution.mean), sigma, rng)?
        }
        Mechanism::ExpWrappedGaussian => {
            sample_exp_wrapped_in_frame(&tangent_frame(data.center()), &solution.mean, sigma, rng)?
        }
    };
    Ok(MeanRelease {
        mean_dp,
        sigma_n_eta: sigma,
        mechanism,
        sensitivity,
    })
}

/// Sample Frechet mean followed by the matching privacy mechanism.
pub fn dp_frechet_mean<R: Rng + ?Sized>(data: &Dataset, mu: f64, rng: &mut R) -> Result<MeanRelease> {
    let solution = frechet_mean(data, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    release_frechet_mean(data, &solution, mu, rng)
}

/// `F_n(mean_dp) + N(0, (4 r^2 / (n mu))^2)`.
pub fn dp_frechet_variance<R: Rng + ?Sized>(
    data: &Dataset,
    mean_dp: &ManifoldPoint,
    mu: f64,
    rng: &mut R,
) -> Result<VarianceRelease> {
    data.kind().ensure_same(mean_dp.kind())?;
    let sensitivity = variance_sensitivity(data.radius(), data.len())?;
    let plug_in = mean_power_distance(data.points(), mean_dp, 2);
    let variance_dp = gaussian_mechanism_scalar(plug_in, sensitivity.delta, mu, rng)?;
    Ok(VarianceRelease {
        variance_dp,
        sigma_n_v: sensitivity.delta / mu,
        plug_in,
        sensitivity,
    })
}

/// Chart used for inference around `estimate`: normal coordinates at the
/// estimate on the sphere, at the declared center on SPD.
pub fn inference_chart(data: &Dataset, estimate: &ManifoldPoint) -> Chart {
    if data.kind().is_sphere() {
        Chart::at(estimate)
    } else {
        Chart::at(data.center())
    }
}

/// Gradient in chart coordinates of `theta -> rho^2(x, phi^{-1}(theta))`.
pub fn psi_gradient(x: &ManifoldPoint, theta: &DVector<f64>, chart: &Chart) -> Result<DVector<f64>> {
    chart.base().kind().ensure_same(x.kind())?;
    let lin = chart.linearize(theta)?;
    psi_at(&lin, x)
}

fn psi_at(lin: &ChartLinearization, x: &ManifoldPoint) -> Result<DVector<f64>> {
    Ok(lin.pull_back(&log_unchecked(&lin.point, x)?) * -2.0)
}

struct Stencil {
    plus: Vec<ChartLinearization>,
    minus: Vec<ChartLinearization>,
    h: f64,
}

impl Stencil {
    fn new(chart: &Chart, theta: &DVector<f64>, h: f64) -> Result<Self> {
        let d = chart.dim();
        let mut plus = Vec::with_capacity(d);
        let mut minus = Vec::with_capacity(d);
        for j in 0..d {
            let mut t = theta.clone();
            t[j] += h;
            plus.push(chart.linearize(&t)?);
            t[j] -= 2.0 * h;
            minus.push(chart.linearize(&t)?);
        }
        Ok(Stencil { plus, minus, h })
    }

    /// Column `j` holds `d Psi / d theta_j`; not symmetrized.
    fn hessian(&self, x: &ManifoldPoint) -> Result<DMatrix<f64>> {
        let d = self.plus.len();
        let mut hess = DMatrix::zeros(d, d);
        for j in 0..d {
            let col = (psi_at(&self.plus[j], x)? - psi_at(&self.minus[j], x)?) / (2.0 * self.h);
            hess.set_column(j, &col);
        }
        Ok(hess)
    }
}

/// Central-difference Hessian of `rho^2(x, phi^{-1}(.))` at `theta`, before
/// symmetrization.
pub fn point_hessian(x: &ManifoldPoint, theta: &DVector<f64>, chart: &Chart, h: f64) -> Result<DMatrix<f64>> {
    chart.base().kind().ensure_same(x.kind())?;
    Stencil::new(chart, theta, h)?.hessian(x)
}

/// Non-private ingredients of the limiting covariance at a chart point.
#[derive(Clone, Debug)]
pub struct CovarianceComponents {
    /// Average symmetrized per-point Hessian.
    pub lambda: DMatrix<f64>,
    /// Covariance (divisor n) of the frame coordinates of `log_y X_i`.
    pub log_covariance: DMatrix<f64>,
    /// `L_kj = <F_k, D phi^{-1}(theta) E_j>_y` for a frame `F` at `y`.
    pub l: DMatrix<f64>,
}

impl CovarianceComponents {
    /// `4 L^T S L`.
    pub fn sandwich(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        symmetrize(&(self.l.transpose() * s * &self.l * 4.0))
    }
}

pub fn covariance_components(
    points: &[ManifoldPoint],
    chart: &Chart,
    theta: &DVector<f64>,
) -> Result<CovarianceComponents> {
    if points.is_empty() {
        return Err(invalid("cannot estimate a covariance from an empty dataset"));
    }
    let d = chart.dim();
    let n = points.len() as f64;
    let stencil = Stencil::new(chart, theta, HESSIAN_STEP)?;
    let center = chart.linearize(theta)?;
    let frame = if theta.iter().all(|&t| t == 0.0) {
        chart.frame().clone()
    } else {
        tangent_frame(&center.point)
    };

    let mut lambda = DMatrix::zeros(d, d);
    let mut sum = DVector::zeros(d);
    let mut outer = DMatrix::zeros(d, d);
    for x in points {
        lambda += symmetrize(&stencil.hessian(x)?);
        let c = frame.coords_of(&log_unchecked(&center.point, x)?);
        outer += &c * c.transpose();
        sum += c;
    }
    let mean = sum / n;
    let log_covariance = symmetrize(&(outer / n - &mean * mean.transpose()));

    let mut l = DMatrix::zeros(d, d);
    for (k, f) in frame.basis().iter().enumerate() {
        l.set_row(k, &center.pull_back(f).transpose());
    }
    Ok(CovarianceComponents {
        lambda: lambda / n,
        log_covariance,
        l,
    })
}

#[derive(Clone, Debug)]
pub struct LimitingCovariance {
    pub lambda: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    /// Smallest eigenvalue of the (privatized) Hessian before the floor.
    pub lambda_min_before_repair: f64,
}

/// `(1/n) Lambda^{-1} C Lambda^{-1} + sigma^2 I`.
pub fn assemble_gamma(lambda: &DMatrix<f64>, c: &DMatrix<f64>, n: usize, sigma: f64) -> Result<DMatrix<f64>> {
    let inv = lambda
        .clone()
        .try_inverse()
        .ok_or(Error::DegenerateHessian { min_eigenvalue: 0.0 })?;
    let d = lambda.nrows();
    Ok(symmetrize(&(&inv * c * &inv / n as f64)) + DMatrix::identity(d, d) * (sigma * sigma))
}

fn repair(lambda: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let (lambda, min_before) = floor_eigenvalues(&symmetrize(lambda), LAMBDA_FLOOR);
    if !(min_before > LAMBDA_FLOOR) {
        return Err(Error::DegenerateHessian {
            min_eigenvalue: min_before,
        });
    }
    let (c, _) = floor_eigenvalues(&symmetrize(c), 0.0);
    Ok((lambda, c, min_before))
}

/// Non-private plug-in limiting covariance of the sample mean `estimate`.
pub fn limiting_covariance(data: &Dataset, estimate: &ManifoldPoint) -> Result<(Chart, LimitingCovariance)> {
    data.kind().ensure_same(estimate.kind())?;
    let chart = inference_chart(data, estimate);
    let theta = chart.coords(estimate)?;
    let comp = covariance_components(data.points(), &chart, &theta)?;
    let (lambda, c, min_before) = repair(&comp.lambda, &comp.sandwich(&comp.log_covariance))?;
    let gamma = assemble_gamma(&lambda, &c, data.len(), 0.0)?;
    Ok((
        chart,
        LimitingCovariance {
            lambda,
            c,
            gamma,
            lambda_min_before_repair: min_before,
        },
    ))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CovarianceBounds {
    /// Bound `B_H` on per-point Hessian norms; defaults per manifold.
    pub hessian_bound: Option<f64>,
    /// Bound `R` on log-vector norms; defaults to `2 r`.
    pub log_radius_bound: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PrivateLimitingCovariance {
    pub estimate: LimitingCovariance,
    pub lambda_sensitivity: SensitivityRecord,
    pub c_sensitivity: SensitivityRecord,
}

/// Privatized plug-in limiting covariance at `mean_dp`; `mu` is the share
/// charged to each of the two releases.
pub fn dp_limiting_covariance<R: Rng + ?Sized>(
    data: &Dataset,
    mean_dp: &ManifoldPoint,
    sigma_n_eta: f64,
    mu: f64,
    bounds: CovarianceBounds,
    rng: &mut R,
) -> Result<PrivateLimitingCovariance> {
    data.kind().ensure_same(mean_dp.kind())?;
    let r = data.radius();
    let b_h = bounds
        .hessian_bound
        .unwrap_or_else(|| default_hessian_bound(data.kind(), r));
    let big_r = bounds.log_radius_bound.unwrap_or(2.0 * r);
    let (c_sens, lambda_sens) = covariance_sensitivities(big_r, b_h, data.len())?;

    let chart = inference_chart(data, mean_dp);
    let theta = chart.coords(mean_dp)?;
    let comp = covariance_components(data.points(), &chart, &theta)?;
    let noisy_lambda = vecd_inv(&gaussian_mechanism_vector(
        &vecd_unchecked(&comp.lambda),
        lambda_sens.delta,
        mu,
        rng,
    )?)?;
    let noisy_cov = vecd_inv(&gaussian_mechanism_vector(
        &vecd_unchecked(&comp.log_covariance),
        c_sens.delta,
        mu,
        rng,
    )?)?;
    let (lambda, c, min_before) = repair(&noisy_lambda, &comp.sandwich(&noisy_cov))?;
    let gamma = assemble_gamma(&lambda, &c, data.len(), sigma_n_eta)?;
    Ok(PrivateLimitingCovariance {
        estimate: LimitingCovariance {
            lambda,
            c,
            gamma,
            lambda_min_before_repair: min_before,
        },
        lambda_sensitivity: lambda_sens,
        c_sensitivity: c_sens,
    })
}

/// `(1/n) sum rho^4(X_i, mean) - variance^2`.
pub fn sigma_f2_plug_in(data: &Dataset, mean: &ManifoldPoint, variance: f64) -> Result<f64> {
    data.kind().ensure_same(mean.kind())?;
    Ok(mean_power_distance(data.points(), mean, 4) - variance * variance)
}

#[derive(Clone, Debug)]
pub struct SigmaF2Release {
    pub value: f64,
    pub raw: f64,
    pub floored: bool,
    pub sensitivity: SensitivityRecord,
}

pub fn dp_sigma_f2<R: Rng + ?Sized>(
    data: &Dataset,
    mean_dp: &ManifoldPoint,
    variance_dp: f64,
    mu: f64,
    rng: &mut R,
) -> Result<SigmaF2Release> {
    let sensitivity = sigma_f_sensitivity(data.radius(), data.len())?;
    let plug_in = sigma_f2_plug_in(data, mean_dp, variance_dp)?;
    let raw = gaussian_mechanism_scalar(plug_in, sensitivity.delta, mu, rng)?;
    Ok(SigmaF2Release {
        value: raw.max(SIGMA_F2_FLOOR),
        raw,
        floored: raw < SIGMA_F2_FLOOR,
        sensitivity,
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// `variance +- z_{1 - alpha/2} sqrt(sigma_f2 / n + sigma_n_v^2)`.
pub fn variance_confidence_interval(
    variance: f64,
    sigma_f2: f64,
    n: usize,
    sigma_n_v: f64,
    alpha: f64,
) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(invalid("sample size must be at least 1"));
    }
    let half = normal_quantile(1.0 - alpha / 2.0) * (sigma_f2 / n as f64 + sigma_n_v * sigma_n_v).sqrt();
    Ok((variance - half, variance + half))
}

/// Ellipsoidal region `{v : (theta_hat - phi(v))^T Gamma^{-1} (theta_hat - phi(v)) <= q}`.
#[derive(Clone, Debug)]
pub struct ConfidenceRegion {
    chart: Chart,
    center: DVector<f64>,
    gamma: DMatrix<f64>,
    gamma_inv: DMatrix<f64>,
    threshold: f64,
    alpha: f64,
}

impl ConfidenceRegion {
    pub fn new(chart: Chart, estimate: &ManifoldPoint, gamma: DMatrix<f64>, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let d = chart.dim();
        if gamma.shape() != (d, d) {
            return Err(invalid(format!("Gamma must be {d}x{d}")));
        }
        let gamma_inv = gamma
            .clone()
            .cholesky()
            .ok_or_else(|| invalid("Gamma must be positive definite"))?
            .inverse();
        let center = chart.coords(estimate)?;
        Ok(ConfidenceRegion {
            center,
            gamma_inv: symmetrize(&gamma_inv),
            gamma,
            threshold: chi2_quantile(1.0 - alpha, d),
            alpha,
            chart,
        })
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn chart_base(&self) -> &ManifoldPoint {
        self.chart.base()
    }

    /// Chart coordinates of the estimate.
    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn quadratic_form_coords(&self, theta: &DVector<f64>) -> f64 {
        let diff = &self.center - theta;
        (diff.transpose() * &self.gamma_inv * &diff)[(0, 0)]
    }

    pub fn quadratic_form(&self, v: &ManifoldPoint) -> Result<f64> {
        Ok(self.quadratic_form_coords(&self.chart.coords(v)?))
    }

    pub fn contains(&self, v: &ManifoldPoint) -> Result<bool> {
        Ok(self.quadratic_form(v)? <= self.threshold)
    }
}

#[derive(Clone, Debug)]
pub struct DpMeanReport {
    pub mean_dp: ManifoldPoint,
    pub sigma_n_eta: f64,
    pub mechanism: Mechanism,
    pub chart: Chart,
    pub lambda_dp: DMatrix<f64>,
    pub c_dp: DMatrix<f64>,
    pub gamma_dp: DMatrix<f64>,
    pub n: usize,
    pub budget_spent: PrivacyBudget,
}

impl DpMeanReport {
    pub fn chart_base(&self) -> &ManifoldPoint {
        self.chart.base()
    }
}

pub fn mean_confidence_region(report: &DpMeanReport, alpha: f64) -> Result<ConfidenceRegion> {
    ConfidenceRegion::new(report.chart.clone(), &report.mean_dp, report.gamma_dp.clone(), alpha)
}

#[derive(Clone, Debug)]
pub struct DpVarianceReport {
    pub variance_dp: f64,
    pub sigma_n_v: f64,
    pub sigma_f2_dp: f64,
    pub sigma_f2_floored: bool,
    pub interval: (f64, f64),
    pub alpha: f64,
    pub budget_spent: PrivacyBudget,
}

/// Both pipelines at total budget `mu_total`, each split evenly over three
/// releases. The private mean is released once and charged to both ledgers.
pub fn run_full_pipeline<R: Rng + ?Sized>(
    data: &Dataset,
    mu_total: f64,
    alpha: f64,
    rng: &mut R,
) -> Result<(DpMeanReport, DpVarianceReport)> {
    let solution = frechet_mean(data, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    run_pipeline_from(data, &solution, mu_total, alpha, CovarianceBounds::default(), rng)
}

/// Releases of one pipeline run. The covariance step is kept separate so a
/// degenerate privatized Hessian does not discard the other releases.
#[derive(Debug)]
pub struct PipelineParts {
    pub release: MeanRelease,
    pub chart: Chart,
    pub covariance: Result<PrivateLimitingCovariance>,
    pub mean_budget: PrivacyBudget,
    pub variance: DpVarianceReport,
    pub n: usize,
}

impl PipelineParts {
    pub fn into_reports(self) -> Result<(DpMeanReport, DpVarianceReport)> {
        let cov = self.covariance?;
        let mean_report = DpMeanReport {
            chart: self.chart,
            mean_dp: self.release.mean_dp,
            sigma_n_eta: self.release.sigma_n_eta,
            mechanism: self.release.mechanism,
            lambda_dp: cov.estimate.lambda,
            c_dp: cov.estimate.c,
            gamma_dp: cov.estimate.gamma,
            n: self.n,
            budget_spent: self.mean_budget,
        };
        Ok((mean_report, self.variance))
    }
}

/// All releases of both pipelines starting from a precomputed sample Frechet
/// mean.
pub fn run_pipeline_parts<R: Rng + ?Sized>(
    data: &Dataset,
    solution: &FrechetSolution,
    mu_total: f64,
    alpha: f64,
    bounds: CovarianceBounds,
    rng: &mut R,
) -> Result<PipelineParts> {
    check_alpha(alpha)?;
    let mut mean_budget = PrivacyBudget::new(mu_total)?;
    let mut var_budget = PrivacyBudget::new(mu_total)?;
    let share = mean_budget.equal_share(3);

    let release = release_frechet_mean(data, solution, share, rng)?;
    mean_budget.record("frechet_mean", share);
    var_budget.record("frechet_mean", share);

    let covariance = dp_limiting_covariance(data, &release.mean_dp, release.sigma_n_eta, share, bounds, rng);
    mean_budget.record("hessian", share);
    mean_budget.record("log_covariance", share);

    let var = dp_frechet_variance(data, &release.mean_dp, share, rng)?;
    var_budget.record("frechet_variance", share);
    let sf = dp_sigma_f2(data, &release.mean_dp, var.variance_dp, share, rng)?;
    var_budget.record("sigma_f2", share);
    let interval = variance_confidence_interval(var.variance_dp, sf.value, data.len(), var.sigma_n_v, alpha)?;

    Ok(PipelineParts {
        chart: inference_chart(data, &release.mean_dp),
        release,
        covariance,
        mean_budget,
        variance: DpVarianceReport {
            variance_dp: var.variance_dp,
            sigma_n_v: var.sigma_n_v,
            sigma_f2_dp: sf.value,
            sigma_f2_floored: sf.floored,
            interval,
            alpha,
            budget_spent: var_budget,
        },
        n: data.len(),
    })
}

/// [`run_full_pipeline`] starting from a precomputed sample Frechet mean.
pub fn run_pipeline_from<R: Rng + ?Sized>(
    data: &Dataset,
    solution: &FrechetSolution,
    mu_total: f64,
    alpha: f64,
    bounds: CovarianceBounds,
    rng: &mut R,
) -> Result<(DpMeanReport, DpVarianceReport)> {
    run_pipeline_parts(data, solution, mu_total, alpha, bounds, rng)?.into_reports()
}

/// Non-private region and interval built from the same plug-in formulas.
pub fn nonprivate_inference(
    data: &Dataset,
    solution: &FrechetSolution,
    alpha: f64,
) -> Result<(ConfidenceRegion, (f64, f64))> {
    let (chart, cov) = limiting_covariance(data, &solution.mean)?;
    let region = ConfidenceRegion::new(chart, &solution.mean, cov.gamma, alpha)?;
    let sf = sigma_f2_plug_in(data, &solution.mean, solution.variance)?.max(0.0);
    let interval = variance_confidence_interval(solution.variance, sf, data.len(), 0.0, alpha)?;
    Ok((region, interval))
}
