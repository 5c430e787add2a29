//! Distribution functions, quantiles, goodness-of-fit statistics and a
//! quadrature rule used by the inference code and the test oracles.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::{gamma_lr, ln_gamma};
use std::f64::consts::{PI, SQRT_2};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "normal quantile needs p in (0, 1), got {p}");
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Chi-square CDF with `k` degrees of freedom.
pub fn chi2_cdf(x: f64, k: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_lr(0.5 * k as f64, 0.5 * x)
}

pub fn chi2_pdf(x: f64, k: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = 0.5 * k as f64;
    ((a - 1.0) * x.ln() - 0.5 * x - a * 2f64.ln() - ln_gamma(a)).exp()
}

/// Chi-square quantile by safeguarded Newton iteration on the regularized
/// incomplete gamma function.
pub fn chi2_quantile(p: f64, k: usize) -> f64 {
    assert!(p > 0.0 && p < 1.0, "chi-square quantile needs p in (0, 1), got {p}");
    assert!(k >= 1, "chi-square needs at least one degree of freedom");
    let mut lo = 0.0;
    let mut hi = (k as f64).max(1.0);
    while chi2_cdf(hi, k) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = chi2_cdf(x, k) - p;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let dens = chi2_pdf(x, k);
        let mut next = if dens > 0.0 { x - f / dens } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(1.0) {
            return next;
        }
        x = next;
    }
    x
}

/// One-sample Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0, |acc: f64, (i, &x)| {
        let f = cdf(x);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        acc.max(above).max(below)
    })
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic p-value of a KS statistic `d` for effective sample size `n`
/// (Kolmogorov series with Stephens' small-sample correction).
pub fn ks_p_value(d: f64, n: f64) -> f64 {
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Composite Simpson rule on `[a, b]` with `intervals` (rounded up to even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals.max(2) + intervals % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}
