mod common;

use common::*;
use manifold_dp::frechet::{frechet_function, frechet_mean, Dataset};
use manifold_dp::inference::{point_hessian, psi_gradient, HESSIAN_STEP};
use manifold_dp::linalg::{vecd, vecd_inv};
use manifold_dp::manifold::{
    differential_of_exp, distance, exp_map, log_map, tangent_frame, Chart, ManifoldPoint, TangentVector,
};
use manifold_dp::privacy::{
    sample_exp_wrapped_gaussian, sample_riemannian_gaussian, PrivacyBudget,
};
use manifold_dp::rng::seeded;
use manifold_dp::sim::{sample_sphere_uniform_ball, sample_spd_tangent_uniform_ball};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};

fn sphere_pair(seed: u64, ambient: usize, max_dist: f64) -> (ManifoldPoint, ManifoldPoint) {
    let mut rng = seeded(seed);
    let p = random_sphere_point(ambient, &mut rng);
    let q = random_point_near(&p, max_dist, &mut rng);
    (p, q)
}

fn spd_pair(seed: u64, m: usize, max_dist: f64) -> (ManifoldPoint, ManifoldPoint) {
    let mut rng = seeded(seed);
    let p = random_spd(m, &mut rng);
    let q = random_point_near(&p, max_dist, &mut rng);
    (p, q)
}

fn pair(seed: u64, sphere: bool, dim: usize) -> (ManifoldPoint, ManifoldPoint) {
    if sphere {
        sphere_pair(seed, dim + 1, FRAC_PI_4)
    } else {
        spd_pair(seed, dim, 3.0)
    }
}

proptest! {
    #[test]
    fn exp_log_round_trip(seed in any::<u64>(), sphere in any::<bool>(), dim in 2usize..5) {
        let (p, q) = pair(seed, sphere, dim);
        let back = exp_map(&p, &log_map(&p, &q).unwrap()).unwrap();
        prop_assert!((back.coords() - q.coords()).amax() <= 1e-9 * q.coords().amax().max(1.0));
    }

    #[test]
    fn log_norm_is_distance(seed in any::<u64>(), sphere in any::<bool>(), dim in 2usize..5) {
        let (p, q) = pair(seed, sphere, dim);
        let v = log_map(&p, &q).unwrap();
        prop_assert!((v.norm() - distance(&p, &q).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn triangle_inequality(seed in any::<u64>(), sphere in any::<bool>()) {
        let mut rng = seeded(seed);
        let pts: Vec<ManifoldPoint> = (0..3)
            .map(|_| if sphere { random_sphere_point(3, &mut rng) } else { random_spd(3, &mut rng) })
            .collect();
        let d = |a: usize, b: usize| distance(&pts[a], &pts[b]).unwrap();
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12);
    }

    #[test]
    fn spd_congruence_invariance(seed in any::<u64>(), m in 2usize..5) {
        let mut rng = seeded(seed);
        let (p, q) = (random_spd(m, &mut rng), random_spd(m, &mut rng));
        let a = random_invertible(m, &mut rng);
        let moved = distance(&p.transform(&a).unwrap(), &q.transform(&a).unwrap()).unwrap();
        prop_assert!((moved - distance(&p, &q).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn sphere_rotation_invariance(seed in any::<u64>(), ambient in 3usize..6) {
        let mut rng = seeded(seed);
        let (p, q) = (random_sphere_point(ambient, &mut rng), random_sphere_point(ambient, &mut rng));
        let r = random_rotation(ambient, &mut rng);
        let moved = distance(&p.transform(&r).unwrap(), &q.transform(&r).unwrap()).unwrap();
        prop_assert!((moved - distance(&p, &q).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn vecd_is_an_isometry(seed in any::<u64>(), m in 1usize..7) {
        let mut rng = seeded(seed);
        let (a, b) = (random_symmetric(m, &mut rng), random_symmetric(m, &mut rng));
        let (va, vb) = (vecd(&a).unwrap(), vecd(&b).unwrap());
        let frob = (&a - &b).norm();
        prop_assert!(((&va - &vb).norm() - frob).abs() <= 1e-14 * frob.max(1.0));
        prop_assert!((va.dot(&vb) - a.dot(&b)).abs() <= 1e-13 * (a.norm() * b.norm()).max(1.0));
        prop_assert!((vecd_inv(&va).unwrap() - a).amax() <= 1e-15 * 8.0);
    }

    #[test]
    fn exp_differential_matches_finite_differences(seed in any::<u64>(), sphere in any::<bool>()) {
        let mut rng = seeded(seed);
        let p = if sphere { random_sphere_point(3, &mut rng) } else { random_spd(2, &mut rng) };
        let v = random_tangent(&p, 1.0, &mut rng);
        let w = random_tangent(&p, 1.0, &mut rng);
        let exact = differential_of_exp(&p, &v, &w).unwrap();
        let h = 1e-6;
        let shifted = |s: f64| {
            let t = TangentVector::new(&p, v.vec() + w.vec() * s).unwrap();
            exp_map(&p, &t).unwrap().coords().clone()
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        prop_assert!((&fd - exact.vec()).norm() <= 1e-5 * fd.norm().max(1e-3));
    }

    #[test]
    fn psi_gradient_matches_finite_differences(seed in any::<u64>(), sphere in any::<bool>()) {
        let mut rng = seeded(seed);
        let base = if sphere { random_sphere_point(3, &mut rng) } else { random_spd(2, &mut rng) };
        let radius = if sphere { FRAC_PI_8 } else { 1.0 };
        let x = random_point_near(&base, radius, &mut rng);
        let chart = Chart::at(&base);
        let theta = chart.coords(&random_point_near(&base, radius, &mut rng)).unwrap();
        let psi = psi_gradient(&x, &theta, &chart).unwrap();
        let f = |t: &DVector<f64>| distance(&x, &chart.point(t).unwrap()).unwrap().powi(2);
        let h = 1e-6;
        let mut fd = DVector::zeros(theta.len());
        for j in 0..theta.len() {
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            fd[j] = (f(&tp) - f(&tm)) / (2.0 * h);
        }
        prop_assert!((&fd - &psi).norm() <= 1e-5 * psi.norm().max(1e-3));
    }

    #[test]
    fn finite_difference_hessian_is_nearly_symmetric(seed in any::<u64>(), sphere in any::<bool>()) {
        let mut rng = seeded(seed);
        let base = if sphere { random_sphere_point(3, &mut rng) } else { random_spd(2, &mut rng) };
        let radius = if sphere { FRAC_PI_8 } else { 1.0 };
        let x = random_point_near(&base, radius, &mut rng);
        let chart = Chart::at(&base);
        let theta = chart.coords(&random_point_near(&base, radius, &mut rng)).unwrap();
        let h = point_hessian(&x, &theta, &chart, HESSIAN_STEP).unwrap();
        prop_assert!((&h - h.transpose()).norm() <= 1e-4 * h.norm());
    }

    #[test]
    fn frechet_mean_is_equivariant_and_stationary(seed in any::<u64>(), sphere in any::<bool>()) {
        let mut rng = seeded(seed);
        let (data, a) = if sphere {
            let c = random_sphere_point(3, &mut rng);
            (sample_sphere_uniform_ball(&c, FRAC_PI_8, 40, &mut rng).unwrap(), random_rotation(3, &mut rng))
        } else {
            let c = random_spd(2, &mut rng);
            (sample_spd_tangent_uniform_ball(&c, 1.0, 40, &mut rng).unwrap(), random_invertible(2, &mut rng))
        };
        let tol = 1e-12;
        let sol = frechet_mean(&data, tol, 1000).unwrap();
        let moved_pts: Vec<ManifoldPoint> = data.points().iter().map(|p| p.transform(&a).unwrap()).collect();
        let moved = Dataset::new(moved_pts, data.center().transform(&a).unwrap(), data.radius()).unwrap();
        let moved_sol = frechet_mean(&moved, tol, 1000).unwrap();
        prop_assert!(distance(&moved_sol.mean, &sol.mean.transform(&a).unwrap()).unwrap() <= 1e-8);
        let grad = data
            .points()
            .iter()
            .fold(DMatrix::zeros(sol.mean.coords().nrows(), sol.mean.coords().ncols()), |acc, x| {
                acc + log_map(&sol.mean, x).unwrap().vec()
            });
        prop_assert!(TangentVector::new(&sol.mean, grad).unwrap().norm() <= data.len() as f64 * tol);
    }

    #[test]
    fn frechet_mean_minimizes_frechet_function(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let c = random_sphere_point(3, &mut rng);
        let data = sample_sphere_uniform_ball(&c, FRAC_PI_8, 30, &mut rng).unwrap();
        let sol = frechet_mean(&data, 1e-12, 1000).unwrap();
        for _ in 0..50 {
            let p = random_point_near(&c, FRAC_PI_8, &mut rng);
            prop_assert!(sol.variance <= frechet_function(&data, &p).unwrap() + 1e-9);
        }
    }

    #[test]
    fn equal_split_composes_to_total(mu in 1e-3f64..50.0, k in 1usize..8) {
        let mut budget = PrivacyBudget::new(mu).unwrap();
        let share = budget.equal_share(k);
        for i in 0..k {
            budget.record(format!("release_{i}"), share);
        }
        prop_assert!((budget.composed() - mu).abs() <= 1e-12 * mu.max(1.0));
    }

    #[test]
    fn samplers_are_deterministic_given_seed(seed in any::<u64>(), sigma in 0.01f64..1.0) {
        let c = ManifoldPoint::sphere_from_slice(&[0.0, 0.6, 0.8]).unwrap();
        let a = sample_riemannian_gaussian(&c, sigma, &mut seeded(seed)).unwrap();
        let b = sample_riemannian_gaussian(&c, sigma, &mut seeded(seed)).unwrap();
        prop_assert_eq!(a.coords(), b.coords());
        let m0 = ManifoldPoint::identity(2);
        let center = ManifoldPoint::spd_from_row_slice(2, &[1.2, 0.1, 0.1, 0.9]).unwrap();
        let a = sample_exp_wrapped_gaussian(&m0, &center, sigma, &mut seeded(seed)).unwrap();
        let b = sample_exp_wrapped_gaussian(&m0, &center, sigma, &mut seeded(seed)).unwrap();
        prop_assert_eq!(a.coords(), b.coords());
    }
}

#[test]
fn tangent_frames_are_orthonormal() {
    let mut rng = seeded(17);
    for _ in 0..200 {
        for p in [random_sphere_point(4, &mut rng), random_spd(3, &mut rng)] {
            let g = tangent_frame(&p).gram();
            assert!((g - DMatrix::identity(p.kind().intrinsic_dim(), p.kind().intrinsic_dim())).amax() < 1e-12);
        }
    }
}
