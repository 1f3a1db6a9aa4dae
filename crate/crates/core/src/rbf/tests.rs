use std::time::Instant;

use nalgebra::{DVector, Matrix3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::{Error, Vec3};

/// Marker-like layout: points scattered over a curved torso-sized patch.
fn centers(n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (x, y) = (rng.random_range(-200.0..200.0), rng.random_range(-300.0..300.0));
            Vec3::new(x, y, 80.0 + 40.0 * (x / 150.0).cos() + rng.random_range(-10.0..10.0))
        })
        .collect()
}

fn random_coeffs(n: usize, rng: &mut ChaCha8Rng) -> WarpCoefficients {
    let mut v = || rng.random_range(-1.0..1.0);
    WarpCoefficients {
        alpha0: Vec3::new(v() * 5.0, v() * 5.0, v() * 5.0),
        a: Matrix3::identity() + Matrix3::from_fn(|_, _| 0.05 * v()),
        betas: (0..n).map(|_| Vec3::new(v() * 3.0, v() * 3.0, v() * 3.0)).collect(),
    }
}

fn bbox_diagonal(pts: &[Vec3]) -> f64 {
    let lo = pts.iter().fold(Vec3::repeat(f64::INFINITY), |a, p| a.inf(p));
    let hi = pts.iter().fold(Vec3::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
    (hi - lo).norm()
}

fn rel(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

#[test]
fn identity_coefficients_give_identity() {
    let k = KernelSet::new(centers(10, 0), DEFAULT_KERNEL_WIDTH).unwrap();
    let g = WarpCoefficients::identity(10);
    for p in centers(20, 1) {
        assert_eq!(warp(&p, &k, &g), p);
    }
}

#[test]
fn kernel_at_its_center_adds_beta() {
    let mut qs = centers(4, 2);
    let p = qs[0];
    // push the others far away so only kernel 0 contributes
    for q in &mut qs[1..] {
        *q += Vec3::new(1e5, 2e5, 3e5);
    }
    let k = KernelSet::new(qs, DEFAULT_KERNEL_WIDTH).unwrap();
    let mut g = WarpCoefficients::identity(4);
    g.betas[0] = Vec3::x();
    assert!((warp(&p, &k, &g) - (p + Vec3::x())).norm() < 1e-12);
}

#[test]
fn kernel_weight_at_100mm() {
    let k = KernelSet::new(centers(5, 3), 3.0e-5).unwrap();
    let q = k.centers()[0];
    let w = k.kernel_values(&(q + Vec3::new(60.0, 80.0, 0.0)))[0];
    assert!((w - (-0.3f64).exp()).abs() < 1e-15);
    assert!((w - 0.740818).abs() < 1e-6);
}

#[test]
fn kernel_set_validation() {
    assert!(KernelSet::new(centers(3, 0), 1e-5).is_err());
    assert!(KernelSet::new(centers(6, 0), 0.0).is_err());
    let planar: Vec<Vec3> = centers(8, 0).iter().map(|p| Vec3::new(p.x, p.y, 0.0)).collect();
    assert!(KernelSet::new(planar, 1e-5).is_err());
}

#[test]
fn solve_reproduces_identity_and_translation() {
    let qs = centers(34, 4);
    let k = KernelSet::new(qs.clone(), DEFAULT_KERNEL_WIDTH).unwrap();
    let g = solve(&k, &qs).unwrap();
    assert!(g.alpha0.norm() < 1e-8);
    assert!((g.a - Matrix3::identity()).norm() < 1e-8);
    assert!(g.betas.iter().all(|b| b.norm() < 1e-8));

    let t0 = Vec3::new(3.0, -1.5, 7.25);
    let shifted: Vec<Vec3> = qs.iter().map(|q| q + t0).collect();
    let g = solve(&k, &shifted).unwrap();
    assert!((g.alpha0 - t0).norm() < 1e-8);
    assert!((g.a - Matrix3::identity()).norm() < 1e-8);
    assert!(g.betas.iter().all(|b| b.norm() < 1e-8));
}

#[test]
fn solve_interpolates_smooth_targets() {
    let qs = centers(34, 5);
    let k = KernelSet::new(qs.clone(), DEFAULT_KERNEL_WIDTH).unwrap();
    let targets: Vec<Vec3> = qs
        .iter()
        .map(|q| {
            q + Vec3::new(
                (q.x / 90.0).sin() * 3.0,
                (q.y / 120.0).cos() * 2.0,
                (q.x * q.y / 3e4).tanh(),
            )
        })
        .collect();
    let started = Instant::now();
    let g = solve(&k, &targets).unwrap();
    assert!(started.elapsed().as_millis() < 10);
    let scale = bbox_diagonal(&qs);
    for (q, t) in qs.iter().zip(&targets) {
        assert!((warp(q, &k, &g) - t).norm() < 1e-8 * scale);
    }
    // side conditions
    let sum: Vec3 = g.betas.iter().sum();
    assert!(sum.norm() < 1e-6);
    let moment: Matrix3<f64> = g.betas.iter().zip(&qs).map(|(b, q)| b * q.transpose()).sum();
    assert!(moment.norm() < 1e-6 * scale);
}

#[test]
fn solve_rejects_mismatched_targets() {
    let k = KernelSet::new(centers(6, 6), DEFAULT_KERNEL_WIDTH).unwrap();
    assert!(matches!(
        solve(&k, &centers(5, 0)),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn solve_rejects_near_duplicate_centers() {
    let mut qs = centers(10, 7);
    qs[1] = qs[0] + Vec3::new(1e-7, 0.0, 0.0);
    let k = KernelSet::new(qs.clone(), DEFAULT_KERNEL_WIDTH).unwrap();
    assert!(matches!(solve(&k, &qs), Err(Error::DegenerateKernels(_))));
}

#[test]
fn zero_betas_give_pure_affine_gradients() {
    let k = KernelSet::new(centers(8, 8), DEFAULT_KERNEL_WIDTH).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut g = random_coeffs(8, &mut rng);
    g.betas.iter_mut().for_each(|b| *b = Vec3::zeros());
    let p = Vec3::new(10.0, 20.0, 30.0);
    assert_eq!(grad_query(&p, &k, &g), g.a);
    assert_eq!(grad_centers(&p, &k, &g).norm(), 0.0);
}

#[test]
fn center_kernel_is_stationary() {
    let mut qs = centers(4, 9);
    for q in &mut qs[1..] {
        *q += Vec3::new(1e5, 0.0, 1e5);
    }
    let k = KernelSet::new(qs.clone(), DEFAULT_KERNEL_WIDTH).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = random_coeffs(4, &mut rng);
    assert!((grad_query(&qs[0], &k, &g) - g.a).norm() < 1e-15);
}

#[test]
fn center_gradient_is_negated_query_radial_part() {
    let qs = centers(12, 10);
    let k = KernelSet::new(qs, 1e-4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let g = random_coeffs(12, &mut rng);
    let p = Vec3::new(15.0, -40.0, 90.0);
    let radial = grad_query(&p, &k, &g) - g.a;
    let total: Matrix3<f64> = (0..12).map(|i| grad_center_block(&p, &k, &g, i)).sum();
    assert!((total + radial).norm() < 1e-14 * radial.norm().max(1.0));
    // per-kernel: isolate kernel i by zeroing the other betas
    for i in 0..12 {
        let mut gi = g.clone();
        for (j, b) in gi.betas.iter_mut().enumerate() {
            if j != i {
                *b = Vec3::zeros();
            }
        }
        let radial_i = grad_query(&p, &k, &gi) - gi.a;
        assert!((grad_center_block(&p, &k, &g, i) + radial_i).norm() < 1e-15);
    }
}

#[test]
fn coefficient_gradient_layout() {
    let k = KernelSet::new(centers(5, 11), DEFAULT_KERNEL_WIDTH).unwrap();
    let j = grad_coeffs(&Vec3::zeros(), &k);
    assert_eq!(j.ncols(), 27);
    let affine = j.columns(0, 12);
    for d in 0..3 {
        for c in 0..12 {
            assert_eq!(affine[(d, c)], if c == d { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn transpose_product_matches_dense_gradient() {
    let k = KernelSet::new(centers(9, 12), DEFAULT_KERNEL_WIDTH).unwrap();
    let p = Vec3::new(-30.0, 55.0, 100.0);
    let r = Vec3::new(0.3, -1.2, 2.0);
    let mut out = vec![0.0; WarpCoefficients::flat_len(9)];
    grad_coeffs_transpose_mul(&p, &k, &r, &mut out);
    let dense = grad_coeffs(&p, &k).tr_mul(&DVector::from_column_slice(r.as_slice()));
    for (a, b) in out.iter().zip(dense.iter()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn coefficients_json_is_flat_array() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g = random_coeffs(34, &mut rng);
    let text = g.to_json().unwrap();
    let flat: Vec<f64> = serde_json::from_str(&text).unwrap();
    assert_eq!(flat.len(), 3 * 38);
    assert_eq!(&flat[3..6], g.a.column(0).as_slice());
    assert_eq!(WarpCoefficients::from_json(&text).unwrap(), g);
    assert!(WarpCoefficients::from_flat(&[0.0; 13]).is_err());
    assert!(WarpCoefficients::from_json("[1,2,3,4,5,6,7,8,9,10,11]").is_err());
}

fn fd_query(p: &Vec3, k: &KernelSet, g: &WarpCoefficients, h: f64) -> nalgebra::DMatrix<f64> {
    let mut out = nalgebra::DMatrix::zeros(3, 3);
    for c in 0..3 {
        let mut e = Vec3::zeros();
        e[c] = h;
        let d = (warp(&(p + e), k, g) - warp(&(p - e), k, g)) / (2.0 * h);
        out.column_mut(c).copy_from(&d);
    }
    out
}

fn fd_centers(p: &Vec3, k: &KernelSet, g: &WarpCoefficients, h: f64) -> nalgebra::DMatrix<f64> {
    let n = k.len();
    let mut out = nalgebra::DMatrix::zeros(3, 3 * n);
    for i in 0..n {
        for c in 0..3 {
            let shifted = |s: f64| {
                let mut qs = k.centers().to_vec();
                qs[i][c] += s;
                let k = KernelSet::new(qs, k.width()).unwrap();
                warp(p, &k, g)
            };
            let d = (shifted(h) - shifted(-h)) / (2.0 * h);
            out.column_mut(3 * i + c).copy_from(&d);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn affine_targets_give_zero_betas(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qs = centers(34, seed);
        let m = Matrix3::identity() + Matrix3::from_fn(|_, _| rng.random_range(-0.2..0.2));
        let b = Vec3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        let targets: Vec<Vec3> = qs.iter().map(|q| m * q + b).collect();
        let k = KernelSet::new(qs, DEFAULT_KERNEL_WIDTH).unwrap();
        let g = solve(&k, &targets).unwrap();
        prop_assert!(g.betas.iter().all(|beta| beta.norm() < 1e-7));
        let p = Vec3::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0));
        prop_assert!((warp(&p, &k, &g) - (m * p + b)).norm() < 1e-6);
    }

    #[test]
    fn interpolation_is_exact(seed in 0u64..1000, n in 4usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qs = centers(n, seed);
        let targets: Vec<Vec3> = qs
            .iter()
            .map(|q| q + Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
            .collect();
        let k = KernelSet::new(qs.clone(), DEFAULT_KERNEL_WIDTH).unwrap();
        let Ok(g) = solve(&k, &targets) else { return Ok(()) };
        let scale = bbox_diagonal(&qs);
        for (q, t) in qs.iter().zip(&targets) {
            prop_assert!((warp(q, &k, &g) - t).norm() < 1e-8 * scale);
        }
    }

    #[test]
    fn query_gradient_matches_fd(seed in 0u64..1000, c in 1e-5f64..1e-3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = KernelSet::new(centers(10, seed), c).unwrap();
        let g = random_coeffs(10, &mut rng);
        let p = k.centers()[0] + Vec3::new(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0));
        let analytic = nalgebra::DMatrix::from_column_slice(3, 3, grad_query(&p, &k, &g).as_slice());
        prop_assert!(rel(&fd_query(&p, &k, &g, 1e-4), &analytic) < 1e-6);
    }

    #[test]
    fn center_gradient_matches_fd(seed in 0u64..1000, c in 1e-5f64..3e-4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = KernelSet::new(centers(8, seed), c).unwrap();
        let g = random_coeffs(8, &mut rng);
        let p = k.centers()[1] + Vec3::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));
        let analytic = grad_centers(&p, &k, &g);
        prop_assume!(analytic.norm() > 1e-3);
        prop_assert!(rel(&fd_centers(&p, &k, &g, 1e-4), &analytic) < 1e-6);
    }

    #[test]
    fn warp_is_linear_in_coefficients(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = KernelSet::new(centers(7, seed), DEFAULT_KERNEL_WIDTH).unwrap();
        let g = random_coeffs(7, &mut rng);
        let p = Vec3::new(rng.random_range(-200.0..200.0), rng.random_range(-200.0..200.0), rng.random_range(0.0..150.0));
        let jac = grad_coeffs(&p, &k);
        let flat = DVector::from_vec(g.flatten());
        let lin = &jac * &flat;
        let w = warp(&p, &k, &g);
        prop_assert!((Vec3::new(lin[0], lin[1], lin[2]) - w).norm() < 1e-10 * w.norm().max(1.0));
        // finite differences along a random direction in γ
        let dir = DVector::from_fn(flat.len(), |_, _| rng.random_range(-1.0..1.0));
        let h = 1e-3;
        let plus = WarpCoefficients::from_flat((&flat + &dir * h).as_slice()).unwrap();
        let minus = WarpCoefficients::from_flat((&flat - &dir * h).as_slice()).unwrap();
        let fd = (warp(&p, &k, &plus) - warp(&p, &k, &minus)) / (2.0 * h);
        let exact = &jac * &dir;
        let exact = Vec3::new(exact[0], exact[1], exact[2]);
        prop_assert!((fd - exact).norm() < 1e-8 * exact.norm().max(1.0));
    }

    #[test]
    fn far_field_is_affine(seed in 0u64..1000, dist in 500.0f64..2000.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = KernelSet::new(centers(10, seed), 1e-4).unwrap();
        let g = random_coeffs(10, &mut rng);
        let dir = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        prop_assume!(dir.norm() > 0.1);
        let p = dir.normalize() * (dist + 400.0);
        let d_min = k.centers().iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min);
        let bound: f64 = g.betas.iter().map(|b| b.norm()).sum::<f64>() * (-k.width() * d_min * d_min).exp();
        let dev = (warp(&p, &k, &g) - (g.alpha0 + g.a * p)).norm();
        prop_assert!(dev <= bound * (1.0 + 1e-12) + 1e-300);
    }
}
