use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::Error;

fn random_input(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Random net with non-zero biases so hidden units are not all aligned at 0.
fn random_net(dims: &[usize], seed: u64) -> Mlp {
    let net = Mlp::new(dims, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    let biases = net
        .biases()
        .iter()
        .map(|b| DVector::from_fn(b.len(), |_, _| rng.random_range(-0.3..0.3)))
        .collect();
    Mlp::from_parts(net.weights().to_vec(), biases).unwrap()
}

fn linear_task(n: usize, seed: u64) -> (DMatrix<f64>, Vec<TrainSample<SquaredError>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = DMatrix::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0));
    let data = (0..n)
        .map(|_| {
            let x = random_input(4, &mut rng);
            let y = &map * DVector::from_column_slice(&x);
            TrainSample {
                input: x,
                loss: SquaredError(y.as_slice().to_vec()),
            }
        })
        .collect();
    (map, data)
}

#[test]
fn zero_weights_output_bias() {
    let w = vec![DMatrix::zeros(5, 3), DMatrix::zeros(2, 5)];
    let b = vec![DVector::from_element(5, 0.7), DVector::from_vec(vec![1.5, -2.0])];
    let net = Mlp::from_parts(w, b).unwrap();
    assert_eq!(net.forward(&[3.0, -1.0, 2.0]).unwrap(), vec![1.5, -2.0]);
}

#[test]
fn identity_layer_passes_input() {
    let net = Mlp::from_parts(vec![DMatrix::identity(3, 3)], vec![DVector::zeros(3)]).unwrap();
    assert_eq!(net.forward(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
}

#[test]
fn hand_computed_two_layer_net() {
    let w1 = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 2.0, 0.5]);
    let b1 = DVector::from_vec(vec![0.5, -1.0]);
    let w2 = DMatrix::from_row_slice(1, 2, &[3.0, -2.0]);
    let b2 = DVector::from_vec(vec![0.25]);
    let net = Mlp::from_parts(vec![w1, w2], vec![b1, b2]).unwrap();
    // x = (1, 2): z1 = (1 − 2 + 0.5, 2 + 1 − 1) = (−0.5, 2) → relu (0, 2)
    // out = 3·0 − 2·2 + 0.25 = −3.75
    assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![-3.75]);
    assert_eq!(net.features(&[1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
    assert_eq!(net.activation_pattern(&[1.0, 2.0]).unwrap(), vec![false, true]);
    assert_eq!(net.kink_margin(&[1.0, 2.0]).unwrap(), 0.5);
}

#[test]
fn dimension_mismatches_are_errors() {
    let net = Mlp::new(&[3, 4, 2], 0).unwrap();
    assert!(matches!(net.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
    assert!(net.param_gradient(&[0.0; 3], &[1.0]).is_err());
    assert_eq!(net.input_jacobian(&[0.1, 0.2, 0.3]).unwrap().shape(), (2, 3));
    assert!(Mlp::new(&[3], 0).is_err());
    assert!(Mlp::from_parts(
        vec![DMatrix::zeros(2, 3), DMatrix::zeros(2, 3)],
        vec![DVector::zeros(2); 2]
    )
    .is_err());
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let net = random_net(&[3, 6, 2], 1);
    let g = net.param_gradient(&[0.1, 0.2, -0.3], &[0.0, 0.0]).unwrap();
    assert_eq!(g, MlpGradient::zeros_like(&net));
}

#[test]
fn linear_layer_weight_gradient_is_input() {
    let net = random_net(&[4, 1], 2);
    let x = [0.3, -1.0, 2.0, 0.5];
    let g = net.param_gradient(&x, &[1.0]).unwrap();
    assert_eq!(g.weights[0].as_slice(), &x);
    assert_eq!(g.biases[0][0], 1.0);
}

#[test]
fn linear_net_jacobian_is_weight_product() {
    let w1 = DMatrix::from_fn(3, 4, |i, j| (i as f64 + 1.0) * 0.1 - j as f64 * 0.2);
    let w2 = DMatrix::from_fn(2, 3, |i, j| 0.5 - (i * j) as f64 * 0.3);
    let net = Mlp::from_parts(vec![w1.clone()], vec![DVector::zeros(3)]).unwrap();
    assert_eq!(net.input_jacobian(&[0.0; 4]).unwrap(), w1);
    // a ReLU net whose hidden units are all active is linear locally
    let deep = Mlp::from_parts(
        vec![w1.clone(), w2.clone()],
        vec![DVector::from_element(3, 100.0), DVector::zeros(2)],
    )
    .unwrap();
    let j = deep.input_jacobian(&[0.1, 0.2, 0.3, 0.4]).unwrap();
    assert!((j - &w2 * &w1).norm() < 1e-14);
}

#[test]
fn input_vjp_matches_jacobian_transpose() {
    let net = random_net(&[5, 8, 7, 3], 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_input(5, &mut rng);
    let u = random_input(3, &mut rng);
    let vjp = net.input_vjp(&x, &u).unwrap();
    let dense = net.input_jacobian(&x).unwrap().tr_mul(&DVector::from_column_slice(&u));
    for (a, b) in vjp.iter().zip(dense.iter()) {
        assert!((a - b).abs() < 1e-13);
    }
}

#[test]
fn checkpoint_round_trip() {
    let net = random_net(&[3, 5, 2], 4);
    let ck = net.to_checkpoint(Some(Normalizer::identity(3)), None, 4);
    let text = serde_json::to_string(&ck).unwrap();
    let back: MlpCheckpoint = serde_json::from_str(&text).unwrap();
    assert_eq!(back.to_mlp().unwrap(), net);
    // row-major weights
    assert_eq!(ck.weights[0][1], net.weights()[0][(0, 1)]);
    let mut bad = ck.clone();
    bad.weights[1].pop();
    assert!(bad.to_mlp().is_err());
}

#[test]
fn normalizers_invert() {
    let rows = [vec![1.0, 10.0, 5.0], vec![3.0, 30.0, 5.0], vec![2.0, 20.0, 5.0]];
    let slices = || rows.iter().map(Vec::as_slice);
    for norm in [
        Normalizer::standardize(slices()).unwrap(),
        Normalizer::pooled_rms(slices()).unwrap(),
        Normalizer::centered_pooled(slices()).unwrap(),
    ] {
        for r in &rows {
            let back = norm.denormalize(&norm.normalize(r));
            for (a, b) in back.iter().zip(r) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
    let s = Normalizer::standardize(slices()).unwrap();
    assert_eq!(s.shift, vec![2.0, 20.0, 5.0]);
    // constant feature keeps unit scale
    assert_eq!(s.scale[2], 1.0);
    assert!(Normalizer::standardize(std::iter::empty()).is_err());
}

#[test]
fn learns_linear_map() {
    let (_, data) = linear_task(512, 5);
    let (_, held) = linear_task(64, 5);
    let init = Mlp::new(&[4, 2], 5).unwrap();
    let trained = train(&init, &data, &TrainConfig::default()).unwrap();
    assert!(trained.history.len() <= 150);
    let idx: Vec<usize> = (0..held.len()).collect();
    let mse = mean_loss(&trained.params, &held, &idx);
    assert!(mse < 1e-6, "held-out mse {mse}");
}

#[test]
fn linear_task_loss_is_monotone() {
    let (_, data) = linear_task(256, 6);
    let init = Mlp::new(&[4, 2], 6).unwrap();
    let cfg = TrainConfig {
        max_epochs: 60,
        ..TrainConfig::default()
    };
    let trained = train(&init, &data, &cfg).unwrap();
    for w in trained.history.windows(2) {
        assert!(w[1].train <= w[0].train, "{:?}", w);
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (_, data) = linear_task(40, 7);
    let init = Mlp::new(&[4, 6, 2], 7).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        max_epochs: 3,
        ..TrainConfig::default()
    };
    assert_eq!(train(&init, &data, &cfg).unwrap().params, init);
}

#[test]
fn training_is_deterministic() {
    let (_, data) = linear_task(100, 8);
    let init = Mlp::new(&[4, 8, 2], 8).unwrap();
    let cfg = TrainConfig {
        max_epochs: 10,
        validation_fraction: 0.2,
        seed: 3,
        ..TrainConfig::default()
    };
    let a = train(&init, &data, &cfg).unwrap();
    let b = train(&init, &data, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    let bits = |h: &[EpochLoss]| {
        h.iter()
            .map(|e| (e.train.to_bits(), e.validation.map(f64::to_bits)))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a.history), bits(&b.history));
    assert!(a.history.iter().all(|e| e.validation.is_some()));
}

#[test]
fn divergence_is_reported() {
    // unbounded below, and undefined past a blow-up point
    struct Exploding;
    impl SampleLoss for Exploding {
        fn evaluate(&self, output: &[f64]) -> (f64, Vec<f64>) {
            let o = output[0];
            (if o < 10.0 { -o } else { f64::NAN }, vec![-1.0])
        }
    }
    let data: Vec<TrainSample<Exploding>> = (0..8)
        .map(|_| TrainSample {
            input: vec![1.0],
            loss: Exploding,
        })
        .collect();
    let init = Mlp::new(&[1, 1], 0).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1.0,
        max_epochs: 100,
        ..TrainConfig::default()
    };
    match train(&init, &data, &cfg) {
        Err(Error::Divergence { last_finite, .. }) => assert!(last_finite.is_finite()),
        other => panic!("expected divergence, got {:?}", other.map(|t| t.history.len())),
    }
}

#[test]
fn training_rejects_bad_config() {
    let (_, data) = linear_task(10, 9);
    let init = Mlp::new(&[4, 2], 9).unwrap();
    let bad = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(train(&init, &data, &bad).is_err());
    assert!(train::<SquaredError>(&init, &[], &TrainConfig::default()).is_err());
}

#[test]
fn output_refit_solves_least_squares_exactly() {
    // targets linear in the hidden features → exact fit with tiny ridge
    let net = random_net(&[3, 10, 2], 10);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let truth_w = DMatrix::from_fn(2, 10, |_, _| rng.random_range(-1.0..1.0));
    let truth_b = DVector::from_vec(vec![0.3, -0.7]);
    let data: Vec<TrainSample<SquaredError>> = (0..200)
        .map(|_| {
            let x = random_input(3, &mut rng);
            let h = DVector::from_vec(net.features(&x).unwrap());
            let y = &truth_w * h + &truth_b;
            TrainSample {
                input: x,
                loss: SquaredError(y.as_slice().to_vec()),
            }
        })
        .collect();
    let idx: Vec<usize> = (0..data.len()).collect();
    let refit = refit_output_layer(&net, &data, 1e-12).unwrap();
    assert!(mean_loss(&refit, &data, &idx) < 1e-12);
    assert_eq!(refit.weights()[0], net.weights()[0]);
    let chosen = select_output_refit(&net, &data, &RefitConfig::default()).unwrap();
    assert!(chosen.ridge.is_some());
    assert!(mean_loss(&chosen.params, &data, &idx) < 1e-10);
}

#[test]
fn refit_keeps_network_when_nothing_improves() {
    let (_, data) = linear_task(60, 11);
    let init = Mlp::new(&[4, 2], 11).unwrap();
    // a linear net is already optimal after its own exact refit
    let exact = refit_output_layer(&init, &data, 0.0).unwrap();
    let idx: Vec<usize> = (0..data.len()).collect();
    assert!(mean_loss(&exact, &data, &idx) < 1e-20);
    let again = select_output_refit(&exact, &data, &RefitConfig::default()).unwrap();
    assert!(mean_loss(&again.params, &data, &idx) <= 1e-20);
}

fn fd_check(net: &Mlp, x: &[f64], u: &[f64]) -> f64 {
    let analytic = net.param_gradient(x, u).unwrap();
    let h = 1e-6;
    let objective = |m: &Mlp| -> f64 { m.forward(x).unwrap().iter().zip(u).map(|(a, b)| a * b).sum() };
    let mut worst: f64 = 0.0;
    let mut flat_a = Vec::new();
    for s in analytic
        .weights
        .iter()
        .map(|w| w.as_slice())
        .chain(analytic.biases.iter().map(|b| b.as_slice()))
    {
        flat_a.extend_from_slice(s);
    }
    let n_params = flat_a.len();
    let mut fd = Vec::with_capacity(n_params);
    for k in 0..n_params {
        let perturbed = |s: f64| {
            let mut m = net.clone();
            let mut left = k;
            for p in m.params_mut() {
                if left < p.len() {
                    p[left] += s;
                    break;
                }
                left -= p.len();
            }
            m
        };
        fd.push((objective(&perturbed(h)) - objective(&perturbed(-h))) / (2.0 * h));
    }
    let norm = flat_a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for (a, f) in flat_a.iter().zip(&fd) {
        worst = worst.max((a - f).abs() / norm.max(1e-12));
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn param_gradient_matches_fd(seed in 0u64..10_000) {
        let net = random_net(&[3, 5, 4, 2], seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_input(3, &mut rng);
        prop_assume!(net.kink_margin(&x).unwrap() > 1e-4);
        let u = random_input(2, &mut rng);
        prop_assert!(fd_check(&net, &x, &u) < 1e-5);
    }

    #[test]
    fn input_jacobian_matches_fd(seed in 0u64..10_000) {
        let net = random_net(&[4, 9, 6, 3], seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_input(4, &mut rng);
        let h = 1e-6;
        // stay inside one linear region
        prop_assume!(net.kink_margin(&x).unwrap() > 1e-3);
        let j = net.input_jacobian(&x).unwrap();
        let mut fd = DMatrix::zeros(3, 4);
        for k in 0..4 {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[k] += h;
            lo[k] -= h;
            prop_assert_eq!(net.activation_pattern(&hi).unwrap(), net.activation_pattern(&x).unwrap());
            let d: Vec<f64> = net.forward(&hi).unwrap().iter().zip(net.forward(&lo).unwrap()).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            fd.column_mut(k).copy_from_slice(&d);
        }
        prop_assert!((&fd - &j).norm() <= 1e-6 * j.norm().max(1e-12));
    }

    #[test]
    fn batched_and_single_forward_agree(seed in 0u64..10_000) {
        let net = random_net(&[3, 7, 2], seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| random_input(3, &mut rng)).collect();
        let data: Vec<TrainSample<SquaredError>> = xs
            .iter()
            .map(|x| TrainSample { input: x.clone(), loss: SquaredError(vec![0.0, 0.0]) })
            .collect();
        let idx: Vec<usize> = (0..5).collect();
        let direct: f64 = xs
            .iter()
            .map(|x| net.forward(x).unwrap().iter().map(|o| o * o).sum::<f64>() / 2.0)
            .sum::<f64>() / 5.0;
        prop_assert!((mean_loss(&net, &data, &idx) - direct).abs() < 1e-12 * direct.max(1.0));
    }
}
