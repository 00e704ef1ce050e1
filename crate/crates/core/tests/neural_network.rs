mod common;

use common::{gradient_check, random_gradcheck_case, reference_forward};
use gsmdet_core::neural::{
    argmax, cross_entropy, init_network, load_weights, save_weights, softmax, train, weights_from_bytes,
    weights_to_bytes, TrainSpec, TrainingSet,
};
use gsmdet_core::{DenseNetwork, Error};
use proptest::prelude::*;

#[test]
fn forward_matches_reference() {
    for seed in 0..20 {
        let (net, z0, _) = random_gradcheck_case(seed);
        let fast = net.forward(&z0).unwrap();
        let slow = reference_forward(&net, &z0);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn forward_matches_reference_on_detector_layout() {
    let net = init_network(&[12, 256, 128, 64, 4], 3).unwrap();
    let z0: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin().abs()).collect();
    let fast = net.forward(&z0).unwrap();
    let slow = reference_forward(&net, &z0);
    for (a, b) in fast.iter().zip(&slow) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn gradients_match_finite_differences() {
    let (net, z0, target) = random_gradcheck_case(1234);
    let worst = gradient_check(&net, &z0, &target, 50, 1);
    assert!(worst <= 1e-5, "relative error {worst}");
}

#[test]
fn output_delta_is_probability_minus_target() {
    let (net, z0, target) = random_gradcheck_case(5);
    let grads = gsmdet_core::neural::backprop_gradients(&net, &z0, &target).unwrap();
    let p = net.forward(&z0).unwrap();
    for ((d, pi), ti) in grads.output_delta.iter().zip(&p).zip(&target) {
        assert!((d - (pi - ti)).abs() < 1e-15);
    }
}

#[test]
fn init_bounds_and_zero_bias() {
    let net = init_network(&[10, 30, 4], 9).unwrap();
    for layer in net.layers() {
        let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
        assert!(layer.weights.iter().all(|w| w.abs() <= limit));
        assert!(layer.bias.iter().all(|b| *b == 0.0));
    }
    assert_eq!(net, init_network(&[10, 30, 4], 9).unwrap());
    assert_ne!(net, init_network(&[10, 30, 4], 10).unwrap());
}

#[test]
fn cross_entropy_random_examples() {
    let p = [0.7, 0.2, 0.1];
    assert!((cross_entropy(&[1.0, 0.0, 0.0], &p) + 0.7f64.ln()).abs() < 1e-15);
    assert!((cross_entropy(&[0.0, 0.0, 1.0], &p) + 0.1f64.ln()).abs() < 1e-15);
    // Clamped at eps.
    assert!((cross_entropy(&[0.0, 1.0], &[1.0, 0.0]) + 1e-12f64.ln()).abs() < 1e-12);
}

#[test]
fn weight_file_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.bdnn");
    let net = init_network(&[12, 16, 8, 4], 77).unwrap();
    save_weights(&net, &path).unwrap();
    let back = load_weights(&path).unwrap();
    assert_eq!(net, back);
    let z0 = vec![0.25; 12];
    assert_eq!(net.forward(&z0).unwrap(), back.forward(&z0).unwrap());
}

#[test]
fn weight_file_rejects_damage() {
    let net = init_network(&[3, 4, 2], 1).unwrap();
    let bytes = weights_to_bytes(&net);
    let mut flipped = bytes.clone();
    flipped[20] ^= 0x01;
    assert!(matches!(weights_from_bytes(&flipped), Err(Error::CorruptFile(_))));
    assert!(matches!(weights_from_bytes(&bytes[..bytes.len() - 3]), Err(Error::CorruptFile(_))));
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(weights_from_bytes(&version), Err(Error::VersionMismatch { found: 9, .. })));
    assert!(matches!(load_weights("/nonexistent/dir/net.bdnn"), Err(Error::Io { .. })));
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    // Two Gaussian blobs in 4-D.
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..400 {
        let c = i % 2;
        for d in 0..4 {
            let jitter = ((i * 7 + d * 13) % 17) as f64 / 17.0 - 0.5;
            inputs.push(if c == 0 { 1.0 } else { -1.0 } * (d as f64 + 1.0) * 0.3 + jitter * 0.2);
        }
        labels.push(c);
    }
    let data = TrainingSet::new(4, 2, inputs, labels).unwrap();
    let spec = TrainSpec {
        learning_rate: 0.05,
        epochs: 10,
        batch_size: 16,
        seed: 3,
        validation_fraction: 0.25,
    };
    let a = train(init_network(&[4, 8, 2], 1).unwrap(), &data, &spec).unwrap();
    let b = train(init_network(&[4, 8, 2], 1).unwrap(), &data, &spec).unwrap();
    assert_eq!(a.network, b.network);
    let h = &a.history;
    assert_eq!(h.len(), 10);
    assert!(h.last().unwrap().train_loss < h[0].train_loss);
    assert!(h.last().unwrap().val_accuracy.unwrap() > 0.95);
}

#[test]
fn rejects_bad_training_specs() {
    let data = TrainingSet::new(1, 2, vec![0.0, 1.0], vec![0, 1]).unwrap();
    let net = || init_network(&[1, 2], 0).unwrap();
    for spec in [
        TrainSpec { epochs: 0, ..TrainSpec::default() },
        TrainSpec { batch_size: 0, ..TrainSpec::default() },
        TrainSpec { learning_rate: -0.1, ..TrainSpec::default() },
        TrainSpec { learning_rate: 1.0, ..TrainSpec::default() },
    ] {
        assert!(train(net(), &data, &spec).is_err(), "{spec:?}");
    }
    assert!(init_network(&[3], 0).is_err());
    assert!(DenseNetwork::zeros(&[2, 0, 2]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn gradient_check_random_networks(seed in any::<u64>()) {
        let (net, z0, target) = random_gradcheck_case(seed);
        let worst = gradient_check(&net, &z0, &target, 50, seed);
        prop_assert!(worst <= 1e-5, "relative error {}", worst);
    }
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(v in proptest::collection::vec(-1e3f64..1e3, 1..32)) {
        let p = softmax(&v);
        prop_assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(argmax(&p), argmax(&v));
    }

    #[test]
    fn softmax_shift_invariant(v in proptest::collection::vec(-50f64..50.0, 2..16), c in -500f64..500.0) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        for (a, b) in softmax(&v).iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
