//! Invariants of normalization, optimization and the network container.

mod common;

use bnscope::nn::{
    generalized_norm, BatchNormLayer, BnSettings, BnToggles, Grouping, LrSchedule, Mode, Network, NetworkConfig,
    NormPlacement, ParamRole, SgdState,
};
use bnscope::{SeededRng, Tensor};
use common::{random_batch, random_tensor};
use proptest::prelude::*;

/// Population mean and variance of channel `c`, two-pass.
fn channel_stats(x: &Tensor, c: usize) -> (f64, f64) {
    let (b, ch, h, w) = x.dims4().unwrap();
    let vals: Vec<f64> = (0..b)
        .flat_map(|n| x.data()[(n * ch + c) * h * w..(n * ch + c + 1) * h * w].iter().copied())
        .collect();
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    (m, vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64)
}

fn activations() -> impl Strategy<Value = Tensor> {
    (1usize..5, 1usize..4, 1usize..4, 1usize..4, 0.05f64..20.0, -5.0f64..5.0, any::<u64>())
        .prop_filter("at least 8 values per channel", |(b, _, h, w, ..)| b * h * w >= 8)
        .prop_map(|(b, c, h, w, scale, shift, seed)| {
            random_tensor(&[b, c, h, w], &mut SeededRng::new(seed, 0)).map(|v| scale * v + shift)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn batch_norm_standardizes_each_channel(x in activations()) {
        let c = x.shape()[1];
        let mut layer = BatchNormLayer::new(c, BnSettings::default()).unwrap();
        let (y, _) = layer.forward_train(&x).unwrap();
        for ch in 0..c {
            let (_, var) = channel_stats(&x, ch);
            prop_assume!(var > 1e-3);
            let (m, v) = channel_stats(&y, ch);
            prop_assert!(m.abs() < 1e-10, "mean {m}");
            prop_assert!((v - var / (var + 1e-5)).abs() < 1e-6, "var {v} for σ² {var}");
        }
    }

    #[test]
    fn all_toggles_off_is_bitwise_identity(x in activations()) {
        let settings = BnSettings { toggles: BnToggles::none(), ..BnSettings::default() };
        let mut layer = BatchNormLayer::new(x.shape()[1], settings).unwrap();
        layer.gamma = layer.gamma.map(|_| 3.0);
        layer.beta = layer.beta.map(|_| -1.0);
        let (y, _) = layer.forward_train(&x).unwrap();
        prop_assert_eq!(y.data(), x.data());
    }

    #[test]
    fn batch_grouping_equals_batch_norm_bitwise(x in activations(), g in -2.0f64..2.0, b in -2.0f64..2.0) {
        let c = x.shape()[1];
        let mut layer = BatchNormLayer::new(c, BnSettings::default()).unwrap();
        layer.gamma = Tensor::full(&[c], g).unwrap();
        layer.beta = Tensor::full(&[c], b).unwrap();
        let (bn, _) = layer.forward_train(&x).unwrap();
        let (gn, _) = generalized_norm(&x, Grouping::Batch, &layer.gamma, &layer.beta, 1e-5).unwrap();
        prop_assert_eq!(bn.data(), gn.data());
    }

    #[test]
    fn alternating_batches_reuse_previous_statistics(seed in any::<u64>(), rounds in 2usize..6) {
        let mut rng = SeededRng::new(seed, 0);
        let settings = BnSettings { stat_update_period: 2, ..BnSettings::default() };
        let mut layer = BatchNormLayer::new(2, settings).unwrap();
        for _ in 0..rounds {
            let (_, even) = layer.forward_train(&random_tensor(&[3, 2, 2, 2], &mut rng)).unwrap();
            prop_assert!(even.fresh());
            let (_, odd) = layer.forward_train(&random_tensor(&[3, 2, 2, 2], &mut rng)).unwrap();
            prop_assert!(!odd.fresh());
            prop_assert_eq!(even.stats(), odd.stats());
        }
    }

    #[test]
    fn plain_gradient_descent_is_exact(p in prop::collection::vec(-10.0f64..10.0, 1..20), lr in 1e-4f64..1.0, seed in any::<u64>()) {
        let g = random_tensor(&[p.len()], &mut SeededRng::new(seed, 0));
        let mut param = Tensor::new(&[p.len()], p.clone()).unwrap();
        let mut sgd = SgdState::new(lr, 0.0, 0.0, LrSchedule::constant()).unwrap();
        sgd.step(&mut [&mut param], &[g.clone()], &[true], 0.0).unwrap();
        for ((after, before), gv) in param.data().iter().zip(&p).zip(g.data()) {
            prop_assert_eq!(*after, before - lr * gv);
        }
    }

    #[test]
    fn layer_norm_standardizes_each_example(x in activations()) {
        let c = x.shape()[1];
        let (y, _) = generalized_norm(&x, Grouping::Layer, &Tensor::full(&[c], 1.0).unwrap(), &Tensor::zeros(&[c]).unwrap(), 1e-5).unwrap();
        let per = x.len() / x.shape()[0];
        for (xs, ys) in x.data().chunks(per).zip(y.data().chunks(per)) {
            let m = xs.iter().sum::<f64>() / per as f64;
            let var = xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / per as f64;
            prop_assume!(var > 1e-3);
            let ym = ys.iter().sum::<f64>() / per as f64;
            prop_assert!(ym.abs() < 1e-10);
        }
    }
}

#[test]
fn eval_uses_running_statistics() {
    let mut rng = SeededRng::new(30, 0);
    let mut layer = BatchNormLayer::new(2, BnSettings::default()).unwrap();
    let b1 = random_tensor(&[4, 2, 2, 2], &mut rng).map(|v| v + 1.0);
    let b2 = random_tensor(&[4, 2, 2, 2], &mut rng).map(|v| 2.0 * v);
    layer.forward_train(&b1).unwrap();
    layer.forward_train(&b2).unwrap();
    let (rm, rv) = layer.running_stats().unwrap();
    for c in 0..2 {
        let (m1, v1) = channel_stats(&b1, c);
        let (m2, v2) = channel_stats(&b2, c);
        assert!((rm[c] - (0.9 * m1 + 0.1 * m2)).abs() < 1e-14);
        assert!((rv[c] - (0.9 * v1 + 0.1 * v2)).abs() < 1e-14);
    }
    layer.gamma = Tensor::new(&[2], vec![1.5, 0.5]).unwrap();
    layer.beta = Tensor::new(&[2], vec![0.1, -0.2]).unwrap();
    let x = random_tensor(&[1, 2, 2, 2], &mut rng);
    let y = layer.forward_eval(&x).unwrap();
    let (rm, rv) = layer.running_stats().unwrap();
    for (i, (xv, yv)) in x.data().iter().zip(y.data()).enumerate() {
        let c = i / 4;
        let expected = layer.gamma.data()[c] * (xv - rm[c]) / (rv[c] + 1e-5).sqrt() + layer.beta.data()[c];
        assert!((yv - expected).abs() < 1e-14);
    }
}

fn net(placement: NormPlacement) -> (Network, bnscope::nn::Batch) {
    let cfg = NetworkConfig {
        input_shape: [3, 4, 4],
        width: 4,
        depth: 6,
        placement,
        ..NetworkConfig::default()
    };
    let mut rng = SeededRng::new(31, 0);
    let n = Network::new(&cfg, &mut rng).unwrap();
    let batch = random_batch(6, cfg.input_shape, cfg.class_count, &mut rng);
    (n, batch)
}

#[test]
fn inspect_mode_leaves_normalization_state_alone() {
    let (mut n, batch) = net(NormPlacement::PerLayer);
    n.forward(&batch.inputs, Mode::Train).unwrap();
    let before: Vec<_> = (0..n.unit_count())
        .map(|k| n.batch_norm(k).map(|b| (b.running_stats().map(|(m, v)| (m.to_vec(), v.to_vec())), b.batch_counter())))
        .collect();
    let a = n.loss(&batch, Mode::Inspect).unwrap();
    let b = n.loss(&batch, Mode::Inspect).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    let after: Vec<_> = (0..n.unit_count())
        .map(|k| n.batch_norm(k).map(|b| (b.running_stats().map(|(m, v)| (m.to_vec(), v.to_vec())), b.batch_counter())))
        .collect();
    assert_eq!(before, after);
}

#[test]
fn only_weights_are_decayed() {
    let (n, _) = net(NormPlacement::PerLayer);
    for info in n.param_info() {
        assert_eq!(info.decay, info.role == ParamRole::Weight, "{}", info.name);
    }
}

#[test]
fn construction_is_deterministic_and_eval_needs_running_stats() {
    let (mut a, batch) = net(NormPlacement::PerLayer);
    let (b, _) = net(NormPlacement::PerLayer);
    assert_eq!(a.param_snapshot(), b.param_snapshot());
    assert!(a.forward(&batch.inputs, Mode::Eval).is_err());
    a.forward(&batch.inputs, Mode::Train).unwrap();
    assert!(a.forward(&batch.inputs, Mode::Eval).unwrap().is_finite());
    let (mut plain, _) = net(NormPlacement::None);
    assert!(plain.forward(&batch.inputs, Mode::Eval).is_ok());
}
