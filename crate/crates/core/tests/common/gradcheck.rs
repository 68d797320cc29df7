//! Central finite-difference checks of every backward pass, collected into
//! a [`Checks`] record so both the unit suite and the acceptance run use them.

use bnscope::nn::{
    generalized_norm, generalized_norm_backward, softmax_xent, Arch, BackwardOptions, BatchNormLayer, BnSettings,
    BnToggles, Dense, Grouping, Mode, Network, NetworkConfig, NormPlacement,
};
use bnscope::tensor::{conv2d_backward, conv2d_forward, matmul, matmul_transpose_b, transpose_a_matmul};
use bnscope::{SeededRng, Tensor};

use super::*;

pub const STANDALONE: f64 = 1e-6;
pub const END_TO_END: f64 = 1e-4;

#[derive(Debug, Default)]
pub struct Checks {
    pub passed: usize,
    pub failures: Vec<String>,
}

impl Checks {
    pub fn check(&mut self, label: &str, analytic: &[f64], numeric: &[f64], rtol: f64) {
        match gradient_mismatch(label, analytic, numeric, rtol) {
            None => self.passed += 1,
            Some(msg) => self.failures.push(msg),
        }
    }

    pub fn require(&mut self, label: &str, ok: bool) {
        if ok {
            self.passed += 1;
        } else {
            self.failures.push(label.to_string());
        }
    }

    pub fn assert_clean(&self) {
        assert!(self.failures.is_empty(), "{}", self.failures.join("\n"));
    }
}

/// Every standalone layer check.
pub fn standalone(c: &mut Checks) {
    matmul_gradients(c);
    dense_gradients(c);
    conv_gradients_on_random_shapes(c);
    batch_norm_gradients_for_every_toggle_combination(c);
    batch_norm_gradient_with_reused_statistics(c);
    generalized_norm_gradients(c);
    softmax_cross_entropy_gradient(c);
}

/// Every depth-6 network check.
pub fn networks(c: &mut Checks) {
    depth_six_residual_network_with_batch_norm(c);
    depth_six_unnormalized_networks(c);
    depth_six_final_only_and_grouped_norms(c);
}

fn with_data(t: &Tensor, x: &[f64]) -> Tensor {
    Tensor::new(t.shape(), x.to_vec()).unwrap()
}

pub fn matmul_gradients(c: &mut Checks) {
    let mut rng = SeededRng::new(1, 0);
    let a = random_tensor(&[3, 4], &mut rng);
    let b = random_tensor(&[4, 2], &mut rng);
    let r = projector(&[3, 2], 1);
    let ga = matmul_transpose_b(&r, &b).unwrap();
    let gb = transpose_a_matmul(&a, &r).unwrap();
    let na = numeric_gradient(|x| dot(&r, &matmul(&with_data(&a, x), &b).unwrap()), a.data());
    let nb = numeric_gradient(|x| dot(&r, &matmul(&a, &with_data(&b, x)).unwrap()), b.data());
    c.check("matmul a", ga.data(), &na, STANDALONE);
    c.check("matmul b", gb.data(), &nb, STANDALONE);
}

pub fn dense_gradients(c: &mut Checks) {
    let mut rng = SeededRng::new(2, 0);
    let layer = Dense::new(random_tensor(&[3, 5], &mut rng), random_tensor(&[3], &mut rng)).unwrap();
    let x = random_tensor(&[4, 5], &mut rng);
    let r = projector(&[4, 3], 2);
    let g = layer.backward(&r, &x).unwrap();
    let nx = numeric_gradient(|v| dot(&r, &layer.forward(&with_data(&x, v)).unwrap()), x.data());
    let nw = numeric_gradient(
        |v| {
            let l = Dense::new(with_data(&layer.weight, v), layer.bias.clone()).unwrap();
            dot(&r, &l.forward(&x).unwrap())
        },
        layer.weight.data(),
    );
    let nb = numeric_gradient(
        |v| {
            let l = Dense::new(layer.weight.clone(), with_data(&layer.bias, v)).unwrap();
            dot(&r, &l.forward(&x).unwrap())
        },
        layer.bias.data(),
    );
    c.check("dense input", g.grad_input.data(), &nx, STANDALONE);
    c.check("dense weight", g.grad_weight.data(), &nw, STANDALONE);
    c.check("dense bias", g.grad_bias.data(), &nb, STANDALONE);
}

pub fn conv_gradients_on_random_shapes(c: &mut Checks) {
    let mut rng = SeededRng::new(3, 0);
    for (b, ci, co, h, w) in [(1, 1, 1, 3, 3), (2, 3, 2, 4, 5), (3, 2, 4, 2, 3), (1, 2, 2, 1, 4)] {
        let x = random_tensor(&[b, ci, h, w], &mut rng);
        let k = random_tensor(&[co, ci, 3, 3], &mut rng);
        let r = projector(&[b, co, h, w], b as u64);
        let g = conv2d_backward(&r, &x, &k).unwrap();
        let nx = numeric_gradient(|v| dot(&r, &conv2d_forward(&with_data(&x, v), &k).unwrap()), x.data());
        let nk = numeric_gradient(|v| dot(&r, &conv2d_forward(&x, &with_data(&k, v)).unwrap()), k.data());
        c.check("conv input", g.grad_input.data(), &nx, STANDALONE);
        c.check("conv kernel", g.grad_kernel.data(), &nk, STANDALONE);
    }
}

fn bn_layer(toggles: BnToggles, period: usize, rng: &mut SeededRng) -> BatchNormLayer {
    let settings = BnSettings {
        toggles,
        stat_update_period: period,
        ..BnSettings::default()
    };
    let mut l = BatchNormLayer::new(3, settings).unwrap();
    l.gamma = random_tensor(&[3], rng).map(|v| 1.0 + 0.5 * v);
    l.beta = random_tensor(&[3], rng);
    l
}

pub fn batch_norm_gradients_for_every_toggle_combination(c: &mut Checks) {
    let mut rng = SeededRng::new(4, 0);
    for toggles in BnToggles::every_combination() {
        let mut layer = bn_layer(toggles, 1, &mut rng);
        let x = random_tensor(&[4, 3, 2, 3], &mut rng).map(|v| 2.0 * v + 0.7);
        let r = projector(x.shape(), 4);
        let (_, cache) = layer.forward_train(&x).unwrap();
        let g = layer.backward(&r, &cache).unwrap();
        let eval = |l: &BatchNormLayer, input: &Tensor| dot(&r, &l.forward_inspect(input).unwrap().0);
        let nx = numeric_gradient(|v| eval(&layer, &with_data(&x, v)), x.data());
        let ng = numeric_gradient(
            |v| {
                let mut l = layer.clone();
                l.gamma = with_data(&layer.gamma, v);
                eval(&l, &x)
            },
            layer.gamma.data(),
        );
        let nb = numeric_gradient(
            |v| {
                let mut l = layer.clone();
                l.beta = with_data(&layer.beta, v);
                eval(&l, &x)
            },
            layer.beta.data(),
        );
        let label = format!("{toggles:?}");
        c.check(&format!("bn input {label}"), g.grad_input.data(), &nx, STANDALONE);
        c.check(&format!("bn gamma {label}"), g.grad_gamma.data(), &ng, STANDALONE);
        c.check(&format!("bn beta {label}"), g.grad_beta.data(), &nb, STANDALONE);
    }
}

pub fn batch_norm_gradient_with_reused_statistics(c: &mut Checks) {
    let mut rng = SeededRng::new(5, 0);
    let mut layer = bn_layer(BnToggles::all(), 2, &mut rng);
    layer.forward_train(&random_tensor(&[4, 3, 2, 2], &mut rng)).unwrap();
    let x = random_tensor(&[4, 3, 2, 2], &mut rng);
    let r = projector(x.shape(), 5);
    let (_, cache) = layer.forward_inspect(&x).unwrap();
    c.require("statistics reused", !cache.fresh());
    let g = layer.backward(&r, &cache).unwrap();
    let nx = numeric_gradient(|v| dot(&r, &layer.forward_inspect(&with_data(&x, v)).unwrap().0), x.data());
    c.check("stale bn input", g.grad_input.data(), &nx, STANDALONE);
}

pub fn generalized_norm_gradients(c: &mut Checks) {
    let mut rng = SeededRng::new(6, 0);
    for grouping in [Grouping::Batch, Grouping::Layer, Grouping::Instance, Grouping::Group(2)] {
        let x = random_tensor(&[3, 4, 2, 3], &mut rng).map(|v| 1.5 * v - 0.3);
        let gamma = random_tensor(&[4], &mut rng).map(|v| 1.0 + 0.3 * v);
        let beta = random_tensor(&[4], &mut rng);
        let r = projector(x.shape(), 6);
        let (_, cache) = generalized_norm(&x, grouping, &gamma, &beta, 1e-5).unwrap();
        let g = generalized_norm_backward(&r, &cache, &gamma).unwrap();
        let f = |x: &Tensor, gm: &Tensor, bt: &Tensor| dot(&r, &generalized_norm(x, grouping, gm, bt, 1e-5).unwrap().0);
        let nx = numeric_gradient(|v| f(&with_data(&x, v), &gamma, &beta), x.data());
        let ng = numeric_gradient(|v| f(&x, &with_data(&gamma, v), &beta), gamma.data());
        let nb = numeric_gradient(|v| f(&x, &gamma, &with_data(&beta, v)), beta.data());
        c.check(&format!("{grouping:?} input"), g.grad_input.data(), &nx, STANDALONE);
        c.check(&format!("{grouping:?} gamma"), g.grad_gamma.data(), &ng, STANDALONE);
        c.check(&format!("{grouping:?} beta"), g.grad_beta.data(), &nb, STANDALONE);
    }
}

pub fn softmax_cross_entropy_gradient(c: &mut Checks) {
    let mut rng = SeededRng::new(7, 0);
    let logits = random_tensor(&[5, 4], &mut rng).scale(3.0);
    let labels = [0, 3, 1, 1, 2];
    let (_, g) = softmax_xent(&logits, &labels).unwrap();
    let n = numeric_gradient(|v| softmax_xent(&with_data(&logits, v), &labels).unwrap().0, logits.data());
    c.check("softmax xent", g.data(), &n, STANDALONE);
}

fn end_to_end(c: &mut Checks, config: &NetworkConfig, seed: u64) {
    let mut rng = SeededRng::new(seed, 0);
    let mut net = Network::new(config, &mut rng).unwrap();
    let batch = random_batch(4, config.input_shape, config.class_count, &mut rng);
    // Move γ, β and biases off their initial values so every path is exercised.
    for p in net.params_mut() {
        if p.rank() == 1 {
            for v in p.data_mut() {
                *v += 0.2 * rng.normal();
            }
        }
    }
    let logits = net.forward(&batch.inputs, Mode::Inspect).unwrap();
    let (_, g) = softmax_xent(&logits, &batch.labels).unwrap();
    let bp = net.backward(&g, &BackwardOptions::default()).unwrap();
    let info = net.param_info();
    let snapshot = net.param_snapshot();
    for (i, p) in snapshot.iter().enumerate() {
        let numeric = numeric_gradient(
            |v| {
                let mut params = snapshot.clone();
                params[i] = with_data(p, v);
                net.restore_params(&params).unwrap();
                net.loss(&batch, Mode::Inspect).unwrap()
            },
            p.data(),
        );
        c.check(
            &format!("{:?} {}", config.arch, info[i].name),
            bp.grads[i].data(),
            &numeric,
            END_TO_END,
        );
    }
    net.restore_params(&snapshot).unwrap();
    let nx = numeric_gradient(
        |v| {
            let b = bnscope::nn::Batch::new(with_data(&batch.inputs, v), batch.labels.clone()).unwrap();
            net.loss(&b, Mode::Inspect).unwrap()
        },
        batch.inputs.data(),
    );
    c.check("network input", bp.grad_input.data(), &nx, END_TO_END);
}

fn small(arch: Arch, placement: NormPlacement, norm: Grouping) -> NetworkConfig {
    NetworkConfig {
        arch,
        input_shape: [2, 4, 4],
        width: 4,
        depth: 6,
        class_count: 3,
        placement,
        norm,
        ..NetworkConfig::default()
    }
}

pub fn depth_six_residual_network_with_batch_norm(c: &mut Checks) {
    end_to_end(c, &small(Arch::Resnet, NormPlacement::PerLayer, Grouping::Batch), 10);
}

pub fn depth_six_unnormalized_networks(c: &mut Checks) {
    end_to_end(c, &small(Arch::Resnet, NormPlacement::None, Grouping::Batch), 11);
    end_to_end(c, &small(Arch::Conv, NormPlacement::None, Grouping::Batch), 12);
}

pub fn depth_six_final_only_and_grouped_norms(c: &mut Checks) {
    end_to_end(c, &small(Arch::Resnet, NormPlacement::FinalOnly, Grouping::Batch), 13);
    end_to_end(c, &small(Arch::Conv, NormPlacement::PerLayer, Grouping::Group(2)), 14);
    end_to_end(c, &small(Arch::Dense, NormPlacement::PerLayer, Grouping::Layer), 15);
    end_to_end(c, &small(Arch::Dense, NormPlacement::PerLayer, Grouping::Batch), 16);
}
