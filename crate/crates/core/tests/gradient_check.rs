//! Analytic backpropagation against central finite differences in f64.

use fsearch_core::tensor::{Activation, LayerSpec, Padding};
use fsearch_core::{Network64, Shape, Tensor64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
const MAX_REL: f64 = 1e-4;

/// 0.5 · Σ (out − target)², evaluated with a freshly seeded rng so dropout
/// draws the same mask on every call.
fn objective(net: &Network64, x: &Tensor64, target: &[f64], mask_seed: u64) -> f64 {
    let acts = net
        .forward(x, true, &mut ChaCha8Rng::seed_from_u64(mask_seed))
        .unwrap();
    acts.output()
        .as_slice()
        .iter()
        .zip(target)
        .map(|(o, t)| 0.5 * (o - t) * (o - t))
        .sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

fn param(net: &mut Network64, layer: usize, k: usize) -> &mut f64 {
    net.params_mut()[layer].iter_mut().nth(k).unwrap()
}

/// Largest relative error over every parameter.
fn check(layers: Vec<LayerSpec>, input: Shape, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network64::new(layers, &mut rng).unwrap();
    // nonzero biases so relu/pool decisions are not degenerate
    for p in net.params_mut() {
        for b in &mut p.bias {
            *b = rng.gen_range(-0.1..0.1);
        }
    }
    let x = Tensor64::from_fn(input, |_, _, _| rng.gen_range(-1.0..1.0));
    let out_len = net.output_shape(input).unwrap().len();
    let target: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mask_seed = seed ^ 0xdead;

    let acts = net
        .forward(&x, true, &mut ChaCha8Rng::seed_from_u64(mask_seed))
        .unwrap();
    let upstream: Vec<f64> = acts
        .output()
        .as_slice()
        .iter()
        .zip(&target)
        .map(|(o, t)| o - t)
        .collect();
    let upstream = Tensor64::from_vec(acts.output().shape(), upstream).unwrap();
    let analytic = net.backward(&acts, &upstream).unwrap();

    let mut worst = 0.0f64;
    for layer in 0..net.layers().len() {
        let n = net.params()[layer].len();
        for k in 0..n {
            let orig = *param(&mut net, layer, k);
            *param(&mut net, layer, k) = orig + H;
            let up = objective(&net, &x, &target, mask_seed);
            *param(&mut net, layer, k) = orig - H;
            let down = objective(&net, &x, &target, mask_seed);
            *param(&mut net, layer, k) = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = *analytic.0[layer].iter().nth(k).unwrap();
            worst = worst.max(rel_err(a, numeric));
        }
    }
    worst
}

fn conv(
    ic: usize,
    oc: usize,
    k: usize,
    stride: usize,
    padding: Padding,
    act: Activation,
) -> LayerSpec {
    LayerSpec::Conv {
        in_channels: ic,
        out_channels: oc,
        kernel_h: k,
        kernel_w: k,
        stride,
        padding,
        activation: act,
    }
}

#[test]
fn conv_pool_dense() {
    let layers = vec![
        conv(2, 3, 3, 1, Padding::Valid, Activation::Relu),
        LayerSpec::pool2(),
        LayerSpec::Flatten,
        LayerSpec::dense(12, 3, Activation::Linear),
    ];
    let err = check(layers, Shape::new(6, 6, 2), 11);
    assert!(err < MAX_REL, "max relative error {err:e}");
}

#[test]
fn every_layer_variant() {
    let layers = vec![
        conv(1, 2, 3, 2, Padding::Same, Activation::Sigmoid),
        LayerSpec::UpsampleNearest { factor: 2 },
        conv(2, 2, 2, 1, Padding::Same, Activation::Relu),
        LayerSpec::pool2(),
        LayerSpec::Flatten,
        LayerSpec::Dropout { rate: 0.3 },
        LayerSpec::dense(8, 4, Activation::Sigmoid),
        LayerSpec::dense(4, 2, Activation::Linear),
    ];
    let err = check(layers, Shape::new(3, 4, 1), 12);
    assert!(err < MAX_REL, "max relative error {err:e}");
}
