#![allow(dead_code)]

use ectonas_core::net::{Layer, LayerSpec, Mode, Network, Shape, Tensor, Trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn finish(specs: &mut Vec<LayerSpec>, rng: &mut ChaCha8Rng, hidden: usize) {
    specs.push(LayerSpec::Flatten);
    for _ in 0..hidden {
        specs.extend([LayerSpec::Dense { units: rng.random_range(1..=6) }, LayerSpec::Relu]);
    }
}

/// Random image network with 1 or 2 cells and 1 or 2 hidden dense layers;
/// batch-norm parameters and statistics are randomised.
pub fn random_cnn(rng: &mut ChaCha8Rng) -> Network {
    let shape = Shape::image(rng.random_range(4..=8), rng.random_range(4..=8), rng.random_range(1..=3));
    let mut specs = Vec::new();
    for _ in 0..rng.random_range(1..=2) {
        let pool = if rng.random_bool(0.5) { LayerSpec::AvgPool } else { LayerSpec::MaxPool };
        specs.extend([
            LayerSpec::Conv2d { out_channels: rng.random_range(1..=4) },
            pool,
            LayerSpec::batch_norm(),
            LayerSpec::Relu,
        ]);
    }
    let hidden = rng.random_range(1..=2);
    finish(&mut specs, rng, hidden);
    build(shape, specs, rng)
}

/// Random dense network on an image or flat input with 1 to 3 hidden layers.
pub fn random_ffnn(rng: &mut ChaCha8Rng) -> Network {
    let shape = if rng.random_bool(0.5) {
        Shape::image(rng.random_range(2..=5), rng.random_range(2..=5), rng.random_range(1..=2))
    } else {
        Shape::flat(rng.random_range(1..=12))
    };
    let mut specs = Vec::new();
    let hidden = rng.random_range(1..=3);
    finish(&mut specs, rng, hidden);
    build(shape, specs, rng)
}

pub fn build(shape: Shape, mut specs: Vec<LayerSpec>, rng: &mut ChaCha8Rng) -> Network {
    let classes = rng.random_range(2..=4);
    specs.extend([LayerSpec::Dense { units: classes }, LayerSpec::SoftmaxOutput]);
    let mut net = Network::from_specs(shape, classes, &specs, rng).unwrap();
    randomise(&mut net, rng);
    net
}

/// Non-trivial biases and batch-norm state, as after some training.
pub fn randomise(net: &mut Network, rng: &mut ChaCha8Rng) {
    for layer in net.layers.iter_mut() {
        match layer {
            Layer::Dense(d) => d.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3)),
            Layer::Conv2d(c) => c.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3)),
            Layer::BatchNorm(bn) => {
                for c in 0..bn.gamma.len() {
                    bn.gamma[c] = rng.random_range(0.5..1.5) * if rng.random_bool(0.2) { -1.0 } else { 1.0 };
                    bn.beta[c] = rng.random_range(-0.5..0.5);
                    bn.running_mean[c] = rng.random_range(-0.5..0.5);
                    bn.running_var[c] = rng.random_range(0.5..2.0);
                }
            }
            _ => {}
        }
    }
}

pub fn random_batch(net: &Network, batch: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut shape = vec![batch];
    shape.extend(net.input_shape.dims());
    let data = (0..batch * net.input_shape.size()).map(|_| rng.random::<f32>()).collect();
    Tensor::new(shape, data).unwrap()
}

pub fn output(net: &Network, x: &Tensor, mode: Mode) -> Vec<f32> {
    let mut trace = Trace::new();
    net.forward_into(x.data(), x.shape()[0], mode, &mut trace).unwrap();
    trace.output().to_vec()
}

/// Pre-softmax scores.
pub fn logits(net: &Network, x: &Tensor) -> Vec<f32> {
    let mut trace = Trace::new();
    net.forward_into(x.data(), x.shape()[0], Mode::Infer, &mut trace).unwrap();
    trace.activation(net.output_dense_index().unwrap()).to_vec()
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}
