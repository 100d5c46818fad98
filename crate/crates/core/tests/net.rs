mod common;

use common::{output, random_batch, random_cnn, random_ffnn, rng};
use ectonas_core::data::{synth_blobs, BlobOptions, Dataset, SplitTag};
use ectonas_core::net::serial::{self, ModelFileError};
use ectonas_core::net::{
    cross_entropy, evaluate, train_epochs, Gradients, Layer, LayerSpec, Mode, NetError, Network, Shape, Tensor, Trace,
    TrainOptions,
};
use proptest::prelude::*;
use rand::Rng;

fn any_net(seed: u64) -> Network {
    let mut r = rng(seed);
    if seed.is_multiple_of(2) {
        random_cnn(&mut r)
    } else {
        random_ffnn(&mut r)
    }
}

fn zero_weights(net: &mut Network) {
    for layer in net.layers.iter_mut() {
        for p in layer.params_mut() {
            p.fill(0.0);
        }
    }
}

fn dense_net(inputs: usize, hidden: &[usize], classes: usize, seed: u64) -> Network {
    let mut specs = vec![LayerSpec::Flatten];
    for &h in hidden {
        specs.extend([LayerSpec::Dense { units: h }, LayerSpec::Relu]);
    }
    specs.extend([LayerSpec::Dense { units: classes }, LayerSpec::SoftmaxOutput]);
    Network::from_specs(Shape::flat(inputs), classes, &specs, &mut rng(seed)).unwrap()
}

fn flat_data(rows: &[Vec<f32>], labels: Vec<u32>, classes: usize) -> Dataset {
    let d = rows[0].len();
    let inputs = Tensor::new(vec![rows.len(), d], rows.concat()).unwrap();
    Dataset::new(inputs, labels, classes, SplitTag::Train).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), batch in 1usize..6) {
        let net = any_net(seed);
        let x = random_batch(&net, batch, &mut rng(seed ^ 1));
        for mode in [Mode::Train, Mode::Infer] {
            let out = output(&net, &x, mode);
            prop_assert_eq!(out.len(), batch * net.num_classes);
            for row in out.chunks(net.num_classes) {
                let sum: f64 = row.iter().map(|&v| v as f64).sum();
                prop_assert!((sum - 1.0).abs() <= 1e-5, "row sums to {}", sum);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn cross_entropy_is_non_negative(seed in any::<u64>(), batch in 1usize..6) {
        let net = any_net(seed);
        let mut r = rng(seed ^ 2);
        let x = random_batch(&net, batch, &mut r);
        let labels: Vec<u32> = (0..batch).map(|_| r.random_range(0..net.num_classes as u32)).collect();
        let loss = cross_entropy(&output(&net, &x, Mode::Infer), &labels, net.num_classes);
        prop_assert!(loss >= 0.0 && loss.is_finite());
    }

    #[test]
    fn zero_learning_rate_leaves_weights_unchanged(seed in any::<u64>()) {
        let mut net = any_net(seed);
        let before = net.clone();
        let mut r = rng(seed ^ 3);
        let x = random_batch(&net, 4, &mut r);
        let labels: Vec<u32> = (0..4).map(|_| r.random_range(0..net.num_classes as u32)).collect();
        let mut trace = Trace::new();
        let mut grads = Gradients::zeros_like(&net);
        net.forward_into(x.data(), 4, Mode::Train, &mut trace).unwrap();
        net.backward(&mut trace, &labels, &mut grads, None).unwrap();
        net.apply_gradients(&grads, 0.0);
        for (a, b) in net.layers.iter().zip(&before.layers) {
            for (pa, pb) in a.params().iter().zip(b.params()) {
                prop_assert!(pa.iter().zip(pb).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn save_load_round_trip_is_bitwise(seed in any::<u64>()) {
        let net = any_net(seed);
        let loaded = serial::load(&serial::save(&net)).unwrap();
        prop_assert_eq!(&loaded, &net);
        let x = random_batch(&net, 3, &mut rng(seed ^ 4));
        let a = net.predict(&x).unwrap();
        let b = loaded.predict(&x).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn uniform_logits_give_log_k_loss() {
    for k in [2usize, 3, 10, 37] {
        let mut net = dense_net(5, &[4], k, k as u64);
        zero_weights(&mut net);
        let x = random_batch(&net, 7, &mut rng(1));
        let labels: Vec<u32> = (0..7).map(|i| (i % k) as u32).collect();
        let loss = cross_entropy(&output(&net, &x, Mode::Infer), &labels, k);
        assert!((loss - (k as f64).ln()).abs() <= 1e-5, "k={k}: {loss}");
    }
}

#[test]
fn batchnorm_train_mode_standardises_each_channel() {
    let mut r = rng(11);
    let specs = [
        LayerSpec::Conv2d { out_channels: 3 },
        LayerSpec::MaxPool,
        LayerSpec::batch_norm(),
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 2 },
        LayerSpec::SoftmaxOutput,
    ];
    let mut net = Network::from_specs(Shape::image(6, 6, 2), 2, &specs, &mut r).unwrap();
    let (gamma, beta) = (vec![2.0f32, -0.5, 1.3], vec![0.5f32, 0.0, -1.0]);
    let Layer::BatchNorm(bn) = &mut net.layers[2] else { unreachable!() };
    bn.gamma = gamma.clone();
    bn.beta = beta.clone();
    let x = random_batch(&net, 16, &mut r);
    let mut trace = Trace::new();
    net.forward_into(x.data(), 16, Mode::Train, &mut trace).unwrap();
    let (inp, out) = (trace.activation(1), trace.activation(2));
    let eps = 1e-3;
    for c in 0..3 {
        let xs: Vec<f64> = inp.iter().skip(c).step_by(3).map(|&v| v as f64).collect();
        let ys: Vec<f64> = out.iter().skip(c).step_by(3).map(|&v| v as f64).collect();
        let n = ys.len() as f64;
        let x_mean = xs.iter().sum::<f64>() / n;
        let x_var = xs.iter().map(|v| (v - x_mean).powi(2)).sum::<f64>() / n;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let g = gamma[c] as f64;
        assert!((mean - beta[c] as f64).abs() <= 1e-3, "channel {c} mean {mean}");
        let expected = g * g * x_var / (x_var + eps);
        assert!((var - expected).abs() <= 1e-3 * expected.max(1.0), "channel {c} var {var} vs {expected}");
        assert!((var - g * g).abs() <= 1e-3 * g * g + eps * g * g / x_var, "channel {c} var {var}");
    }
}

#[test]
fn train_mode_updates_running_stats_and_infer_mode_does_not() {
    let mut r = rng(12);
    let mut net = random_cnn(&mut r);
    let x = random_batch(&net, 8, &mut r);
    let before = net.clone();
    net.predict(&x).unwrap();
    net.forward(&x, Mode::Infer).unwrap();
    assert_eq!(net, before);
    net.forward(&x, Mode::Train).unwrap();
    let bn = |n: &Network| -> Vec<f32> {
        n.layers
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm(b) => Some([b.running_mean.clone(), b.running_var.clone()].concat()),
                _ => None,
            })
            .flatten()
            .collect()
    };
    assert_ne!(bn(&net), bn(&before));
    assert!(bn(&net).iter().all(|v| v.is_finite()));
}

#[test]
fn wrong_batch_shape_is_an_error() {
    let mut net = dense_net(4, &[3], 2, 0);
    let x = Tensor::zeros(vec![2, 5]);
    assert!(matches!(net.forward(&x, Mode::Infer), Err(NetError::InputShape { .. })));
    let bad = flat_data(&[vec![0.0; 5]], vec![0], 2);
    assert!(matches!(evaluate(&net, &bad), Err(NetError::InputShape { .. })));
}

fn logistic_regression_accuracy(data: &Dataset) -> f64 {
    let d = data.inputs.sample_size();
    let mut w = vec![0.0f64; d + 1];
    for _ in 0..2000 {
        let mut g = vec![0.0f64; d + 1];
        for i in 0..data.len() {
            let x = data.inputs.sample(i);
            let z = w[d] + x.iter().zip(&w).map(|(&a, b)| a as f64 * b).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - data.labels[i] as f64;
            for j in 0..d {
                g[j] += err * x[j] as f64;
            }
            g[d] += err;
        }
        for j in 0..=d {
            w[j] -= 1.0 * g[j] / data.len() as f64;
        }
    }
    let correct = (0..data.len())
        .filter(|&i| {
            let x = data.inputs.sample(i);
            let z = w[d] + x.iter().zip(&w).map(|(&a, b)| a as f64 * b).sum::<f64>();
            (z > 0.0) == (data.labels[i] == 1)
        })
        .count();
    correct as f64 / data.len() as f64
}

#[test]
fn training_separates_blobs_the_linear_oracle_separates() {
    let data = synth_blobs(
        &BlobOptions {
            n_samples: 400,
            num_classes: 2,
            shape: Shape::flat(6),
            spread: 0.08,
        },
        3,
    )
    .unwrap();
    assert!(logistic_regression_accuracy(&data) >= 0.95);
    let mut net = dense_net(6, &[16], 2, 5);
    let opts = TrainOptions {
        learning_rate: 0.1,
        batch_size: 32,
    };
    let history = train_epochs(&mut net, &data, &data, 20, &opts, &mut rng(6), 0).unwrap();
    assert_eq!(history.len(), 20);
    assert!(evaluate(&net, &data).unwrap().accuracy >= 0.95);
}

#[test]
fn training_is_deterministic_and_numbers_epochs() {
    let data = synth_blobs(
        &BlobOptions {
            n_samples: 120,
            num_classes: 3,
            shape: Shape::image(5, 5, 1),
            spread: 0.2,
        },
        1,
    )
    .unwrap();
    let start = {
        let specs = [
            LayerSpec::Conv2d { out_channels: 2 },
            LayerSpec::AvgPool,
            LayerSpec::batch_norm(),
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 3 },
            LayerSpec::SoftmaxOutput,
        ];
        Network::from_specs(Shape::image(5, 5, 1), 3, &specs, &mut rng(2)).unwrap()
    };
    let opts = TrainOptions {
        learning_rate: 0.1,
        batch_size: 16,
    };
    let run = || {
        let mut net = start.clone();
        let h = train_epochs(&mut net, &data, &data, 3, &opts, &mut rng(9), 7).unwrap();
        (net, h)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(serial::save(&a), serial::save(&b));
    assert_eq!(ha, hb);
    let epochs: Vec<usize> = ha.records().iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, [8, 9, 10]);
    assert!(ha.records().iter().all(|r| r.param_count == start.param_count()));
    let mut c = start.clone();
    train_epochs(&mut c, &data, &data, 3, &opts, &mut rng(10), 7).unwrap();
    assert_ne!(c, a);
}

#[test]
fn training_preconditions() {
    let data = flat_data(&[vec![0.1, 0.2], vec![0.3, 0.4]], vec![0, 1], 2);
    let mut net = dense_net(2, &[2], 2, 0);
    let opts = TrainOptions::default();
    assert!(matches!(
        train_epochs(&mut net, &data, &data, 0, &opts, &mut rng(0), 0),
        Err(NetError::Argument(_))
    ));
    let empty = data.subset(&[], SplitTag::Train);
    assert!(train_epochs(&mut net, &empty, &data, 1, &opts, &mut rng(0), 0).is_err());
    assert!(evaluate(&net, &empty).is_err());
}

#[test]
fn divergence_reports_the_epoch() {
    let data = flat_data(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1], 2);
    let mut net = dense_net(2, &[4], 2, 0);
    let opts = TrainOptions {
        learning_rate: f32::MAX,
        batch_size: 1,
    };
    match train_epochs(&mut net, &data, &data, 5, &opts, &mut rng(0), 3) {
        Err(NetError::Divergence { epoch }) => assert!((4..=8).contains(&epoch)),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn uniform_predictions_score_the_class_prior() {
    let k = 10;
    let n = 3000;
    let mut r = rng(21);
    let rows: Vec<Vec<f32>> = (0..n).map(|_| (0..4).map(|_| r.random::<f32>()).collect()).collect();
    let labels: Vec<u32> = (0..n).map(|_| r.random_range(0..k as u32)).collect();
    let data = flat_data(&rows, labels, k);
    let mut net = dense_net(4, &[8], k, 0);
    zero_weights(&mut net);
    let acc = evaluate(&net, &data).unwrap().accuracy;
    let prior = 1.0 / k as f64;
    let sigma = (prior * (1.0 - prior) / n as f64).sqrt();
    assert!((acc - prior).abs() <= 3.0 * sigma, "accuracy {acc}");
}

#[test]
fn memoriser_and_anti_memoriser() {
    let k = 4;
    let rows: Vec<Vec<f32>> = (0..20).map(|i| (0..k).map(|j| (j == i % k) as u8 as f32).collect()).collect();
    let mut net = dense_net(k, &[], k, 0);
    let Layer::Dense(d) = &mut net.layers[1] else { unreachable!() };
    d.weight.fill(0.0);
    for j in 0..k {
        d.weight[j * k + j] = 10.0;
    }
    let labels: Vec<u32> = (0..20).map(|i| (i % k) as u32).collect();
    let shifted: Vec<u32> = labels.iter().map(|&y| (y + 1) % k as u32).collect();
    let e = evaluate(&net, &flat_data(&rows, labels, k)).unwrap();
    assert_eq!(e.accuracy, 1.0);
    assert!(e.loss >= 0.0);
    assert_eq!(evaluate(&net, &flat_data(&rows, shifted, k)).unwrap().accuracy, 0.0);
}

#[test]
fn param_count_examples() {
    let dense = dense_net(100, &[], 10, 0);
    assert_eq!(dense.param_count(), 1010);
    let specs = [
        LayerSpec::Conv2d { out_channels: 6 },
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 1 },
        LayerSpec::SoftmaxOutput,
    ];
    let conv: Network = Network::from_specs(Shape::image(2, 2, 3), 1, &specs, &mut rng(0)).unwrap();
    assert_eq!(conv.layers[0].param_count(), 168);
    assert_eq!(conv.param_count(), 168 + 24 + 1);
}

fn patch_descriptor(bytes: &[u8], edit: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
    let (_, blob_start) = serial::read_descriptor(bytes).unwrap();
    let mut json: serde_json::Value = serde_json::from_slice(&bytes[16..blob_start]).unwrap();
    edit(&mut json);
    let text = serde_json::to_vec(&json).unwrap();
    let mut out = bytes[..8].to_vec();
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&bytes[blob_start..]);
    out
}

#[test]
fn malformed_model_files_are_rejected() {
    let net = any_net(8);
    let good = serial::save(&net);
    assert!(serial::load(&good).is_ok());

    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(serial::load(&magic), Err(ModelFileError::BadMagic)));

    let mut version = good.clone();
    version[4] = 9;
    assert!(matches!(serial::load(&version), Err(ModelFileError::Version(_))));

    assert!(matches!(serial::load(&good[..good.len() - 3]), Err(ModelFileError::Truncated { .. })));
    assert!(serial::load(&good[..10]).is_err());

    let mut extra = good.clone();
    extra.push(0);
    assert!(matches!(serial::load(&extra), Err(ModelFileError::Header(_))));

    let mut flipped = good.clone();
    *flipped.last_mut().unwrap() ^= 0x40;
    assert!(matches!(serial::load(&flipped), Err(ModelFileError::Checksum { .. })));

    let short = patch_descriptor(&good, |d| {
        let n = d["blob_len"].as_u64().unwrap();
        d["blob_len"] = (n - 4).into();
    });
    assert!(serial::load(&short).is_err());

    let wrong_len = patch_descriptor(&good, |d| {
        let n = d["tensors"][0]["len"].as_u64().unwrap();
        d["tensors"][0]["len"] = (n + 1).into();
    });
    assert!(matches!(serial::load(&wrong_len), Err(ModelFileError::Header(_))));

    let mut shapeless = serial::save(&dense_net(3, &[2], 2, 0));
    shapeless = patch_descriptor(&shapeless, |d| d["input_shape"] = serde_json::json!([4]));
    assert!(serial::load(&shapeless).is_err());
}

#[test]
fn model_files_round_trip_through_disk() {
    let net = any_net(14);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ectn");
    serial::save_file(&net, &path).unwrap();
    assert_eq!(serial::load_file(&path).unwrap(), net);
    assert!(matches!(serial::load_file(&dir.path().join("missing")), Err(ModelFileError::Io(_))));
}
