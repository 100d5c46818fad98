use rand::Rng;

use super::pool::{pool_dense_weights, unpool_first_dense, FlatLayout};
use super::{
    consumer_bias_mut, consumer_channel_sums, consumer_of, first_dense_after_flatten, remap_consumer_inputs, Consumer,
    MorphError, WidenMapping,
};
use crate::net::{BatchNorm, Conv2d, Layer, Network, PoolKind, Shape, KERNEL_TAPS};

const CENTRE_TAP: usize = 4;

/// Slots where a whole cell may be inserted, with the channel count there:
/// before the first layer of an image network and after every complete cell,
/// provided the spatial size is at least 2x2.
pub fn cell_slots(net: &Network) -> Vec<(usize, usize)> {
    let Some(flatten) = net.flatten_index() else { return Vec::new() };
    let Ok(shapes) = net.shapes() else { return Vec::new() };
    let mut candidates = vec![0];
    candidates.extend(net.cell_starts().into_iter().map(|s| s + 4));
    candidates
        .into_iter()
        .filter(|&s| s <= flatten)
        .filter_map(|s| match shapes[s] {
            Shape::Image { h, w, c } if h >= 2 && w >= 2 => Some((s, c)),
            _ => None,
        })
        .collect()
}

fn require_cell(net: &Network, site: usize) -> Result<(), MorphError> {
    if net.cell_starts().contains(&site) {
        Ok(())
    } else {
        Err(MorphError::Placement {
            site,
            reason: "not the convolution of a complete cell".into(),
        })
    }
}

/// Insert a cell with an identity convolution, the chosen pool, a neutral
/// batch norm and an activation; the first dense layer's weights are pooled
/// to the new flatten size.
pub fn add_conv_cell(net: &Network, slot: usize, pool: PoolKind) -> Result<Network, MorphError> {
    let Some(&(_, c)) = cell_slots(net).iter().find(|(s, _)| *s == slot) else {
        return Err(MorphError::Placement {
            site: slot,
            reason: "not a cell insertion slot with spatial size >= 2".into(),
        });
    };
    let (dense_idx, flatten) = first_dense_after_flatten(net)?;
    let Shape::Image { h, w, c: fc } = net.shapes()?[flatten] else {
        return Err(MorphError::Structure("flatten input is not spatial".into()));
    };
    let mut conv = Conv2d::zeros(c, c);
    for i in 0..c {
        let at = conv.index(CENTRE_TAP, i, i);
        conv.kernel[at] = 1.0;
    }
    let mut child = net.clone();
    let Layer::Dense(d) = &mut child.layers[dense_idx] else { unreachable!() };
    let layout = FlatLayout { h, w, c: fc };
    d.weight = pool_dense_weights(&d.weight, d.units, layout, pool);
    d.inputs = layout.pooled().rows();
    child.layers.splice(
        slot..slot,
        [
            Layer::Conv2d(conv),
            Layer::Pool(pool),
            Layer::BatchNorm(BatchNorm::identity(c)),
            Layer::Relu,
        ],
    );
    child.validate()?;
    Ok(child)
}

/// Keep output channels `source[j]` of the conv at `site` (and of its batch
/// norm when the conv opens a cell).
fn remap_producer(net: &mut Network, site: usize, source: &[usize]) {
    let Layer::Conv2d(k) = &mut net.layers[site] else { unreachable!() };
    let (cin, cout) = (k.in_channels, k.out_channels);
    let mut kernel = Vec::with_capacity(KERNEL_TAPS * cin * source.len());
    for t in 0..KERNEL_TAPS {
        for i in 0..cin {
            let row = (t * cin + i) * cout;
            kernel.extend(source.iter().map(|&s| k.kernel[row + s]));
        }
    }
    k.kernel = kernel;
    k.bias = source.iter().map(|&s| k.bias[s]).collect();
    k.out_channels = source.len();
    if let Some(Layer::BatchNorm(bn)) = net.layers.get_mut(site + 2) {
        let pick = |v: &Vec<f32>| source.iter().map(|&s| v[s]).collect::<Vec<f32>>();
        bn.gamma = pick(&bn.gamma);
        bn.beta = pick(&bn.beta);
        bn.running_mean = pick(&bn.running_mean);
        bn.running_var = pick(&bn.running_var);
    }
}

pub fn widen_conv<R: Rng + ?Sized>(net: &Network, site: usize, extra: usize, rng: &mut R) -> Result<Network, MorphError> {
    if extra < 1 {
        return Err(MorphError::Argument("extra channels must be >= 1".into()));
    }
    let n = net
        .conv(site)
        .ok_or_else(|| MorphError::Placement {
            site,
            reason: "not a convolution".into(),
        })?
        .out_channels;
    let mapping = WidenMapping::random(n, n + extra, rng)?;
    widen_conv_with(net, site, &mapping)
}

/// Net2Wider over filters: replicated channels copy their filter, bias and
/// batch-norm entries; the consumer's slices for them are divided by the
/// replication count.
pub fn widen_conv_with(net: &Network, site: usize, mapping: &WidenMapping) -> Result<Network, MorphError> {
    let n = net
        .conv(site)
        .ok_or_else(|| MorphError::Placement {
            site,
            reason: "not a convolution".into(),
        })?
        .out_channels;
    if mapping.replication_counts.len() != n {
        return Err(MorphError::Argument(format!(
            "mapping is for {} channels, layer has {n}",
            mapping.replication_counts.len()
        )));
    }
    let consumer = consumer_of(net, site)?;
    let mut child = net.clone();
    remap_producer(&mut child, site, &mapping.g);
    remap_consumer_inputs(&mut child, consumer, &mapping.g, &mapping.scales());
    child.validate()?;
    Ok(child)
}

/// Channels ordered by `|gamma|`, ties by index.
fn gamma_order(bn: &BatchNorm<f32>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..bn.channels()).collect();
    order.sort_by(|&a, &b| bn.gamma[a].abs().total_cmp(&bn.gamma[b].abs()).then(a.cmp(&b)));
    order
}

/// Remove the `k` channels with the smallest `|gamma|`, folding the constant
/// `relu(beta)` each of them emits into the consumer's bias.
pub fn prune_channels(net: &Network, site: usize, k: usize) -> Result<Network, MorphError> {
    require_cell(net, site)?;
    let n = net.conv(site).expect("conv").out_channels;
    if k == 0 {
        return Err(MorphError::Argument("k must be >= 1".into()));
    }
    if k >= n {
        return Err(MorphError::Degenerate(format!("cannot prune {k} of {n} channels")));
    }
    let Some(Layer::BatchNorm(bn)) = net.layers.get(site + 2) else { unreachable!() };
    let order = gamma_order(bn);
    let mut removed = order[..k].to_vec();
    removed.sort_unstable();
    let keep: Vec<usize> = (0..n).filter(|c| !removed.contains(c)).collect();
    let consumer = consumer_of(net, site)?;

    let mut shift = vec![0.0f64; consumer_bias_len(net, consumer)];
    for &c in &removed {
        let level = bn.beta[c].max(0.0) as f64;
        if level > 0.0 {
            for (s, w) in shift.iter_mut().zip(consumer_channel_sums(net, consumer, c)) {
                *s += level * w;
            }
        }
    }
    let mut child = net.clone();
    for (b, s) in consumer_bias_mut(&mut child, consumer).iter_mut().zip(&shift) {
        if *s != 0.0 {
            *b = (*b as f64 + s) as f32;
        }
    }
    remap_producer(&mut child, site, &keep);
    remap_consumer_inputs(&mut child, consumer, &keep, &vec![1.0; keep.len()]);
    child.validate()?;
    Ok(child)
}

fn consumer_bias_len(net: &Network, consumer: Consumer) -> usize {
    match consumer {
        Consumer::Conv(i) => net.conv(i).expect("conv").out_channels,
        Consumer::Dense { index, .. } => net.dense(index).expect("dense").units,
    }
}

/// Replace the consumer's input channels by linear mixtures: new input `i`
/// carries `sum_c mix[c][i] * old channel c`.
fn mix_consumer_inputs(net: &mut Network, consumer: Consumer, mix: &[Vec<f64>], new_channels: usize) {
    match consumer {
        Consumer::Conv(idx) => {
            let Layer::Conv2d(k) = &mut net.layers[idx] else { unreachable!() };
            let (cin, cout) = (k.in_channels, k.out_channels);
            let mut kernel = vec![0.0f32; KERNEL_TAPS * new_channels * cout];
            for t in 0..KERNEL_TAPS {
                for i in 0..new_channels {
                    for o in 0..cout {
                        let v: f64 = (0..cin).map(|c| k.kernel[(t * cin + c) * cout + o] as f64 * mix[c][i]).sum();
                        kernel[(t * new_channels + i) * cout + o] = v as f32;
                    }
                }
            }
            k.kernel = kernel;
            k.in_channels = new_channels;
        }
        Consumer::Dense { index, h, w } => {
            let Layer::Dense(d) = &mut net.layers[index] else { unreachable!() };
            let c_old = d.inputs / (h * w);
            let units = d.units;
            let mut weight = vec![0.0f32; h * w * new_channels * units];
            for p in 0..h * w {
                for i in 0..new_channels {
                    for o in 0..units {
                        let v: f64 = (0..c_old).map(|c| d.weight[(p * c_old + c) * units + o] as f64 * mix[c][i]).sum();
                        weight[(p * new_channels + i) * units + o] = v as f32;
                    }
                }
            }
            d.weight = weight;
            d.inputs = h * w * new_channels;
        }
    }
}

/// Cut a whole cell out. Every channel is treated as in pruning: channels
/// whose offset `beta` is not positive are dropped; the others are replaced
/// by a linearisation of `conv -> batch norm` around the running mean
/// (centre-summed 3x3 kernels scaled by `gamma / sqrt(var + eps)`), so the
/// consumer reads the cell's input directly. The cell's pool is removed by
/// replicating the first dense layer's weights.
pub fn remove_conv_cell(net: &Network, site: usize) -> Result<Network, MorphError> {
    require_cell(net, site)?;
    let conv = net.conv(site).expect("conv");
    let Some(Layer::BatchNorm(bn)) = net.layers.get(site + 2) else { unreachable!() };
    let (cin, cout) = (conv.in_channels, conv.out_channels);
    let consumer = consumer_of(net, site)?;

    let mut mix = vec![vec![0.0f64; cin]; cout];
    let mut shift = vec![0.0f64; consumer_bias_len(net, consumer)];
    for c in 0..cout {
        let beta = bn.beta[c] as f64;
        if beta <= 0.0 {
            continue;
        }
        let scale = bn.gamma[c] as f64 / (bn.running_var[c] as f64 + bn.epsilon).sqrt();
        for (i, m) in mix[c].iter_mut().enumerate() {
            *m = scale * (0..KERNEL_TAPS).map(|t| conv.kernel[conv.index(t, i, c)] as f64).sum::<f64>();
        }
        let level = scale * (conv.bias[c] as f64 - bn.running_mean[c] as f64) + beta;
        for (s, w) in shift.iter_mut().zip(consumer_channel_sums(net, consumer, c)) {
            *s += level * w;
        }
    }

    let mut child = net.clone();
    for (b, s) in consumer_bias_mut(&mut child, consumer).iter_mut().zip(&shift) {
        *b = (*b as f64 + s) as f32;
    }
    mix_consumer_inputs(&mut child, consumer, &mix, cin);
    child.layers.drain(site..site + 4);
    unpool_first_dense(&mut child)?;
    child.validate()?;
    Ok(child)
}
