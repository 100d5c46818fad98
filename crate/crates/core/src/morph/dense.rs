use rand::Rng;

use super::{MorphError, WidenMapping};
use crate::linalg::{svd, truncate, Matrix};
use crate::net::{Dense, Layer, Network};

/// Insertion slots for a new hidden dense layer: after every hidden dense
/// layer's activation, or directly after the flatten layer when there is no
/// hidden dense layer yet.
pub fn dense_slots(net: &Network) -> Vec<usize> {
    let slots: Vec<usize> = net
        .hidden_dense_indices()
        .into_iter()
        .filter(|&i| matches!(net.layers.get(i + 1), Some(Layer::Relu)))
        .map(|i| i + 2)
        .collect();
    if slots.is_empty() {
        net.flatten_index().map(|f| vec![f + 1]).unwrap_or_default()
    } else {
        slots
    }
}

fn next_dense(net: &Network, site: usize) -> Result<usize, MorphError> {
    (site + 1..net.layers.len())
        .find(|&i| matches!(net.layers[i], Layer::Dense(_)))
        .ok_or_else(|| MorphError::Structure(format!("no dense layer after layer {site}")))
}

fn require_hidden(net: &Network, site: usize) -> Result<&Dense<f32>, MorphError> {
    if !net.hidden_dense_indices().contains(&site) {
        return Err(MorphError::Placement {
            site,
            reason: "not a hidden dense layer".into(),
        });
    }
    Ok(net.dense(site).expect("dense"))
}

/// Insert an identity-initialised dense layer plus activation at `slot`.
pub fn add_dense_layer(net: &Network, slot: usize) -> Result<Network, MorphError> {
    if !dense_slots(net).contains(&slot) {
        return Err(MorphError::Placement {
            site: slot,
            reason: "not a dense insertion slot".into(),
        });
    }
    let d = net.shapes()?[slot].size();
    let mut layer = Dense::zeros(d, d);
    for i in 0..d {
        layer.weight[i * d + i] = 1.0;
    }
    let mut child = net.clone();
    child.layers.insert(slot, Layer::Relu);
    child.layers.insert(slot, Layer::Dense(layer));
    child.validate()?;
    Ok(child)
}

/// Fold the hidden dense layer at `site` into the next dense layer, dropping
/// the activation between them.
pub fn remove_dense_layer(net: &Network, site: usize) -> Result<Network, MorphError> {
    let layer = require_hidden(net, site)?;
    if net.hidden_dense_indices().len() < 2 {
        return Err(MorphError::Degenerate("cannot remove the last hidden dense layer".into()));
    }
    let next_idx = next_dense(net, site)?;
    let next = net.dense(next_idx).expect("dense");
    let (n_in, n, m) = (layer.inputs, layer.units, next.units);
    let mut weight = vec![0.0f32; n_in * m];
    for i in 0..n_in {
        for o in 0..m {
            let s: f64 = (0..n).map(|k| layer.w(i, k) as f64 * next.w(k, o) as f64).sum();
            weight[i * m + o] = s as f32;
        }
    }
    let bias: Vec<f32> = (0..m)
        .map(|o| {
            let s: f64 = (0..n).map(|k| layer.bias[k] as f64 * next.w(k, o) as f64).sum();
            (s + next.bias[o] as f64) as f32
        })
        .collect();
    let mut child = net.clone();
    child.layers[next_idx] = Layer::Dense(Dense {
        inputs: n_in,
        units: m,
        weight,
        bias,
    });
    child.layers.drain(site..next_idx);
    child.validate()?;
    Ok(child)
}

/// Net2Wider with a random replication table.
pub fn widen_dense<R: Rng + ?Sized>(net: &Network, site: usize, q: usize, rng: &mut R) -> Result<Network, MorphError> {
    let n = require_hidden(net, site)?.units;
    let mapping = WidenMapping::random(n, q, rng)?;
    widen_dense_with(net, site, &mapping)
}

/// Net2Wider: new unit `j` copies the incoming weights and bias of unit
/// `g(j)`; outgoing weights are divided by the replication count.
pub fn widen_dense_with(net: &Network, site: usize, mapping: &WidenMapping) -> Result<Network, MorphError> {
    let layer = require_hidden(net, site)?;
    let n = layer.units;
    if mapping.replication_counts.len() != n {
        return Err(MorphError::Argument(format!("mapping is for width {}, layer has {n}", mapping.replication_counts.len())));
    }
    let q = mapping.width();
    let next_idx = next_dense(net, site)?;
    let mut child = net.clone();

    let mut wide = Dense::zeros(layer.inputs, q);
    for i in 0..layer.inputs {
        for (j, &s) in mapping.g.iter().enumerate() {
            wide.weight[i * q + j] = layer.w(i, s);
        }
    }
    for (j, &s) in mapping.g.iter().enumerate() {
        wide.bias[j] = layer.bias[s];
    }
    child.layers[site] = Layer::Dense(wide);

    let next = net.dense(next_idx).expect("dense");
    let scales = mapping.scales();
    let mut grown = Dense::zeros(q, next.units);
    grown.bias.clone_from(&next.bias);
    for (j, &s) in mapping.g.iter().enumerate() {
        for o in 0..next.units {
            grown.weight[j * next.units + o] = next.w(s, o) * scales[j];
        }
    }
    child.layers[next_idx] = Layer::Dense(grown);
    child.validate()?;
    Ok(child)
}

/// Replace the hidden layer's weight `W = U S V^T` by its rank-`r` factor
/// `U_r S_r`, project the bias onto `V_r` and left-multiply the next layer's
/// weights by `V_r^T`.
pub fn shrink_dense(net: &Network, site: usize, r: usize) -> Result<Network, MorphError> {
    let layer = require_hidden(net, site)?;
    let n = layer.units;
    if r == 0 || r >= n {
        return Err(MorphError::Degenerate(format!("rank {r} must lie in 1..{n}")));
    }
    let next_idx = next_dense(net, site)?;
    let next = net.dense(next_idx).expect("dense");

    // Zero rows leave the factors unchanged but give a full right basis
    // when the layer has fewer inputs than units.
    let rows = layer.inputs.max(n);
    let a = Matrix::from_fn(rows, n, |i, j| if i < layer.inputs { layer.w(i, j) as f64 } else { 0.0 });
    let (a_tilde, v_t) = truncate(&svd(&a)?, r)?;
    let a_tilde = a_tilde.leading_rows(layer.inputs);
    let w_next = Matrix::from_fn(n, next.units, |i, j| next.w(i, j) as f64);
    let projected_next = v_t.matmul(&w_next)?;
    let bias = Matrix::from_fn(n, 1, |i, _| layer.bias[i] as f64);
    let projected_bias = v_t.matmul(&bias)?;

    let mut child = net.clone();
    child.layers[site] = Layer::Dense(Dense {
        inputs: layer.inputs,
        units: r,
        weight: a_tilde.data().iter().map(|&v| v as f32).collect(),
        bias: projected_bias.data().iter().map(|&v| v as f32).collect(),
    });
    child.layers[next_idx] = Layer::Dense(Dense {
        inputs: r,
        units: next.units,
        weight: projected_next.data().iter().map(|&v| v as f32).collect(),
        bias: next.bias.clone(),
    });
    child.validate()?;
    Ok(child)
}
