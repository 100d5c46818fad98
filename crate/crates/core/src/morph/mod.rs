//! Network morphisms: structural edits that carry trained weights over to the
//! child network.
//!
//! Identity, deepening, widening and pruning of dead channels preserve the
//! network function; the remaining operators produce a warm start.

mod conv;
mod dense;
pub mod pool;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::LinalgError;
use crate::net::{Layer, NetError, Network, PoolKind, Shape};
use crate::rng::RunRng;

pub use conv::{add_conv_cell, cell_slots, prune_channels, remove_conv_cell, widen_conv, widen_conv_with};
pub use dense::{add_dense_layer, dense_slots, remove_dense_layer, shrink_dense, widen_dense, widen_dense_with};
pub use pool::{insert_pool, pool_dense_weights, remove_pool, unpool_dense_weights, FlatLayout, PoolAdaptation};

#[derive(Debug, Error)]
pub enum MorphError {
    #[error("invalid site {site}: {reason}")]
    Placement { site: usize, reason: String },
    #[error("degenerate mutation: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("unsupported structure: {0}")]
    Structure(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    Identity,
    AddDenseLayer,
    RemoveDenseLayer,
    WidenDense,
    ShrinkDense,
    AddConvCell,
    RemoveConvCell,
    WidenConv,
    PruneChannels,
}

impl MutationKind {
    pub const ALL: [MutationKind; 9] = [
        MutationKind::Identity,
        MutationKind::AddDenseLayer,
        MutationKind::RemoveDenseLayer,
        MutationKind::WidenDense,
        MutationKind::ShrinkDense,
        MutationKind::AddConvCell,
        MutationKind::RemoveConvCell,
        MutationKind::WidenConv,
        MutationKind::PruneChannels,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MutationKind::Identity => "identity",
            MutationKind::AddDenseLayer => "add_dense_layer",
            MutationKind::RemoveDenseLayer => "remove_dense_layer",
            MutationKind::WidenDense => "widen_dense",
            MutationKind::ShrinkDense => "shrink_dense",
            MutationKind::AddConvCell => "add_conv_cell",
            MutationKind::RemoveConvCell => "remove_conv_cell",
            MutationKind::WidenConv => "widen_conv",
            MutationKind::PruneChannels => "prune_channels",
        }
    }
}

impl std::fmt::Display for MutationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A concrete, replayable structural edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutation {
    pub kind: MutationKind,
    /// Layer index: insertion slot for the add kinds, the affected dense or
    /// conv layer otherwise.
    pub site: usize,
    /// Units or channels added or removed; 0 for identity.
    pub magnitude: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pool_choice: Option<PoolKind>,
    pub rng_seed: u64,
}

impl Mutation {
    pub fn identity() -> Self {
        Self {
            kind: MutationKind::Identity,
            site: 0,
            magnitude: 0,
            pool_choice: None,
            rng_seed: 0,
        }
    }
}

/// Net2Wider replication table: new unit `j` copies source unit `g[j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WidenMapping {
    pub g: Vec<usize>,
    pub replication_counts: Vec<usize>,
}

impl WidenMapping {
    /// `g(j) = j` for the first `n` units, uniformly random sources beyond.
    pub fn random<R: Rng + ?Sized>(n: usize, q: usize, rng: &mut R) -> Result<Self, MorphError> {
        if q <= n || n == 0 {
            return Err(MorphError::Argument(format!("new width {q} must exceed old width {n} >= 1")));
        }
        let g: Vec<usize> = (0..q).map(|j| if j < n { j } else { rng.random_range(0..n) }).collect();
        Self::from_table(n, g)
    }

    pub fn from_table(n: usize, g: Vec<usize>) -> Result<Self, MorphError> {
        if g.len() <= n || g.iter().take(n).enumerate().any(|(j, &s)| j != s) || g.iter().any(|&s| s >= n) {
            return Err(MorphError::Argument("mapping must extend the identity on the old units".into()));
        }
        let mut replication_counts = vec![0usize; n];
        for &s in &g {
            replication_counts[s] += 1;
        }
        Ok(Self { g, replication_counts })
    }

    pub fn width(&self) -> usize {
        self.g.len()
    }

    /// Per-new-unit scale applied to outgoing weights.
    pub fn scales(&self) -> Vec<f32> {
        self.g.iter().map(|&s| 1.0 / self.replication_counts[s] as f32).collect()
    }
}

pub fn widened_units(n: usize) -> usize {
    (3 * n).div_ceil(2).max(n + 1)
}

/// Target rank when shrinking `n` units; `None` when `n` cannot shrink.
pub fn shrunk_units(n: usize) -> Option<usize> {
    (n >= 2).then(|| (7 * n).div_ceil(10).min(n - 1))
}

pub fn channel_step(n: usize) -> usize {
    n.div_ceil(4).max(1)
}

/// Apply a mutation; randomness comes only from `mutation.rng_seed`.
pub fn apply_mutation(net: &Network, mutation: &Mutation) -> Result<Network, MorphError> {
    let mut rng = RunRng::seed_from_u64(mutation.rng_seed);
    let site = mutation.site;
    match mutation.kind {
        MutationKind::Identity => Ok(net.clone()),
        MutationKind::AddDenseLayer => add_dense_layer(net, site),
        MutationKind::RemoveDenseLayer => remove_dense_layer(net, site),
        MutationKind::WidenDense => {
            let n = hidden_width(net, site)?;
            widen_dense(net, site, n + mutation.magnitude, &mut rng)
        }
        MutationKind::ShrinkDense => {
            let n = hidden_width(net, site)?;
            let r = n
                .checked_sub(mutation.magnitude)
                .filter(|&r| r >= 1)
                .ok_or_else(|| MorphError::Degenerate(format!("cannot remove {} of {n} units", mutation.magnitude)))?;
            shrink_dense(net, site, r)
        }
        MutationKind::AddConvCell => add_conv_cell(net, site, mutation.pool_choice.unwrap_or(PoolKind::Avg)),
        MutationKind::RemoveConvCell => remove_conv_cell(net, site),
        MutationKind::WidenConv => widen_conv(net, site, mutation.magnitude, &mut rng),
        MutationKind::PruneChannels => prune_channels(net, site, mutation.magnitude),
    }
}

fn hidden_width(net: &Network, site: usize) -> Result<usize, MorphError> {
    if !net.hidden_dense_indices().contains(&site) {
        return Err(MorphError::Placement {
            site,
            reason: "not a hidden dense layer".into(),
        });
    }
    Ok(net.dense(site).expect("dense").units)
}

/// Propose at most one mutation per kind, each at a uniformly random valid
/// site. Identity is always included; degenerate proposals are skipped.
pub fn enumerate_mutations<R: Rng + ?Sized>(net: &Network, rng: &mut R) -> Vec<Mutation> {
    let mut out = Vec::new();
    let hidden = net.hidden_dense_indices();
    let cells = net.cell_starts();
    for kind in MutationKind::ALL {
        let candidates: Vec<(usize, usize)> = match kind {
            MutationKind::Identity => vec![(0, 0)],
            MutationKind::AddDenseLayer => {
                let shapes = net.shapes().unwrap_or_default();
                dense_slots(net).into_iter().map(|s| (s, shapes.get(s).map_or(0, Shape::size))).collect()
            }
            MutationKind::RemoveDenseLayer if hidden.len() >= 2 => hidden
                .iter()
                .map(|&i| (i, net.dense(i).expect("dense").units))
                .collect(),
            MutationKind::WidenDense => hidden
                .iter()
                .map(|&i| {
                    let n = net.dense(i).expect("dense").units;
                    (i, widened_units(n) - n)
                })
                .collect(),
            MutationKind::ShrinkDense => hidden
                .iter()
                .filter_map(|&i| {
                    let n = net.dense(i).expect("dense").units;
                    shrunk_units(n).map(|r| (i, n - r))
                })
                .collect(),
            MutationKind::AddConvCell => cell_slots(net),
            MutationKind::RemoveConvCell => cells
                .iter()
                .map(|&i| (i, net.conv(i).expect("conv").out_channels))
                .collect(),
            MutationKind::WidenConv => cells
                .iter()
                .map(|&i| (i, channel_step(net.conv(i).expect("conv").out_channels)))
                .collect(),
            MutationKind::PruneChannels => cells
                .iter()
                .filter_map(|&i| {
                    let n = net.conv(i).expect("conv").out_channels;
                    let k = channel_step(n);
                    (k < n).then_some((i, k))
                })
                .collect(),
            _ => Vec::new(),
        };
        let candidates: Vec<(usize, usize)> = candidates
            .into_iter()
            .filter(|&(_, m)| kind == MutationKind::Identity || m >= 1)
            .collect();
        let Some(&(site, magnitude)) = candidates.choose(rng) else { continue };
        let pool_choice = (kind == MutationKind::AddConvCell)
            .then(|| if rng.random_bool(0.5) { PoolKind::Avg } else { PoolKind::Max });
        out.push(Mutation {
            kind,
            site,
            magnitude,
            pool_choice,
            rng_seed: rng.random(),
        });
    }
    out
}

/// The layer that reads the channels produced by the conv at `site`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Consumer {
    Conv(usize),
    /// First dense layer, reading a flatten of `h x w` spatial positions.
    Dense { index: usize, h: usize, w: usize },
}

pub(crate) fn consumer_of(net: &Network, site: usize) -> Result<Consumer, MorphError> {
    let shapes = net.shapes()?;
    for i in site + 1..net.layers.len() {
        match &net.layers[i] {
            Layer::Conv2d(_) => return Ok(Consumer::Conv(i)),
            Layer::Flatten => {
                let Shape::Image { h, w, .. } = shapes[i] else { unreachable!() };
                let (index, _) = first_dense_after_flatten(net)?;
                return Ok(Consumer::Dense { index, h, w });
            }
            _ => {}
        }
    }
    Err(MorphError::Structure(format!("no layer consumes the output of layer {site}")))
}

/// Indices of the first dense layer and the flatten layer before it.
pub(crate) fn first_dense_after_flatten(net: &Network) -> Result<(usize, usize), MorphError> {
    let flatten = net.flatten_index().ok_or_else(|| MorphError::Structure("no flatten layer".into()))?;
    let dense = (flatten + 1..net.layers.len())
        .find(|&i| matches!(net.layers[i], Layer::Dense(_)))
        .ok_or_else(|| MorphError::Structure("no dense layer after flatten".into()))?;
    Ok((dense, flatten))
}

/// Rewire the input channels of a consumer: new channel `j` reads old
/// channel `source[j]` with its weights multiplied by `scale[j]`.
pub(crate) fn remap_consumer_inputs(net: &mut Network, consumer: Consumer, source: &[usize], scale: &[f32]) {
    match consumer {
        Consumer::Conv(i) => {
            let Layer::Conv2d(k) = &mut net.layers[i] else { unreachable!() };
            let (cin, cout) = (k.in_channels, k.out_channels);
            let mut kernel = Vec::with_capacity(9 * source.len() * cout);
            for t in 0..9 {
                for (j, &s) in source.iter().enumerate() {
                    let from = (t * cin + s) * cout;
                    kernel.extend(k.kernel[from..from + cout].iter().map(|v| v * scale[j]));
                }
            }
            k.kernel = kernel;
            k.in_channels = source.len();
        }
        Consumer::Dense { index, h, w } => {
            let Layer::Dense(d) = &mut net.layers[index] else { unreachable!() };
            let c = d.inputs / (h * w);
            let units = d.units;
            let mut weight = Vec::with_capacity(h * w * source.len() * units);
            for p in 0..h * w {
                for (j, &s) in source.iter().enumerate() {
                    let from = (p * c + s) * units;
                    weight.extend(d.weight[from..from + units].iter().map(|v| v * scale[j]));
                }
            }
            d.weight = weight;
            d.inputs = h * w * source.len();
        }
    }
}

/// Sum of the consumer weights reading input channel `ch`, per output.
pub(crate) fn consumer_channel_sums(net: &Network, consumer: Consumer, ch: usize) -> Vec<f64> {
    match consumer {
        Consumer::Conv(i) => {
            let k = net.conv(i).expect("conv");
            let mut sums = vec![0.0f64; k.out_channels];
            for t in 0..9 {
                let from = k.index(t, ch, 0);
                for (s, v) in sums.iter_mut().zip(&k.kernel[from..from + k.out_channels]) {
                    *s += *v as f64;
                }
            }
            sums
        }
        Consumer::Dense { index, h, w } => {
            let d = net.dense(index).expect("dense");
            let c = d.inputs / (h * w);
            let mut sums = vec![0.0f64; d.units];
            for p in 0..h * w {
                let from = (p * c + ch) * d.units;
                for (s, v) in sums.iter_mut().zip(&d.weight[from..from + d.units]) {
                    *s += *v as f64;
                }
            }
            sums
        }
    }
}

pub(crate) fn consumer_bias_mut(net: &mut Network, consumer: Consumer) -> &mut Vec<f32> {
    match consumer {
        Consumer::Conv(i) => match &mut net.layers[i] {
            Layer::Conv2d(k) => &mut k.bias,
            _ => unreachable!(),
        },
        Consumer::Dense { index, .. } => match &mut net.layers[index] {
            Layer::Dense(d) => &mut d.bias,
            _ => unreachable!(),
        },
    }
}
