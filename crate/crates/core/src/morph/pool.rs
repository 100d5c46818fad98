//! Adapting the first dense layer when a pooling layer is inserted or removed
//! upstream of it.

use rand::seq::index::sample;
use rand::SeedableRng;

use super::{first_dense_after_flatten, MorphError};
use crate::net::{pooled_dim, Layer, Network, PoolKind, Shape};
use crate::rng::RunRng;

/// Spatial layout of the rows of a dense weight matrix fed by a flatten
/// layer: row `(y * w + x) * c + ch`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlatLayout {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl FlatLayout {
    pub fn rows(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn pooled(&self) -> FlatLayout {
        FlatLayout {
            h: pooled_dim(self.h),
            w: pooled_dim(self.w),
            c: self.c,
        }
    }

    #[inline]
    fn row(&self, y: usize, x: usize, ch: usize) -> usize {
        (y * self.w + x) * self.c + ch
    }
}

/// Aggregate each 2x2 spatial block of rows as pooling would: the mean of
/// the block for average pooling, the entry of largest magnitude (first in
/// row-major order on ties) for max pooling. Blocks clipped by odd edges
/// aggregate only their existing cells.
pub fn pool_dense_weights(weight: &[f32], units: usize, layout: FlatLayout, kind: PoolKind) -> Vec<f32> {
    assert_eq!(weight.len(), layout.rows() * units, "weight does not match layout");
    let out_layout = layout.pooled();
    let mut out = vec![0.0f32; out_layout.rows() * units];
    for oy in 0..out_layout.h {
        for ox in 0..out_layout.w {
            for ch in 0..layout.c {
                let dst = out_layout.row(oy, ox, ch) * units;
                let mut sources = Vec::with_capacity(4);
                for y in 2 * oy..(2 * oy + 2).min(layout.h) {
                    for x in 2 * ox..(2 * ox + 2).min(layout.w) {
                        sources.push(layout.row(y, x, ch) * units);
                    }
                }
                for u in 0..units {
                    out[dst + u] = match kind {
                        PoolKind::Avg => {
                            // sums of at most four f32 values are exact in f64
                            let sum: f64 = sources.iter().map(|&s| weight[s + u] as f64).sum();
                            (sum / sources.len() as f64) as f32
                        }
                        PoolKind::Max => {
                            let mut best = weight[sources[0] + u];
                            for &s in &sources[1..] {
                                if weight[s + u].abs() > best.abs() {
                                    best = weight[s + u];
                                }
                            }
                            best
                        }
                    };
                }
            }
        }
    }
    out
}

/// Inverse direction: copy every row of a pooled layout to each cell of its
/// 2x2 source block in `target`.
pub fn unpool_dense_weights(weight: &[f32], units: usize, target: FlatLayout) -> Vec<f32> {
    let pooled = target.pooled();
    assert_eq!(weight.len(), pooled.rows() * units, "weight does not match pooled layout");
    let mut out = vec![0.0f32; target.rows() * units];
    for y in 0..target.h {
        for x in 0..target.w {
            for ch in 0..target.c {
                let src = pooled.row(y / 2, x / 2, ch) * units;
                let dst = target.row(y, x, ch) * units;
                out[dst..dst + units].copy_from_slice(&weight[src..src + units]);
            }
        }
    }
    out
}

/// Keep a random subset of rows (in their original order), as many as the
/// pooled layout needs.
pub fn random_cut_dense_weights(weight: &[f32], units: usize, layout: FlatLayout, seed: u64) -> Vec<f32> {
    let keep = layout.pooled().rows();
    let mut rows: Vec<usize> = sample(&mut RunRng::seed_from_u64(seed), layout.rows(), keep).into_vec();
    rows.sort_unstable();
    let mut out = Vec::with_capacity(keep * units);
    for r in rows {
        out.extend_from_slice(&weight[r * units..(r + 1) * units]);
    }
    out
}

/// How the first dense layer is adapted when a pool is inserted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolAdaptation {
    /// Aggregate weight blocks with the pool's own function.
    Structured,
    /// Keep a seeded random subset of incoming connections.
    RandomCut { seed: u64 },
}

fn flatten_layout(net: &Network) -> Result<(usize, FlatLayout), MorphError> {
    let shapes = net.shapes()?;
    let (dense, flatten) = first_dense_after_flatten(net)?;
    match shapes[flatten] {
        Shape::Image { h, w, c } => Ok((dense, FlatLayout { h, w, c })),
        Shape::Flat { .. } => Err(MorphError::Structure("flatten input is not spatial".into())),
    }
}

/// Insert a pooling layer at layer index `at` (before the flatten layer) and
/// shrink the first dense layer's incoming weights to match.
pub fn insert_pool(net: &Network, at: usize, kind: PoolKind, adaptation: PoolAdaptation) -> Result<Network, MorphError> {
    let flatten = net.flatten_index().ok_or_else(|| MorphError::Structure("no flatten layer".into()))?;
    if at > flatten {
        return Err(MorphError::Placement {
            site: at,
            reason: "pooling must come before the flatten layer".into(),
        });
    }
    let shapes = net.shapes()?;
    if let Shape::Image { h, w, .. } = shapes[at] {
        if h < 2 || w < 2 {
            return Err(MorphError::Degenerate(format!("spatial size {h}x{w} too small to pool")));
        }
    } else {
        return Err(MorphError::Placement {
            site: at,
            reason: "no spatial input at this position".into(),
        });
    }
    let (dense_idx, layout) = flatten_layout(net)?;
    let mut child = net.clone();
    let Layer::Dense(d) = &mut child.layers[dense_idx] else { unreachable!() };
    d.weight = match adaptation {
        PoolAdaptation::Structured => pool_dense_weights(&d.weight, d.units, layout, kind),
        PoolAdaptation::RandomCut { seed } => random_cut_dense_weights(&d.weight, d.units, layout, seed),
    };
    d.inputs = layout.pooled().rows();
    child.layers.insert(at, Layer::Pool(kind));
    child.validate()?;
    Ok(child)
}

/// Remove the pooling layer at index `at`, replicating the first dense
/// layer's incoming weights over each 2x2 block.
pub fn remove_pool(net: &Network, at: usize) -> Result<Network, MorphError> {
    if !matches!(net.layers.get(at), Some(Layer::Pool(_))) {
        return Err(MorphError::Placement {
            site: at,
            reason: "not a pooling layer".into(),
        });
    }
    let mut child = net.clone();
    child.layers.remove(at);
    unpool_first_dense(&mut child)?;
    child.validate()?;
    Ok(child)
}

/// After a pool has been taken out of `net`'s layer list, grow the first
/// dense layer to the new flatten size by replication.
pub(super) fn unpool_first_dense(net: &mut Network) -> Result<(), MorphError> {
    let (dense_idx, flatten) = first_dense_after_flatten(net)?;
    let shapes = net.shapes_through(flatten)?;
    let Shape::Image { h, w, c } = shapes[flatten] else {
        return Err(MorphError::Structure("flatten input is not spatial".into()));
    };
    let target = FlatLayout { h, w, c };
    let Layer::Dense(d) = &mut net.layers[dense_idx] else { unreachable!() };
    if d.inputs != target.pooled().rows() {
        return Err(MorphError::Structure(format!(
            "dense layer has {} inputs, expected {} before unpooling",
            d.inputs,
            target.pooled().rows()
        )));
    }
    d.weight = unpool_dense_weights(&d.weight, d.units, target);
    d.inputs = target.rows();
    Ok(())
}
