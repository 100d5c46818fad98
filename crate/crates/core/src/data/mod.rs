//! Datasets, deterministic splits, loaders and synthetic generators.

mod idx;
mod synth;
mod tabular;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{Shape, Tensor};
use crate::rng::{rng_from, stream};

pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx};
pub use synth::{synth_blobs, synth_tabular, BlobOptions, ADULT_LIKE_ONE_HOT_WIDTH};
pub use tabular::{encode_table, load_csv, tabular_to_image, Column, ColumnData, ColumnKind, EncodedTable, TabularImage, TabularTable};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated {what}: need {need} bytes, have {have}")]
    Truncated { what: &'static str, need: usize, have: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("too few samples: need at least {need}, have {have}")]
    TooFew { need: usize, have: usize },
    #[error("table encodes to {have} columns, {need} needed (deficit {})", need - have)]
    ColumnDeficit { have: usize, need: usize },
    #[error("invalid table: {0}")]
    Table(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Full,
    Train,
    Validation,
    Test,
}

/// Labelled samples; inputs are `(N, h, w, c)` or `(N, d)` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<u32>,
    pub num_classes: usize,
    pub tag: SplitTag,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<u32>, num_classes: usize, tag: SplitTag) -> Result<Self, DataError> {
        if inputs.len() != labels.len() {
            return Err(DataError::Dimension(format!(
                "{} samples but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if inputs.shape().len() != 2 && inputs.shape().len() != 4 {
            return Err(DataError::Dimension(format!("unsupported input rank {:?}", inputs.shape())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= num_classes) {
            return Err(DataError::Dimension(format!("label {bad} outside {num_classes} classes")));
        }
        if let Some(bad) = inputs.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DataError::Dimension(format!("input value {bad} outside [0, 1]")));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            tag,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> Shape {
        Shape::from_dims(&self.inputs.shape()[1..]).expect("validated rank")
    }

    pub fn subset(&self, indices: &[usize], tag: SplitTag) -> Dataset {
        Dataset {
            inputs: self.inputs.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            tag,
        }
    }

    /// First `n` samples (or all, if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx, self.tag)
    }

    /// Fraction of the most frequent label.
    pub fn majority_fraction(&self) -> f64 {
        let mut counts = vec![0usize; self.num_classes];
        for &y in &self.labels {
            counts[y as usize] += 1;
        }
        counts.into_iter().max().unwrap_or(0) as f64 / self.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(seed, &[stream::SPLIT]));
    idx
}

/// Shuffled split of a pool without a test set: 10% test first, then 10%
/// of the remainder as validation.
pub fn split(data: &Dataset, seed: u64) -> Result<Splits, DataError> {
    let n = data.len();
    if n < 10 {
        return Err(DataError::TooFew { need: 10, have: n });
    }
    let idx = shuffled(n, seed);
    let n_test = n / 10;
    let n_val = (n - n_test) / 10;
    let (test, rest) = idx.split_at(n_test);
    let (val, train) = rest.split_at(n_val);
    Ok(Splits {
        train: data.subset(train, SplitTag::Train),
        val: data.subset(val, SplitTag::Validation),
        test: data.subset(test, SplitTag::Test),
    })
}

/// Split a training pool when an external test set exists: 90% train,
/// 10% validation.
pub fn split_with_test(pool: &Dataset, test: &Dataset, seed: u64) -> Result<Splits, DataError> {
    let n = pool.len();
    if n < 10 {
        return Err(DataError::TooFew { need: 10, have: n });
    }
    if test.is_empty() {
        return Err(DataError::TooFew { need: 1, have: 0 });
    }
    let idx = shuffled(n, seed);
    let (val, train) = idx.split_at(n / 10);
    let mut test = test.clone();
    test.tag = SplitTag::Test;
    Ok(Splits {
        train: pool.subset(train, SplitTag::Train),
        val: pool.subset(val, SplitTag::Validation),
        test,
    })
}
