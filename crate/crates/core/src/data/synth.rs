//! Reproducible synthetic data: an adult-census-like table and Gaussian blobs.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, Uniform};

use super::{Column, ColumnData, DataError, Dataset, SplitTag, TabularTable};
use crate::net::{Shape, Tensor};
use crate::rng::{rng_from, stream};

enum Feature {
    Numeric { name: &'static str, gen: fn(&mut dyn rand::RngCore) -> f64 },
    Categorical { name: &'static str, levels: usize, decay: f64 },
}

fn age(r: &mut dyn rand::RngCore) -> f64 {
    Normal::<f64>::new(38.6, 13.6).unwrap().sample(r).clamp(17.0, 90.0).round()
}
fn fnlwgt(r: &mut dyn rand::RngCore) -> f64 {
    LogNormal::<f64>::new(12.0, 0.5).unwrap().sample(r).round()
}
fn education_num(r: &mut dyn rand::RngCore) -> f64 {
    Normal::<f64>::new(10.0, 2.6).unwrap().sample(r).clamp(1.0, 16.0).round()
}
fn capital_gain(r: &mut dyn rand::RngCore) -> f64 {
    if r.random_bool(0.08) {
        LogNormal::<f64>::new(8.5, 1.0).unwrap().sample(r).min(99_999.0).round()
    } else {
        0.0
    }
}
fn capital_loss(r: &mut dyn rand::RngCore) -> f64 {
    if r.random_bool(0.05) {
        Normal::<f64>::new(1870.0, 360.0).unwrap().sample(r).clamp(150.0, 4360.0).round()
    } else {
        0.0
    }
}
fn hours(r: &mut dyn rand::RngCore) -> f64 {
    Normal::<f64>::new(40.4, 12.3).unwrap().sample(r).clamp(1.0, 99.0).round()
}

/// Columns in informativeness order: the first `n_informative` drive labels.
const FEATURES: [Feature; 14] = [
    Feature::Numeric { name: "education_num", gen: education_num },
    Feature::Categorical { name: "relationship", levels: 6, decay: 0.55 },
    Feature::Numeric { name: "age", gen: age },
    Feature::Categorical { name: "marital_status", levels: 7, decay: 0.5 },
    Feature::Numeric { name: "hours_per_week", gen: hours },
    Feature::Numeric { name: "capital_gain", gen: capital_gain },
    Feature::Categorical { name: "occupation", levels: 14, decay: 0.85 },
    Feature::Categorical { name: "sex", levels: 2, decay: 0.5 },
    Feature::Categorical { name: "education", levels: 16, decay: 0.75 },
    Feature::Categorical { name: "workclass", levels: 8, decay: 0.35 },
    Feature::Numeric { name: "capital_loss", gen: capital_loss },
    Feature::Categorical { name: "race", levels: 5, decay: 0.2 },
    Feature::Numeric { name: "fnlwgt", gen: fnlwgt },
    Feature::Categorical { name: "native_country", levels: 41, decay: 0.3 },
];

/// One-hot width of the generated table before any column reduction.
pub const ADULT_LIKE_ONE_HOT_WIDTH: usize = 105;

fn level_weights(levels: usize, decay: f64) -> Vec<f64> {
    (0..levels).map(|i| decay.powi(i as i32) + 0.003).collect()
}

fn pick(weights: &[f64], r: &mut dyn rand::RngCore) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = r.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Two-class table shaped like the adult census data: 6 numeric and 8
/// categorical columns encoding to 105 one-hot columns. Labels come from a
/// sparse linear score over the first `n_informative` columns plus Gaussian
/// noise, thresholded so that a fraction `class_balance` of rows is class 0.
pub fn synth_tabular(n_rows: usize, n_informative: usize, class_balance: f64, seed: u64) -> Result<TabularTable, DataError> {
    if n_rows == 0 {
        return Err(DataError::Argument("n_rows must be >= 1".into()));
    }
    if n_informative > FEATURES.len() {
        return Err(DataError::Argument(format!(
            "n_informative must be <= {}",
            FEATURES.len()
        )));
    }
    if !(class_balance > 0.0 && class_balance < 1.0) {
        return Err(DataError::Argument(format!("class_balance {class_balance} outside (0, 1)")));
    }
    let mut rng = rng_from(seed, &[stream::DATA, 1]);
    let effect = Normal::<f64>::new(0.0, 1.0).unwrap();
    let mut score = vec![0.0f64; n_rows];
    let mut columns = Vec::with_capacity(FEATURES.len());
    for (j, feature) in FEATURES.iter().enumerate() {
        let informative = j < n_informative;
        match feature {
            Feature::Numeric { name, gen } => {
                let values: Vec<f64> = (0..n_rows).map(|_| gen(&mut rng)).collect();
                if informative {
                    let mean = values.iter().sum::<f64>() / n_rows as f64;
                    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n_rows as f64).sqrt();
                    let weight = 1.5 * effect.sample(&mut rng).signum();
                    for (s, v) in score.iter_mut().zip(&values) {
                        if sd > 0.0 {
                            *s += weight * (v - mean) / sd;
                        }
                    }
                }
                columns.push(Column {
                    name: name.to_string(),
                    data: ColumnData::Numeric(values),
                });
            }
            Feature::Categorical { name, levels, decay } => {
                let weights = level_weights(*levels, *decay);
                let codes: Vec<usize> = (0..n_rows).map(|_| pick(&weights, &mut rng)).collect();
                if informative {
                    let effects: Vec<f64> = (0..*levels).map(|_| 1.5 * effect.sample(&mut rng)).collect();
                    for (s, &c) in score.iter_mut().zip(&codes) {
                        *s += effects[c];
                    }
                }
                columns.push(Column {
                    name: name.to_string(),
                    data: ColumnData::Categorical(codes.iter().map(|c| format!("{name}_{c:02}")).collect()),
                });
            }
        }
    }
    for s in score.iter_mut() {
        *s += effect.sample(&mut rng);
    }
    let mut sorted = score.clone();
    sorted.sort_by(f64::total_cmp);
    let cut = ((class_balance * n_rows as f64).round() as usize).min(n_rows);
    let labels = if cut == n_rows {
        vec![0; n_rows]
    } else {
        let threshold = sorted[cut];
        let mut ones_left = n_rows - cut;
        // rows at or above the threshold are class 1; ties resolved in row order
        score
            .iter()
            .map(|&s| {
                if s >= threshold && ones_left > 0 {
                    ones_left -= 1;
                    1
                } else {
                    0
                }
            })
            .collect()
    };
    TabularTable::new(columns, labels, 2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobOptions {
    pub n_samples: usize,
    pub num_classes: usize,
    pub shape: Shape,
    /// Per-coordinate standard deviation around each class centre.
    pub spread: f64,
}

/// Isotropic Gaussian clusters with centres drawn in `[0.2, 0.8]^d`, clamped
/// to `[0, 1]`. Labels cycle through the classes.
pub fn synth_blobs(options: &BlobOptions, seed: u64) -> Result<Dataset, DataError> {
    let BlobOptions {
        n_samples,
        num_classes,
        shape,
        spread,
    } = *options;
    if n_samples == 0 || num_classes == 0 || shape.size() == 0 {
        return Err(DataError::Argument("blob sizes must be >= 1".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(DataError::Argument(format!("invalid spread {spread}")));
    }
    let d = shape.size();
    let mut rng = rng_from(seed, &[stream::DATA, 2]);
    let centre = Uniform::new(0.2, 0.8).unwrap();
    let centres: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..d).map(|_| centre.sample(&mut rng)).collect())
        .collect();
    let noise = Normal::<f64>::new(0.0, spread).unwrap();
    let mut data = Vec::with_capacity(n_samples * d);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let y = i % num_classes;
        labels.push(y as u32);
        data.extend(centres[y].iter().map(|c| (c + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32));
    }
    let mut dims = vec![n_samples];
    dims.extend(shape.dims());
    let inputs = Tensor::new(dims, data).map_err(|e| DataError::Dimension(e.to_string()))?;
    Dataset::new(inputs, labels, num_classes, SplitTag::Full)
}
