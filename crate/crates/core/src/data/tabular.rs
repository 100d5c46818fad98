//! Tabular tables and their conversion into small single-channel images.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, SplitTag};
use crate::net::Tensor;
use crate::rng::{rng_from, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularTable {
    pub columns: Vec<Column>,
    pub labels: Vec<u32>,
    pub num_classes: usize,
}

impl TabularTable {
    pub fn new(columns: Vec<Column>, labels: Vec<u32>, num_classes: usize) -> Result<Self, DataError> {
        let n = labels.len();
        for c in &columns {
            if c.data.len() != n {
                return Err(DataError::Table(format!("column {} has {} rows, expected {n}", c.name, c.data.len())));
            }
            match &c.data {
                ColumnData::Numeric(v) if v.iter().any(|x| !x.is_finite()) => {
                    return Err(DataError::Table(format!("column {} has non-finite values", c.name)))
                }
                ColumnData::Categorical(v) if v.iter().any(|s| s.is_empty()) => {
                    return Err(DataError::Table(format!("column {} has missing values", c.name)))
                }
                _ => {}
            }
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= num_classes) {
            return Err(DataError::Table(format!("label {bad} outside {num_classes} classes")));
        }
        Ok(Self {
            columns,
            labels,
            num_classes,
        })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Debug, Deserialize)]
struct Schema {
    label: String,
    columns: BTreeMap<String, ColumnKind>,
}

/// Read a headered CSV file with a JSON schema sidecar of the form
/// `{"label": "<column>", "columns": {"<name>": "numeric" | "categorical"}}`.
/// Columns absent from the schema are ignored; label strings are mapped to
/// classes in sorted order. Empty cells and `?` count as missing.
pub fn load_csv(csv_path: &Path, schema_path: &Path) -> Result<TabularTable, DataError> {
    let schema: Schema = serde_json::from_slice(&std::fs::read(schema_path)?)?;
    let mut reader = csv::Reader::from_path(csv_path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::Table(format!("column {name} missing from csv header")))
    };
    let label_at = find(&schema.label)?;
    let mut wanted = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if let Some(kind) = schema.columns.get(h.trim()) {
            if i != label_at {
                wanted.push((i, h.trim().to_string(), *kind));
            }
        }
    }
    for name in schema.columns.keys() {
        find(name)?;
    }
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); wanted.len()];
    let mut label_raw = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |i: usize| -> Result<String, DataError> {
            let v = record.get(i).unwrap_or("").trim();
            if v.is_empty() || v == "?" {
                Err(DataError::Table(format!("missing value in row {} column {}", r + 1, &headers[i])))
            } else {
                Ok(v.to_string())
            }
        };
        for (slot, (i, _, _)) in raw.iter_mut().zip(&wanted) {
            slot.push(cell(*i)?);
        }
        label_raw.push(cell(label_at)?);
    }
    let mut columns = Vec::with_capacity(wanted.len());
    for ((_, name, kind), values) in wanted.into_iter().zip(raw) {
        let data = match kind {
            ColumnKind::Numeric => ColumnData::Numeric(
                values
                    .iter()
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|_| DataError::Table(format!("column {name}: {v:?} is not numeric")))
                    })
                    .collect::<Result<_, _>>()?,
            ),
            ColumnKind::Categorical => ColumnData::Categorical(values),
        };
        columns.push(Column { name, data });
    }
    let classes: BTreeSet<&String> = label_raw.iter().collect();
    let index: BTreeMap<&String, u32> = classes.iter().enumerate().map(|(i, s)| (*s, i as u32)).collect();
    let labels = label_raw.iter().map(|s| index[s]).collect();
    TabularTable::new(columns, labels, classes.len())
}

/// One-hot / min-max encoding of a table, column-major by encoded column.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTable {
    pub names: Vec<String>,
    /// Occurrence count for one-hot columns, `None` for numeric columns.
    pub counts: Vec<Option<usize>>,
    pub values: Vec<Vec<f32>>,
}

impl EncodedTable {
    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, r: usize) -> Vec<f32> {
        self.values.iter().map(|c| c[r]).collect()
    }

    fn remove(&mut self, i: usize) {
        self.names.remove(i);
        self.counts.remove(i);
        self.values.remove(i);
    }
}

/// One-hot categorical columns (categories in sorted order) and min-max
/// scaled numeric columns; constant numeric columns map to 0.
pub fn encode_table(table: &TabularTable) -> EncodedTable {
    let mut out = EncodedTable {
        names: Vec::new(),
        counts: Vec::new(),
        values: Vec::new(),
    };
    for col in &table.columns {
        match &col.data {
            ColumnData::Numeric(v) => {
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let span = hi - lo;
                out.names.push(col.name.clone());
                out.counts.push(None);
                out.values.push(
                    v.iter()
                        .map(|&x| if span > 0.0 { ((x - lo) / span) as f32 } else { 0.0 })
                        .collect(),
                );
            }
            ColumnData::Categorical(v) => {
                let cats: BTreeSet<&String> = v.iter().collect();
                for cat in cats {
                    let values: Vec<f32> = v.iter().map(|s| if s == cat { 1.0 } else { 0.0 }).collect();
                    out.names.push(format!("{}={}", col.name, cat));
                    out.counts.push(Some(v.iter().filter(|s| *s == cat).count()));
                    out.values.push(values);
                }
            }
        }
    }
    out
}

/// A table rendered as `(N, h, w, 1)` images.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularImage {
    pub dataset: Dataset,
    /// Encoded columns kept after reduction, in encoding order.
    pub columns: Vec<String>,
    /// Pixel `p` (row-major) holds kept column `permutation[p]`.
    pub permutation: Vec<usize>,
}

impl TabularImage {
    /// Undo the column scramble for one image, returning values in encoding
    /// order.
    pub fn unscramble(&self, pixels: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; pixels.len()];
        for (p, &col) in self.permutation.iter().enumerate() {
            out[col] = pixels[p];
        }
        out
    }
}

/// Encode, drop the lowest-count one-hot columns until exactly `h * w`
/// remain, scramble the column order with `seed` and reshape row-major.
pub fn tabular_to_image(table: &TabularTable, shape: (usize, usize), seed: u64) -> Result<TabularImage, DataError> {
    let (h, w) = shape;
    let need = h * w;
    if need == 0 {
        return Err(DataError::Argument("image must have at least one pixel".into()));
    }
    if table.rows() == 0 {
        return Err(DataError::TooFew { need: 1, have: 0 });
    }
    let mut enc = encode_table(table);
    if enc.width() < need {
        return Err(DataError::ColumnDeficit {
            have: enc.width(),
            need,
        });
    }
    while enc.width() > need {
        // lowest count first; among ties the right-most column goes first
        let victim = enc
            .counts
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.map(|c| (c, std::cmp::Reverse(i))))
            .min()
            .map(|(_, std::cmp::Reverse(i))| i)
            .ok_or_else(|| {
                DataError::Table(format!(
                    "{} numeric columns exceed the {need} pixels available",
                    enc.width()
                ))
            })?;
        enc.remove(victim);
    }
    let mut permutation: Vec<usize> = (0..need).collect();
    permutation.shuffle(&mut rng_from(seed, &[stream::DATA]));
    let n = table.rows();
    let mut pixels = Vec::with_capacity(n * need);
    for r in 0..n {
        pixels.extend(permutation.iter().map(|&c| enc.values[c][r]));
    }
    let inputs = Tensor::new(vec![n, h, w, 1], pixels).map_err(|e| DataError::Dimension(e.to_string()))?;
    Ok(TabularImage {
        dataset: Dataset::new(inputs, table.labels.clone(), table.num_classes, SplitTag::Full)?,
        columns: enc.names,
        permutation,
    })
}
