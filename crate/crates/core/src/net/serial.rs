//! Model files: magic, version, JSON descriptor, little-endian `f32` blob.
//!
//! ```text
//! "ECTN" | u32 version | u64 descriptor length | descriptor JSON | blob
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{pooled_dim, BatchNorm, Conv2d, Dense, Layer, LayerSpec, NetError, Network, PoolKind, Shape};

pub const MAGIC: &[u8; 4] = b"ECTN";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checksum mismatch: descriptor says {expected:08x}, blob hashes to {actual:08x}")]
    Checksum { expected: u32, actual: u32 },
    #[error("descriptor does not describe a valid network: {0}")]
    Network(#[from] NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub layer: usize,
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
    pub tensors: Vec<TensorEntry>,
    pub blob_len: usize,
    pub crc32: u32,
}

fn named_buffers(layer: &Layer<f32>) -> Vec<(&'static str, &[f32])> {
    match layer {
        Layer::Dense(d) => vec![("weight", &d.weight), ("bias", &d.bias)],
        Layer::Conv2d(c) => vec![("kernel", &c.kernel), ("bias", &c.bias)],
        Layer::BatchNorm(b) => vec![
            ("gamma", &b.gamma),
            ("beta", &b.beta),
            ("running_mean", &b.running_mean),
            ("running_var", &b.running_var),
        ],
        _ => Vec::new(),
    }
}

fn named_buffers_mut(layer: &mut Layer<f32>) -> Vec<(&'static str, &mut Vec<f32>)> {
    match layer {
        Layer::Dense(d) => vec![("weight", &mut d.weight), ("bias", &mut d.bias)],
        Layer::Conv2d(c) => vec![("kernel", &mut c.kernel), ("bias", &mut c.bias)],
        Layer::BatchNorm(b) => vec![
            ("gamma", &mut b.gamma),
            ("beta", &mut b.beta),
            ("running_mean", &mut b.running_mean),
            ("running_var", &mut b.running_var),
        ],
        _ => Vec::new(),
    }
}

pub fn save(net: &Network<f32>) -> Vec<u8> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (i, layer) in net.layers.iter().enumerate() {
        for (name, buf) in named_buffers(layer) {
            tensors.push(TensorEntry {
                layer: i,
                name: name.to_string(),
                offset: blob.len(),
                len: buf.len(),
            });
            for v in buf {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let descriptor = Descriptor {
        input_shape: net.input_shape.dims(),
        num_classes: net.num_classes,
        layers: net.specs(),
        tensors,
        blob_len: blob.len(),
        crc32: crc32fast::hash(&blob),
    };
    let json = serde_json::to_vec(&descriptor).expect("descriptor serializes");
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    out
}

/// Parse only the descriptor, without checking the blob.
pub fn read_descriptor(bytes: &[u8]) -> Result<(Descriptor, usize), ModelFileError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(ModelFileError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(ModelFileError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(ModelFileError::Version(version));
    }
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json_end = HEADER_LEN
        .checked_add(json_len)
        .ok_or_else(|| ModelFileError::Header("descriptor length overflows".into()))?;
    if bytes.len() < json_end {
        return Err(ModelFileError::Truncated {
            expected: json_end,
            found: bytes.len(),
        });
    }
    let descriptor: Descriptor =
        serde_json::from_slice(&bytes[HEADER_LEN..json_end]).map_err(|e| ModelFileError::Header(e.to_string()))?;
    Ok((descriptor, json_end))
}

pub fn load(bytes: &[u8]) -> Result<Network<f32>, ModelFileError> {
    let (d, blob_start) = read_descriptor(bytes)?;
    let blob = &bytes[blob_start..];
    let expected = blob_start + d.blob_len;
    if blob.len() < d.blob_len {
        return Err(ModelFileError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if blob.len() > d.blob_len {
        return Err(ModelFileError::Header(format!(
            "descriptor declares a {}-byte blob but {} bytes follow",
            d.blob_len,
            blob.len()
        )));
    }
    let actual = crc32fast::hash(blob);
    if actual != d.crc32 {
        return Err(ModelFileError::Checksum {
            expected: d.crc32,
            actual,
        });
    }
    let input_shape = Shape::from_dims(&d.input_shape)
        .ok_or_else(|| ModelFileError::Header(format!("bad input shape {:?}", d.input_shape)))?;
    let mut net = skeleton(input_shape, d.num_classes, &d.layers)?;

    let mut entries = d.tensors.iter();
    let mut cursor = 0usize;
    for (i, layer) in net.layers.iter_mut().enumerate() {
        for (name, buf) in named_buffers_mut(layer) {
            let e = entries
                .next()
                .ok_or_else(|| ModelFileError::Header(format!("manifest lacks layer {i} {name}")))?;
            if e.layer != i || e.name != name || e.len != buf.len() || e.offset != cursor {
                return Err(ModelFileError::Header(format!(
                    "manifest entry {e:?} does not match layer {i} {name} of length {}",
                    buf.len()
                )));
            }
            let end = cursor + 4 * e.len;
            if end > blob.len() {
                return Err(ModelFileError::Header("manifest runs past the blob".into()));
            }
            for (v, chunk) in buf.iter_mut().zip(blob[cursor..end].chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
            cursor = end;
        }
    }
    if entries.next().is_some() || cursor != blob.len() {
        return Err(ModelFileError::Header("manifest and blob lengths disagree".into()));
    }
    net.validate()?;
    Ok(net)
}

fn skeleton(input_shape: Shape, num_classes: usize, specs: &[LayerSpec]) -> Result<Network<f32>, NetError> {
    let mut layers = Vec::with_capacity(specs.len());
    let mut shape = input_shape;
    for (index, spec) in specs.iter().enumerate() {
        let bad = |reason: &str| NetError::Structure(format!("layer {index}: {reason}"));
        let (layer, next) = match (*spec, shape) {
            (LayerSpec::Dense { units }, Shape::Flat { d }) => (Layer::Dense(Dense::zeros(d, units)), Shape::flat(units)),
            (LayerSpec::Conv2d { out_channels }, Shape::Image { h, w, c }) => {
                (Layer::Conv2d(Conv2d::zeros(c, out_channels)), Shape::image(h, w, out_channels))
            }
            (LayerSpec::AvgPool | LayerSpec::MaxPool, Shape::Image { h, w, c }) => {
                let kind = if matches!(spec, LayerSpec::AvgPool) { PoolKind::Avg } else { PoolKind::Max };
                (Layer::Pool(kind), Shape::image(pooled_dim(h), pooled_dim(w), c))
            }
            (LayerSpec::BatchNorm { epsilon, momentum }, s) => {
                let channels = match s {
                    Shape::Image { c, .. } => c,
                    Shape::Flat { d } => d,
                };
                let mut bn = BatchNorm::identity(channels);
                bn.epsilon = epsilon;
                bn.momentum = momentum;
                (Layer::BatchNorm(bn), s)
            }
            (LayerSpec::Relu, s) => (Layer::Relu, s),
            (LayerSpec::Flatten, s) => (Layer::Flatten, Shape::flat(s.size())),
            (LayerSpec::SoftmaxOutput, s @ Shape::Flat { .. }) => (Layer::Softmax, s),
            _ => return Err(bad("incompatible with its input shape")),
        };
        layers.push(layer);
        shape = next;
    }
    Ok(Network {
        input_shape,
        num_classes,
        layers,
    })
}

pub fn save_file(net: &Network<f32>, path: &Path) -> Result<(), ModelFileError> {
    std::fs::write(path, save(net))?;
    Ok(())
}

pub fn load_file(path: &Path) -> Result<Network<f32>, ModelFileError> {
    load(&std::fs::read(path)?)
}
