//! Minimal sequential network engine.
//!
//! Networks are flat lists of layers in channels-last layout. Everything that
//! touches numbers is generic over [`Scalar`] so the same code runs in `f32`
//! for training and in `f64` for gradient checking.

mod engine;
pub mod gradcheck;
mod kernels;
mod scalar;
pub mod serial;
mod train;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{Gradients, Mode, Trace};
pub use scalar::Scalar;
pub use train::{cross_entropy, evaluate, train_epochs, EpochRecord, Evaluation, TrainHistory, TrainOptions};

pub const DEFAULT_BN_EPSILON: f64 = 1e-3;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("layer {index} ({kind}): {reason}")]
    Composition {
        index: usize,
        kind: LayerKind,
        reason: String,
    },
    #[error("invalid network structure: {0}")]
    Structure(String),
    #[error("input batch has shape {got:?}, network expects samples of shape {expected:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("training diverged in epoch {epoch} (non-finite loss)")]
    Divergence { epoch: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Per-sample activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shape {
    Image { h: usize, w: usize, c: usize },
    Flat { d: usize },
}

impl Shape {
    pub fn image(h: usize, w: usize, c: usize) -> Self {
        Shape::Image { h, w, c }
    }

    pub fn flat(d: usize) -> Self {
        Shape::Flat { d }
    }

    pub fn size(&self) -> usize {
        match *self {
            Shape::Image { h, w, c } => h * w * c,
            Shape::Flat { d } => d,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Image { h, w, c } => vec![h, w, c],
            Shape::Flat { d } => vec![d],
        }
    }

    pub fn from_dims(dims: &[usize]) -> Option<Self> {
        match *dims {
            [h, w, c] if h > 0 && w > 0 && c > 0 => Some(Shape::image(h, w, c)),
            [d] if d > 0 => Some(Shape::flat(d)),
            _ => None,
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, Shape::Image { .. })
    }
}

/// Dense tensor of `f32` in row-major, channels-last order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, NetError> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || expected != data.len() {
            return Err(NetError::Argument(format!(
                "tensor shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Leading dimension.
    pub fn len(&self) -> usize {
        self.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.shape[0] == 0
    }

    pub fn sample_size(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let s = self.sample_size();
        &self.data[i * s..(i + 1) * s]
    }

    /// Copy the samples at `indices` into a new tensor.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let s = self.sample_size();
        let mut data = Vec::with_capacity(indices.len() * s);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor { shape, data }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Avg,
    Max,
}

impl std::fmt::Display for PoolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoolKind::Avg => "avg",
            PoolKind::Max => "max",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Dense,
    Conv2D,
    AvgPool,
    MaxPool,
    BatchNorm,
    ReLU,
    Flatten,
    SoftmaxOutput,
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

/// Fully connected layer; `weight` is `inputs x units`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub units: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, units: usize) -> Self {
        Self {
            inputs,
            units,
            weight: vec![T::zero(); inputs * units],
            bias: vec![T::zero(); units],
        }
    }

    #[inline]
    pub fn w(&self, i: usize, j: usize) -> T {
        self.weight[i * self.units + j]
    }
}

/// 3x3, stride 1, same-padding convolution. `kernel` is laid out
/// `[ky][kx][in_channel][out_channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

pub const KERNEL_TAPS: usize = 9;

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: vec![T::zero(); KERNEL_TAPS * in_channels * out_channels],
            bias: vec![T::zero(); out_channels],
        }
    }

    #[inline]
    pub fn index(&self, tap: usize, ci: usize, co: usize) -> usize {
        (tap * self.in_channels + ci) * self.out_channels + co
    }
}

/// Batch normalisation over the last (channel) axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon: DEFAULT_BN_EPSILON,
            momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Dense(Dense<T>),
    Conv2d(Conv2d<T>),
    Pool(PoolKind),
    BatchNorm(BatchNorm<T>),
    Relu,
    Flatten,
    Softmax,
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Conv2d(_) => LayerKind::Conv2D,
            Layer::Pool(PoolKind::Avg) => LayerKind::AvgPool,
            Layer::Pool(PoolKind::Max) => LayerKind::MaxPool,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Relu => LayerKind::ReLU,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Softmax => LayerKind::SoftmaxOutput,
        }
    }

    /// Trainable tensors in a fixed order (weight/kernel/gamma first).
    pub fn params(&self) -> Vec<&[T]> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv2d(c) => vec![&c.kernel, &c.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.kernel, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense { units: d.units },
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                out_channels: c.out_channels,
            },
            Layer::Pool(PoolKind::Avg) => LayerSpec::AvgPool,
            Layer::Pool(PoolKind::Max) => LayerSpec::MaxPool,
            Layer::BatchNorm(b) => LayerSpec::BatchNorm {
                epsilon: b.epsilon,
                momentum: b.momentum,
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Softmax => LayerSpec::SoftmaxOutput,
        }
    }

    fn cast<U: Scalar>(&self) -> Layer<U> {
        let c = |v: &[T]| -> Vec<U> { v.iter().map(|x| U::from_f64_lossy(x.to_f64_lossy())).collect() };
        match self {
            Layer::Dense(d) => Layer::Dense(Dense {
                inputs: d.inputs,
                units: d.units,
                weight: c(&d.weight),
                bias: c(&d.bias),
            }),
            Layer::Conv2d(k) => Layer::Conv2d(Conv2d {
                in_channels: k.in_channels,
                out_channels: k.out_channels,
                kernel: c(&k.kernel),
                bias: c(&k.bias),
            }),
            Layer::Pool(p) => Layer::Pool(*p),
            Layer::BatchNorm(b) => Layer::BatchNorm(BatchNorm {
                gamma: c(&b.gamma),
                beta: c(&b.beta),
                running_mean: c(&b.running_mean),
                running_var: c(&b.running_var),
                epsilon: b.epsilon,
                momentum: b.momentum,
            }),
            Layer::Relu => Layer::Relu,
            Layer::Flatten => Layer::Flatten,
            Layer::Softmax => Layer::Softmax,
        }
    }
}

/// Serializable layer descriptor (hyperparameters only, no weights).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { units: usize },
    Conv2d { out_channels: usize },
    AvgPool,
    MaxPool,
    BatchNorm { epsilon: f64, momentum: f64 },
    Relu,
    Flatten,
    SoftmaxOutput,
}

impl LayerSpec {
    pub fn batch_norm() -> Self {
        LayerSpec::BatchNorm {
            epsilon: DEFAULT_BN_EPSILON,
            momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    pub fn pool(kind: PoolKind) -> Self {
        match kind {
            PoolKind::Avg => LayerSpec::AvgPool,
            PoolKind::Max => LayerSpec::MaxPool,
        }
    }
}

/// 2x2 stride-2 pooling with same padding.
#[inline]
pub fn pooled_dim(d: usize) -> usize {
    d.div_ceil(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    pub input_shape: Shape,
    pub num_classes: usize,
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    /// Build a freshly initialised network: Kaiming-uniform (fan-in) weights,
    /// zero biases, `gamma = 1`, `beta = 0`.
    pub fn from_specs<R: Rng + ?Sized>(
        input_shape: Shape,
        num_classes: usize,
        specs: &[LayerSpec],
        rng: &mut R,
    ) -> Result<Self, NetError> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape;
        for (index, spec) in specs.iter().enumerate() {
            let fail = |reason: String| NetError::Composition {
                index,
                kind: spec_kind(spec),
                reason,
            };
            let layer = match *spec {
                LayerSpec::Dense { units } => {
                    let Shape::Flat { d } = shape else {
                        return Err(fail("dense layer needs flat input".into()));
                    };
                    if units == 0 {
                        return Err(fail("units must be >= 1".into()));
                    }
                    let mut dense = Dense::zeros(d, units);
                    kaiming_uniform(&mut dense.weight, d, rng);
                    Layer::Dense(dense)
                }
                LayerSpec::Conv2d { out_channels } => {
                    let Shape::Image { c, .. } = shape else {
                        return Err(fail("convolution needs image input".into()));
                    };
                    if out_channels == 0 {
                        return Err(fail("out_channels must be >= 1".into()));
                    }
                    let mut conv = Conv2d::zeros(c, out_channels);
                    kaiming_uniform(&mut conv.kernel, KERNEL_TAPS * c, rng);
                    Layer::Conv2d(conv)
                }
                LayerSpec::AvgPool => Layer::Pool(PoolKind::Avg),
                LayerSpec::MaxPool => Layer::Pool(PoolKind::Max),
                LayerSpec::BatchNorm { epsilon, momentum } => {
                    let channels = match shape {
                        Shape::Image { c, .. } => c,
                        Shape::Flat { d } => d,
                    };
                    let mut bn = BatchNorm::identity(channels);
                    bn.epsilon = epsilon;
                    bn.momentum = momentum;
                    Layer::BatchNorm(bn)
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::SoftmaxOutput => Layer::Softmax,
            };
            shape = layer_output_shape(index, &layer, shape)?;
            layers.push(layer);
        }
        let net = Self {
            input_shape,
            num_classes,
            layers,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Sum of all weight, bias, gamma and beta entries.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// `shapes[i]` is the input shape of layer `i`; the final entry is the
    /// network output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>, NetError> {
        self.shapes_through(self.layers.len())
    }

    /// Like [`Network::shapes`] but only through the first `end` layers.
    pub fn shapes_through(&self, end: usize) -> Result<Vec<Shape>, NetError> {
        let mut shapes = Vec::with_capacity(end + 1);
        let mut shape = self.input_shape;
        shapes.push(shape);
        for (index, layer) in self.layers.iter().enumerate().take(end) {
            shape = layer_output_shape(index, layer, shape)?;
            shapes.push(shape);
        }
        Ok(shapes)
    }

    /// Check shape composition and the sequential grammar
    /// `[conv region] Flatten [dense region] Dense(num_classes) Softmax`.
    pub fn validate(&self) -> Result<(), NetError> {
        let shapes = self.shapes()?;
        let n = self.layers.len();
        if n < 3 {
            return Err(NetError::Structure("network needs at least flatten, dense and softmax".into()));
        }
        let softmax_count = self.layers.iter().filter(|l| matches!(l, Layer::Softmax)).count();
        if softmax_count != 1 || !matches!(self.layers[n - 1], Layer::Softmax) {
            return Err(NetError::Structure("exactly one softmax output, placed last".into()));
        }
        match &self.layers[n - 2] {
            Layer::Dense(d) if d.units == self.num_classes => {}
            _ => {
                return Err(NetError::Structure(format!(
                    "softmax must follow a dense layer with {} units",
                    self.num_classes
                )))
            }
        }
        let flatten: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Flatten))
            .map(|(i, _)| i)
            .collect();
        if flatten.len() != 1 {
            return Err(NetError::Structure(format!(
                "expected exactly one flatten layer, found {}",
                flatten.len()
            )));
        }
        let fi = flatten[0];
        for (i, layer) in self.layers.iter().enumerate() {
            let ok = match layer {
                Layer::Conv2d(_) | Layer::Pool(_) | Layer::BatchNorm(_) => i < fi,
                Layer::Dense(_) => i > fi,
                Layer::Relu | Layer::Flatten | Layer::Softmax => true,
            };
            if !ok {
                return Err(NetError::Composition {
                    index: i,
                    kind: layer.kind(),
                    reason: "layer on the wrong side of the flatten layer".into(),
                });
            }
            if let Layer::BatchNorm(_) = layer {
                let paired = i >= 2
                    && matches!(self.layers[i - 1], Layer::Pool(_))
                    && matches!(self.layers[i - 2], Layer::Conv2d(_));
                if !paired {
                    return Err(NetError::Composition {
                        index: i,
                        kind: layer.kind(),
                        reason: "batch norm must directly follow a pool that follows a convolution".into(),
                    });
                }
            }
        }
        if let Some(bad) = shapes.iter().position(|s| s.size() == 0) {
            return Err(NetError::Structure(format!("empty activation after layer {bad}")));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape,
            num_classes: self.num_classes,
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }

    pub fn flatten_index(&self) -> Option<usize> {
        self.layers.iter().position(|l| matches!(l, Layer::Flatten))
    }

    /// Index of the dense layer producing logits.
    pub fn output_dense_index(&self) -> Option<usize> {
        let n = self.layers.len();
        (n >= 2 && matches!(self.layers[n - 2], Layer::Dense(_))).then_some(n - 2)
    }

    /// Dense layers other than the logits layer.
    pub fn hidden_dense_indices(&self) -> Vec<usize> {
        let out = self.output_dense_index();
        self.layers
            .iter()
            .enumerate()
            .filter(|(i, l)| matches!(l, Layer::Dense(_)) && Some(*i) != out)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn conv_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Conv2d(_)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Start indices of complete `conv - pool - batchnorm - relu` cells.
    pub fn cell_starts(&self) -> Vec<usize> {
        (0..self.layers.len().saturating_sub(3))
            .filter(|&i| {
                matches!(self.layers[i], Layer::Conv2d(_))
                    && matches!(self.layers[i + 1], Layer::Pool(_))
                    && matches!(self.layers[i + 2], Layer::BatchNorm(_))
                    && matches!(self.layers[i + 3], Layer::Relu)
            })
            .collect()
    }

    pub fn has_conv(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::Conv2d(_)))
    }

    pub fn dense(&self, index: usize) -> Option<&Dense<T>> {
        match self.layers.get(index) {
            Some(Layer::Dense(d)) => Some(d),
            _ => None,
        }
    }

    pub fn conv(&self, index: usize) -> Option<&Conv2d<T>> {
        match self.layers.get(index) {
            Some(Layer::Conv2d(c)) => Some(c),
            _ => None,
        }
    }
}

fn spec_kind(spec: &LayerSpec) -> LayerKind {
    match spec {
        LayerSpec::Dense { .. } => LayerKind::Dense,
        LayerSpec::Conv2d { .. } => LayerKind::Conv2D,
        LayerSpec::AvgPool => LayerKind::AvgPool,
        LayerSpec::MaxPool => LayerKind::MaxPool,
        LayerSpec::BatchNorm { .. } => LayerKind::BatchNorm,
        LayerSpec::Relu => LayerKind::ReLU,
        LayerSpec::Flatten => LayerKind::Flatten,
        LayerSpec::SoftmaxOutput => LayerKind::SoftmaxOutput,
    }
}

fn layer_output_shape<T: Scalar>(index: usize, layer: &Layer<T>, input: Shape) -> Result<Shape, NetError> {
    let fail = |reason: String| NetError::Composition {
        index,
        kind: layer.kind(),
        reason,
    };
    match (layer, input) {
        (Layer::Dense(d), Shape::Flat { d: n }) => {
            if d.inputs != n {
                return Err(fail(format!("expects {} inputs, got {n}", d.inputs)));
            }
            if d.weight.len() != d.inputs * d.units || d.bias.len() != d.units {
                return Err(fail("weight buffers do not match declared size".into()));
            }
            Ok(Shape::flat(d.units))
        }
        (Layer::Conv2d(k), Shape::Image { h, w, c }) => {
            if k.in_channels != c {
                return Err(fail(format!("expects {} channels, got {c}", k.in_channels)));
            }
            if k.kernel.len() != KERNEL_TAPS * k.in_channels * k.out_channels
                || k.bias.len() != k.out_channels
            {
                return Err(fail("kernel buffers do not match declared size".into()));
            }
            Ok(Shape::image(h, w, k.out_channels))
        }
        (Layer::Pool(_), Shape::Image { h, w, c }) => Ok(Shape::image(pooled_dim(h), pooled_dim(w), c)),
        (Layer::BatchNorm(b), s) => {
            let channels = match s {
                Shape::Image { c, .. } => c,
                Shape::Flat { d } => d,
            };
            if b.channels() != channels
                || b.beta.len() != channels
                || b.running_mean.len() != channels
                || b.running_var.len() != channels
            {
                return Err(fail(format!("has {} channels, input has {channels}", b.channels())));
            }
            Ok(s)
        }
        (Layer::Relu, s) => Ok(s),
        (Layer::Flatten, s) => Ok(Shape::flat(s.size())),
        (Layer::Softmax, Shape::Flat { d }) => Ok(Shape::flat(d)),
        (_, s) => Err(fail(format!("cannot accept input of shape {:?}", s.dims()))),
    }
}

/// Kaiming-uniform initialisation for ReLU networks.
pub fn kaiming_uniform<T: Scalar, R: Rng + ?Sized>(buf: &mut [T], fan_in: usize, rng: &mut R) {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    for v in buf.iter_mut() {
        *v = T::from_f64_lossy(dist.sample(rng));
    }
}
