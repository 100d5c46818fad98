//! Whole-network forward and backward passes.

use super::kernels::{self, reset};
use super::{Layer, NetError, Network, Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm layers normalise with mini-batch statistics.
    Train,
    /// Batch-norm layers normalise with running statistics.
    Infer,
}

#[derive(Debug, Clone, Default)]
struct Cache<T> {
    cols: Vec<T>,
    argmax: Vec<u32>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mean: Vec<T>,
    var: Vec<T>,
}

/// Activations and per-layer caches of one forward pass. Reusable across
/// batches to avoid reallocation.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    batch: usize,
    mode: Mode,
    acts: Vec<Vec<T>>,
    caches: Vec<Cache<T>>,
    grad_a: Vec<T>,
    grad_b: Vec<T>,
    scratch: Vec<T>,
}

impl<T: Scalar> Default for Trace<T> {
    fn default() -> Self {
        Self {
            batch: 0,
            mode: Mode::Infer,
            acts: Vec::new(),
            caches: Vec::new(),
            grad_a: Vec::new(),
            grad_b: Vec::new(),
            scratch: Vec::new(),
        }
    }
}

impl<T: Scalar> Trace<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Softmax probabilities, `batch x num_classes`.
    pub fn output(&self) -> &[T] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Output of layer `index`.
    pub fn activation(&self, index: usize) -> &[T] {
        &self.acts[index + 1]
    }
}

/// Gradient buffers aligned with [`Layer::params`] of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| l.params().iter().map(|p| vec![T::zero(); p.len()]).collect())
                .collect(),
        }
    }

    fn matches(&self, net: &Network<T>) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.len() == l.params().len() && g.iter().zip(l.params()).all(|(a, b)| a.len() == b.len()))
    }
}

impl<T: Scalar> Network<T> {
    /// Pure forward pass; running statistics are left untouched.
    pub fn forward_into(&self, input: &[T], batch: usize, mode: Mode, trace: &mut Trace<T>) -> Result<(), NetError> {
        let shapes = self.shapes()?;
        if batch == 0 || input.len() != batch * self.input_shape.size() {
            return Err(NetError::InputShape {
                expected: self.input_shape.dims(),
                got: vec![batch, input.len() / batch.max(1)],
            });
        }
        let n = self.layers.len();
        trace.batch = batch;
        trace.mode = mode;
        trace.acts.resize_with(n + 1, Vec::new);
        trace.caches.resize_with(n, Cache::default);
        reset(&mut trace.acts[0], input.len());
        trace.acts[0].copy_from_slice(input);
        for (i, layer) in self.layers.iter().enumerate() {
            let (before, after) = trace.acts.split_at_mut(i + 1);
            let x = &before[i];
            let out = &mut after[0];
            let cache = &mut trace.caches[i];
            match layer {
                Layer::Dense(d) => kernels::dense_forward(d, x, batch, out),
                Layer::Conv2d(k) => {
                    let Shape::Image { h, w, .. } = shapes[i] else { unreachable!() };
                    kernels::conv_forward(k, x, batch, h, w, &mut cache.cols, out);
                }
                Layer::Pool(kind) => {
                    let Shape::Image { h, w, c } = shapes[i] else { unreachable!() };
                    kernels::pool_forward(*kind, x, batch, h, w, c, out, &mut cache.argmax);
                }
                Layer::BatchNorm(bn) => match mode {
                    Mode::Train => {
                        kernels::moments(x, bn.channels(), &mut cache.mean, &mut cache.var);
                        kernels::bn_apply(bn, x, &cache.mean, &cache.var, out, &mut cache.inv_std, Some(&mut cache.xhat));
                    }
                    Mode::Infer => kernels::bn_apply(
                        bn,
                        x,
                        &bn.running_mean,
                        &bn.running_var,
                        out,
                        &mut cache.inv_std,
                        Some(&mut cache.xhat),
                    ),
                },
                Layer::Relu => {
                    out.clear();
                    out.extend(x.iter().map(|&v| v.max(T::zero())));
                }
                Layer::Flatten => {
                    out.clear();
                    out.extend_from_slice(x);
                }
                Layer::Softmax => kernels::softmax_rows(x, shapes[i].size(), out),
            }
        }
        Ok(())
    }

    /// Fold the mini-batch statistics of a train-mode trace into the running
    /// statistics.
    pub fn commit_batch_stats(&mut self, trace: &Trace<T>) {
        if trace.mode != Mode::Train {
            return;
        }
        for (layer, cache) in self.layers.iter_mut().zip(&trace.caches) {
            if let Layer::BatchNorm(bn) = layer {
                let m = T::from_f64_lossy(bn.momentum);
                let keep = T::one() - m;
                for ch in 0..bn.channels() {
                    bn.running_mean[ch] = m * bn.running_mean[ch] + keep * cache.mean[ch];
                    bn.running_var[ch] = m * bn.running_var[ch] + keep * cache.var[ch];
                }
            }
        }
    }

    /// Forward a batch; train mode also updates running statistics.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<Tensor, NetError> {
        let mut trace = Trace::new();
        self.run(batch, mode, &mut trace)?;
        self.commit_batch_stats(&trace);
        Ok(self.output_tensor(&trace))
    }

    /// Inference-mode forward on a shared network.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor, NetError> {
        let mut trace = Trace::new();
        self.run(batch, Mode::Infer, &mut trace)?;
        Ok(self.output_tensor(&trace))
    }

    fn run(&self, batch: &Tensor, mode: Mode, trace: &mut Trace<T>) -> Result<(), NetError> {
        if batch.shape()[1..] != self.input_shape.dims()[..] {
            return Err(NetError::InputShape {
                expected: self.input_shape.dims(),
                got: batch.shape().to_vec(),
            });
        }
        let input: Vec<T> = batch.data().iter().map(|&v| T::from_f64_lossy(v as f64)).collect();
        self.forward_into(&input, batch.len(), mode, trace)
    }

    fn output_tensor(&self, trace: &Trace<T>) -> Tensor {
        let data = trace.output().iter().map(|v| v.to_f64_lossy() as f32).collect();
        Tensor::new(vec![trace.batch, self.num_classes], data).expect("output shape")
    }

    /// Mean cross-entropy of the trace output against `labels`.
    pub fn trace_loss(&self, trace: &Trace<T>, labels: &[u32]) -> T {
        let k = self.num_classes;
        let floor = T::min_positive_value();
        let total: T = trace
            .output()
            .chunks_exact(k)
            .zip(labels)
            .map(|(row, &y)| {
                let p = row[y as usize];
                if p.is_nan() {
                    p
                } else {
                    -p.max(floor).ln()
                }
            })
            .sum();
        total / T::from_usize(trace.batch)
    }

    /// Back-propagate mean cross-entropy through a forward trace. Fills
    /// `grads`; writes the gradient with respect to the input into
    /// `input_grad` when given. Returns the loss.
    pub fn backward(
        &self,
        trace: &mut Trace<T>,
        labels: &[u32],
        grads: &mut Gradients<T>,
        input_grad: Option<&mut Vec<T>>,
    ) -> Result<T, NetError> {
        let batch = trace.batch;
        if labels.len() != batch {
            return Err(NetError::Argument(format!("{} labels for a batch of {batch}", labels.len())));
        }
        if !grads.matches(self) {
            return Err(NetError::Argument("gradient buffers do not match the network".into()));
        }
        let k = self.num_classes;
        if let Some(bad) = labels.iter().find(|&&y| y as usize >= k) {
            return Err(NetError::Argument(format!("label {bad} out of range for {k} classes")));
        }
        let loss = self.trace_loss(trace, labels);
        let shapes = self.shapes()?;
        let n = self.layers.len();
        let scale = T::one() / T::from_usize(batch);

        let mut dy = std::mem::take(&mut trace.grad_a);
        let mut dx = std::mem::take(&mut trace.grad_b);
        dy.clear();
        dy.extend(trace.output().iter().map(|&p| p * scale));
        for (r, &y) in labels.iter().enumerate() {
            dy[r * k + y as usize] = dy[r * k + y as usize] - scale;
        }

        // The softmax is folded into the loss gradient above.
        for i in (0..n - 1).rev() {
            let need_dx = i > 0 || input_grad.is_some();
            let x = &trace.acts[i];
            let cache = &trace.caches[i];
            let g = &mut grads.layers[i];
            let dxo = need_dx.then_some(&mut dx);
            match &self.layers[i] {
                Layer::Dense(d) => {
                    let (w, b) = g.split_at_mut(1);
                    kernels::dense_backward(d, x, &dy, batch, &mut w[0], &mut b[0], dxo);
                }
                Layer::Conv2d(kern) => {
                    let Shape::Image { h, w, .. } = shapes[i] else { unreachable!() };
                    let (wk, b) = g.split_at_mut(1);
                    kernels::conv_backward(kern, &cache.cols, &dy, batch, h, w, &mut wk[0], &mut b[0], &mut trace.scratch, dxo);
                }
                Layer::Pool(kind) => {
                    let Shape::Image { h, w, c } = shapes[i] else { unreachable!() };
                    if let Some(dx) = dxo {
                        kernels::pool_backward(*kind, &dy, &cache.argmax, batch, h, w, c, dx);
                    }
                }
                Layer::BatchNorm(bn) => {
                    let (gm, bt) = g.split_at_mut(1);
                    kernels::bn_backward(
                        bn,
                        &cache.xhat,
                        &cache.inv_std,
                        &dy,
                        &mut gm[0],
                        &mut bt[0],
                        trace.mode == Mode::Train,
                        dxo,
                    );
                }
                Layer::Relu => {
                    if let Some(dx) = dxo {
                        let out = &trace.acts[i + 1];
                        dx.clear();
                        dx.extend(dy.iter().zip(out).map(|(&g, &o)| if o > T::zero() { g } else { T::zero() }));
                    }
                }
                Layer::Flatten => {
                    if let Some(dx) = dxo {
                        dx.clear();
                        dx.extend_from_slice(&dy);
                    }
                }
                Layer::Softmax => {
                    return Err(NetError::Structure("softmax must be the final layer".into()));
                }
            }
            if need_dx {
                std::mem::swap(&mut dx, &mut dy);
            }
        }
        if let Some(out) = input_grad {
            out.clear();
            out.extend_from_slice(&dy);
        }
        trace.grad_a = dy;
        trace.grad_b = dx;
        Ok(loss)
    }

    /// Plain SGD update `p -= lr * g`.
    pub fn apply_gradients(&mut self, grads: &Gradients<T>, lr: T) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (p, gp) in layer.params_mut().into_iter().zip(g) {
                for (v, &d) in p.iter_mut().zip(gp) {
                    let step = lr * d;
                    if step != T::zero() {
                        *v = *v - step;
                    }
                }
            }
        }
    }
}
