//! Central finite-difference checks of back-propagated gradients.

use super::{Gradients, Layer, LayerKind, Mode, NetError, Network, PoolKind, Shape, Trace};

/// Norms below this are compared absolutely; exactly-zero gradients (such as
/// a bias feeding a batch norm) otherwise compare round-off noise.
pub const NORM_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    /// Layer index, or `None` for the network input.
    pub layer: Option<usize>,
    pub kind: Option<LayerKind>,
    pub tensor: usize,
    /// `|analytic - numeric| / max(|analytic|, |numeric|, NORM_FLOOR)` over the
    /// whole tensor.
    pub relative_error: f64,
    pub analytic_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub checks: Vec<TensorCheck>,
}

impl GradientReport {
    pub fn max_relative_error(&self) -> f64 {
        self.checks.iter().map(|c| c.relative_error).fold(0.0, f64::max)
    }
}

fn loss_at(net: &Network<f64>, input: &[f64], batch: usize, labels: &[u32], mode: Mode, trace: &mut Trace<f64>) -> Result<f64, NetError> {
    net.forward_into(input, batch, mode, trace)?;
    Ok(net.trace_loss(trace, labels))
}

fn relative(a: &[f64], n: &[f64]) -> (f64, f64) {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    (diff / na.max(nn).max(NORM_FLOOR), na)
}

/// Compare every parameter gradient and the input gradient of the mean
/// cross-entropy against central differences with step `step`.
pub fn check_gradients(
    net: &Network<f64>,
    input: &[f64],
    labels: &[u32],
    mode: Mode,
    step: f64,
) -> Result<GradientReport, NetError> {
    let batch = labels.len();
    let mut trace = Trace::new();
    let mut grads = Gradients::zeros_like(net);
    let mut input_grad = Vec::new();
    net.forward_into(input, batch, mode, &mut trace)?;
    net.backward(&mut trace, labels, &mut grads, Some(&mut input_grad))?;

    let mut checks = Vec::new();
    let mut probe = net.clone();
    for (li, layer_grads) in grads.layers.iter().enumerate() {
        for (ti, analytic) in layer_grads.iter().enumerate() {
            let mut numeric = vec![0.0; analytic.len()];
            for (k, slot) in numeric.iter_mut().enumerate() {
                let original = probe.layers[li].params()[ti][k];
                probe.layers[li].params_mut()[ti][k] = original + step;
                let plus = loss_at(&probe, input, batch, labels, mode, &mut trace)?;
                probe.layers[li].params_mut()[ti][k] = original - step;
                let minus = loss_at(&probe, input, batch, labels, mode, &mut trace)?;
                probe.layers[li].params_mut()[ti][k] = original;
                *slot = (plus - minus) / (2.0 * step);
            }
            let (relative_error, analytic_norm) = relative(analytic, &numeric);
            checks.push(TensorCheck {
                layer: Some(li),
                kind: Some(net.layers[li].kind()),
                tensor: ti,
                relative_error,
                analytic_norm,
            });
        }
    }

    let mut x = input.to_vec();
    let mut numeric = vec![0.0; x.len()];
    for k in 0..x.len() {
        let original = x[k];
        x[k] = original + step;
        let plus = loss_at(net, &x, batch, labels, mode, &mut trace)?;
        x[k] = original - step;
        let minus = loss_at(net, &x, batch, labels, mode, &mut trace)?;
        x[k] = original;
        numeric[k] = (plus - minus) / (2.0 * step);
    }
    let (relative_error, analytic_norm) = relative(&input_grad, &numeric);
    checks.push(TensorCheck {
        layer: None,
        kind: None,
        tensor: 0,
        relative_error,
        analytic_norm,
    });
    Ok(GradientReport { checks })
}

/// Distance of a forward pass from the nearest non-differentiable point:
/// the smallest |ReLU input| and the smallest gap between the two largest
/// entries of any max-pool window. Finite differences are only meaningful
/// when this is well above the step size.
pub fn kink_margin(net: &Network<f64>, input: &[f64], batch: usize, mode: Mode) -> Result<f64, NetError> {
    let mut trace = Trace::new();
    net.forward_into(input, batch, mode, &mut trace)?;
    let shapes = net.shapes()?;
    let mut margin = f64::INFINITY;
    for (i, layer) in net.layers.iter().enumerate() {
        let x = if i == 0 { input } else { trace.activation(i - 1) };
        match layer {
            Layer::Relu => margin = x.iter().fold(margin, |m, v| m.min(v.abs())),
            Layer::Pool(PoolKind::Max) => {
                let Shape::Image { h, w, c } = shapes[i] else { continue };
                for b in 0..batch {
                    for oy in 0..h.div_ceil(2) {
                        for ox in 0..w.div_ceil(2) {
                            for ch in 0..c {
                                let mut vals: Vec<f64> = Vec::with_capacity(4);
                                for y in 2 * oy..(2 * oy + 2).min(h) {
                                    for xx in 2 * ox..(2 * ox + 2).min(w) {
                                        vals.push(x[((b * h + y) * w + xx) * c + ch]);
                                    }
                                }
                                vals.sort_by(|a, b| b.total_cmp(a));
                                if vals.len() > 1 {
                                    margin = margin.min(vals[0] - vals[1]);
                                }
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    Ok(margin)
}
