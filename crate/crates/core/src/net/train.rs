use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, Mode, NetError, Network, Scalar, Trace};
use crate::data::Dataset;

const EVAL_BATCH: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub learning_rate: f32,
    pub batch_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub param_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: EpochRecord) -> Result<(), NetError> {
        if let Some(last) = self.records.last() {
            if record.epoch <= last.epoch {
                return Err(NetError::Argument(format!(
                    "epoch {} does not follow epoch {}",
                    record.epoch, last.epoch
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Mean sparse categorical cross-entropy of probability rows.
pub fn cross_entropy<T: Scalar>(probs: &[T], labels: &[u32], num_classes: usize) -> f64 {
    let floor = T::min_positive_value();
    let total: f64 = probs
        .chunks_exact(num_classes)
        .zip(labels)
        .map(|(row, &y)| {
            let p = row[y as usize];
            if p.is_nan() {
                f64::NAN
            } else {
                -p.max(floor).to_f64_lossy().ln()
            }
        })
        .sum();
    total / labels.len().max(1) as f64
}

/// Run `epochs` epochs of mini-batch SGD, reshuffling the training set from
/// `rng` each epoch, and evaluate on `val` after every epoch. Epochs are
/// numbered from `first_epoch + 1`.
pub fn train_epochs<R: Rng + ?Sized>(
    net: &mut Network<f32>,
    train: &Dataset,
    val: &Dataset,
    epochs: usize,
    options: &TrainOptions,
    rng: &mut R,
    first_epoch: usize,
) -> Result<TrainHistory, NetError> {
    if epochs == 0 {
        return Err(NetError::Argument("epochs must be >= 1".into()));
    }
    if train.is_empty() || val.is_empty() {
        return Err(NetError::Argument("training and validation data must be non-empty".into()));
    }
    if options.batch_size == 0 || !options.learning_rate.is_finite() {
        return Err(NetError::Argument("invalid batch size or learning rate".into()));
    }
    check_labels(net, train)?;
    let sample = train.inputs.sample_size();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = Trace::new();
    let mut grads = Gradients::zeros_like(net);
    let mut buf = Vec::with_capacity(options.batch_size * sample);
    let mut labels = Vec::with_capacity(options.batch_size);
    let mut history = TrainHistory::new();

    for e in 0..epochs {
        let epoch = first_epoch + e + 1;
        order.shuffle(rng);
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(options.batch_size) {
            buf.clear();
            labels.clear();
            for &i in chunk {
                buf.extend_from_slice(train.inputs.sample(i));
                labels.push(train.labels[i]);
            }
            net.forward_into(&buf, chunk.len(), Mode::Train, &mut trace)?;
            let loss = net.backward(&mut trace, &labels, &mut grads, None)?;
            if !loss.is_finite() {
                return Err(NetError::Divergence { epoch });
            }
            net.commit_batch_stats(&trace);
            net.apply_gradients(&grads, options.learning_rate);
            loss_sum += loss as f64 * chunk.len() as f64;
        }
        let eval = evaluate(net, val)?;
        if !eval.loss.is_finite() {
            return Err(NetError::Divergence { epoch });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_accuracy: eval.accuracy,
            val_loss: eval.loss,
            param_count: net.param_count(),
        })?;
    }
    Ok(history)
}

fn check_labels<T: Scalar>(net: &Network<T>, data: &Dataset) -> Result<(), NetError> {
    if data.inputs.shape()[1..] != net.input_shape.dims()[..] {
        return Err(NetError::InputShape {
            expected: net.input_shape.dims(),
            got: data.inputs.shape().to_vec(),
        });
    }
    if let Some(bad) = data.labels.iter().find(|&&y| y as usize >= net.num_classes) {
        return Err(NetError::Argument(format!(
            "label {bad} out of range for {} classes",
            net.num_classes
        )));
    }
    Ok(())
}

/// Inference-mode accuracy and mean cross-entropy.
pub fn evaluate<T: Scalar>(net: &Network<T>, data: &Dataset) -> Result<Evaluation, NetError> {
    if data.is_empty() {
        return Err(NetError::Argument("evaluation data must be non-empty".into()));
    }
    check_labels(net, data)?;
    let sample = data.inputs.sample_size();
    let k = net.num_classes;
    let mut trace = Trace::new();
    let mut buf: Vec<T> = Vec::with_capacity(EVAL_BATCH * sample);
    let mut correct = 0usize;
    let mut loss = 0.0f64;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        buf.clear();
        for &i in chunk {
            buf.extend(data.inputs.sample(i).iter().map(|&v| T::from_f64_lossy(v as f64)));
        }
        net.forward_into(&buf, chunk.len(), Mode::Infer, &mut trace)?;
        let labels = &data.labels[chunk[0]..chunk[0] + chunk.len()];
        for (row, &y) in trace.output().chunks_exact(k).zip(labels) {
            if argmax(row) == y as usize {
                correct += 1;
            }
        }
        loss += cross_entropy(trace.output(), labels, k) * chunk.len() as f64;
    }
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        loss: loss / data.len() as f64,
    })
}

/// Index of the first maximum.
pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
