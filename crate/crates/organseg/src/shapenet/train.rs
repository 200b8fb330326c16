//! SGD-with-momentum training loop.

use super::net::{Cache, Gradients, Layer, LayerGrads, ShapeNet};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dropout: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 70,
            seed: 0,
            dropout: 0.5,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument("dropout rate outside [0,1)".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum outside [0,1)".into()));
        }
        Ok(())
    }
}

/// A single-channel training sample.
#[derive(Debug, Clone)]
pub struct LabeledShape {
    /// Row-major `h*w` plane, values typically in [0,1].
    pub pixels: Vec<f32>,
    pub label: usize,
}

/// Per-epoch loss and accuracy measured on the training batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// Trains a copy of `net` by seeded SGD with momentum over shuffled
/// mini-batches. `epochs = 0` returns the input net untouched.
pub fn train(
    net: &ShapeNet,
    data: &[LabeledShape],
    cfg: &TrainConfig,
) -> Result<(ShapeNet, Vec<EpochStats>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    let classes = net.classes();
    let input_len = net.input_height() * net.input_width();
    for (i, sample) in data.iter().enumerate() {
        if sample.pixels.len() != input_len {
            return Err(Error::Shape(format!(
                "sample {i} has {} pixels, expected {input_len}",
                sample.pixels.len()
            )));
        }
        if sample.label >= classes {
            return Err(Error::InvalidArgument(format!(
                "sample {i} label {} out of range 0..{classes}",
                sample.label
            )));
        }
    }

    let mut trained = net.clone();
    trained.set_dropout_rate(cfg.dropout);
    if cfg.epochs == 0 {
        return Ok((trained, Vec::new()));
    }

    let mut velocity: Vec<Option<LayerGrads>> = trained
        .layers
        .iter()
        .map(|layer| match layer {
            Layer::Conv { weights, bias } | Layer::Dense { weights, bias } => Some(LayerGrads {
                weights: Tensor::zeros(weights.shape().to_vec()),
                bias: vec![0.0; bias.len()],
            }),
            _ => None,
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut cache = Cache::default();
    let mut grads = Gradients::zeroed_like(&trained);
    let mut batch = Vec::with_capacity(cfg.batch_size * input_len);
    let mut labels = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut epoch_correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let n = chunk.len();
            batch.clear();
            labels.clear();
            for &i in chunk {
                batch.extend_from_slice(&data[i].pixels);
                labels.push(data[i].label);
            }
            trained.forward_impl(&batch, n, true, Some(&mut rng), &mut cache)?;
            let (loss, correct) = trained.backward_impl(&mut cache, &labels, &mut grads);
            epoch_loss += loss * n as f64;
            epoch_correct += correct;

            for (li, grad) in grads.per_layer.iter().enumerate() {
                let Some(grad) = grad else { continue };
                let vel = velocity[li].as_mut().expect("velocity allocated for weighted layer");
                let (w, b) = match &mut trained.layers[li] {
                    Layer::Conv { weights, bias } | Layer::Dense { weights, bias } => {
                        (weights.data_mut(), bias.as_mut_slice())
                    }
                    _ => unreachable!("gradient for a layer without weights"),
                };
                for ((wv, vv), gv) in
                    w.iter_mut().zip(vel.weights.data_mut()).zip(grad.weights.data())
                {
                    *vv = cfg.momentum * *vv - cfg.learning_rate * gv;
                    *wv += *vv;
                }
                for ((bv, vv), gv) in b.iter_mut().zip(&mut vel.bias).zip(&grad.bias) {
                    *vv = cfg.momentum * *vv - cfg.learning_rate * gv;
                    *bv += *vv;
                }
            }
        }
        let stats = EpochStats {
            loss: epoch_loss / data.len() as f64,
            accuracy: epoch_correct as f64 / data.len() as f64,
        };
        if !stats.loss.is_finite() {
            return Err(Error::Training(format!(
                "loss diverged to {} at epoch {epoch}",
                stats.loss
            )));
        }
        history.push(stats);
    }
    Ok((trained, history))
}

/// Eval-mode accuracy of `net` over a labeled set.
pub fn evaluate_accuracy(net: &ShapeNet, data: &[LabeledShape]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluation dataset is empty".into()));
    }
    let input_len = net.input_height() * net.input_width();
    let mut cache = Cache::default();
    let mut correct = 0usize;
    for sample in data {
        if sample.pixels.len() != input_len {
            return Err(Error::Shape("evaluation sample size mismatch".into()));
        }
        net.forward_impl(&sample.pixels, 1, false, None, &mut cache)?;
        let row: &[f32] = cache.acts.last().expect("network has layers");
        let mut best = 0usize;
        for k in 1..row.len() {
            if row[k] > row[best] {
                best = k;
            }
        }
        if best == sample.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
