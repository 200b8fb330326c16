//! Shared multinomial-logistic machinery used by the pixel color
//! classifier and the feature-driven pixel baseline.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Dense linear scorer: `classes x features` weights plus biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub classes: usize,
    pub features: usize,
    /// Row-major, one row per class.
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

impl LinearModel {
    pub fn zeros(classes: usize, features: usize) -> Self {
        Self { classes, features, weights: vec![0.0; classes * features], biases: vec![0.0; classes] }
    }

    #[inline]
    pub fn scores(&self, x: &[f32], out: &mut [f32]) {
        debug_assert_eq!(x.len(), self.features);
        debug_assert_eq!(out.len(), self.classes);
        for (k, slot) in out.iter_mut().enumerate() {
            let row = &self.weights[k * self.features..(k + 1) * self.features];
            let mut acc = self.biases[k];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            *slot = acc;
        }
    }

    /// Argmax with ties broken toward the lowest class index.
    pub fn predict(&self, x: &[f32]) -> usize {
        let mut scores = vec![0.0f32; self.classes];
        self.scores(x, &mut scores);
        argmax(&scores)
    }
}

#[inline]
pub fn argmax(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn softmax_inplace(scores: &mut [f32]) {
    let max = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// Seeded per-sample SGD on the multinomial cross-entropy. Features are
/// expected pre-scaled by the caller. Returns the model and its final
/// training accuracy.
pub fn train_sgd(
    features: &[f32],
    labels: &[usize],
    classes: usize,
    n_features: usize,
    epochs: usize,
    learning_rate: f32,
    seed: u64,
) -> Result<(LinearModel, f64)> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    if features.len() != n * n_features {
        return Err(Error::Shape(format!(
            "feature buffer length {} does not match {n} samples x {n_features} features",
            features.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range 0..{classes}")));
    }

    let mut model = LinearModel::zeros(classes, n_features);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut scores = vec![0.0f32; classes];
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &features[i * n_features..(i + 1) * n_features];
            model.scores(x, &mut scores);
            softmax_inplace(&mut scores);
            for k in 0..classes {
                let target = if k == labels[i] { 1.0 } else { 0.0 };
                let g = scores[k] - target;
                let row = &mut model.weights[k * n_features..(k + 1) * n_features];
                for (w, v) in row.iter_mut().zip(x) {
                    *w -= learning_rate * g * v;
                }
                model.biases[k] -= learning_rate * g;
            }
        }
    }
    if model.weights.iter().chain(&model.biases).any(|w| !w.is_finite()) {
        return Err(Error::Training("non-finite weights after SGD".into()));
    }

    let mut correct = 0usize;
    for i in 0..n {
        let x = &features[i * n_features..(i + 1) * n_features];
        if model.predict(x) == labels[i] {
            correct += 1;
        }
    }
    Ok((model, correct as f64 / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 4.0, 4.0]), 1);
    }

    #[test]
    fn sgd_fits_separable_two_class_data() {
        let features = vec![0.0, 0.1, 0.9, 1.0, 0.05, 0.95];
        let labels = vec![0, 0, 1, 1, 0, 1];
        let (model, acc) = train_sgd(&features, &labels, 2, 1, 200, 0.5, 1).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(model.predict(&[0.0]), 0);
        assert_eq!(model.predict(&[1.0]), 1);
    }

    #[test]
    fn sgd_same_seed_is_bit_identical() {
        let features: Vec<f32> = (0..60).map(|i| (i % 7) as f32 / 7.0).collect();
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let (a, _) = train_sgd(&features, &labels, 3, 2, 50, 0.2, 9).unwrap();
        let (b, _) = train_sgd(&features, &labels, 3, 2, 50, 0.2, 9).unwrap();
        assert_eq!(a, b);
    }
}
