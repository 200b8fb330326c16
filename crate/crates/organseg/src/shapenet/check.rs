//! Finite-difference verification of the analytic gradients.

use super::net::{Gradients, ShapeNet, WeightSlot};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// At most this many weights are probed per tensor.
const SAMPLES_PER_TENSOR: usize = 200;
/// Relative errors are measured against `max(|numeric|, FLOOR)`.
const DENOM_FLOOR: f64 = 1e-2;
/// Two-scale agreement bound: weights whose eps and eps/2 estimates differ
/// more than this are sitting on a relu/maxpool kink inside the probe
/// window, where a finite difference does not estimate the derivative.
const SMOOTHNESS_TOL: f64 = 1e-2;

/// Compares analytic gradients against central finite differences on a
/// random subsample of weights per tensor and returns the worst relative
/// error. Dropout is disabled on both sides of the comparison.
pub fn gradient_check(net: &ShapeNet, sample: &Tensor, label: usize, eps: f32) -> Result<f64> {
    gradient_check_with(net, sample, label, eps, |_| {})
}

/// Same as [`gradient_check`] but lets the caller tamper with the analytic
/// gradients first; used to prove the check detects planted faults.
pub fn gradient_check_with(
    net: &ShapeNet,
    sample: &Tensor,
    label: usize,
    eps: f32,
    mutate: impl FnOnce(&mut Gradients),
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("finite-difference epsilon must be positive".into()));
    }
    let labels = [label];
    let mut analytic = net.eval_gradients(sample, &labels)?;
    mutate(&mut analytic);

    let mut rng = ChaCha8Rng::seed_from_u64(0x6FD0);
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (li, slot) in net.weight_slots() {
        let len = net.slot_data(li, slot).len();
        let mut indices: Vec<usize> = (0..len).collect();
        if len > SAMPLES_PER_TENSOR {
            indices.shuffle(&mut rng);
            indices.truncate(SAMPLES_PER_TENSOR);
        }
        let grads = analytic.per_layer[li].as_ref().expect("weighted layer has gradients");
        for idx in indices {
            let a = match slot {
                WeightSlot::Weights => grads.weights.data()[idx],
                WeightSlot::Bias => grads.bias[idx],
            } as f64;
            let original = net.slot_data(li, slot)[idx];
            let mut central = |delta: f32| -> Result<f64> {
                probe.slot_data_mut(li, slot)[idx] = original + delta;
                let plus = loss_of(&probe, sample, label)?;
                probe.slot_data_mut(li, slot)[idx] = original - delta;
                let minus = loss_of(&probe, sample, label)?;
                probe.slot_data_mut(li, slot)[idx] = original;
                Ok((plus - minus) / (2.0 * f64::from(delta)))
            };
            let numeric = central(eps)?;
            let refined = central(eps * 0.5)?;
            if (numeric - refined).abs() > SMOOTHNESS_TOL * numeric.abs().max(DENOM_FLOOR) {
                continue;
            }
            let rel = (a - numeric).abs() / numeric.abs().max(DENOM_FLOOR);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

fn loss_of(net: &ShapeNet, sample: &Tensor, label: usize) -> Result<f64> {
    let probs = net.forward_eval(sample)?;
    super::cross_entropy_loss(&probs, &[label])
}
