//! Network assembly, forward and backward passes.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::raster::BitMask;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Architecture element. Convolutions are 3x3, stride 1, same padding;
/// pooling is 2x2, stride 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv3x3 { out_channels: usize },
    Relu,
    MaxPool2x2,
    Flatten,
    Dense { units: usize },
    Dropout { rate: f32 },
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer {
    Conv { weights: Tensor, bias: Vec<f32> },
    Relu,
    MaxPool,
    Flatten,
    Dense { weights: Tensor, bias: Vec<f32> },
    Dropout { rate: f32 },
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ActShape {
    Spatial { c: usize, h: usize, w: usize },
    Flat { len: usize },
}

impl ActShape {
    pub(crate) fn numel(&self) -> usize {
        match *self {
            ActShape::Spatial { c, h, w } => c * h * w,
            ActShape::Flat { len } => len,
        }
    }
}

/// A small convolutional shape classifier with explicit weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeNet {
    pub(crate) layers: Vec<Layer>,
    pub(crate) input_h: usize,
    pub(crate) input_w: usize,
}

/// Channel widths used when stacking conv/pool stages.
pub(crate) const STAGE_WIDTHS: [usize; 5] = [32, 32, 64, 64, 64];

/// The published topology: three conv/pool stages (32, 32, 64 channels),
/// dense 128 and 64 heads, dropout 0.5, and a 6-way softmax output.
pub fn default_architecture(seed: u64) -> ShapeNet {
    architecture_with_stages(3, seed).expect("default stage count is valid")
}

/// Same family as the default topology with a configurable number of
/// conv/pool stages (used by the parameter sweep).
pub fn architecture_with_stages(stages: usize, seed: u64) -> Result<ShapeNet> {
    if stages < 1 || stages > STAGE_WIDTHS.len() {
        return Err(Error::InvalidArgument(format!(
            "conv stage count {stages} outside 1..={}",
            STAGE_WIDTHS.len()
        )));
    }
    let mut specs = Vec::new();
    for s in 0..stages {
        specs.push(LayerSpec::Conv3x3 { out_channels: STAGE_WIDTHS[s] });
        specs.push(LayerSpec::Relu);
        specs.push(LayerSpec::MaxPool2x2);
    }
    specs.extend([
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 128 },
        LayerSpec::Relu,
        LayerSpec::Dense { units: 64 },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: 0.5 },
        LayerSpec::Dense { units: 6 },
        LayerSpec::Softmax,
    ]);
    ShapeNet::build(&specs, super::INPUT_SIDE, super::INPUT_SIDE, seed)
}

impl ShapeNet {
    /// Builds a network with He-initialized weights drawn from `seed`.
    pub fn build(specs: &[LayerSpec], input_h: usize, input_w: usize, seed: u64) -> Result<Self> {
        if specs.last() != Some(&LayerSpec::Softmax) {
            return Err(Error::InvalidArgument("architecture must end with softmax".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = ActShape::Spatial { c: 1, h: input_h, w: input_w };
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let layer = match *spec {
                LayerSpec::Conv3x3 { out_channels } => match shape {
                    ActShape::Spatial { c, h, w } => {
                        let weights = he_tensor(vec![out_channels, c, 3, 3], c * 9, &mut rng);
                        shape = ActShape::Spatial { c: out_channels, h, w };
                        Layer::Conv { weights, bias: vec![0.0; out_channels] }
                    }
                    ActShape::Flat { .. } => {
                        return Err(Error::Shape(format!("conv at layer {i} after flatten")))
                    }
                },
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool2x2 => match shape {
                    ActShape::Spatial { c, h, w } => {
                        if h < 2 || w < 2 {
                            return Err(Error::Shape(format!(
                                "maxpool at layer {i} on {h}x{w} feature map"
                            )));
                        }
                        shape = ActShape::Spatial { c, h: h / 2, w: w / 2 };
                        Layer::MaxPool
                    }
                    ActShape::Flat { .. } => {
                        return Err(Error::Shape(format!("maxpool at layer {i} after flatten")))
                    }
                },
                LayerSpec::Flatten => {
                    shape = ActShape::Flat { len: shape.numel() };
                    Layer::Flatten
                }
                LayerSpec::Dense { units } => match shape {
                    ActShape::Flat { len } => {
                        let weights = he_tensor(vec![units, len], len, &mut rng);
                        shape = ActShape::Flat { len: units };
                        Layer::Dense { weights, bias: vec![0.0; units] }
                    }
                    ActShape::Spatial { .. } => {
                        return Err(Error::Shape(format!("dense at layer {i} before flatten")))
                    }
                },
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::InvalidArgument(format!(
                            "dropout rate {rate} outside [0,1)"
                        )));
                    }
                    Layer::Dropout { rate }
                }
                LayerSpec::Softmax => {
                    if i + 1 != specs.len() {
                        return Err(Error::Shape("softmax must be the final layer".into()));
                    }
                    Layer::Softmax
                }
            };
            layers.push(layer);
        }
        Ok(Self { layers, input_h, input_w })
    }

    pub fn input_height(&self) -> usize {
        self.input_h
    }

    pub fn input_width(&self) -> usize {
        self.input_w
    }

    /// Number of output classes.
    pub fn classes(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Dense { bias, .. } => Some(bias.len()),
                _ => None,
            })
            .expect("network has a dense head")
    }

    pub fn has_dropout(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::Dropout { .. }))
    }

    pub(crate) fn set_dropout_rate(&mut self, rate: f32) {
        for layer in &mut self.layers {
            if let Layer::Dropout { rate: r } = layer {
                *r = rate;
            }
        }
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let shape = batch.shape();
        let ok = (shape.len() == 4
            && shape[1] == self.input_h
            && shape[2] == self.input_w
            && shape[3] == 1)
            || (shape.len() == 3 && shape[1] == self.input_h && shape[2] == self.input_w);
        if !ok {
            return Err(Error::Shape(format!(
                "batch shape {shape:?} does not match input {}x{}x1",
                self.input_h, self.input_w
            )));
        }
        Ok(shape[0])
    }

    /// Runs the network. Rows of the output sum to one. Dropout fires only
    /// in train mode and then requires an rng.
    pub fn forward(
        &self,
        batch: &Tensor,
        train_mode: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let n = self.check_batch(batch)?;
        let mut cache = Cache::default();
        self.forward_impl(batch.data(), n, train_mode, rng, &mut cache)?;
        let probs = cache.acts.last().expect("network has layers").clone();
        Tensor::new(vec![n, self.classes()], probs)
    }

    /// Eval-mode convenience wrapper.
    pub fn forward_eval(&self, batch: &Tensor) -> Result<Tensor> {
        self.forward(batch, false, None)
    }

    /// Analytic gradients of the mean cross-entropy for one training step.
    /// The dropout mask drawn here is shared between the forward and
    /// backward halves of the step.
    pub fn backward(
        &self,
        batch: &Tensor,
        labels: &[usize],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Gradients> {
        let n = self.check_batch(batch)?;
        self.check_labels(labels, n)?;
        let mut cache = Cache::default();
        let mut grads = Gradients::zeroed_like(self);
        self.forward_impl(batch.data(), n, true, rng, &mut cache)?;
        self.backward_impl(&mut cache, labels, &mut grads);
        Ok(grads)
    }

    /// Gradients of the eval-mode loss (dropout disabled); the reference
    /// path for finite-difference verification.
    pub fn eval_gradients(&self, batch: &Tensor, labels: &[usize]) -> Result<Gradients> {
        let n = self.check_batch(batch)?;
        self.check_labels(labels, n)?;
        let mut cache = Cache::default();
        let mut grads = Gradients::zeroed_like(self);
        self.forward_impl(batch.data(), n, false, None, &mut cache)?;
        self.backward_impl(&mut cache, labels, &mut grads);
        Ok(grads)
    }

    pub(crate) fn check_labels(&self, labels: &[usize], n: usize) -> Result<()> {
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for a batch of {n}", labels.len())));
        }
        let classes = self.classes();
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range 0..{classes}"
            )));
        }
        Ok(())
    }

    /// Runs the forward pass into a reusable cache; steady-state calls do
    /// not allocate.
    pub(crate) fn forward_impl(
        &self,
        input: &[f32],
        n: usize,
        train_mode: bool,
        mut rng: Option<&mut ChaCha8Rng>,
        cache: &mut Cache,
    ) -> Result<()> {
        let mut shape = ActShape::Spatial { c: 1, h: self.input_h, w: self.input_w };
        if input.len() != n * shape.numel() {
            return Err(Error::Shape(format!(
                "input buffer {} does not match batch {n} x {}",
                input.len(),
                shape.numel()
            )));
        }
        let depth = self.layers.len();
        cache.acts.resize_with(depth + 1, Vec::new);
        cache.pool_idx.resize_with(depth, Vec::new);
        cache.drop_scale.resize_with(depth, Vec::new);
        cache.shapes.clear();
        cache.n = n;

        ensure_len_f32(&mut cache.acts[0], input.len());
        cache.acts[0].copy_from_slice(input);
        cache.shapes.push(shape);

        for li in 0..depth {
            let (head, tail) = cache.acts.split_at_mut(li + 1);
            let cur: &[f32] = &head[li];
            let next = &mut tail[0];
            match &self.layers[li] {
                Layer::Conv { weights, bias } => {
                    let ActShape::Spatial { c, h, w } = shape else {
                        return Err(Error::Shape("conv on flat activation".into()));
                    };
                    let oc = weights.shape()[0];
                    ensure_len_f32(next, n * oc * h * w);
                    for s in 0..n {
                        kernels::conv3x3_forward(
                            &cur[s * c * h * w..(s + 1) * c * h * w],
                            c,
                            h,
                            w,
                            weights.data(),
                            bias,
                            oc,
                            &mut next[s * oc * h * w..(s + 1) * oc * h * w],
                        );
                    }
                    shape = ActShape::Spatial { c: oc, h, w };
                }
                Layer::Relu => {
                    ensure_len_f32(next, cur.len());
                    kernels::relu_forward(cur, next);
                }
                Layer::MaxPool => {
                    let ActShape::Spatial { c, h, w } = shape else {
                        return Err(Error::Shape("maxpool on flat activation".into()));
                    };
                    let (oh, ow) = (h / 2, w / 2);
                    ensure_len_f32(next, n * c * oh * ow);
                    let idx = &mut cache.pool_idx[li];
                    ensure_len_u8(idx, n * c * oh * ow);
                    for s in 0..n {
                        kernels::maxpool2x2_forward(
                            &cur[s * c * h * w..(s + 1) * c * h * w],
                            c,
                            h,
                            w,
                            &mut next[s * c * oh * ow..(s + 1) * c * oh * ow],
                            &mut idx[s * c * oh * ow..(s + 1) * c * oh * ow],
                        );
                    }
                    shape = ActShape::Spatial { c, h: oh, w: ow };
                }
                Layer::Flatten => {
                    shape = ActShape::Flat { len: shape.numel() };
                    ensure_len_f32(next, cur.len());
                    next.copy_from_slice(cur);
                }
                Layer::Dense { weights, bias } => {
                    let ActShape::Flat { len } = shape else {
                        return Err(Error::Shape("dense on spatial activation".into()));
                    };
                    let units = bias.len();
                    ensure_len_f32(next, n * units);
                    for s in 0..n {
                        kernels::dense_forward(
                            &cur[s * len..(s + 1) * len],
                            weights.data(),
                            bias,
                            &mut next[s * units..(s + 1) * units],
                        );
                    }
                    shape = ActShape::Flat { len: units };
                }
                Layer::Dropout { rate } => {
                    let scale = &mut cache.drop_scale[li];
                    scale.clear();
                    ensure_len_f32(next, cur.len());
                    if train_mode && *rate > 0.0 {
                        let rng = rng.as_deref_mut().ok_or_else(|| {
                            Error::InvalidArgument(
                                "train-mode forward through dropout requires an rng".into(),
                            )
                        })?;
                        let keep = 1.0 - *rate;
                        let boost = 1.0 / keep;
                        scale.extend((0..cur.len()).map(|_| {
                            if rng.gen::<f32>() < keep {
                                boost
                            } else {
                                0.0
                            }
                        }));
                        for ((o, &v), &s) in next.iter_mut().zip(cur).zip(scale.iter()) {
                            *o = v * s;
                        }
                    } else {
                        next.copy_from_slice(cur);
                    }
                }
                Layer::Softmax => {
                    let ActShape::Flat { len } = shape else {
                        return Err(Error::Shape("softmax on spatial activation".into()));
                    };
                    ensure_len_f32(next, cur.len());
                    next.copy_from_slice(cur);
                    kernels::softmax_rows(next, n, len);
                }
            }
            cache.shapes.push(shape);
        }
        Ok(())
    }

    /// Walks the layers in reverse from the fused softmax/cross-entropy
    /// head, accumulating into `grads` (which it zeroes first). Returns
    /// the batch loss and hit count.
    pub(crate) fn backward_impl(
        &self,
        cache: &mut Cache,
        labels: &[usize],
        grads: &mut Gradients,
    ) -> (f64, usize) {
        grads.zero();
        let Cache { acts, shapes, pool_idx, drop_scale, scratch_a, scratch_b, n } = cache;
        let n = *n;
        let classes = self.classes();
        let probs: &[f32] = acts.last().expect("forward ran");
        debug_assert!(matches!(self.layers.last(), Some(Layer::Softmax)));

        let mut loss = 0.0f64;
        let mut correct = 0usize;
        let dcur: &mut Vec<f32> = scratch_a;
        let dprev: &mut Vec<f32> = scratch_b;
        ensure_len_f32(dcur, probs.len());
        let inv_n = 1.0 / n as f32;
        for s in 0..n {
            let row = &probs[s * classes..(s + 1) * classes];
            let y = labels[s];
            loss += -(f64::from(row[y]).max(1e-12)).ln();
            let mut best = 0usize;
            for k in 1..classes {
                if row[k] > row[best] {
                    best = k;
                }
            }
            if best == y {
                correct += 1;
            }
            for k in 0..classes {
                let target = if k == y { 1.0 } else { 0.0 };
                dcur[s * classes + k] = (row[k] - target) * inv_n;
            }
        }
        loss /= n as f64;

        for li in (0..self.layers.len()).rev() {
            let input_act: &[f32] = &acts[li];
            let input_shape = shapes[li];
            let output_act: &[f32] = &acts[li + 1];
            match &self.layers[li] {
                Layer::Softmax => {
                    // dcur already holds d(loss)/d(logits)
                }
                Layer::Dense { weights, bias } => {
                    let ActShape::Flat { len } = input_shape else { unreachable!() };
                    let units = bias.len();
                    let lg = grads.per_layer[li].as_mut().expect("dense layer has grads");
                    ensure_len_f32(dprev, n * len);
                    for s in 0..n {
                        kernels::dense_backward(
                            &input_act[s * len..(s + 1) * len],
                            weights.data(),
                            &dcur[s * units..(s + 1) * units],
                            lg.weights.data_mut(),
                            &mut lg.bias,
                            &mut dprev[s * len..(s + 1) * len],
                        );
                    }
                    std::mem::swap(dcur, dprev);
                }
                Layer::Dropout { .. } => {
                    let scale = &drop_scale[li];
                    if !scale.is_empty() {
                        for (g, s) in dcur.iter_mut().zip(scale) {
                            *g *= s;
                        }
                    }
                }
                Layer::Flatten => {
                    // reshape only
                }
                Layer::Relu => {
                    kernels::relu_backward(output_act, dcur);
                }
                Layer::MaxPool => {
                    let ActShape::Spatial { c, h, w } = input_shape else { unreachable!() };
                    let idx = &pool_idx[li];
                    let (oh, ow) = (h / 2, w / 2);
                    ensure_len_f32(dprev, n * c * h * w);
                    for s in 0..n {
                        kernels::maxpool2x2_backward(
                            &dcur[s * c * oh * ow..(s + 1) * c * oh * ow],
                            &idx[s * c * oh * ow..(s + 1) * c * oh * ow],
                            c,
                            h,
                            w,
                            &mut dprev[s * c * h * w..(s + 1) * c * h * w],
                        );
                    }
                    std::mem::swap(dcur, dprev);
                }
                Layer::Conv { weights, bias } => {
                    let ActShape::Spatial { c, h, w } = input_shape else { unreachable!() };
                    let oc = bias.len();
                    let lg = grads.per_layer[li].as_mut().expect("conv layer has grads");
                    for s in 0..n {
                        kernels::conv3x3_grad_weights(
                            &input_act[s * c * h * w..(s + 1) * c * h * w],
                            c,
                            h,
                            w,
                            oc,
                            &dcur[s * oc * h * w..(s + 1) * oc * h * w],
                            lg.weights.data_mut(),
                            &mut lg.bias,
                        );
                    }
                    // The input gradient is a forward convolution of the
                    // output gradient with flipped weights; the first layer
                    // has no consumer for it.
                    if li > 0 {
                        let flipped = kernels::flip_weights(weights.data(), oc, c);
                        let zero_bias = vec![0.0f32; c];
                        ensure_len_f32(dprev, n * c * h * w);
                        for s in 0..n {
                            kernels::conv3x3_forward(
                                &dcur[s * oc * h * w..(s + 1) * oc * h * w],
                                oc,
                                h,
                                w,
                                &flipped,
                                &zero_bias,
                                c,
                                &mut dprev[s * c * h * w..(s + 1) * c * h * w],
                            );
                        }
                        std::mem::swap(dcur, dprev);
                    }
                }
            }
        }
        (loss, correct)
    }

    /// Eval-mode class prediction for a binary shape mask; the mask is
    /// lifted to 0/1 and bilinearly resized to the network input.
    pub fn predict_class(&self, mask: &BitMask) -> (usize, f32) {
        self.predict_class_with(&mut EvalContext::default(), mask)
    }

    /// Allocation-free variant of [`ShapeNet::predict_class`] for tight
    /// candidate-scoring loops.
    pub fn predict_class_with(&self, ctx: &mut EvalContext, mask: &BitMask) -> (usize, f32) {
        let row = self.forward_mask(ctx, mask);
        let mut best = 0usize;
        for k in 1..row.len() {
            if row[k] > row[best] {
                best = k;
            }
        }
        (best, row[best])
    }

    /// Eval-mode probability of one specific class for a shape mask.
    pub fn class_probability_with(&self, ctx: &mut EvalContext, mask: &BitMask, class: usize) -> f32 {
        self.forward_mask(ctx, mask)[class]
    }

    fn forward_mask<'a>(&self, ctx: &'a mut EvalContext, mask: &BitMask) -> &'a [f32] {
        ctx.plane.clear();
        ctx.plane.extend(mask.bits().iter().map(|&b| if b { 1.0f32 } else { 0.0 }));
        resize_plane_into(
            &ctx.plane,
            mask.width() as usize,
            mask.height() as usize,
            self.input_w,
            self.input_h,
            &mut ctx.input,
        );
        let input = std::mem::take(&mut ctx.input);
        self.forward_impl(&input, 1, false, None, &mut ctx.cache)
            .expect("input buffer matches the network input");
        ctx.input = input;
        ctx.cache.acts.last().expect("network has layers")
    }

    /// Eval-mode argmax class and probability for a prepared input.
    pub fn predict_input(&self, batch: &Tensor) -> Result<(usize, f32)> {
        let probs = self.forward_eval(batch)?;
        let row = probs.data();
        let mut best = 0usize;
        for k in 1..row.len() {
            if row[k] > row[best] {
                best = k;
            }
        }
        Ok((best, row[best]))
    }

    /// Visits every weight tensor (conv and dense weights and biases) in
    /// serialization order.
    pub(crate) fn weight_slots(&self) -> Vec<(usize, WeightSlot)> {
        let mut slots = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv { .. } | Layer::Dense { .. } => {
                    slots.push((li, WeightSlot::Weights));
                    slots.push((li, WeightSlot::Bias));
                }
                _ => {}
            }
        }
        slots
    }

    pub(crate) fn slot_data(&self, li: usize, slot: WeightSlot) -> &[f32] {
        match (&self.layers[li], slot) {
            (Layer::Conv { weights, .. }, WeightSlot::Weights) => weights.data(),
            (Layer::Conv { bias, .. }, WeightSlot::Bias) => bias,
            (Layer::Dense { weights, .. }, WeightSlot::Weights) => weights.data(),
            (Layer::Dense { bias, .. }, WeightSlot::Bias) => bias,
            _ => unreachable!("slot addressed a layer without weights"),
        }
    }

    pub(crate) fn slot_data_mut(&mut self, li: usize, slot: WeightSlot) -> &mut [f32] {
        match (&mut self.layers[li], slot) {
            (Layer::Conv { weights, .. }, WeightSlot::Weights) => weights.data_mut(),
            (Layer::Conv { bias, .. }, WeightSlot::Bias) => bias,
            (Layer::Dense { weights, .. }, WeightSlot::Weights) => weights.data_mut(),
            (Layer::Dense { bias, .. }, WeightSlot::Bias) => bias,
            _ => unreachable!("slot addressed a layer without weights"),
        }
    }

    pub(crate) fn slot_dims(&self, li: usize, slot: WeightSlot) -> Vec<usize> {
        match (&self.layers[li], slot) {
            (Layer::Conv { weights, .. }, WeightSlot::Weights) => weights.shape().to_vec(),
            (Layer::Conv { bias, .. }, WeightSlot::Bias) => vec![bias.len()],
            (Layer::Dense { weights, .. }, WeightSlot::Weights) => weights.shape().to_vec(),
            (Layer::Dense { bias, .. }, WeightSlot::Bias) => vec![bias.len()],
            _ => unreachable!("slot addressed a layer without weights"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum WeightSlot {
    Weights,
    Bias,
}

fn ensure_len_f32(v: &mut Vec<f32>, len: usize) {
    if v.len() != len {
        v.clear();
        v.resize(len, 0.0);
    }
}

fn ensure_len_u8(v: &mut Vec<u8>, len: usize) {
    if v.len() != len {
        v.clear();
        v.resize(len, 0);
    }
}

/// Reusable activation and scratch storage; steady-state passes through a
/// cache perform no allocation.
#[derive(Debug, Default)]
pub(crate) struct Cache {
    pub acts: Vec<Vec<f32>>,
    pub shapes: Vec<ActShape>,
    pub pool_idx: Vec<Vec<u8>>,
    pub drop_scale: Vec<Vec<f32>>,
    pub scratch_a: Vec<f32>,
    pub scratch_b: Vec<f32>,
    pub n: usize,
}

/// Reusable workspace for repeated mask classification.
#[derive(Debug, Default)]
pub struct EvalContext {
    cache: Cache,
    plane: Vec<f32>,
    input: Vec<f32>,
}

/// One gradient tensor pair per weighted layer, aligned with the layer list.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub(crate) per_layer: Vec<Option<LayerGrads>>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerGrads {
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

impl Gradients {
    pub(crate) fn zeroed_like(net: &ShapeNet) -> Self {
        let per_layer = net
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv { weights, bias } | Layer::Dense { weights, bias } => {
                    Some(LayerGrads {
                        weights: Tensor::zeros(weights.shape().to_vec()),
                        bias: vec![0.0; bias.len()],
                    })
                }
                _ => None,
            })
            .collect();
        Self { per_layer }
    }

    pub(crate) fn zero(&mut self) {
        for entry in self.per_layer.iter_mut().flatten() {
            entry.weights.data_mut().fill(0.0);
            entry.bias.fill(0.0);
        }
    }

    /// Scales the gradients of the `nth` weighted layer counting from the
    /// output; used to plant deliberate faults in verification tests.
    pub fn scale_weighted_layer_from_output(&mut self, nth: usize, factor: f32) {
        let mut seen = 0usize;
        for entry in self.per_layer.iter_mut().rev() {
            if let Some(grads) = entry {
                if seen == nth {
                    for w in grads.weights.data_mut() {
                        *w *= factor;
                    }
                    for b in &mut grads.bias {
                        *b *= factor;
                    }
                    return;
                }
                seen += 1;
            }
        }
        panic!("no weighted layer at reverse index {nth}");
    }
}

/// Mean cross-entropy `-ln p[label]` over the batch.
pub fn cross_entropy_loss(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let shape = probs.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::Shape(format!(
            "probability tensor {shape:?} does not match {} labels",
            labels.len()
        )));
    }
    let classes = shape[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range 0..{classes}")));
    }
    let mut loss = 0.0f64;
    for (s, &y) in labels.iter().enumerate() {
        let p = f64::from(probs.data()[s * classes + y]).max(1e-12);
        loss += -p.ln();
    }
    Ok(loss / labels.len() as f64)
}

fn he_tensor(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt() as f32;
    let normal = Normal::new(0.0f32, std).expect("std is positive and finite");
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape, data).expect("shape matches generated buffer")
}

/// Bilinear resize of a single-channel plane.
pub(crate) fn resize_plane(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    let mut out = Vec::new();
    resize_plane_into(src, sw, sh, dw, dh, &mut out);
    out
}

pub(crate) fn resize_plane_into(
    src: &[f32],
    sw: usize,
    sh: usize,
    dw: usize,
    dh: usize,
    out: &mut Vec<f32>,
) {
    debug_assert_eq!(src.len(), sw * sh);
    out.clear();
    out.reserve(dw * dh);
    let fx_scale = sw as f32 / dw as f32;
    let fy_scale = sh as f32 / dh as f32;
    for y in 0..dh {
        let fy = ((y as f32 + 0.5) * fy_scale - 0.5).clamp(0.0, (sh - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let ty = fy - y0 as f32;
        for x in 0..dw {
            let fx = ((x as f32 + 0.5) * fx_scale - 0.5).clamp(0.0, (sw - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let tx = fx - x0 as f32;
            let top = src[y0 * sw + x0] * (1.0 - tx) + src[y0 * sw + x1] * tx;
            let bottom = src[y1 * sw + x0] * (1.0 - tx) + src[y1 * sw + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
}
