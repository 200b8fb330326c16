//! Versioned binary weights file: magic `OSNW1`, little-endian u32 tensor
//! count, then per tensor a u32 rank, u32 dims and f32 data row-major.
//! Tensors appear in layer order, weights before biases.

use super::net::{Layer, LayerSpec, ShapeNet};
use super::tensor::Tensor;
use crate::chroma::{read_f32, read_u32};
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const WEIGHTS_MAGIC: &[u8; 5] = b"OSNW1";

pub fn save_weights(net: &ShapeNet, path: &Path) -> Result<()> {
    let slots = net.weight_slots();
    let mut file = std::fs::File::create(path)?;
    file.write_all(WEIGHTS_MAGIC)?;
    file.write_all(&(slots.len() as u32).to_le_bytes())?;
    for (li, slot) in slots {
        let dims = net.slot_dims(li, slot);
        file.write_all(&(dims.len() as u32).to_le_bytes())?;
        for d in &dims {
            file.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in net.slot_data(li, slot) {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reconstructs a network of the conv/pool + dense family from its weight
/// tensors. The tensor sequence must pair each weight tensor with its bias
/// and chain shape-consistently on a square input.
pub fn load_weights(path: &Path) -> Result<ShapeNet> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 5];
    file.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated weights file".into()))?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::Format("bad weights magic".into()));
    }
    let count = read_u32(&mut file)? as usize;
    if count == 0 || count % 2 != 0 {
        return Err(Error::Format(format!(
            "tensor count {count} does not pair weights with biases"
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = read_u32(&mut file)? as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::Format(format!("unsupported tensor rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut file)? as usize);
        }
        let numel: usize = dims.iter().product();
        if numel == 0 {
            return Err(Error::Format(format!("empty tensor with dims {dims:?}")));
        }
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let v = read_f32(&mut file)?;
            if !v.is_finite() {
                return Err(Error::Format("non-finite weight in weights file".into()));
            }
            data.push(v);
        }
        tensors.push(Tensor::new(dims, data)?);
    }

    // Split the pairs into conv stages and dense heads.
    let mut pairs = Vec::with_capacity(count / 2);
    let mut iter = tensors.into_iter();
    while let (Some(w), Some(b)) = (iter.next(), iter.next()) {
        if b.shape().len() != 1 || b.shape()[0] != w.shape()[0] {
            return Err(Error::Format(format!(
                "bias {:?} does not match weight tensor {:?}",
                b.shape(),
                w.shape()
            )));
        }
        pairs.push((w, b));
    }
    let stages = pairs.iter().take_while(|(w, _)| w.shape().len() == 4).count();
    let denses = pairs.len() - stages;
    if stages == 0 || denses == 0 {
        return Err(Error::Format(
            "weights file must hold at least one conv stage and one dense head".into(),
        ));
    }
    if pairs[stages..].iter().any(|(w, _)| w.shape().len() != 2) {
        return Err(Error::Format("conv tensor found after the dense head".into()));
    }

    // Chain the conv channel counts and infer the square input side.
    let mut in_channels = 1usize;
    for (w, _) in &pairs[..stages] {
        let shape = w.shape();
        if shape[1] != in_channels || shape[2] != 3 || shape[3] != 3 {
            return Err(Error::Format(format!(
                "conv tensor {shape:?} does not chain from {in_channels} input channels"
            )));
        }
        in_channels = shape[0];
    }
    let flat = pairs[stages].0.shape()[1];
    if flat % in_channels != 0 {
        return Err(Error::Format(format!(
            "dense input {flat} is not a multiple of {in_channels} channels"
        )));
    }
    let spatial = flat / in_channels;
    let side = (spatial as f64).sqrt().round() as usize;
    if side * side != spatial {
        return Err(Error::Format(format!(
            "dense input {flat} does not correspond to a square feature map"
        )));
    }
    let input_side = side << stages;

    let mut specs = Vec::new();
    for (w, _) in &pairs[..stages] {
        specs.push(LayerSpec::Conv3x3 { out_channels: w.shape()[0] });
        specs.push(LayerSpec::Relu);
        specs.push(LayerSpec::MaxPool2x2);
    }
    specs.push(LayerSpec::Flatten);
    let mut expect_in = flat;
    for (i, (w, b)) in pairs[stages..].iter().enumerate() {
        if w.shape()[1] != expect_in {
            return Err(Error::Format(format!(
                "dense tensor {:?} does not chain from {expect_in} features",
                w.shape()
            )));
        }
        expect_in = b.numel();
        let last = i + 1 == denses;
        if last {
            specs.push(LayerSpec::Dropout { rate: 0.5 });
            specs.push(LayerSpec::Dense { units: w.shape()[0] });
            specs.push(LayerSpec::Softmax);
        } else {
            specs.push(LayerSpec::Dense { units: w.shape()[0] });
            specs.push(LayerSpec::Relu);
        }
    }

    let mut net = ShapeNet::build(&specs, input_side, input_side, 0)
        .map_err(|e| Error::Format(format!("weights do not assemble into a network: {e}")))?;
    let mut pair_iter = pairs.into_iter();
    for (li, layer) in net.layers.iter_mut().enumerate() {
        match layer {
            Layer::Conv { weights, bias } | Layer::Dense { weights, bias } => {
                let (w, b) = pair_iter.next().expect("pair count matches weighted layers");
                if weights.shape() != w.shape() {
                    return Err(Error::Format(format!(
                        "layer {li} expects {:?}, file holds {:?}",
                        weights.shape(),
                        w.shape()
                    )));
                }
                *weights = w;
                *bias = b.data().to_vec();
            }
            _ => {}
        }
    }
    Ok(net)
}
