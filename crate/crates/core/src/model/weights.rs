//! Weight-set container and its binary "SNNW" file format.
//!
//! Layout (all little-endian):
//! magic `SNNW`, version u16, tensor count u16, then per tensor:
//! dtype u8 (0 = real32, 1 = int8), rank u8, dims u32 each,
//! scale f32 (int8 only), payload (f32 LE or raw i8 bytes).

use crate::model::{LayerSpec, NetworkSpec};
use crate::tensor::{Tensor, TensorData};
use crate::{Error, Result};

pub const SNNW_MAGIC: [u8; 4] = *b"SNNW";
pub const SNNW_VERSION: u16 = 1;

/// The ordered weight tensors of a network, one traversal entry per
/// parameterized layer (see [`expected_tensor_shapes`]).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub tensors: Vec<Tensor>,
}

impl WeightSet {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }
}

/// Number of tensors a layer contributes to the weight set.
pub fn tensors_per_layer(layer: &LayerSpec) -> usize {
    match layer {
        LayerSpec::Conv2d(_) => 1,
        LayerSpec::BatchNorm { .. } => 4,
        LayerSpec::MeanOnlyBatchNorm { .. } => 1,
        LayerSpec::Lif(_) => 0,
        LayerSpec::RepVgg(r) => {
            5 + if r.has_one_by_one { 5 } else { 0 } + if r.has_identity { 4 } else { 0 }
        }
    }
}

/// The tensor shapes a spec requires, in traversal order. BatchNorm bundles
/// are (mean, var, gamma, beta); RepVGG blocks contribute the 3x3 branch
/// weight plus its BN bundle, then the optional 1x1 branch likewise, then the
/// optional identity-branch BN bundle.
pub fn expected_tensor_shapes(spec: &NetworkSpec) -> Vec<Vec<usize>> {
    let mut shapes = Vec::new();
    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv2d(c) => shapes.push(c.weight_shape()),
            LayerSpec::BatchNorm { channels, .. } => {
                for _ in 0..4 {
                    shapes.push(vec![*channels]);
                }
            }
            LayerSpec::MeanOnlyBatchNorm { channels } => shapes.push(vec![*channels]),
            LayerSpec::Lif(_) => {}
            LayerSpec::RepVgg(r) => {
                shapes.push(vec![r.out_ch, r.in_ch, 3, 3]);
                for _ in 0..4 {
                    shapes.push(vec![r.out_ch]);
                }
                if r.has_one_by_one {
                    shapes.push(vec![r.out_ch, r.in_ch, 1, 1]);
                    for _ in 0..4 {
                        shapes.push(vec![r.out_ch]);
                    }
                }
                if r.has_identity {
                    for _ in 0..4 {
                        shapes.push(vec![r.out_ch]);
                    }
                }
            }
        }
    }
    shapes
}

pub fn write_weight_set(set: &WeightSet) -> Result<Vec<u8>> {
    if set.tensors.len() > u16::MAX as usize {
        return Err(Error::InvalidArgument("too many tensors for SNNW".into()));
    }
    let mut out = Vec::new();
    out.extend_from_slice(&SNNW_MAGIC);
    out.extend_from_slice(&SNNW_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.tensors.len() as u16).to_le_bytes());
    for t in &set.tensors {
        let rank = t.shape().len() as u8;
        match t.data() {
            TensorData::F32(values) => {
                out.push(0);
                out.push(rank);
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            TensorData::I8 { values, scale } => {
                out.push(1);
                out.push(rank);
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                out.extend_from_slice(&scale.to_le_bytes());
                out.extend_from_slice(&values.iter().map(|&v| v as u8).collect::<Vec<_>>());
            }
        }
    }
    Ok(out)
}

pub fn read_weight_set(bytes: &[u8]) -> Result<WeightSet> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != SNNW_MAGIC {
        return Err(Error::Parse("bad magic, expected SNNW".into()));
    }
    let version = r.u16()?;
    if version != SNNW_VERSION {
        return Err(Error::Parse(format!("unsupported SNNW version {version}")));
    }
    let count = r.u16()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let dtype = r.u8()?;
        let rank = r.u8()? as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::Parse(format!("tensor {i}: bad rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Parse(format!("tensor {i}: shape {shape:?} overflows")))?;
        // dims must be payable from the remaining bytes before any allocation
        let elem_size = if dtype == 0 { 4 } else { 1 };
        if len.checked_mul(elem_size).is_none_or(|b| b > r.remaining()) {
            return Err(Error::Parse(format!(
                "tensor {i}: shape {shape:?} exceeds the remaining {} bytes",
                r.remaining()
            )));
        }
        match dtype {
            0 => {
                let mut values = Vec::with_capacity(len);
                for _ in 0..len {
                    values.push(r.f32()?);
                }
                tensors.push(Tensor::from_f32(&shape, values)?);
            }
            1 => {
                let scale = r.f32()?;
                let raw = r.take(len)?;
                let values = raw.iter().map(|&b| b as i8).collect();
                tensors.push(Tensor::from_i8(&shape, values, scale)?);
            }
            other => {
                return Err(Error::Parse(format!("tensor {i}: unknown dtype {other}")));
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse(format!(
            "{} trailing bytes after {count} tensors",
            bytes.len() - r.pos
        )));
    }
    Ok(WeightSet::new(tensors))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Parse(format!(
                "truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
