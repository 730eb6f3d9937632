//! Dense row-major tensors with a real32 or int8(+scale) payload.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Element storage. Int8 tensors carry a symmetric per-tensor scale so that
/// the represented real value of element `q` is `q as f32 * scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TensorData {
    F32(Vec<f32>),
    I8 { values: Vec<i8>, scale: f32 },
}

/// A dense tensor, row-major, at most 4 dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn from_f32(shape: &[usize], values: Vec<f32>) -> Result<Self> {
        Self::check_shape(shape, values.len())?;
        Ok(Self {
            shape: shape.to_vec(),
            data: TensorData::F32(values),
        })
    }

    pub fn from_i8(shape: &[usize], values: Vec<i8>, scale: f32) -> Result<Self> {
        Self::check_shape(shape, values.len())?;
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "int8 scale must be positive, got {scale}"
            )));
        }
        if values.contains(&i8::MIN) {
            return Err(Error::InvalidArgument(
                "int8 tensor values must lie in [-127, 127]".into(),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: TensorData::I8 { values, scale },
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: TensorData::F32(vec![0.0; len]),
        }
    }

    fn check_shape(shape: &[usize], len: usize) -> Result<()> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::ShapeMismatch(format!(
                "tensors are 1..=4 dimensional, got rank {}",
                shape.len()
            )));
        }
        let expect: usize = shape.iter().product();
        if expect != len {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} implies {expect} elements, got {len}"
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self.data, TensorData::I8 { .. })
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    /// Borrow the f32 payload; errors on quantized tensors.
    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::I8 { .. } => Err(Error::InvalidArgument(
                "expected a real32 tensor, got int8".into(),
            )),
        }
    }

    pub fn as_f32_mut(&mut self) -> Result<&mut [f32]> {
        match &mut self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::I8 { .. } => Err(Error::InvalidArgument(
                "expected a real32 tensor, got int8".into(),
            )),
        }
    }

    pub fn as_i8(&self) -> Result<(&[i8], f32)> {
        match &self.data {
            TensorData::I8 { values, scale } => Ok((values, *scale)),
            TensorData::F32(_) => Err(Error::InvalidArgument(
                "expected an int8 tensor, got real32".into(),
            )),
        }
    }

    /// Dequantized copy of the payload (identity for real32 tensors).
    pub fn to_f32_vec(&self) -> Vec<f32> {
        match &self.data {
            TensorData::F32(v) => v.clone(),
            TensorData::I8 { values, scale } => values.iter().map(|&q| q as f32 * scale).collect(),
        }
    }

    /// Flat offset of `[c, y, x]` in a CHW tensor.
    #[inline]
    pub fn idx3(&self, c: usize, y: usize, x: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 3);
        (c * self.shape[1] + y) * self.shape[2] + x
    }

    pub fn get3(&self, c: usize, y: usize, x: usize) -> f32 {
        let i = self.idx3(c, y, x);
        match &self.data {
            TensorData::F32(v) => v[i],
            TensorData::I8 { values, scale } => values[i] as f32 * scale,
        }
    }

    /// Sum of all elements, accumulated in f64.
    pub fn sum(&self) -> f64 {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).sum(),
            TensorData::I8 { values, scale } => {
                values.iter().map(|&q| q as f64 * *scale as f64).sum()
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        match &self.data {
            TensorData::F32(v) => v.iter().all(|x| x.is_finite()),
            TensorData::I8 { scale, .. } => scale.is_finite(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_element_count_must_agree() {
        assert!(Tensor::from_f32(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_f32(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_f32(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn int8_range_and_dequant() {
        let t = Tensor::from_i8(&[3], vec![-127, 0, 127], 0.5).unwrap();
        assert_eq!(t.to_f32_vec(), vec![-63.5, 0.0, 63.5]);
        assert!(Tensor::from_i8(&[1], vec![i8::MIN], 1.0).is_err());
        assert!(Tensor::from_i8(&[1], vec![1], 0.0).is_err());
    }

    #[test]
    fn chw_indexing_is_row_major() {
        let t = Tensor::from_f32(&[2, 2, 3], (0..12).map(|i| i as f32).collect()).unwrap();
        assert_eq!(t.get3(0, 0, 0), 0.0);
        assert_eq!(t.get3(0, 1, 2), 5.0);
        assert_eq!(t.get3(1, 0, 0), 6.0);
        assert_eq!(t.get3(1, 1, 2), 11.0);
    }
}
