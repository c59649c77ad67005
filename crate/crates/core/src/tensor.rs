//! Dense 4-D tensors in (batch, maps, height, width) layout.

use crate::error::{contract, shape_err, Error, Result};

/// Row-major dense tensor of `f64`, batch outermost and width innermost.
///
/// All values are finite; construction rejects NaN and infinities.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(shape_err("Tensor4::new", dims, format!("{} values", data.len())));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "Tensor4::new", index });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn filled(dims: [usize; 4], value: f64) -> Self {
        assert!(value.is_finite());
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    /// Caller guarantees the length matches. Finiteness is checked by the
    /// layer stack in debug builds.
    pub(crate) fn from_raw(dims: [usize; 4], data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn maps(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn offset(&self, b: usize, m: usize, h: usize, w: usize) -> usize {
        ((b * self.dims[1] + m) * self.dims[2] + h) * self.dims[3] + w
    }

    pub fn get(&self, b: usize, m: usize, h: usize, w: usize) -> f64 {
        self.data[self.offset(b, m, h, w)]
    }

    /// Elements of one batch entry.
    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.dims[1] * self.dims[2] * self.dims[3];
        &self.data[b * n..(b + 1) * n]
    }

    /// Reinterpret with new dims holding the same number of values.
    pub fn reshape(self, dims: [usize; 4]) -> Result<Self> {
        if dims.iter().product::<usize>() != self.data.len() {
            return Err(shape_err("reshape", self.dims, dims));
        }
        Ok(Self { dims, data: self.data })
    }

    /// Concatenate tensors along the batch axis.
    pub fn stack(parts: &[&Tensor4]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| contract("stack of zero tensors"))?;
        let inner = [first.dims[1], first.dims[2], first.dims[3]];
        let mut batch = 0;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            if [p.dims[1], p.dims[2], p.dims[3]] != inner {
                return Err(shape_err("stack", first.dims, p.dims));
            }
            batch += p.dims[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            dims: [batch, inner[0], inner[1], inner[2]],
            data,
        })
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.dims, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `NonFinite` if any value is NaN or infinite; a no-op in release builds.
    #[inline]
    pub(crate) fn debug_check_finite(&self, op: &'static str) -> Result<()> {
        if cfg!(debug_assertions) {
            if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op, index });
            }
        }
        Ok(())
    }
}
