//! Canonical little-endian encoding of weight sets and other payload fields.
//!
//! A weight set is an entry count `u32`, then per entry: name length `u32`,
//! UTF-8 name, four `u32` dims, and the values as `f64` in row-major order.

use fleeg_core::{Tensor4, WeightEntry, WeightSet};

use crate::error::CodecError;

/// Appends fields to a payload buffer.
#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: usize) -> Result<(), CodecError> {
        let v = u32::try_from(v).map_err(|_| CodecError::Overflow(v))?;
        self.buf.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    pub fn f64(&mut self, v: f64) -> Result<(), CodecError> {
        if !v.is_finite() {
            return Err(CodecError::NonFinite { value: v });
        }
        self.buf.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    pub fn str(&mut self, s: &str) -> Result<(), CodecError> {
        self.u32(s.len())?;
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }

    pub fn weights(&mut self, w: &WeightSet) -> Result<(), CodecError> {
        self.u32(w.len())?;
        for e in w.entries() {
            self.str(&e.name)?;
            for d in e.value.dims() {
                self.u32(d)?;
            }
            self.buf.reserve(8 * e.value.len());
            for &v in e.value.data() {
                self.f64(v)?;
            }
        }
        Ok(())
    }
}

/// Reads fields from a payload, tracking the offset for error messages.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let rest = self.buf.len() - self.pos;
        if rest < n {
            return Err(CodecError::Truncated {
                offset: self.pos,
                needed: n - rest,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<usize, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    pub fn f64(&mut self) -> Result<f64, CodecError> {
        let offset = self.pos;
        let v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(CodecError::NonFiniteAt { offset });
        }
        Ok(v)
    }

    pub fn str(&mut self) -> Result<String, CodecError> {
        let n = self.u32()?;
        let offset = self.pos;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CodecError::Utf8 { offset })
    }

    pub fn weights(&mut self) -> Result<WeightSet, CodecError> {
        let n = self.u32()?;
        let mut entries = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let name = self.str()?;
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = self.u32()?;
            }
            let count = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&c| c.checked_mul(8).is_some())
                .ok_or(CodecError::Overflow(usize::MAX))?;
            // check the length before allocating
            if self.buf.len() - self.pos < count * 8 {
                return Err(CodecError::Truncated {
                    offset: self.pos,
                    needed: count * 8 - (self.buf.len() - self.pos),
                });
            }
            let values = (0..count).map(|_| self.f64()).collect::<Result<Vec<_>, _>>()?;
            let value = Tensor4::new(dims, values).map_err(|e| CodecError::Invalid(e.to_string()))?;
            entries.push(WeightEntry { name, value });
        }
        Ok(WeightSet::new(entries))
    }

    /// Fails unless the whole buffer was consumed.
    pub fn finish(self) -> Result<(), CodecError> {
        if self.pos != self.buf.len() {
            return Err(CodecError::Trailing {
                extra: self.buf.len() - self.pos,
            });
        }
        Ok(())
    }
}

pub fn encode_weights(w: &WeightSet) -> Result<Vec<u8>, CodecError> {
    let mut out = Writer::new();
    out.weights(w)?;
    Ok(out.into_bytes())
}

pub fn decode_weights(bytes: &[u8]) -> Result<WeightSet, CodecError> {
    let mut r = Reader::new(bytes);
    let w = r.weights()?;
    r.finish()?;
    Ok(w)
}
