//! Little-endian primitives shared by the trajectory and parameter formats.

use super::FormatError;
use crate::tensor::Tensor;

#[derive(Debug, Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn payload(&mut self, t: &Tensor<f32>) {
        self.buf.reserve(4 * t.numel());
        for v in t.data() {
            self.f32(*v);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor that reports the byte offset of every short read.
#[derive(Debug)]
pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        let available = self.data.len() - self.pos;
        if n > available {
            return Err(FormatError::Length {
                offset: self.pos as u64,
                detail: format!("{what} needs {n} bytes, {available} remain"),
            });
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], FormatError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    pub fn u16(&mut self, what: &str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.array(what)?))
    }

    /// `count` f32 values, bounds-checked before allocating.
    pub fn payload(&mut self, count: usize, what: &str) -> Result<Vec<f32>, FormatError> {
        let offset = self.pos as u64;
        let bytes = count.checked_mul(4).ok_or_else(|| FormatError::Length {
            offset,
            detail: format!("{what} element count {count} overflows"),
        })?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect())
    }

    pub fn expect_end(&self) -> Result<(), FormatError> {
        if self.pos != self.data.len() {
            return Err(FormatError::Length {
                offset: self.pos as u64,
                detail: format!("{} trailing bytes", self.data.len() - self.pos),
            });
        }
        Ok(())
    }
}

/// Product of extents, or a length error at `offset` on overflow.
pub(crate) fn element_count(dims: &[usize], offset: usize) -> Result<usize, FormatError> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| FormatError::Length {
            offset: offset as u64,
            detail: format!("extents {dims:?} overflow"),
        })
}
