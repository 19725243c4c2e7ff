//! Canonical binary encoding.
//!
//! Every field is written in a fixed order. Integers are little-endian and
//! fixed width, digests are raw 32-byte strings and every list is prefixed
//! with its length as a `u32`. The encoding is the input to transaction and
//! header hashing, so it must never change shape.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unexpected end of input: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("{0} trailing bytes after value")]
    Trailing(usize),
    #[error("invalid value for {field}: {value}")]
    InvalidValue { field: &'static str, value: u64 },
    #[error("declared length {len} exceeds limit {limit}")]
    LengthLimit { len: usize, limit: usize },
}

/// Types with a canonical byte representation.
pub trait Canonical: Sized {
    fn encode_to(&self, out: &mut Vec<u8>);

    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, DecodeError>;

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_to(&mut out);
        out
    }

    /// Decodes a value that must consume the whole buffer.
    fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut reader = Reader::new(bytes);
        let value = Self::decode_from(&mut reader)?;
        reader.finish()?;
        Ok(value)
    }
}

pub fn put_u8(out: &mut Vec<u8>, v: u8) {
    out.push(v);
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(bytes);
}

pub fn put_len(out: &mut Vec<u8>, len: usize) {
    let len = u32::try_from(len).expect("list length exceeds u32");
    put_u32(out, len);
}

pub fn put_list<T: Canonical>(out: &mut Vec<u8>, items: &[T]) {
    put_len(out, items.len());
    for item in items {
        item.encode_to(out);
    }
}

/// Cursor over an encoded buffer.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated {
                needed: n - self.remaining(),
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    pub fn bool(&mut self, field: &'static str) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(DecodeError::InvalidValue {
                field,
                value: v as u64,
            }),
        }
    }

    /// Reads a `u32` list length. Each element occupies at least
    /// `min_item_size` bytes, so lengths the buffer cannot hold are rejected
    /// before any allocation.
    pub fn len(&mut self, min_item_size: usize) -> Result<usize, DecodeError> {
        let len = self.u32()? as usize;
        let limit = self.remaining() / min_item_size.max(1);
        if len > limit {
            return Err(DecodeError::LengthLimit { len, limit });
        }
        Ok(len)
    }

    pub fn list<T: Canonical>(&mut self, min_item_size: usize) -> Result<Vec<T>, DecodeError> {
        let len = self.len(min_item_size)?;
        (0..len).map(|_| T::decode_from(self)).collect()
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}
