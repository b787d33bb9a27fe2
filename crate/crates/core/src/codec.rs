//! Byte-level encoding helpers shared by every file and wire format.
//!
//! All integers are big-endian. Big integers are unsigned, minimal length and
//! carry a 4-byte length prefix; byte strings use the same prefix.

use num_bigint::BigUint;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input: needed {needed} bytes, {remaining} remaining")]
    Truncated { needed: usize, remaining: usize },
    #[error("{0} trailing bytes after record")]
    Trailing(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("non-minimal integer encoding")]
    NonMinimal,
    #[error("invalid field: {0}")]
    Invalid(&'static str),
}

/// Appends big-endian values to a byte buffer.
#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    /// Writes a 4-byte length followed by the bytes.
    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        let len = u32::try_from(bytes.len()).expect("field longer than 4 GiB");
        self.u32(len).raw(bytes)
    }

    /// Minimal big-endian encoding; zero is the empty string.
    pub fn biguint(&mut self, v: &BigUint) -> &mut Self {
        self.bytes(&biguint_to_bytes(v))
    }

    /// Fixed-width big-endian encoding, still length-prefixed.
    pub fn biguint_fixed(&mut self, v: &BigUint, width: usize) -> &mut Self {
        let raw = biguint_to_bytes(v);
        assert!(raw.len() <= width, "integer wider than {width} bytes");
        let mut padded = vec![0u8; width - raw.len()];
        padded.extend_from_slice(&raw);
        self.bytes(&padded)
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor over an input slice.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    input: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Self { input }
    }

    pub fn remaining(&self) -> usize {
        self.input.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.input.len() < n {
            return Err(DecodeError::Truncated {
                needed: n,
                remaining: self.input.len(),
            });
        }
        let (head, tail) = self.input.split_at(n);
        self.input = tail;
        Ok(head)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    /// Reads a minimal-length big integer; leading zero bytes are rejected.
    pub fn biguint(&mut self) -> Result<BigUint, DecodeError> {
        let raw = self.bytes()?;
        if raw.first() == Some(&0) {
            return Err(DecodeError::NonMinimal);
        }
        Ok(BigUint::from_bytes_be(raw))
    }

    /// Reads a fixed-width big integer of exactly `width` bytes.
    pub fn biguint_fixed(&mut self, width: usize) -> Result<BigUint, DecodeError> {
        let raw = self.bytes()?;
        if raw.len() != width {
            return Err(DecodeError::Invalid("fixed-width integer has wrong length"));
        }
        Ok(BigUint::from_bytes_be(raw))
    }

    pub fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.input)
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.input.len() {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}

pub fn biguint_to_bytes(v: &BigUint) -> Vec<u8> {
    if v.bits() == 0 {
        Vec::new()
    } else {
        v.to_bytes_be()
    }
}
