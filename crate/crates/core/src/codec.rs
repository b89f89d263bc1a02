//! Little-endian binary encoding shared by the vocab and model containers.
//!
//! Both formats are `magic | u32 version | body | u64 checksum`, where the
//! checksum is FNV-1a over every preceding byte. Decoding works over an
//! in-memory buffer so every failure can name the byte offset it hit.

use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

#[derive(Default)]
pub(crate) struct Encoder {
    pub buf: Vec<u8>,
}

impl Encoder {
    pub fn with_header(magic: &[u8; 8], version: u32) -> Self {
        let mut enc = Encoder::default();
        enc.buf.extend_from_slice(magic);
        enc.u32(version);
        enc
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    /// Appends the checksum and returns the finished buffer.
    pub fn finish(mut self) -> Vec<u8> {
        let sum = fnv1a(&self.buf);
        self.u64(sum);
        self.buf
    }
}

pub(crate) struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    /// Verifies magic, version and trailing checksum, returning a decoder
    /// positioned at the start of the body.
    pub fn open(
        data: &'a [u8],
        magic: &[u8; 8],
        kind: &'static str,
        version: u32,
    ) -> Result<Self> {
        if data.len() < magic.len() || &data[..magic.len()] != magic {
            return Err(Error::BadMagic { expected: kind });
        }
        if data.len() < magic.len() + 4 + 8 {
            return Err(Error::integrity(data.len(), "file truncated inside header"));
        }
        let found = u32::from_le_bytes(data[8..12].try_into().unwrap());
        if found != version {
            return Err(Error::Version {
                found,
                expected: version,
            });
        }
        let body_end = data.len() - 8;
        let stored = u64::from_le_bytes(data[body_end..].try_into().unwrap());
        if fnv1a(&data[..body_end]) != stored {
            return Err(Error::integrity(body_end, "checksum mismatch"));
        }
        Ok(Decoder {
            data: &data[..body_end],
            pos: 12,
        })
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| {
                Error::integrity(self.pos, format!("need {n} bytes, file body ends at {}", self.data.len()))
            })?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<&'a str> {
        let len = self.u32()? as usize;
        let at = self.pos;
        let raw = self.take(len)?;
        std::str::from_utf8(raw).map_err(|e| Error::integrity(at + e.valid_up_to(), "invalid UTF-8"))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::integrity(self.pos, "trailing bytes after body"));
        }
        Ok(())
    }
}
