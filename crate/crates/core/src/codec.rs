//! Canonical binary encoding.
//!
//! Every encodable value is written as a 1-byte type tag followed by its
//! body. Fields are written in declaration order; fixed-width fields are
//! written raw, variable-length fields carry a 4-byte big-endian length
//! prefix, and integers are big-endian. Decoding is strict: the tag must
//! match, lengths must be in range and the whole input must be consumed.

use thiserror::Error;

/// Type tags for the canonical encoding. Stable across releases.
pub mod tag {
    pub const DIGEST: u8 = 0x01;
    pub const VERIFYING_KEY: u8 = 0x02;
    pub const SIGNATURE: u8 = 0x03;
    pub const BLINDED_MESSAGE: u8 = 0x04;
    pub const BLIND_SIGNATURE: u8 = 0x05;
    pub const SIGNED_COMMITMENT: u8 = 0x06;
    pub const LINKAGE_PROOF: u8 = 0x07;

    pub const PROOF_OF_INCLUSION: u8 = 0x10;
    pub const PROOF_OF_EXCLUSION: u8 = 0x11;

    pub const REGISTRATION: u8 = 0x20;
    pub const SIGNED_ROOT: u8 = 0x21;
    pub const RECEIPT: u8 = 0x22;
    pub const PROVENANCE_ENTRY: u8 = 0x23;
    pub const LEDGER_ID: u8 = 0x24;

    pub const UPDATE_VECTOR: u8 = 0x30;
    pub const UPDATE: u8 = 0x31;
    pub const ASSET: u8 = 0x32;
    pub const PROVENANCE: u8 = 0x33;
    pub const GENESIS_AUTH: u8 = 0x34;
    pub const TRUST_BUNDLE: u8 = 0x35;
    pub const LEDGER_REF: u8 = 0x36;

    pub const WITHDRAWAL_AUTH: u8 = 0x40;
    pub const BLIND_INIT_REQUEST: u8 = 0x41;
    pub const BLIND_INIT_RESPONSE: u8 = 0x42;
    pub const VOUCHER: u8 = 0x43;
    pub const BULLETIN_ENTRY: u8 = 0x44;
    pub const BURN_WITNESS: u8 = 0x45;

    pub const ANCHOR_ROOT: u8 = 0x50;
    pub const STACKED_PROOF: u8 = 0x51;
    pub const EQUIVOCATION_EVIDENCE: u8 = 0x52;

    pub const MESSAGE: u8 = 0x60;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("bad type tag: expected {expected:#04x}, found {found:#04x}")]
    BadTag { expected: u8, found: u8 },
    #[error("{0} trailing bytes after value")]
    TrailingBytes(usize),
    #[error("invalid encoding: {0}")]
    Invalid(&'static str),
}

/// Upper bound on any single length-prefixed field. Guards allocation on
/// hostile input.
pub const MAX_FIELD_LEN: usize = 1 << 24;

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

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    /// Raw bytes, no length prefix.
    pub fn fixed(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    /// Length-prefixed bytes.
    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        assert!(bytes.len() <= MAX_FIELD_LEN, "field too large to encode");
        self.u32(bytes.len() as u32);
        self.fixed(bytes)
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn item<T: Canonical>(&mut self, v: &T) -> &mut Self {
        v.encode_to(self);
        self
    }

    pub fn option<T: Canonical>(&mut self, v: Option<&T>) -> &mut Self {
        match v {
            None => self.u8(0),
            Some(v) => self.u8(1).item(v),
        }
    }

    /// Count-prefixed sequence.
    pub fn seq<T: Canonical>(&mut self, items: &[T]) -> &mut Self {
        self.u32(items.len() as u32);
        for it in items {
            self.item(it);
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn peek_u8(&self) -> Result<u8, CodecError> {
        self.data
            .get(self.pos)
            .copied()
            .ok_or(CodecError::UnexpectedEnd)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::UnexpectedEnd);
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn bool(&mut self) -> Result<bool, CodecError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(CodecError::Invalid("boolean out of range")),
        }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let len = self.u32()? as usize;
        if len > MAX_FIELD_LEN {
            return Err(CodecError::Invalid("field length exceeds limit"));
        }
        self.take(len)
    }

    pub fn str(&mut self) -> Result<String, CodecError> {
        let raw = self.bytes()?;
        String::from_utf8(raw.to_vec()).map_err(|_| CodecError::Invalid("string is not utf-8"))
    }

    pub fn item<T: Canonical>(&mut self) -> Result<T, CodecError> {
        T::decode_from(self)
    }

    pub fn option<T: Canonical>(&mut self) -> Result<Option<T>, CodecError> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.item()?)),
            _ => Err(CodecError::Invalid("option flag out of range")),
        }
    }

    pub fn seq<T: Canonical>(&mut self) -> Result<Vec<T>, CodecError> {
        let n = self.u32()? as usize;
        // Every element is at least its tag byte.
        if n > self.remaining() {
            return Err(CodecError::UnexpectedEnd);
        }
        (0..n).map(|_| self.item()).collect()
    }

    pub fn expect_tag(&mut self, expected: u8) -> Result<(), CodecError> {
        let found = self.u8()?;
        if found != expected {
            return Err(CodecError::BadTag { expected, found });
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(), CodecError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(CodecError::TrailingBytes(n)),
        }
    }
}

/// A type with a unique, tagged binary encoding.
pub trait Canonical: Sized {
    const TAG: u8;

    fn encode_body(&self, w: &mut Writer);

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError>;

    fn encode_to(&self, w: &mut Writer) {
        w.u8(Self::TAG);
        self.encode_body(w);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.expect_tag(Self::TAG)?;
        Self::decode_body(r)
    }

    fn to_canonical(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_to(&mut w);
        w.finish()
    }

    fn from_canonical(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let v = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

/// Serde helper rendering byte strings as lowercase hex in the JSON mirror.
pub mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reader_rejects_truncated_length_prefix() {
        let mut w = Writer::new();
        w.bytes(b"hello");
        let mut bytes = w.finish();
        bytes.pop();
        let mut r = Reader::new(&bytes);
        assert_eq!(r.bytes(), Err(CodecError::UnexpectedEnd));
    }

    #[test]
    fn integers_are_big_endian() {
        let mut w = Writer::new();
        w.u16(0x0102).u32(0x03040506).u64(7);
        assert_eq!(w.finish(), [1, 2, 3, 4, 5, 6, 0, 0, 0, 0, 0, 0, 0, 7]);
    }

    #[test]
    fn oversized_length_is_rejected_without_allocating() {
        let bytes = [0xff, 0xff, 0xff, 0xff];
        let mut r = Reader::new(&bytes);
        assert!(matches!(r.bytes(), Err(CodecError::Invalid(_))));
    }
}
