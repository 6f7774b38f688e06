//! Hashing, signatures, blind signatures and signed commitments.

mod blind;
mod commitment;
mod keys;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{tag, Canonical, CodecError, Reader, Writer};

pub use blind::{blind, blind_sign, unblind, BlindSignature, BlindedMessage, BlindingFactor};
pub use commitment::{
    commit, commitment_digest, verify_linkage, LinkageProof, Nonce, SignedCommitment,
};
pub use keys::{verify, Scheme, Signature, SigningKeyPair, VerifyingKey};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("key scheme does not support this operation")]
    SchemeMismatch,
    #[error("blinded message is not a valid group element")]
    MalformedMessage,
    #[error("blind signature is malformed")]
    MalformedSignature,
    #[error("blinding factor already consumed")]
    FactorConsumed,
    #[error("blinding factor belongs to a different issuer key")]
    FactorKeyMismatch,
    #[error("key generation failed: {0}")]
    KeyGeneration(String),
}

/// One-byte context tags prefixed to every hash application, so that a
/// digest computed in one role can never be replayed in another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Domain {
    Leaf = 0x00,
    Node = 0x01,
    Commitment = 0x02,
    Message = 0x03,
    TrieKey = 0x04,
    Value = 0x05,
    Root = 0x06,
    FullDomain = 0x07,
}

/// A 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const LEN: usize = 32;
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CodecError> {
        let raw = hex::decode(s.trim()).map_err(|_| CodecError::Invalid("digest is not hex"))?;
        let arr: [u8; 32] = raw
            .try_into()
            .map_err(|_| CodecError::Invalid("digest must be 32 bytes"))?;
        Ok(Digest(arr))
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; 32]
    }

    /// Bit `i` counted from the most significant bit of byte 0.
    pub fn bit(&self, i: usize) -> bool {
        (self.0[i / 8] >> (7 - (i % 8))) & 1 == 1
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

impl Canonical for Digest {
    const TAG: u8 = tag::DIGEST;

    fn encode_body(&self, w: &mut Writer) {
        w.fixed(&self.0);
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Digest(r.array()?))
    }
}

/// Plain SHA-256.
pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// SHA-256 over `domain ‖ parts[0] ‖ parts[1] ‖ ...`.
pub fn tagged_hash(domain: Domain, parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    h.update([domain as u8]);
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Digest of a canonically encoded protocol message, `h(F)` for vectors.
pub fn message_hash<T: Canonical>(value: &T) -> Digest {
    tagged_hash(Domain::Message, &[&value.to_canonical()])
}

/// A caller-supplied source of randomness. Simulations seed one per run.
pub trait CryptoRand: rand::RngCore + rand::CryptoRng {}
impl<T: rand::RngCore + rand::CryptoRng> CryptoRand for T {}
