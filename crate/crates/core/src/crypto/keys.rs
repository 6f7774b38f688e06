use std::fmt;

use ed25519_dalek::{Signer, Verifier as _};
use num_bigint_dig::BigUint;
use rsa::traits::PublicKeyParts;
use rsa::{RsaPrivateKey, RsaPublicKey};
use serde::{Deserialize, Serialize};

use super::{blind, CryptoError, CryptoRand};
use crate::codec::{hex_bytes, tag, Canonical, CodecError, Reader, Writer};

/// Signature scheme behind a key.
///
/// `Standard` keys (Ed25519) are used for one-time asset keys, operators and
/// banks. `BlindCapable` keys (RSA full-domain-hash) are used by issuers so
/// that signatures commute with blinding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scheme {
    Standard = 1,
    BlindCapable = 2,
}

impl Scheme {
    fn from_u8(v: u8) -> Result<Self, CodecError> {
        match v {
            1 => Ok(Scheme::Standard),
            2 => Ok(Scheme::BlindCapable),
            _ => Err(CodecError::Invalid("unknown signature scheme")),
        }
    }
}

pub(crate) const MIN_RSA_BITS: usize = 512;
const ED25519_SIG_LEN: usize = 64;

/// A public key in canonical form. Construction validates the encoding, so
/// two equal keys always have equal bytes.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "KeyRepr", into = "KeyRepr")]
pub struct VerifyingKey {
    scheme: Scheme,
    bytes: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct KeyRepr {
    scheme: Scheme,
    #[serde(with = "hex_bytes")]
    bytes: Vec<u8>,
}

impl TryFrom<KeyRepr> for VerifyingKey {
    type Error = CodecError;
    fn try_from(r: KeyRepr) -> Result<Self, CodecError> {
        VerifyingKey::from_parts(r.scheme, r.bytes)
    }
}

impl From<VerifyingKey> for KeyRepr {
    fn from(k: VerifyingKey) -> Self {
        KeyRepr {
            scheme: k.scheme,
            bytes: k.bytes,
        }
    }
}

impl VerifyingKey {
    pub fn from_parts(scheme: Scheme, bytes: Vec<u8>) -> Result<Self, CodecError> {
        match scheme {
            Scheme::Standard => {
                parse_ed25519(&bytes)?;
            }
            Scheme::BlindCapable => {
                parse_rsa(&bytes)?;
            }
        }
        Ok(VerifyingKey { scheme, bytes })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Short hex fingerprint for logs.
    pub fn fingerprint(&self) -> String {
        super::hash(&self.to_canonical()).to_hex()[..12].to_string()
    }

    pub(crate) fn rsa(&self) -> Option<RsaPublicKey> {
        match self.scheme {
            Scheme::BlindCapable => parse_rsa(&self.bytes).ok(),
            Scheme::Standard => None,
        }
    }

    fn ed25519(&self) -> Option<ed25519_dalek::VerifyingKey> {
        match self.scheme {
            Scheme::Standard => parse_ed25519(&self.bytes).ok(),
            Scheme::BlindCapable => None,
        }
    }

    /// Whether `sig` is a valid signature by this key over `data`.
    /// Total: malformed inputs yield `false`.
    pub fn verify(&self, data: &[u8], sig: &Signature) -> bool {
        if sig.scheme != self.scheme {
            return false;
        }
        match self.scheme {
            Scheme::Standard => {
                let Some(vk) = self.ed25519() else {
                    return false;
                };
                let Ok(raw): Result<[u8; ED25519_SIG_LEN], _> = sig.bytes.as_slice().try_into()
                else {
                    return false;
                };
                let s = ed25519_dalek::Signature::from_bytes(&raw);
                vk.verify_strict(data, &s).is_ok() && vk.verify(data, &s).is_ok()
            }
            Scheme::BlindCapable => {
                let Some(pk) = self.rsa() else { return false };
                blind::rsa_fdh_verify(&pk, data, &sig.bytes)
            }
        }
    }
}

impl fmt::Debug for VerifyingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VerifyingKey({:?}, {})", self.scheme, self.fingerprint())
    }
}

fn parse_ed25519(bytes: &[u8]) -> Result<ed25519_dalek::VerifyingKey, CodecError> {
    let arr: [u8; 32] = bytes
        .try_into()
        .map_err(|_| CodecError::Invalid("ed25519 key must be 32 bytes"))?;
    let point = curve25519_dalek::edwards::CompressedEdwardsY(arr)
        .decompress()
        .ok_or(CodecError::Invalid("ed25519 key is not a curve point"))?;
    if point.compress().0 != arr {
        return Err(CodecError::Invalid("non-canonical ed25519 point encoding"));
    }
    ed25519_dalek::VerifyingKey::from_bytes(&arr)
        .map_err(|_| CodecError::Invalid("ed25519 key rejected"))
}

pub(crate) fn encode_rsa(pk: &RsaPublicKey) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(&pk.n().to_bytes_be()).bytes(&pk.e().to_bytes_be());
    w.finish()
}

fn parse_rsa(bytes: &[u8]) -> Result<RsaPublicKey, CodecError> {
    let mut r = Reader::new(bytes);
    let n = r.bytes()?;
    let e = r.bytes()?;
    r.finish()?;
    if n.first().is_none_or(|b| *b == 0) || e.first().is_none_or(|b| *b == 0) {
        return Err(CodecError::Invalid("rsa integers must be minimal"));
    }
    let n = BigUint::from_bytes_be(n);
    let e = BigUint::from_bytes_be(e);
    if n.bits() < MIN_RSA_BITS {
        return Err(CodecError::Invalid("rsa modulus too small"));
    }
    RsaPublicKey::new(n, e).map_err(|_| CodecError::Invalid("rsa key rejected"))
}

impl Canonical for VerifyingKey {
    const TAG: u8 = tag::VERIFYING_KEY;

    fn encode_body(&self, w: &mut Writer) {
        w.u8(self.scheme as u8).bytes(&self.bytes);
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let scheme = Scheme::from_u8(r.u8()?)?;
        let bytes = r.bytes()?.to_vec();
        VerifyingKey::from_parts(scheme, bytes)
    }
}

/// `s(d, k)`: a signature over some data, tagged with its scheme.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub scheme: Scheme,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = hex::encode(&self.bytes);
        write!(
            f,
            "Signature({:?}, {}..)",
            self.scheme,
            &h[..h.len().min(16)]
        )
    }
}

impl Canonical for Signature {
    const TAG: u8 = tag::SIGNATURE;

    fn encode_body(&self, w: &mut Writer) {
        w.u8(self.scheme as u8).bytes(&self.bytes);
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let scheme = Scheme::from_u8(r.u8()?)?;
        let bytes = r.bytes()?.to_vec();
        Ok(Signature { scheme, bytes })
    }
}

#[derive(Clone)]
enum Secret {
    Standard(Box<ed25519_dalek::SigningKey>),
    Blind(Box<RsaPrivateKey>),
}

/// A private key together with its canonical public key.
#[derive(Clone)]
pub struct SigningKeyPair {
    secret: Secret,
    public: VerifyingKey,
}

impl fmt::Debug for SigningKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl SigningKeyPair {
    pub fn generate_standard<R: CryptoRand + ?Sized>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::standard_from_seed(&seed)
    }

    pub fn standard_from_seed(seed: &[u8; 32]) -> Self {
        let sk = ed25519_dalek::SigningKey::from_bytes(seed);
        let public = VerifyingKey {
            scheme: Scheme::Standard,
            bytes: sk.verifying_key().to_bytes().to_vec(),
        };
        SigningKeyPair {
            secret: Secret::Standard(Box::new(sk)),
            public,
        }
    }

    pub fn generate_blind<R: CryptoRand>(rng: &mut R, bits: usize) -> Result<Self, CryptoError> {
        if bits < MIN_RSA_BITS {
            return Err(CryptoError::KeyGeneration(format!(
                "modulus must be at least {MIN_RSA_BITS} bits"
            )));
        }
        let sk =
            RsaPrivateKey::new(rng, bits).map_err(|e| CryptoError::KeyGeneration(e.to_string()))?;
        let public = VerifyingKey {
            scheme: Scheme::BlindCapable,
            bytes: encode_rsa(&sk.to_public_key()),
        };
        Ok(SigningKeyPair {
            secret: Secret::Blind(Box::new(sk)),
            public,
        })
    }

    pub fn public(&self) -> &VerifyingKey {
        &self.public
    }

    pub fn scheme(&self) -> Scheme {
        self.public.scheme
    }

    pub fn sign(&self, data: &[u8]) -> Signature {
        match &self.secret {
            Secret::Standard(sk) => Signature {
                scheme: Scheme::Standard,
                bytes: sk.sign(data).to_bytes().to_vec(),
            },
            Secret::Blind(sk) => Signature {
                scheme: Scheme::BlindCapable,
                bytes: blind::rsa_fdh_sign(sk, data),
            },
        }
    }

    pub(crate) fn rsa_private(&self) -> Option<&RsaPrivateKey> {
        match &self.secret {
            Secret::Blind(sk) => Some(sk),
            Secret::Standard(_) => None,
        }
    }
}

/// Free-function form of [`VerifyingKey::verify`].
pub fn verify(key: &VerifyingKey, data: &[u8], sig: &Signature) -> bool {
    key.verify(data, sig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{blind_key, rng};
    use rand::Rng;

    #[test]
    fn sign_then_verify() {
        let mut rng = rng(3);
        let k = SigningKeyPair::generate_standard(&mut rng);
        let sig = k.sign(b"payload");
        assert!(k.public().verify(b"payload", &sig));
    }

    #[test]
    fn other_key_rejects() {
        let mut rng = rng(4);
        let a = SigningKeyPair::generate_standard(&mut rng);
        let b = SigningKeyPair::generate_standard(&mut rng);
        assert!(!b.public().verify(b"m", &a.sign(b"m")));
    }

    #[test]
    fn flipped_bit_rejects_over_random_messages() {
        let mut rng = rng(5);
        let k = SigningKeyPair::generate_standard(&mut rng);
        let issuer = blind_key(0);
        for i in 0..1000 {
            let len = rng.gen_range(1..96);
            let msg: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let bit = rng.gen_range(0..len * 8);
            let mut bad = msg.clone();
            bad[bit / 8] ^= 1 << (bit % 8);
            assert!(!k.public().verify(&bad, &k.sign(&msg)));
            // The RSA path is slower; sample it.
            if i % 20 == 0 {
                assert!(!issuer.public().verify(&bad, &issuer.sign(&msg)));
                assert!(issuer.public().verify(&msg, &issuer.sign(&msg)));
            }
        }
    }

    #[test]
    fn standard_signatures_are_deterministic() {
        let k = SigningKeyPair::standard_from_seed(&[9u8; 32]);
        assert_eq!(k.sign(b"x"), k.sign(b"x"));
    }

    #[test]
    fn scheme_mismatch_between_key_and_signature_rejects() {
        let mut rng = rng(6);
        let k = SigningKeyPair::generate_standard(&mut rng);
        let mut sig = k.sign(b"m");
        sig.scheme = Scheme::BlindCapable;
        assert!(!k.public().verify(b"m", &sig));
    }

    #[test]
    fn non_canonical_ed25519_encoding_is_rejected() {
        // y = p (2^255 - 19) encodes the same point as y = 0 but is not canonical.
        let mut y = [0xffu8; 32];
        y[0] = 0xed;
        y[31] = 0x7f;
        assert!(VerifyingKey::from_parts(Scheme::Standard, y.to_vec()).is_err());
    }

    #[test]
    fn rsa_key_with_leading_zero_is_rejected() {
        let k = blind_key(0);
        let pk = k.public().rsa().unwrap();
        let mut n = vec![0u8];
        n.extend(pk.n().to_bytes_be());
        let mut w = Writer::new();
        w.bytes(&n).bytes(&pk.e().to_bytes_be());
        assert!(VerifyingKey::from_parts(Scheme::BlindCapable, w.finish()).is_err());
    }
}
