//! RSA full-domain-hash blind signatures.
//!
//! With `m = FDH(d)`, the requester sends `m·r^e mod n`; the signer returns
//! `(m·r^e)^d = m^d·r`; multiplying by `r⁻¹` leaves `m^d`, the ordinary
//! signature on `d`. Unblinding therefore inverts blinding on signatures.

use std::fmt;

use num_bigint_dig::{BigUint, ModInverse, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rsa::traits::{PrivateKeyParts, PublicKeyParts};
use rsa::{RsaPrivateKey, RsaPublicKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::{
    CryptoError, CryptoRand, Digest, Domain, Scheme, Signature, SigningKeyPair, VerifyingKey,
};
use crate::codec::{hex_bytes, tag, Canonical, CodecError, Reader, Writer};

fn modulus_len(pk: &RsaPublicKey) -> usize {
    pk.size()
}

/// Full-domain hash: SHA-256 in counter mode expanded to the modulus
/// length, reduced mod n.
fn fdh(pk: &RsaPublicKey, data: &[u8]) -> BigUint {
    let k = modulus_len(pk);
    let mut out = Vec::with_capacity(k + 32);
    let mut counter = 0u32;
    while out.len() < k {
        let mut h = Sha256::new();
        h.update([Domain::FullDomain as u8]);
        h.update(counter.to_be_bytes());
        h.update(data);
        out.extend_from_slice(&h.finalize());
        counter += 1;
    }
    out.truncate(k);
    BigUint::from_bytes_be(&out) % pk.n()
}

fn to_fixed(v: &BigUint, k: usize) -> Vec<u8> {
    let raw = v.to_bytes_be();
    let mut out = vec![0u8; k.saturating_sub(raw.len())];
    out.extend_from_slice(&raw);
    out
}

fn from_fixed(bytes: &[u8], pk: &RsaPublicKey) -> Option<BigUint> {
    if bytes.len() != modulus_len(pk) {
        return None;
    }
    let v = BigUint::from_bytes_be(bytes);
    (&v < pk.n()).then_some(v)
}

pub(super) fn rsa_fdh_sign(sk: &RsaPrivateKey, data: &[u8]) -> Vec<u8> {
    let pk = sk.to_public_key();
    let m = fdh(&pk, data);
    to_fixed(&m.modpow(sk.d(), sk.n()), modulus_len(&pk))
}

pub(super) fn rsa_fdh_verify(pk: &RsaPublicKey, data: &[u8], sig: &[u8]) -> bool {
    match from_fixed(sig, pk) {
        Some(s) => s.modpow(pk.e(), pk.n()) == fdh(pk, data),
        None => false,
    }
}

/// `b(h(F₀))`: a blinded message representative, fixed to the modulus width.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlindedMessage {
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
}

impl fmt::Debug for BlindedMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlindedMessage({} bytes)", self.bytes.len())
    }
}

/// `s(b(h(F₀)), k₀)`: the issuer's signature on a blinded message.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlindSignature {
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
}

impl fmt::Debug for BlindSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlindSignature({} bytes)", self.bytes.len())
    }
}

impl Canonical for BlindedMessage {
    const TAG: u8 = tag::BLINDED_MESSAGE;
    fn encode_body(&self, w: &mut Writer) {
        w.bytes(&self.bytes);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(BlindedMessage {
            bytes: r.bytes()?.to_vec(),
        })
    }
}

impl Canonical for BlindSignature {
    const TAG: u8 = tag::BLIND_SIGNATURE;
    fn encode_body(&self, w: &mut Writer) {
        w.bytes(&self.bytes);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(BlindSignature {
            bytes: r.bytes()?.to_vec(),
        })
    }
}

/// The per-withdrawal secret `r⁻¹`. Consumed by [`unblind`]; a second use
/// fails with [`CryptoError::FactorConsumed`].
pub struct BlindingFactor {
    inverse: Option<BigUint>,
    issuer: VerifyingKey,
}

impl fmt::Debug for BlindingFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlindingFactor")
            .field("consumed", &self.is_consumed())
            .field("issuer", &self.issuer)
            .finish()
    }
}

impl BlindingFactor {
    pub fn is_consumed(&self) -> bool {
        self.inverse.is_none()
    }

    pub fn issuer(&self) -> &VerifyingKey {
        &self.issuer
    }
}

/// Blind `digest` for signing under `issuer_key`.
pub fn blind<R: CryptoRand + ?Sized>(
    digest: &Digest,
    issuer_key: &VerifyingKey,
    rng: &mut R,
) -> Result<(BlindedMessage, BlindingFactor), CryptoError> {
    if issuer_key.scheme() != Scheme::BlindCapable {
        return Err(CryptoError::SchemeMismatch);
    }
    let pk = issuer_key.rsa().ok_or(CryptoError::SchemeMismatch)?;
    let n = pk.n();
    let (r, r_inv) = loop {
        let r = rng.gen_biguint_below(n);
        if r <= BigUint::one() || !r.gcd(n).is_one() {
            continue;
        }
        let inv = r
            .clone()
            .mod_inverse(n)
            .and_then(|v| v.to_biguint())
            .expect("r is coprime to n");
        break (r, inv);
    };
    let m = fdh(&pk, digest.as_bytes());
    let blinded = (m * r.modpow(pk.e(), n)) % n;
    Ok((
        BlindedMessage {
            bytes: to_fixed(&blinded, modulus_len(&pk)),
        },
        BlindingFactor {
            inverse: Some(r_inv),
            issuer: issuer_key.clone(),
        },
    ))
}

/// Sign a blinded message with a blind-capable issuer key.
pub fn blind_sign(
    issuer: &SigningKeyPair,
    msg: &BlindedMessage,
) -> Result<BlindSignature, CryptoError> {
    let sk = issuer.rsa_private().ok_or(CryptoError::SchemeMismatch)?;
    let pk = sk.to_public_key();
    let m = from_fixed(&msg.bytes, &pk).ok_or(CryptoError::MalformedMessage)?;
    if m.is_zero() || !m.gcd(pk.n()).is_one() {
        return Err(CryptoError::MalformedMessage);
    }
    let s = m.modpow(sk.d(), sk.n());
    Ok(BlindSignature {
        bytes: to_fixed(&s, modulus_len(&pk)),
    })
}

/// `b⁻¹`: strip the blinding from a blind signature. Consumes the factor.
pub fn unblind(
    sig: &BlindSignature,
    factor: &mut BlindingFactor,
) -> Result<Signature, CryptoError> {
    let pk = factor.issuer.rsa().ok_or(CryptoError::SchemeMismatch)?;
    if factor.inverse.is_none() {
        return Err(CryptoError::FactorConsumed);
    }
    let s_blind = from_fixed(&sig.bytes, &pk).ok_or(CryptoError::MalformedSignature)?;
    let inv = factor.inverse.take().expect("checked above");
    let s = (s_blind * inv) % pk.n();
    Ok(Signature {
        scheme: Scheme::BlindCapable,
        bytes: to_fixed(&s, modulus_len(&pk)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;
    use crate::testutil::{blind_key, rng};
    use rand::Rng;

    #[test]
    fn unblinded_signature_equals_direct_signature() {
        let issuer = blind_key(0);
        let mut rng = rng(10);
        for i in 0..20u32 {
            let d = hash(&i.to_be_bytes());
            let (msg, mut factor) = blind(&d, issuer.public(), &mut rng).unwrap();
            let bs = blind_sign(&issuer, &msg).unwrap();
            let sig = unblind(&bs, &mut factor).unwrap();
            assert!(issuer.public().verify(d.as_bytes(), &sig));
            // FDH-RSA is deterministic, so the two routes agree bytewise.
            assert_eq!(sig, issuer.sign(d.as_bytes()));
        }
    }

    #[test]
    fn blindings_of_same_digest_are_distinct() {
        let issuer = blind_key(0);
        let mut rng = rng(11);
        let d = hash(b"same");
        let mut seen = std::collections::HashSet::new();
        for _ in 0..1000 {
            let (msg, _) = blind(&d, issuer.public(), &mut rng).unwrap();
            assert!(seen.insert(msg.bytes));
        }
    }

    #[test]
    fn standard_key_cannot_blind() {
        let mut rng = rng(12);
        let k = SigningKeyPair::generate_standard(&mut rng);
        assert_eq!(
            blind(&hash(b"x"), k.public(), &mut rng).unwrap_err(),
            CryptoError::SchemeMismatch
        );
        let msg = BlindedMessage {
            bytes: vec![1; 128],
        };
        assert_eq!(
            blind_sign(&k, &msg).unwrap_err(),
            CryptoError::SchemeMismatch
        );
    }

    #[test]
    fn zero_element_is_malformed() {
        let issuer = blind_key(0);
        let k = issuer.public().rsa().unwrap().size();
        let zero = BlindedMessage { bytes: vec![0; k] };
        assert_eq!(
            blind_sign(&issuer, &zero).unwrap_err(),
            CryptoError::MalformedMessage
        );
        let short = BlindedMessage {
            bytes: vec![1; k - 1],
        };
        assert_eq!(
            blind_sign(&issuer, &short).unwrap_err(),
            CryptoError::MalformedMessage
        );
        let too_big = BlindedMessage {
            bytes: vec![0xff; k],
        };
        assert_eq!(
            blind_sign(&issuer, &too_big).unwrap_err(),
            CryptoError::MalformedMessage
        );
    }

    #[test]
    fn factor_is_single_use() {
        let issuer = blind_key(0);
        let mut rng = rng(13);
        let (msg, mut factor) = blind(&hash(b"x"), issuer.public(), &mut rng).unwrap();
        let bs = blind_sign(&issuer, &msg).unwrap();
        unblind(&bs, &mut factor).unwrap();
        assert!(factor.is_consumed());
        assert_eq!(
            unblind(&bs, &mut factor).unwrap_err(),
            CryptoError::FactorConsumed
        );
    }

    #[test]
    fn wrong_factor_yields_invalid_signature() {
        let issuer = blind_key(0);
        let mut rng = rng(14);
        for _ in 0..25 {
            let d = hash(&rng.gen::<[u8; 16]>());
            let (msg, _right) = blind(&d, issuer.public(), &mut rng).unwrap();
            let (_, mut wrong) = blind(&d, issuer.public(), &mut rng).unwrap();
            let bs = blind_sign(&issuer, &msg).unwrap();
            let sig = unblind(&bs, &mut wrong).unwrap();
            assert!(!issuer.public().verify(d.as_bytes(), &sig));
        }
    }

    #[test]
    fn blinded_bits_look_uniform() {
        // For each bit below the top byte, the frequency of ones over 1000
        // blindings of a single digest must stay within 5 standard
        // deviations of 1/2 (sd = sqrt(1000)/2 ≈ 15.8).
        let issuer = blind_key(0);
        let mut rng = rng(15);
        let d = hash(b"fixed digest");
        let samples: Vec<Vec<u8>> = (0..1000)
            .map(|_| blind(&d, issuer.public(), &mut rng).unwrap().0.bytes)
            .collect();
        let k = samples[0].len();
        let mut worst = 0.0f64;
        for bit in 8..k * 8 {
            let ones = samples
                .iter()
                .filter(|s| (s[bit / 8] >> (7 - bit % 8)) & 1 == 1)
                .count();
            worst = worst.max((ones as f64 - 500.0).abs());
        }
        assert!(worst < 5.0 * 15.82, "max deviation {worst}");
        // The unblinded digest never appears in the blinded value.
        for s in &samples {
            assert!(!s.windows(32).any(|w| w == d.as_bytes()));
        }
    }
}
