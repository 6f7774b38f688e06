use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest as _, Sha256};
use uso_core::asset::{LedgerRef, UpdateVector};
use uso_core::codec::Canonical;
use uso_core::crypto::{
    blind, blind_sign, commit, commitment_digest, unblind, verify_linkage, CryptoError, Digest,
    LinkageProof, Nonce, Scheme, Signature, SigningKeyPair, VerifyingKey,
};

fn issuer(seed: u64) -> SigningKeyPair {
    SigningKeyPair::generate_blind(&mut ChaCha20Rng::seed_from_u64(seed), 1024).unwrap()
}

#[test]
fn unblinded_signature_equals_direct_signature() {
    let issuers: Vec<_> = (0..3).map(|i| issuer(0xD0 + i)).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let mut failures = 0;
    for _ in 0..100 {
        let d = Digest(rng.gen());
        for k0 in &issuers {
            let (b, mut r) = blind(&d, k0.public(), &mut rng).unwrap();
            let s = unblind(&blind_sign(k0, &b).unwrap(), &mut r).unwrap();
            if !k0.public().verify(d.as_bytes(), &s) || s != k0.sign(d.as_bytes()) {
                failures += 1;
            }
        }
    }
    assert_eq!(failures, 0);
}

#[test]
fn blinding_factor_is_single_use() {
    let k0 = issuer(0xD0);
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let (b, mut r) = blind(&Digest([7; 32]), k0.public(), &mut rng).unwrap();
    let bs = blind_sign(&k0, &b).unwrap();
    unblind(&bs, &mut r).unwrap();
    assert_eq!(unblind(&bs, &mut r), Err(CryptoError::FactorConsumed));
}

#[test]
fn unblinding_under_another_denomination_fails() {
    let (k5, k10) = (issuer(0xD0), issuer(0xD1));
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let d = Digest([9; 32]);
    let (b, mut r) = blind(&d, k5.public(), &mut rng).unwrap();
    let s = unblind(&blind_sign(&k10, &b).unwrap(), &mut r);
    assert!(s
        .map(|s| !k5.public().verify(d.as_bytes(), &s))
        .unwrap_or(true));
}

#[test]
fn blinding_needs_a_blind_capable_key() {
    let ed = SigningKeyPair::standard_from_seed(&[1; 32]);
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    assert_eq!(
        blind(&Digest::ZERO, ed.public(), &mut rng).err(),
        Some(CryptoError::SchemeMismatch)
    );
}

fn random_vector(rng: &mut ChaCha20Rng) -> UpdateVector {
    let len = rng.gen_range(0..24);
    let u: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
    let ledger_ref = rng
        .gen_bool(0.5)
        .then(|| LedgerRef::new("L1", rng.gen_range(0..4)));
    let next_key = SigningKeyPair::standard_from_seed(&rng.gen())
        .public()
        .clone();
    UpdateVector {
        u,
        ledger_ref,
        next_key,
    }
}

#[test]
fn commitment_matches_oracle_and_is_collision_free() {
    let mut rng = ChaCha20Rng::seed_from_u64(0xC0);
    let keys: Vec<VerifyingKey> = (0..16u8)
        .map(|i| {
            SigningKeyPair::standard_from_seed(&[i; 32])
                .public()
                .clone()
        })
        .collect();
    let mut seen = HashSet::with_capacity(100_000);
    for i in 0..100_000 {
        let u: Vec<u8> = (0..rng.gen_range(0..12)).map(|_| rng.gen()).collect();
        let v = UpdateVector {
            u,
            ledger_ref: None,
            next_key: keys[i % keys.len()].clone(),
        };
        let nonce = Nonce(Digest(rng.gen()));
        let c = commitment_digest(&v, &nonce);
        if i % 1000 == 0 {
            let mut h = Sha256::new();
            h.update([0x02]);
            h.update(v.to_canonical());
            h.update(nonce.0 .0);
            assert_eq!(c.0, <[u8; 32]>::from(h.finalize()));
        }
        assert!(seen.insert(c), "collision at sample {i}");
    }
}

#[test]
fn linkage_rejects_other_openings() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let committer = SigningKeyPair::standard_from_seed(&[4; 32]);
    for _ in 0..50 {
        let v = random_vector(&mut rng);
        let (c, nonce) = commit(&v, &committer, &mut rng);
        assert!(verify_linkage(&LinkageProof::open(
            v.clone(),
            nonce,
            c.clone()
        )));
        let other = random_vector(&mut rng);
        assert!(!verify_linkage(&LinkageProof::open(
            other,
            nonce,
            c.clone()
        )));
        let mut n2 = nonce;
        n2.0 .0[0] ^= 1;
        assert!(!verify_linkage(&LinkageProof::open(v, n2, c)));
    }
}

#[test]
fn flipped_bits_break_signatures() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let ed = SigningKeyPair::standard_from_seed(&[5; 32]);
    let rsa = issuer(0xD2);
    for i in 0..1000 {
        let key = if i % 10 == 0 { &rsa } else { &ed };
        let msg: Vec<u8> = (0..rng.gen_range(1..64)).map(|_| rng.gen()).collect();
        let sig = key.sign(&msg);
        assert!(key.public().verify(&msg, &sig));
        let mut m2 = msg.clone();
        let bit = rng.gen_range(0..m2.len() * 8);
        m2[bit / 8] ^= 1 << (bit % 8);
        assert!(!key.public().verify(&m2, &sig));
        let mut s2 = sig.clone();
        let bit = rng.gen_range(0..s2.bytes.len() * 8);
        s2.bytes[bit / 8] ^= 1 << (bit % 8);
        assert!(!key.public().verify(&msg, &s2));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn verify_is_total(
        msg in prop::collection::vec(any::<u8>(), 0..64),
        sig_bytes in prop::collection::vec(any::<u8>(), 0..160),
        blind_scheme in any::<bool>(),
    ) {
        let ed = SigningKeyPair::standard_from_seed(&[6; 32]);
        let scheme = if blind_scheme { Scheme::BlindCapable } else { Scheme::Standard };
        let sig = Signature { scheme, bytes: sig_bytes };
        prop_assert!(!ed.public().verify(&msg, &sig) || sig == ed.sign(&msg));
    }

    #[test]
    fn key_decoding_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = VerifyingKey::from_canonical(&bytes);
        let _ = Signature::from_canonical(&bytes);
    }
}
