//! Integrity provider: an oblivious ledger of `(k_j → s(h(F_j), k_j))`
//! registrations, closed into signed roots at discrete epochs.
//!
//! The trie is cumulative across epochs, so a key registered at epoch `i`
//! can be proven against every later root `G_{L,i+n}`. The provider never
//! sees update vectors: its whole state is built from [`Registration`]s.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{tag, Canonical, CodecError, Reader, Writer};
use crate::crypto::{Digest, Domain, Signature, SigningKeyPair, VerifyingKey};
use crate::trie::{value_digest, ProofOfExclusion, ProofOfInclusion, RootDigest, Trie, TrieError};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LedgerId(pub String);

impl LedgerId {
    pub fn new(s: impl Into<String>) -> Self {
        LedgerId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LedgerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LedgerError {
    #[error("key already registered in epoch {first_epoch}")]
    DuplicateKey { first_epoch: u64 },
    #[error("registration signature does not verify")]
    InvalidSignature,
    #[error("key not found")]
    KeyNotFound,
    #[error("key is present")]
    KeyPresent,
    #[error("epoch {0} is still open")]
    EpochOpen(u64),
    #[error("unknown epoch {0}")]
    UnknownEpoch(u64),
}

/// `(k_j, s(h(F_j), k_j))` together with the digest the signature covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub key: VerifyingKey,
    pub value_sig: Signature,
    pub value_digest: Digest,
}

impl Registration {
    pub fn new(key: VerifyingKey, value_digest: Digest, value_sig: Signature) -> Self {
        Registration {
            key,
            value_sig,
            value_digest,
        }
    }

    pub fn signature_valid(&self) -> bool {
        self.key
            .verify(self.value_digest.as_bytes(), &self.value_sig)
    }

    /// Logical trie key: the canonical encoding of `k_j`.
    pub fn trie_key(&self) -> Vec<u8> {
        self.key.to_canonical()
    }

    /// Digest stored at the leaf: `h(Value ‖ canonical(value_sig))`.
    pub fn leaf_value_digest(&self) -> Digest {
        registered_value_digest(&self.value_sig)
    }
}

/// Leaf value digest bound by a proof for a registration signed with `sig`.
pub fn registered_value_digest(sig: &Signature) -> Digest {
    value_digest(&sig.to_canonical())
}

/// `G_{L,i}` with the operator's signature over `(ledger_id ‖ i ‖ root)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedRoot {
    pub ledger_id: LedgerId,
    pub epoch: u64,
    pub root: RootDigest,
    pub operator: VerifyingKey,
    pub operator_sig: Signature,
}

pub(crate) fn root_message(ledger_id: &LedgerId, epoch: u64, root: &RootDigest) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(Domain::Root as u8)
        .str(ledger_id.as_str())
        .u64(epoch)
        .fixed(root.0.as_bytes());
    w.finish()
}

impl SignedRoot {
    pub fn sign(
        ledger_id: LedgerId,
        epoch: u64,
        root: RootDigest,
        operator: &SigningKeyPair,
    ) -> Self {
        let operator_sig = operator.sign(&root_message(&ledger_id, epoch, &root));
        SignedRoot {
            ledger_id,
            epoch,
            root,
            operator: operator.public().clone(),
            operator_sig,
        }
    }

    pub fn signature_valid(&self) -> bool {
        self.operator.verify(
            &root_message(&self.ledger_id, self.epoch, &self.root),
            &self.operator_sig,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrationReceipt {
    pub ledger_id: LedgerId,
    pub epoch: u64,
    pub key: VerifyingKey,
}

/// `p(G_{L,i}, k_j, F_j)`: an inclusion proof with the signed root it
/// verifies against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub root: SignedRoot,
    pub proof: ProofOfInclusion,
}

impl ProvenanceEntry {
    /// Whether this entry proves exactly `registration` under a validly
    /// signed root.
    pub fn proves(&self, registration: &Registration) -> bool {
        self.proof.key == registration.trie_key()
            && self.proof.value_digest == registration.leaf_value_digest()
            && self.root.signature_valid()
            && self.proof.verify(&self.root.root)
    }
}

#[derive(Debug, Clone)]
struct ClosedEpoch {
    signed: SignedRoot,
    trie: Trie,
}

/// An honest integrity provider. Mutations are serialized through `&mut`.
#[derive(Debug)]
pub struct Provider {
    id: LedgerId,
    operator: SigningKeyPair,
    closed: Vec<ClosedEpoch>,
    cumulative: Trie,
    pending: Vec<Registration>,
    consumed: HashMap<VerifyingKey, u64>,
}

impl Provider {
    pub fn new(id: LedgerId, operator: SigningKeyPair) -> Self {
        Provider {
            id,
            operator,
            closed: Vec::new(),
            cumulative: Trie::new(),
            pending: Vec::new(),
            consumed: HashMap::new(),
        }
    }

    pub fn id(&self) -> &LedgerId {
        &self.id
    }

    pub fn operator_key(&self) -> &VerifyingKey {
        self.operator.public()
    }

    /// Index of the epoch currently accepting registrations.
    pub fn open_epoch(&self) -> u64 {
        self.closed.len() as u64
    }

    pub fn latest_closed(&self) -> Option<u64> {
        self.closed.len().checked_sub(1).map(|i| i as u64)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Epoch at which `key` was accepted, if ever.
    pub fn registered_epoch(&self, key: &VerifyingKey) -> Option<u64> {
        self.consumed.get(key).copied()
    }

    pub fn submit_registration(
        &mut self,
        reg: Registration,
    ) -> Result<RegistrationReceipt, LedgerError> {
        if let Some(&first_epoch) = self.consumed.get(&reg.key) {
            return Err(LedgerError::DuplicateKey { first_epoch });
        }
        if !reg.signature_valid() {
            return Err(LedgerError::InvalidSignature);
        }
        let epoch = self.open_epoch();
        self.consumed.insert(reg.key.clone(), epoch);
        let receipt = RegistrationReceipt {
            ledger_id: self.id.clone(),
            epoch,
            key: reg.key.clone(),
        };
        self.pending.push(reg);
        Ok(receipt)
    }

    pub fn close_epoch(&mut self) -> SignedRoot {
        let mut trie = self.cumulative.clone();
        for reg in self.pending.drain(..) {
            trie = trie
                .insert_digest(&reg.trie_key(), reg.leaf_value_digest())
                .expect("consumed-key set prevents duplicate trie keys");
        }
        let signed = self.sign_root(self.open_epoch(), trie.root());
        self.cumulative = trie.clone();
        self.closed.push(ClosedEpoch {
            signed: signed.clone(),
            trie,
        });
        signed
    }

    pub(crate) fn sign_root(&self, epoch: u64, root: RootDigest) -> SignedRoot {
        SignedRoot::sign(self.id.clone(), epoch, root, &self.operator)
    }

    fn closed_epoch(&self, epoch: u64) -> Result<&ClosedEpoch, LedgerError> {
        match self.closed.get(epoch as usize) {
            Some(c) => Ok(c),
            None if epoch == self.open_epoch() => Err(LedgerError::EpochOpen(epoch)),
            None => Err(LedgerError::UnknownEpoch(epoch)),
        }
    }

    pub fn get_signed_root(&self, epoch: u64) -> Result<SignedRoot, LedgerError> {
        Ok(self.closed_epoch(epoch)?.signed.clone())
    }

    pub fn fetch_proof(
        &self,
        key: &VerifyingKey,
        epoch: u64,
    ) -> Result<ProofOfInclusion, LedgerError> {
        self.closed_epoch(epoch)?
            .trie
            .prove_inclusion(&key.to_canonical())
            .map_err(|_| LedgerError::KeyNotFound)
    }

    /// Proof plus the signed root it verifies against.
    pub fn fetch_entry(
        &self,
        key: &VerifyingKey,
        epoch: u64,
    ) -> Result<ProvenanceEntry, LedgerError> {
        let proof = self.fetch_proof(key, epoch)?;
        Ok(ProvenanceEntry {
            root: self.get_signed_root(epoch)?,
            proof,
        })
    }

    pub fn fetch_exclusion(
        &self,
        key: &VerifyingKey,
        epoch: u64,
    ) -> Result<ProofOfExclusion, LedgerError> {
        self.closed_epoch(epoch)?
            .trie
            .prove_exclusion(&key.to_canonical())
            .map_err(|e| match e {
                TrieError::KeyPresent => LedgerError::KeyPresent,
                _ => LedgerError::KeyNotFound,
            })
    }
}

/// A dishonest provider double. For chosen epochs it signs a second root
/// over a trie containing an extra ghost registration, and can show either
/// view to a given client.
#[derive(Debug)]
pub struct EquivocatingProvider {
    inner: Provider,
    forks: BTreeMap<u64, ClosedEpoch>,
}

impl EquivocatingProvider {
    pub fn new(inner: Provider) -> Self {
        EquivocatingProvider {
            inner,
            forks: BTreeMap::new(),
        }
    }

    pub fn inner(&self) -> &Provider {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut Provider {
        &mut self.inner
    }

    /// Close the open epoch twice: honestly, and with `ghost` included.
    pub fn close_epoch_forked(&mut self, ghost: Registration) -> (SignedRoot, SignedRoot) {
        let base = self.inner.cumulative.clone();
        let honest = self.inner.close_epoch();
        let fork = self
            .inner
            .cumulative
            .insert_digest(&ghost.trie_key(), ghost.leaf_value_digest())
            // Ghost key already registered honestly: the fork drops this epoch's batch.
            .unwrap_or(base);
        let forged = self.inner.sign_root(honest.epoch, fork.root());
        self.forks.insert(
            honest.epoch,
            ClosedEpoch {
                signed: forged.clone(),
                trie: fork,
            },
        );
        (honest, forged)
    }

    pub fn is_forked(&self, epoch: u64) -> bool {
        self.forks.contains_key(&epoch)
    }

    /// Root as shown to a client on the honest (`false`) or forked (`true`) view.
    pub fn get_signed_root_view(
        &self,
        epoch: u64,
        forked: bool,
    ) -> Result<SignedRoot, LedgerError> {
        match (forked, self.forks.get(&epoch)) {
            (true, Some(f)) => Ok(f.signed.clone()),
            _ => self.inner.get_signed_root(epoch),
        }
    }
}

impl Canonical for LedgerId {
    const TAG: u8 = tag::LEDGER_ID;
    fn encode_body(&self, w: &mut Writer) {
        w.str(&self.0);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(LedgerId(r.str()?))
    }
}

impl Canonical for Registration {
    const TAG: u8 = tag::REGISTRATION;
    fn encode_body(&self, w: &mut Writer) {
        w.item(&self.key)
            .item(&self.value_sig)
            .item(&self.value_digest);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Registration {
            key: r.item()?,
            value_sig: r.item()?,
            value_digest: r.item()?,
        })
    }
}

impl Canonical for SignedRoot {
    const TAG: u8 = tag::SIGNED_ROOT;
    fn encode_body(&self, w: &mut Writer) {
        w.str(self.ledger_id.as_str())
            .u64(self.epoch)
            .fixed(self.root.0.as_bytes())
            .item(&self.operator)
            .item(&self.operator_sig);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(SignedRoot {
            ledger_id: LedgerId(r.str()?),
            epoch: r.u64()?,
            root: RootDigest(Digest(r.array()?)),
            operator: r.item()?,
            operator_sig: r.item()?,
        })
    }
}

impl Canonical for RegistrationReceipt {
    const TAG: u8 = tag::RECEIPT;
    fn encode_body(&self, w: &mut Writer) {
        w.str(self.ledger_id.as_str())
            .u64(self.epoch)
            .item(&self.key);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(RegistrationReceipt {
            ledger_id: LedgerId(r.str()?),
            epoch: r.u64()?,
            key: r.item()?,
        })
    }
}

impl Canonical for ProvenanceEntry {
    const TAG: u8 = tag::PROVENANCE_ENTRY;
    fn encode_body(&self, w: &mut Writer) {
        w.item(&self.root).item(&self.proof);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(ProvenanceEntry {
            root: r.item()?,
            proof: r.item()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;
    use crate::testutil::rng;

    fn provider(seed: u64) -> Provider {
        let mut rng = rng(seed);
        Provider::new(
            LedgerId::new("notary"),
            SigningKeyPair::generate_standard(&mut rng),
        )
    }

    fn registration(
        rng: &mut impl crate::crypto::CryptoRand,
        msg: &[u8],
    ) -> (SigningKeyPair, Registration) {
        let k = SigningKeyPair::generate_standard(rng);
        let d = hash(msg);
        let sig = k.sign(d.as_bytes());
        let reg = Registration::new(k.public().clone(), d, sig);
        (k, reg)
    }

    #[test]
    fn nominal_submission_gets_open_epoch() {
        let mut p = provider(1);
        let mut rng = rng(2);
        p.close_epoch();
        let (_, reg) = registration(&mut rng, b"F1");
        let receipt = p.submit_registration(reg).unwrap();
        assert_eq!(receipt.epoch, 1);
    }

    #[test]
    fn one_time_key_admits_one_registration() {
        let mut p = provider(3);
        let mut rng = rng(4);
        let (k, reg) = registration(&mut rng, b"first");
        p.submit_registration(reg).unwrap();
        p.close_epoch();
        let d = hash(b"second");
        let second = Registration::new(k.public().clone(), d, k.sign(d.as_bytes()));
        assert_eq!(
            p.submit_registration(second).unwrap_err(),
            LedgerError::DuplicateKey { first_epoch: 0 }
        );
    }

    #[test]
    fn mismatched_signer_is_rejected() {
        let mut p = provider(5);
        let mut rng = rng(6);
        for _ in 0..50 {
            let (_, mut reg) = registration(&mut rng, b"x");
            let other = SigningKeyPair::generate_standard(&mut rng);
            reg.value_sig = other.sign(reg.value_digest.as_bytes());
            assert_eq!(
                p.submit_registration(reg).unwrap_err(),
                LedgerError::InvalidSignature
            );
        }
        assert_eq!(p.pending_len(), 0);
    }

    #[test]
    fn empty_epoch_repeats_previous_root() {
        let mut p = provider(7);
        let mut rng = rng(8);
        let (_, reg) = registration(&mut rng, b"x");
        p.submit_registration(reg).unwrap();
        let a = p.close_epoch();
        let b = p.close_epoch();
        assert_eq!(a.root, b.root);
        assert_eq!((a.epoch, b.epoch), (0, 1));
        assert!(b.signature_valid());
    }

    #[test]
    fn proofs_verify_against_later_roots() {
        let mut p = provider(9);
        let mut rng = rng(10);
        let (k, reg) = registration(&mut rng, b"x");
        p.submit_registration(reg.clone()).unwrap();
        p.close_epoch();
        for i in 0..5 {
            let (_, r) = registration(&mut rng, &[i]);
            p.submit_registration(r).unwrap();
            p.close_epoch();
        }
        for e in 0..=5 {
            let entry = p.fetch_entry(k.public(), e).unwrap();
            assert!(entry.proves(&reg));
        }
    }

    #[test]
    fn fetch_errors() {
        let mut p = provider(11);
        let mut rng = rng(12);
        let (k, reg) = registration(&mut rng, b"x");
        p.submit_registration(reg).unwrap();
        assert_eq!(
            p.fetch_proof(k.public(), 0).unwrap_err(),
            LedgerError::EpochOpen(0)
        );
        assert_eq!(
            p.get_signed_root(3).unwrap_err(),
            LedgerError::UnknownEpoch(3)
        );
        p.close_epoch();
        let stranger = SigningKeyPair::generate_standard(&mut rng);
        assert_eq!(
            p.fetch_proof(stranger.public(), 0).unwrap_err(),
            LedgerError::KeyNotFound
        );
        let excl = p.fetch_exclusion(stranger.public(), 0).unwrap();
        assert!(excl.verify(&p.get_signed_root(0).unwrap().root));
        assert_eq!(
            p.fetch_exclusion(k.public(), 0).unwrap_err(),
            LedgerError::KeyPresent
        );
    }

    #[test]
    fn signed_root_is_stable() {
        let mut p = provider(13);
        p.close_epoch();
        assert_eq!(
            p.get_signed_root(0).unwrap().to_canonical(),
            p.get_signed_root(0).unwrap().to_canonical()
        );
    }

    #[test]
    fn forked_provider_signs_two_roots_for_one_epoch() {
        let mut rng = rng(14);
        let mut p = EquivocatingProvider::new(provider(15));
        let (_, honest_reg) = registration(&mut rng, b"h");
        p.inner_mut().submit_registration(honest_reg).unwrap();
        let (_, ghost) = registration(&mut rng, b"g");
        let (a, b) = p.close_epoch_forked(ghost);
        assert_eq!(a.epoch, b.epoch);
        assert_ne!(a.root, b.root);
        assert!(a.signature_valid() && b.signature_valid());
        assert_eq!(p.get_signed_root_view(0, true).unwrap(), b);
        assert_eq!(p.get_signed_root_view(0, false).unwrap(), a);
    }
}
