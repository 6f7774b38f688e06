//! DLT anchoring of provider roots, stacked proofs across ledgers, and
//! equivocation evidence.
//!
//! At each anchor tick the DLT builds a trie mapping each provider's
//! operator key to its latest submitted [`SignedRoot`]. The DLT's own root
//! is itself a [`SignedRoot`] under a service key, so it can be submitted to
//! a higher DLT in turn.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asset::RootResolver;
use crate::codec::{tag, Canonical, CodecError, Reader, Writer};
use crate::crypto::{Signature, SigningKeyPair, VerifyingKey};
use crate::ledger::{root_message, LedgerId, SignedRoot};
use crate::trie::{value_digest, ProofOfExclusion, ProofOfInclusion, RootDigest, Trie};

/// Two validly signed roots from one operator for one epoch, with
/// different digests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivocationEvidence {
    pub first: SignedRoot,
    pub second: SignedRoot,
}

impl EquivocationEvidence {
    pub fn verify(&self) -> bool {
        self.first.ledger_id == self.second.ledger_id
            && self.first.epoch == self.second.epoch
            && self.first.operator == self.second.operator
            && self.first.root != self.second.root
            && self.first.signature_valid()
            && self.second.signature_valid()
    }
}

/// Scan a set of roots for a conflicting pair.
pub fn detect_equivocation<'a>(
    roots: impl IntoIterator<Item = &'a SignedRoot>,
) -> Option<EquivocationEvidence> {
    let mut seen: HashMap<(&LedgerId, u64, &VerifyingKey), &SignedRoot> = HashMap::new();
    for r in roots {
        if !r.signature_valid() {
            continue;
        }
        match seen.get(&(&r.ledger_id, r.epoch, &r.operator)) {
            Some(prev) if prev.root != r.root => {
                return Some(EquivocationEvidence {
                    first: (*prev).clone(),
                    second: r.clone(),
                })
            }
            Some(_) => {}
            None => {
                seen.insert((&r.ledger_id, r.epoch, &r.operator), r);
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnchorError {
    #[error("operator signature does not verify")]
    InvalidOperatorSig,
    #[error("provider submitted two different roots for one epoch")]
    ConflictingSubmission(Box<EquivocationEvidence>),
    #[error("provider not anchored at this time")]
    NotAnchored(Box<ProofOfExclusion>),
    #[error("more than one root submitted for one operator")]
    DuplicateOperator,
    #[error("unknown anchor time {0}")]
    UnknownTime(u64),
}

/// `G_{D,t}` signed by the DLT service key and endorsed by every participant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorRoot {
    pub signed: SignedRoot,
    pub endorsements: Vec<(VerifyingKey, Signature)>,
}

impl AnchorRoot {
    pub fn t(&self) -> u64 {
        self.signed.epoch
    }

    pub fn digest(&self) -> RootDigest {
        self.signed.root
    }

    /// Service signature valid and every listed participant endorsed it.
    pub fn verify(&self, participants: &[VerifyingKey]) -> bool {
        let msg = root_message(&self.signed.ledger_id, self.signed.epoch, &self.signed.root);
        self.signed.signature_valid()
            && participants.iter().all(|p| {
                self.endorsements
                    .iter()
                    .any(|(k, s)| k == p && k.verify(&msg, s))
            })
    }
}

/// Trie key under which `root` is anchored.
pub fn anchor_key(root: &SignedRoot) -> Vec<u8> {
    root.operator.to_canonical()
}

/// Trie value for `root`: its full canonical encoding, so the provider's own
/// epoch index travels with it.
pub fn anchor_value(root: &SignedRoot) -> Vec<u8> {
    root.to_canonical()
}

/// `G_{D,t}` over a set of submissions, at most one per operator.
pub fn anchor_trie<'a>(
    submissions: impl IntoIterator<Item = &'a SignedRoot>,
) -> Result<Trie, AnchorError> {
    let mut by_operator: BTreeMap<&VerifyingKey, &SignedRoot> = BTreeMap::new();
    for s in submissions {
        match by_operator.get(&s.operator) {
            Some(prev) if *prev == s => {}
            Some(prev) if prev.ledger_id == s.ledger_id && prev.epoch == s.epoch => {
                let ev = EquivocationEvidence {
                    first: (*prev).clone(),
                    second: s.clone(),
                };
                return Err(AnchorError::ConflictingSubmission(Box::new(ev)));
            }
            Some(_) => return Err(AnchorError::DuplicateOperator),
            None => {
                by_operator.insert(&s.operator, s);
            }
        }
    }
    let mut trie = Trie::new();
    for s in by_operator.values() {
        trie = trie
            .insert(&anchor_key(s), &anchor_value(s))
            .expect("operators are distinct");
    }
    Ok(trie)
}

#[derive(Debug, Clone)]
struct Anchored {
    anchor: AnchorRoot,
    trie: Trie,
    roots: BTreeMap<VerifyingKey, SignedRoot>,
}

/// A simulated DLT: one logical service with all-of-n participant signing.
#[derive(Debug)]
pub struct Dlt {
    id: LedgerId,
    service: SigningKeyPair,
    participants: Vec<SigningKeyPair>,
    pending: BTreeMap<VerifyingKey, SignedRoot>,
    excluded: BTreeSet<VerifyingKey>,
    seen: HashMap<(LedgerId, u64, VerifyingKey), SignedRoot>,
    evidence: Vec<EquivocationEvidence>,
    anchors: Vec<Anchored>,
}

impl Dlt {
    pub fn new(id: LedgerId, service: SigningKeyPair, participants: Vec<SigningKeyPair>) -> Self {
        Dlt {
            id,
            service,
            participants,
            pending: BTreeMap::new(),
            excluded: BTreeSet::new(),
            seen: HashMap::new(),
            evidence: Vec::new(),
            anchors: Vec::new(),
        }
    }

    pub fn id(&self) -> &LedgerId {
        &self.id
    }

    pub fn service_key(&self) -> &VerifyingKey {
        self.service.public()
    }

    pub fn participant_keys(&self) -> Vec<VerifyingKey> {
        self.participants
            .iter()
            .map(|p| p.public().clone())
            .collect()
    }

    /// Time index the next tick will commit.
    pub fn next_t(&self) -> u64 {
        self.anchors.len() as u64
    }

    pub fn evidence(&self) -> &[EquivocationEvidence] {
        &self.evidence
    }

    /// Queue a root for the next tick. A later epoch from the same operator
    /// replaces an earlier one.
    pub fn submit_root(&mut self, root: SignedRoot) -> Result<(), AnchorError> {
        if !root.signature_valid() {
            return Err(AnchorError::InvalidOperatorSig);
        }
        let slot = (root.ledger_id.clone(), root.epoch, root.operator.clone());
        if let Some(prev) = self.seen.get(&slot) {
            if prev.root != root.root {
                let ev = EquivocationEvidence {
                    first: prev.clone(),
                    second: root.clone(),
                };
                self.evidence.push(ev.clone());
                self.excluded.insert(root.operator.clone());
                self.pending.remove(&root.operator);
                return Err(AnchorError::ConflictingSubmission(Box::new(ev)));
            }
        } else {
            self.seen.insert(slot, root.clone());
        }
        if self.excluded.contains(&root.operator) {
            return Ok(());
        }
        let newer = self
            .pending
            .get(&root.operator)
            .is_none_or(|p| p.epoch <= root.epoch);
        if newer {
            self.pending.insert(root.operator.clone(), root);
        }
        Ok(())
    }

    /// Commit pending submissions as `G_{D,t}`.
    pub fn anchor_tick(&mut self) -> AnchorRoot {
        let trie = anchor_trie(self.pending.values()).expect("one submission per operator");
        let signed = SignedRoot::sign(self.id.clone(), self.next_t(), trie.root(), &self.service);
        let msg = root_message(&signed.ledger_id, signed.epoch, &signed.root);
        let endorsements = self
            .participants
            .iter()
            .map(|p| (p.public().clone(), p.sign(&msg)))
            .collect();
        let anchor = AnchorRoot {
            signed,
            endorsements,
        };
        self.anchors.push(Anchored {
            anchor: anchor.clone(),
            trie,
            roots: std::mem::take(&mut self.pending),
        });
        self.excluded.clear();
        anchor
    }

    /// Submit a batch and tick. Conflicts are reported, not anchored.
    pub fn anchor(
        &mut self,
        submissions: impl IntoIterator<Item = SignedRoot>,
    ) -> (AnchorRoot, Vec<AnchorError>) {
        let errors = submissions
            .into_iter()
            .filter_map(|s| self.submit_root(s).err())
            .collect();
        (self.anchor_tick(), errors)
    }

    pub fn get_anchor(&self, t: u64) -> Result<AnchorRoot, AnchorError> {
        self.anchors
            .get(t as usize)
            .map(|a| a.anchor.clone())
            .ok_or(AnchorError::UnknownTime(t))
    }

    /// The root `operator` had committed at `t`.
    pub fn anchored_root(&self, operator: &VerifyingKey, t: u64) -> Result<SignedRoot, AnchorError> {
        let a = self.anchors.get(t as usize).ok_or(AnchorError::UnknownTime(t))?;
        match a.roots.get(operator) {
            Some(r) => Ok(r.clone()),
            None => Err(AnchorError::NotAnchored(Box::new(
                a.trie.prove_exclusion(&operator.to_canonical()).expect("key absent"),
            ))),
        }
    }

    pub fn prove_anchored(
        &self,
        operator: &VerifyingKey,
        t: u64,
    ) -> Result<ProofOfInclusion, AnchorError> {
        let a = self
            .anchors
            .get(t as usize)
            .ok_or(AnchorError::UnknownTime(t))?;
        let key = operator.to_canonical();
        a.trie.prove_inclusion(&key).map_err(|_| {
            AnchorError::NotAnchored(Box::new(a.trie.prove_exclusion(&key).expect("key absent")))
        })
    }
}

/// One hop of a stacked proof: `committed` is a leaf of the next layer up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackLayer {
    pub committed: SignedRoot,
    pub proof: ProofOfInclusion,
}

/// An inclusion proof in a provider, followed by the chain of anchorings
/// that commit its root into successively higher ledgers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackedProof {
    pub base: ProofOfInclusion,
    pub layers: Vec<StackLayer>,
}

impl StackedProof {
    pub fn new(base: ProofOfInclusion) -> Self {
        StackedProof {
            base,
            layers: Vec::new(),
        }
    }

    /// Add a hop: `committed` (the root the current top proves against) and
    /// its inclusion proof in the next ledger.
    pub fn push(&mut self, committed: SignedRoot, proof: ProofOfInclusion) {
        self.layers.push(StackLayer { committed, proof });
    }

    /// Number of inclusion proofs, counting the base.
    pub fn depth(&self) -> usize {
        self.layers.len() + 1
    }
}

pub fn verify_stacked(proof: &StackedProof, top_root: &RootDigest) -> bool {
    let Some(first) = proof.layers.first() else {
        return false;
    };
    if !proof.base.verify(&first.committed.root) {
        return false;
    }
    proof.layers.iter().enumerate().all(|(i, layer)| {
        let target = proof
            .layers
            .get(i + 1)
            .map_or(top_root, |next| &next.committed.root);
        layer.committed.signature_valid()
            && layer.proof.key == anchor_key(&layer.committed)
            && layer.proof.value_digest == value_digest(&anchor_value(&layer.committed))
            && layer.proof.verify(target)
    })
}

/// Resolver that accepts provider roots only when anchored in a DLT whose
/// anchors carry every participant's endorsement.
#[derive(Debug, Clone, Default)]
pub struct AnchoredTrust {
    participants: Vec<VerifyingKey>,
    service: Option<VerifyingKey>,
    anchors: BTreeMap<u64, AnchorRoot>,
    roots: BTreeMap<(LedgerId, u64), SignedRoot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnchoredTrustError {
    #[error("anchor is not endorsed by all participants")]
    BadAnchor,
    #[error("no anchor known for t={0}")]
    UnknownAnchor(u64),
    #[error("root is not proven in the anchor")]
    NotProven,
}

impl AnchoredTrust {
    pub fn new(service: VerifyingKey, participants: Vec<VerifyingKey>) -> Self {
        AnchoredTrust {
            participants,
            service: Some(service),
            ..Default::default()
        }
    }

    pub fn add_anchor(&mut self, anchor: AnchorRoot) -> Result<(), AnchoredTrustError> {
        if Some(&anchor.signed.operator) != self.service.as_ref()
            || !anchor.verify(&self.participants)
        {
            return Err(AnchoredTrustError::BadAnchor);
        }
        self.anchors.insert(anchor.t(), anchor);
        Ok(())
    }

    pub fn add_root(
        &mut self,
        root: SignedRoot,
        t: u64,
        proof: &ProofOfInclusion,
    ) -> Result<(), AnchoredTrustError> {
        let anchor = self
            .anchors
            .get(&t)
            .ok_or(AnchoredTrustError::UnknownAnchor(t))?;
        let ok = root.signature_valid()
            && proof.key == anchor_key(&root)
            && proof.value_digest == value_digest(&anchor_value(&root))
            && proof.verify(&anchor.digest());
        if !ok {
            return Err(AnchoredTrustError::NotProven);
        }
        self.roots
            .insert((root.ledger_id.clone(), root.epoch), root);
        Ok(())
    }
}

impl RootResolver for AnchoredTrust {
    fn resolve(&self, ledger: &LedgerId, epoch: u64) -> Option<SignedRoot> {
        self.roots.get(&(ledger.clone(), epoch)).cloned()
    }
}

impl Canonical for AnchorRoot {
    const TAG: u8 = tag::ANCHOR_ROOT;
    fn encode_body(&self, w: &mut Writer) {
        w.item(&self.signed).u32(self.endorsements.len() as u32);
        for (k, s) in &self.endorsements {
            w.item(k).item(s);
        }
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let signed = r.item()?;
        let n = r.u32()? as usize;
        let mut endorsements = Vec::with_capacity(n.min(256));
        for _ in 0..n {
            endorsements.push((r.item()?, r.item()?));
        }
        Ok(AnchorRoot {
            signed,
            endorsements,
        })
    }
}

impl Canonical for StackedProof {
    const TAG: u8 = tag::STACKED_PROOF;
    fn encode_body(&self, w: &mut Writer) {
        w.item(&self.base).u32(self.layers.len() as u32);
        for l in &self.layers {
            w.item(&l.committed).item(&l.proof);
        }
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let base = r.item()?;
        let n = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n.min(256));
        for _ in 0..n {
            layers.push(StackLayer {
                committed: r.item()?,
                proof: r.item()?,
            });
        }
        Ok(StackedProof { base, layers })
    }
}

impl Canonical for EquivocationEvidence {
    const TAG: u8 = tag::EQUIVOCATION_EVIDENCE;
    fn encode_body(&self, w: &mut Writer) {
        w.item(&self.first).item(&self.second);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(EquivocationEvidence {
            first: r.item()?,
            second: r.item()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;
    use crate::ledger::{EquivocatingProvider, Provider, Registration};
    use crate::testutil::rng;

    fn provider(name: &str, rng: &mut rand_chacha::ChaCha20Rng) -> Provider {
        Provider::new(LedgerId::new(name), SigningKeyPair::generate_standard(rng))
    }

    fn dlt(name: &str, rng: &mut rand_chacha::ChaCha20Rng) -> Dlt {
        let parts = (0..3)
            .map(|_| SigningKeyPair::generate_standard(rng))
            .collect();
        Dlt::new(
            LedgerId::new(name),
            SigningKeyPair::generate_standard(rng),
            parts,
        )
    }

    fn reg(rng: &mut rand_chacha::ChaCha20Rng, m: &[u8]) -> Registration {
        let k = SigningKeyPair::generate_standard(rng);
        let d = hash(m);
        Registration::new(k.public().clone(), d, k.sign(d.as_bytes()))
    }

    #[test]
    fn anchor_matches_trie_over_submissions() {
        let mut rng = rng(1);
        let mut ps: Vec<Provider> = ["a", "b", "c"]
            .iter()
            .map(|n| provider(n, &mut rng))
            .collect();
        let roots: Vec<SignedRoot> = ps.iter_mut().map(|p| p.close_epoch()).collect();
        let mut d = dlt("dlt", &mut rng);
        let (a, errs) = d.anchor(roots.clone());
        assert!(errs.is_empty());
        let mut t = Trie::new();
        for r in &roots {
            t = t
                .insert(&r.operator.to_canonical(), &r.to_canonical())
                .unwrap();
        }
        assert_eq!(a.digest(), t.root());
        assert!(a.verify(&d.participant_keys()));
    }

    #[test]
    fn empty_anchor_is_null_root() {
        let mut rng = rng(2);
        let mut d = dlt("dlt", &mut rng);
        assert_eq!(d.anchor_tick().digest(), RootDigest::EMPTY);
    }

    #[test]
    fn conflicting_submission_yields_evidence() {
        let mut rng = rng(3);
        let mut p = EquivocatingProvider::new(provider("a", &mut rng));
        let ghost = reg(&mut rng, b"ghost");
        let (x, y) = p.close_epoch_forked(ghost);
        let mut d = dlt("dlt", &mut rng);
        d.submit_root(x).unwrap();
        let Err(AnchorError::ConflictingSubmission(ev)) = d.submit_root(y) else {
            panic!("expected conflict")
        };
        assert!(ev.verify());
        let a = d.anchor_tick();
        assert_eq!(a.digest(), RootDigest::EMPTY);
    }

    #[test]
    fn detect_ignores_signature_only_differences() {
        let mut rng = rng(4);
        let mut p = provider("a", &mut rng);
        let r = p.close_epoch();
        assert!(detect_equivocation([&r, &r.clone()]).is_none());
        let mut history = Vec::new();
        for _ in 0..5 {
            p.submit_registration(reg(&mut rng, b"x")).unwrap();
            history.push(p.close_epoch());
        }
        assert!(detect_equivocation(&history).is_none());
    }

    #[test]
    fn non_participant_gets_exclusion() {
        let mut rng = rng(5);
        let mut a = provider("a", &mut rng);
        let b = provider("b", &mut rng);
        let mut d = dlt("dlt", &mut rng);
        let (anchor, _) = d.anchor([a.close_epoch()]);
        assert!(d
            .prove_anchored(a.operator_key(), 0)
            .unwrap()
            .verify(&anchor.digest()));
        let Err(AnchorError::NotAnchored(ex)) = d.prove_anchored(b.operator_key(), 0) else {
            panic!()
        };
        assert!(ex.verify(&anchor.digest()));
    }

    #[test]
    fn three_layer_stack_and_corruption() {
        let mut rng = rng(6);
        let mut p = provider("notary", &mut rng);
        let r = reg(&mut rng, b"asset");
        p.submit_registration(r.clone()).unwrap();
        let root = p.close_epoch();
        let base = p.fetch_proof(&r.key, 0).unwrap();

        let mut lower = dlt("dlt", &mut rng);
        let (la, _) = lower.anchor([root.clone()]);
        let mut upper = dlt("higher", &mut rng);
        let (ua, _) = upper.anchor([la.signed.clone()]);

        let mut stack = StackedProof::new(base);
        stack.push(
            root.clone(),
            lower.prove_anchored(p.operator_key(), 0).unwrap(),
        );
        stack.push(
            la.signed.clone(),
            upper.prove_anchored(lower.service_key(), 0).unwrap(),
        );
        assert_eq!(stack.depth(), 3);
        assert!(verify_stacked(&stack, &ua.digest()));

        let mut bad = stack.clone();
        bad.base.value_digest.0[0] ^= 1;
        assert!(!verify_stacked(&bad, &ua.digest()));
        for i in 0..2 {
            let mut bad = stack.clone();
            bad.layers[i].committed.root.0 .0[5] ^= 1;
            assert!(!verify_stacked(&bad, &ua.digest()));
            let mut bad = stack.clone();
            bad.layers[i].proof.width -= 1;
            assert!(!verify_stacked(&bad, &ua.digest()));
            let mut bad = stack.clone();
            let last = bad.layers[i].proof.key.len() - 1;
            bad.layers[i].proof.key[last] ^= 1;
            assert!(!verify_stacked(&bad, &ua.digest()));
        }
        let mut truncated = stack.clone();
        truncated.layers.pop();
        assert!(!verify_stacked(&truncated, &ua.digest()));
        assert!(verify_stacked(&truncated, &la.digest()));
    }

    #[test]
    fn anchored_trust_resolves_only_proven_roots() {
        let mut rng = rng(7);
        let mut p = provider("notary", &mut rng);
        let root = p.close_epoch();
        let mut d = dlt("dlt", &mut rng);
        let (a, _) = d.anchor([root.clone()]);
        let mut trust = AnchoredTrust::new(d.service_key().clone(), d.participant_keys());
        trust.add_anchor(a).unwrap();
        let proof = d.prove_anchored(p.operator_key(), 0).unwrap();
        trust.add_root(root.clone(), 0, &proof).unwrap();
        assert_eq!(trust.resolve(p.id(), 0), Some(root));
        let other = p.close_epoch();
        assert_eq!(
            trust.add_root(other, 0, &proof).unwrap_err(),
            AnchoredTrustError::NotProven
        );
    }
}
