//! Deterministic sample objects: a registered asset chain built from fixed
//! Ed25519 seeds, and its single-field mutants.

use std::sync::Arc;

use crate::asset::{
    create_genesis, make_update, register_update, Asset, DirectTrust, GenesisAuth, IssuerPolicy,
    LedgerRef, ProofOfProvenance, TrustBundle, UpdateKind, UpdateVector,
};
use crate::crypto::{Digest, Signature, SigningKeyPair, VerifyingKey};
use crate::ledger::{LedgerId, Provider, Registration, SignedRoot};
use crate::trie::Sibling;

pub fn key(label: &str, i: u8) -> SigningKeyPair {
    let mut seed = [i; 32];
    for (s, b) in seed.iter_mut().zip(label.bytes()) {
        *s ^= b;
    }
    SigningKeyPair::standard_from_seed(&seed)
}

/// An asset with three registered updates spread over two providers.
pub struct SampleChain {
    pub issuer: SigningKeyPair,
    pub providers: Vec<Provider>,
    pub asset: Asset,
    pub provenance: ProofOfProvenance,
    pub owner_keys: Vec<SigningKeyPair>,
}

impl SampleChain {
    pub fn trust(&self) -> TrustBundle {
        TrustBundle {
            issuers: vec![self.issuer.public().clone()],
            operators: self
                .providers
                .iter()
                .map(|p| (p.id().clone(), p.operator_key().clone()))
                .collect(),
            roots: self
                .providers
                .iter()
                .flat_map(|p| {
                    (0..p.open_epoch()).map(move |e| p.get_signed_root(e).expect("closed"))
                })
                .collect(),
        }
    }

    pub fn policy(&self) -> IssuerPolicy {
        let trust = DirectTrust::from_providers(&self.providers);
        IssuerPolicy::new([self.issuer.public().clone()], Arc::new(trust)).expect("one issuer")
    }
}

fn decoys(provider: &mut Provider, tag: u8, n: usize) {
    for i in 0..n {
        let mut seed = [tag; 32];
        seed[..8].copy_from_slice(&(i as u64).to_be_bytes());
        let k = SigningKeyPair::standard_from_seed(&seed);
        let d = Digest(seed);
        let reg = Registration::new(k.public().clone(), d, k.sign(d.as_bytes()));
        provider.submit_registration(reg).expect("fresh decoy key");
    }
}

/// `decoys` unrelated registrations are added to every epoch so that the
/// chain's proofs carry realistic sibling lists.
pub fn sample_chain(decoys_per_epoch: usize) -> SampleChain {
    let issuer = key("issuer", 1);
    let mut l1 = Provider::new(LedgerId::new("L1"), key("operator-L1", 2));
    let mut l2 = Provider::new(LedgerId::new("L2"), key("operator-L2", 3));
    let owner_keys: Vec<SigningKeyPair> = (0..4).map(|i| key("owner", 10 + i)).collect();

    let f0 = crate::asset::genesis_vector(
        UpdateKind::Mint.bytes(),
        LedgerRef::new("L1", 0),
        owner_keys[0].public().clone(),
    );
    let auth = GenesisAuth::Signature {
        issuer: issuer.public().clone(),
        sig: issuer.sign(f0.digest().as_bytes()),
    };
    let a0 = create_genesis(
        f0.u,
        LedgerRef::new("L1", 0),
        owner_keys[0].public().clone(),
        auth,
    )
    .expect("valid");

    let steps: [(Option<LedgerRef>, usize); 3] =
        [(Some(LedgerRef::new("L2", 0)), 0), (None, 1), (None, 1)];
    let mut asset = a0;
    let mut provenance = ProofOfProvenance::empty();
    let providers = [&mut l1, &mut l2];
    for (j, (ledger_ref, at)) in steps.into_iter().enumerate() {
        let (next, _) = make_update(
            &asset,
            UpdateKind::Transfer.bytes(),
            ledger_ref,
            owner_keys[j + 1].public().clone(),
            &owner_keys[j],
        )
        .expect("chain rule");
        let p = &mut *providers[at];
        decoys(p, 0x40 + j as u8, decoys_per_epoch);
        let receipt = register_update(&next, p).expect("registers");
        p.close_epoch();
        provenance = crate::asset::collect_proof(&next, &provenance, p, &receipt).expect("proof");
        asset = next;
    }
    SampleChain {
        issuer,
        providers: vec![l1, l2],
        asset,
        provenance,
        owner_keys,
    }
}

/// A labelled altered copy of `(asset, provenance)`.
pub struct Mutant {
    pub label: String,
    pub asset: Asset,
    pub provenance: ProofOfProvenance,
}

fn flip(bytes: &mut [u8], i: usize) {
    if !bytes.is_empty() {
        let n = bytes.len();
        bytes[i % n] ^= 0x01;
    }
}

const SIG_POSITIONS: [usize; 5] = [0, 16, 31, 47, 63];
const DIGEST_POSITIONS: [usize; 2] = [0, 31];

fn vector_mutants(v: &UpdateVector, other_key: &VerifyingKey) -> Vec<(String, UpdateVector)> {
    let mut out = Vec::new();
    let mut push = |label: &str, f: &dyn Fn(&mut UpdateVector)| {
        let mut m = v.clone();
        f(&mut m);
        out.push((label.to_string(), m));
    };
    push("u.flip", &|m| flip(&mut m.u, 0));
    push("u.append", &|m| m.u.push(0));
    push("u.truncate", &|m| {
        m.u.pop();
    });
    push("ledger_ref.toggle", &|m| {
        m.ledger_ref = match m.ledger_ref.take() {
            Some(_) => None,
            None => Some(LedgerRef::new("L1", 0)),
        }
    });
    if v.ledger_ref.is_some() {
        push("ledger_ref.epoch", &|m| {
            m.ledger_ref.as_mut().unwrap().epoch += 1
        });
        push("ledger_ref.id", &|m| {
            m.ledger_ref.as_mut().unwrap().ledger_id = LedgerId::new("L9")
        });
    }
    push("next_key.replace", &|m| m.next_key = other_key.clone());
    out
}

fn sig_mutants(sig: &Signature) -> Vec<(String, Signature)> {
    let mut out: Vec<_> = SIG_POSITIONS
        .iter()
        .map(|&i| {
            let mut s = sig.clone();
            flip(&mut s.bytes, i);
            (format!("flip{i}"), s)
        })
        .collect();
    let mut t = sig.clone();
    t.bytes.pop();
    out.push(("truncate".into(), t));
    out
}

fn root_mutants(root: &SignedRoot, other_key: &VerifyingKey) -> Vec<(String, SignedRoot)> {
    let mut out = Vec::new();
    for i in DIGEST_POSITIONS {
        let mut r = root.clone();
        flip(&mut r.root.0 .0, i);
        out.push((format!("root.flip{i}"), r));
    }
    let mut r = root.clone();
    r.epoch += 1;
    out.push(("epoch".into(), r));
    let mut r = root.clone();
    r.ledger_id = LedgerId::new(format!("{}x", root.ledger_id));
    out.push(("ledger_id".into(), r));
    let mut r = root.clone();
    r.operator = other_key.clone();
    out.push(("operator".into(), r));
    for (l, s) in sig_mutants(&root.operator_sig) {
        let mut r = root.clone();
        r.operator_sig = s;
        out.push((format!("operator_sig.{l}"), r));
    }
    out
}

/// Every single-field mutation of `(asset, provenance)`: each field of each
/// `F_j`, every signature, and every element of every inclusion proof.
pub fn single_field_mutants(asset: &Asset, provenance: &ProofOfProvenance) -> Vec<Mutant> {
    let other = key("outsider", 99).public().clone();
    let mut out = Vec::new();
    let mut emit = |label: String, a: Asset, p: ProofOfProvenance| {
        out.push(Mutant {
            label,
            asset: a,
            provenance: p,
        })
    };

    for (l, v) in vector_mutants(&asset.genesis, &other) {
        let mut a = asset.clone();
        a.genesis = v;
        emit(format!("F0.{l}"), a, provenance.clone());
    }
    if let GenesisAuth::Signature { issuer, sig } = &asset.genesis_auth {
        for (l, s) in sig_mutants(sig) {
            let mut a = asset.clone();
            a.genesis_auth = GenesisAuth::Signature {
                issuer: issuer.clone(),
                sig: s,
            };
            emit(format!("A0.sig.{l}"), a, provenance.clone());
        }
        let mut a = asset.clone();
        a.genesis_auth = GenesisAuth::Signature {
            issuer: other.clone(),
            sig: sig.clone(),
        };
        emit("A0.issuer".into(), a, provenance.clone());
    }
    for j in 0..asset.updates.len() {
        for (l, v) in vector_mutants(&asset.updates[j].vector, &other) {
            let mut a = asset.clone();
            a.updates[j].vector = v;
            emit(format!("F{}.{l}", j + 1), a, provenance.clone());
        }
        for (l, s) in sig_mutants(&asset.updates[j].sig) {
            let mut a = asset.clone();
            a.updates[j].sig = s;
            emit(format!("U{}.sig.{l}", j + 1), a, provenance.clone());
        }
    }

    for (i, entry) in provenance.entries.iter().enumerate() {
        let j = i + 1;
        let mut with = |label: String, f: &dyn Fn(&mut crate::ledger::ProvenanceEntry)| {
            let mut p = provenance.clone();
            f(&mut p.entries[i]);
            emit(format!("P{j}.{label}"), asset.clone(), p);
        };
        for (l, r) in root_mutants(&entry.root, &other) {
            with(l, &|e| e.root = r.clone());
        }
        with("proof.key".into(), &|e| flip(&mut e.proof.key, 5));
        for d in DIGEST_POSITIONS {
            with(format!("proof.value_digest.flip{d}"), &|e| {
                flip(&mut e.proof.value_digest.0, d)
            });
        }
        with("proof.width".into(), &|e| e.proof.width -= 1);
        for (s, sib) in entry.proof.siblings.iter().enumerate() {
            for d in DIGEST_POSITIONS {
                with(format!("proof.sibling{s}.flip{d}"), &|e| {
                    flip(&mut e.proof.siblings[s].digest.0, d)
                });
            }
            with(format!("proof.sibling{s}.deeper"), &|e| {
                e.proof.siblings[s].depth += 1
            });
            if sib.depth > 1 {
                with(format!("proof.sibling{s}.shallower"), &|e| {
                    e.proof.siblings[s].depth -= 1
                });
            }
            with(format!("proof.sibling{s}.drop"), &|e| {
                e.proof.siblings.remove(s);
            });
        }
        with("proof.sibling.extra".into(), &|e| {
            let depth = e
                .proof
                .siblings
                .last()
                .map_or(e.proof.width, |s| s.depth.saturating_sub(1))
                .max(1);
            e.proof.siblings.push(Sibling {
                depth,
                digest: Digest([0x5a; 32]),
            });
        });
        with("proof.siblings.clear".into(), &|e| e.proof.siblings.clear());
    }
    let mut p = provenance.clone();
    p.entries.pop();
    emit("P.drop_last".into(), asset.clone(), p);
    if provenance.entries.len() >= 2 {
        let mut p = provenance.clone();
        p.entries.swap(0, 1);
        emit("P.swap01".into(), asset.clone(), p);
    }
    out
}
