//! `β(F₀)`: a signed hash commitment to a genesis vector, and its opening.
//!
//! The opening reveals the vector to whoever checks it. A zero-knowledge
//! backend would slot in behind the same [`verify_linkage`] contract.

use serde::{Deserialize, Serialize};

use super::{tagged_hash, CryptoRand, Digest, Domain, Signature, SigningKeyPair, VerifyingKey};
use crate::asset::UpdateVector;
use crate::codec::{tag, Canonical, CodecError, Reader, Writer};

/// Opening randomness for a commitment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Nonce(pub Digest);

impl Nonce {
    pub fn random<R: CryptoRand + ?Sized>(rng: &mut R) -> Self {
        let mut b = [0u8; 32];
        rng.fill_bytes(&mut b);
        Nonce(Digest(b))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedCommitment {
    pub commitment: Digest,
    pub signer: VerifyingKey,
    pub sig: Signature,
}

impl SignedCommitment {
    pub fn signature_valid(&self) -> bool {
        self.signer.verify(self.commitment.as_bytes(), &self.sig)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkageProof {
    pub opened_vector: UpdateVector,
    pub nonce: Nonce,
    pub commitment_ref: SignedCommitment,
}

/// `h(Commitment ‖ canonical(F₀) ‖ nonce)`.
pub fn commitment_digest(vector: &UpdateVector, nonce: &Nonce) -> Digest {
    tagged_hash(
        Domain::Commitment,
        &[&vector.to_canonical(), nonce.0.as_bytes()],
    )
}

pub fn commit<R: CryptoRand + ?Sized>(
    vector: &UpdateVector,
    committer: &SigningKeyPair,
    rng: &mut R,
) -> (SignedCommitment, Nonce) {
    let nonce = Nonce::random(rng);
    let commitment = commitment_digest(vector, &nonce);
    let sig = committer.sign(commitment.as_bytes());
    (
        SignedCommitment {
            commitment,
            signer: committer.public().clone(),
            sig,
        },
        nonce,
    )
}

impl LinkageProof {
    pub fn open(vector: UpdateVector, nonce: Nonce, commitment: SignedCommitment) -> Self {
        LinkageProof {
            opened_vector: vector,
            nonce,
            commitment_ref: commitment,
        }
    }
}

/// True iff the opening reproduces the commitment and the commitment's
/// signature verifies.
pub fn verify_linkage(proof: &LinkageProof) -> bool {
    commitment_digest(&proof.opened_vector, &proof.nonce) == proof.commitment_ref.commitment
        && proof.commitment_ref.signature_valid()
}

impl Canonical for SignedCommitment {
    const TAG: u8 = tag::SIGNED_COMMITMENT;
    fn encode_body(&self, w: &mut Writer) {
        w.item(&self.commitment).item(&self.signer).item(&self.sig);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(SignedCommitment {
            commitment: r.item()?,
            signer: r.item()?,
            sig: r.item()?,
        })
    }
}

impl Canonical for LinkageProof {
    const TAG: u8 = tag::LINKAGE_PROOF;
    fn encode_body(&self, w: &mut Writer) {
        w.item(&self.opened_vector)
            .fixed(self.nonce.0.as_bytes())
            .item(&self.commitment_ref);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(LinkageProof {
            opened_vector: r.item()?,
            nonce: Nonce(Digest(r.array()?)),
            commitment_ref: r.item()?,
        })
    }
}
