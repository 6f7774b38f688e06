//! Artifact files: `USO`, a version byte, then one canonical value.

use std::path::Path;

use uso_core::anchor::{AnchorRoot, EquivocationEvidence, StackedProof};
use uso_core::asset::{Asset, ProofOfProvenance, TrustBundle};
use uso_core::codec::{tag, Canonical, CodecError};
use uso_core::ledger::{ProvenanceEntry, SignedRoot};

pub const MAGIC: &[u8; 3] = b"USO";
pub const VERSION: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("not an artifact file")]
    BadMagic,
    #[error("unsupported artifact version {0}")]
    BadVersion(u8),
    #[error("malformed artifact: {0}")]
    Codec(#[from] CodecError),
}

pub fn encode<T: Canonical>(value: &T) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.push(VERSION);
    out.extend(value.to_canonical());
    out
}

/// The canonical payload after the header.
pub fn payload(bytes: &[u8]) -> Result<&[u8], ArtifactError> {
    let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or(ArtifactError::BadMagic)?;
    match rest.split_first() {
        Some((&VERSION, body)) => Ok(body),
        Some((&v, _)) => Err(ArtifactError::BadVersion(v)),
        None => Err(ArtifactError::BadMagic),
    }
}

pub fn decode<T: Canonical>(bytes: &[u8]) -> Result<T, ArtifactError> {
    Ok(T::from_canonical(payload(bytes)?)?)
}

pub fn write<T: Canonical>(path: &Path, value: &T) -> Result<(), ArtifactError> {
    Ok(std::fs::write(path, encode(value))?)
}

pub fn read<T: Canonical>(path: &Path) -> Result<T, ArtifactError> {
    decode(&std::fs::read(path)?)
}

fn summary<T: Canonical + serde::Serialize>(kind: &str, body: &[u8]) -> Result<serde_json::Value, ArtifactError> {
    let v = T::from_canonical(body)?;
    Ok(serde_json::json!({ "kind": kind, "value": v }))
}

/// Decode whatever value an artifact holds, by its leading type tag.
pub fn inspect(bytes: &[u8]) -> Result<serde_json::Value, ArtifactError> {
    let body = payload(bytes)?;
    let t = *body.first().ok_or(CodecError::UnexpectedEnd)?;
    match t {
        tag::ASSET => summary::<Asset>("asset", body),
        tag::PROVENANCE => summary::<ProofOfProvenance>("proof_of_provenance", body),
        tag::TRUST_BUNDLE => summary::<TrustBundle>("trust_bundle", body),
        tag::SIGNED_ROOT => summary::<SignedRoot>("signed_root", body),
        tag::PROVENANCE_ENTRY => summary::<ProvenanceEntry>("provenance_entry", body),
        tag::STACKED_PROOF => summary::<StackedProof>("stacked_proof", body),
        tag::ANCHOR_ROOT => summary::<AnchorRoot>("anchor_root", body),
        tag::EQUIVOCATION_EVIDENCE => summary::<EquivocationEvidence>("equivocation_evidence", body),
        found => Err(CodecError::BadTag { expected: tag::ASSET, found }.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use uso_core::fixture::sample_chain;

    #[test]
    fn header_is_checked() {
        let chain = sample_chain(0);
        let bytes = encode(&chain.asset);
        assert_eq!(decode::<Asset>(&bytes).unwrap(), chain.asset);
        assert!(matches!(decode::<Asset>(&bytes[1..]), Err(ArtifactError::BadMagic)));
        let mut v2 = bytes.clone();
        v2[3] = 9;
        assert!(matches!(decode::<Asset>(&v2), Err(ArtifactError::BadVersion(9))));
        assert_eq!(inspect(&bytes).unwrap()["kind"], "asset");
    }
}
