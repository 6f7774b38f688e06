//! Unforgeable, stateful and oblivious assets: the cryptographic suite,
//! the sparse Merkle trie, integrity providers, the asset model, issuance
//! and redemption, and DLT anchoring.

pub mod anchor;
pub mod asset;
pub mod codec;
pub mod crypto;
pub mod fixture;
pub mod flow;
pub mod ledger;
pub mod mint;
pub mod trie;

#[cfg(test)]
pub(crate) mod testutil;
