//! Messages actors exchange. Bodies travel as serialized bytes; a receiver
//! only ever sees what it decodes from them.

use serde::{Deserialize, Serialize};
use uso_core::anchor::{AnchorRoot, EquivocationEvidence};
use uso_core::asset::TransferBundle;
use uso_core::crypto::{BlindSignature, BlindedMessage, SignedCommitment, VerifyingKey};
use uso_core::flow::Flow;
use uso_core::ledger::{LedgerError, ProvenanceEntry, Registration, SignedRoot};
use uso_core::mint::{BlindInitRequest, BlindInitResponse, BulletinEntry, Funding, Voucher, WithdrawalAuthorisation};
use uso_core::trie::{ProofOfExclusion, ProofOfInclusion};

use crate::scenario::Mode;

/// Everything an integrity provider can be asked. None of these carry an
/// update vector or an asset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "request", rename_all = "snake_case")]
pub enum ProviderRequest {
    Submit { registration: Registration },
    GetRoot { epoch: u64 },
    FetchEntry { key: VerifyingKey, epoch: u64 },
    FetchExclusion { key: VerifyingKey, epoch: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reply", rename_all = "snake_case")]
pub enum ProviderReply {
    Included { entry: ProvenanceEntry },
    Rejected { error: LedgerError },
    Root { root: SignedRoot },
    Excluded { proof: ProofOfExclusion },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    AuthRequest { account: String, amount: u64 },
    AuthGrant { auth: WithdrawalAuthorisation },
    BlindInit { request: BlindInitRequest },
    BlindOffer { response: BlindInitResponse },
    Withdraw { funding: Funding, blinded: BlindedMessage },
    MintRequest { voucher: Voucher, blinded: BlindedMessage },
    BlindSigned { sig: BlindSignature },
    BurnRequest { funding: Funding, commitment: SignedCommitment, board: String },
    BurnPosted { entry: BulletinEntry, proof: ProvenanceEntry },
    Provider { request: ProviderRequest },
    ProviderReply { reply: ProviderReply },
    PayTo { reference: String, key: VerifyingKey, mode: Mode, redeem: bool },
    Handoff { reference: String, bundle: TransferBundle },
    Registered { reference: String, entry: ProvenanceEntry },
    Refused { reference: String, code: String, detail: String },
    VoucherIssued { reference: String, voucher: Voucher },
    PublishRoot { root: SignedRoot },
    Gossip { roots: Vec<SignedRoot> },
    Evidence { evidence: EquivocationEvidence },
    SubmitRoot { root: SignedRoot },
    AnchorPublished { anchor: AnchorRoot },
    ProveAnchored { operator: VerifyingKey, t: u64 },
    AnchorProof { root: SignedRoot, t: u64, proof: ProofOfInclusion },
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("messages are plain data")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::AuthRequest { .. } => "auth_request",
            Message::AuthGrant { .. } => "auth_grant",
            Message::BlindInit { .. } => "blind_init",
            Message::BlindOffer { .. } => "blind_offer",
            Message::Withdraw { .. } => "withdraw",
            Message::MintRequest { .. } => "mint_request",
            Message::BlindSigned { .. } => "blind_signed",
            Message::BurnRequest { .. } => "burn_request",
            Message::BurnPosted { .. } => "burn_posted",
            Message::Provider { request } => match request {
                ProviderRequest::Submit { .. } => "submit",
                ProviderRequest::GetRoot { .. } => "get_root",
                ProviderRequest::FetchEntry { .. } => "fetch_entry",
                ProviderRequest::FetchExclusion { .. } => "fetch_exclusion",
            },
            Message::ProviderReply { reply } => match reply {
                ProviderReply::Included { .. } => "included",
                ProviderReply::Rejected { .. } => "rejected",
                ProviderReply::Root { .. } => "root",
                ProviderReply::Excluded { .. } => "excluded",
            },
            Message::PayTo { .. } => "pay_to",
            Message::Handoff { .. } => "handoff",
            Message::Registered { .. } => "registered",
            Message::Refused { .. } => "refused",
            Message::VoucherIssued { .. } => "voucher_issued",
            Message::PublishRoot { .. } => "publish_root",
            Message::Gossip { .. } => "gossip",
            Message::Evidence { .. } => "evidence",
            Message::SubmitRoot { .. } => "submit_root",
            Message::AnchorPublished { .. } => "anchor_published",
            Message::ProveAnchored { .. } => "prove_anchored",
            Message::AnchorProof { .. } => "anchor_proof",
        }
    }

    /// The arrow label this message carries in a numbered flow, read off
    /// its content. Messages outside the numbered sequences get their kind.
    pub fn label(&self, flow: Option<Flow>) -> String {
        let board = flow == Some(Flow::ZkpWithdraw);
        let s = match self {
            Message::BlindInit { .. } => "B",
            Message::BlindOffer { .. } => "B'",
            Message::Withdraw { .. } => "w, b(h(F0))",
            Message::MintRequest { .. } => "F~, b(h(F0))",
            Message::BlindSigned { .. } => "s(b(h(F0)))",
            Message::BurnRequest { .. } => "w, beta(F0)",
            Message::Provider { request: ProviderRequest::Submit { .. } } if board => "F~, beta(F0)",
            Message::Provider { request: ProviderRequest::Submit { .. } } => "k_j, s(h(F_j), k_j)",
            Message::ProviderReply { reply: ProviderReply::Included { .. } } if board => {
                "p(G_BB, k_b, (F~, beta(F0)))"
            }
            Message::BurnPosted { .. } => "p(G_BB, k_b, (F~, beta(F0)))",
            Message::ProviderReply { reply: ProviderReply::Included { .. } } | Message::Registered { .. } => {
                "p(G_L, k_j, h(F_j))"
            }
            Message::PayTo { .. } => "k_j+1",
            Message::Handoff { bundle: TransferBundle::Registered { .. }, .. } => "F_j, P_j",
            Message::Handoff { bundle: TransferBundle::Unregistered { .. }, .. } => "F_j, P_j-1, k_j, s(h(F_j), k_j)",
            other => other.kind(),
        };
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use uso_core::crypto::{Digest, SigningKeyPair};
    use uso_core::ledger::LedgerId;
    use uso_core::trie::RootDigest;

    /// The payload fields a provider receives, per request. The match is
    /// exhaustive: a new request variant does not compile until it is listed
    /// here and checked below.
    fn payload_fields(req: &ProviderRequest) -> &'static [&'static str] {
        match req {
            ProviderRequest::Submit { .. } => &["registration", "key", "value_sig", "value_digest"],
            ProviderRequest::GetRoot { .. } => &["epoch"],
            ProviderRequest::FetchEntry { .. } | ProviderRequest::FetchExclusion { .. } => &["key", "epoch"],
        }
    }

    fn keys_of(v: &serde_json::Value, out: &mut Vec<String>) {
        match v {
            serde_json::Value::Object(m) => {
                for (k, x) in m {
                    out.push(k.clone());
                    keys_of(x, out);
                }
            }
            serde_json::Value::Array(xs) => xs.iter().for_each(|x| keys_of(x, out)),
            _ => {}
        }
    }

    #[test]
    fn provider_requests_are_oblivious() {
        let k = SigningKeyPair::standard_from_seed(&[1; 32]);
        let d = Digest([2; 32]);
        let reg = Registration::new(k.public().clone(), d, k.sign(d.as_bytes()));
        let all = [
            ProviderRequest::Submit { registration: reg },
            ProviderRequest::GetRoot { epoch: 1 },
            ProviderRequest::FetchEntry { key: k.public().clone(), epoch: 1 },
            ProviderRequest::FetchExclusion { key: k.public().clone(), epoch: 1 },
        ];
        for req in &all {
            let mut fields = Vec::new();
            keys_of(&serde_json::to_value(req).unwrap(), &mut fields);
            let allowed = payload_fields(req);
            for f in fields.iter().filter(|f| !matches!(f.as_str(), "request" | "scheme" | "bytes")) {
                assert!(allowed.contains(&f.as_str()), "{req:?} carries {f}");
            }
            for banned in ["vector", "u", "next_key", "ledger_ref", "genesis", "updates"] {
                assert!(!fields.iter().any(|f| f == banned), "{req:?} carries {banned}");
            }
        }
    }

    #[test]
    fn round_trips_through_bytes() {
        let op = SigningKeyPair::standard_from_seed(&[3; 32]);
        let m = Message::PublishRoot { root: SignedRoot::sign(LedgerId::new("L1"), 2, RootDigest(Digest([4; 32])), &op) };
        assert_eq!(Message::decode(&m.encode()).unwrap(), m);
        assert_eq!(m.label(None), "publish_root");
    }
}
