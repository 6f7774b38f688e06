//! Issuer-side actors: a bank holding accounts, a minter with one blind
//! key per denomination, and burn records on a bulletin board.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asset::{
    verify_provenance, Asset, AssetError, GenesisAuth, IssuerPolicy, ProofOfProvenance,
    TransferBundle, UpdateKind, UpdateVector,
};
use crate::codec::{tag, Canonical, CodecError, Reader, Writer};
use crate::crypto::{
    blind, blind_sign, commit, message_hash, tagged_hash, unblind, verify_linkage, BlindSignature,
    BlindedMessage, CryptoError, CryptoRand, Digest, Domain, LinkageProof, Scheme, Signature,
    SignedCommitment, SigningKeyPair, VerifyingKey,
};
use crate::flow::{Flow, FlowLog};
use crate::ledger::{
    LedgerError, ProvenanceEntry, Provider, Registration, RegistrationReceipt, SignedRoot,
};
use crate::trie::ProofOfInclusion;

pub const DENOMINATIONS: [u64; 4] = [1, 5, 10, 50];

pub fn is_denomination(q: u64) -> bool {
    DENOMINATIONS.contains(&q)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MintError {
    #[error("authorisation refused: {0}")]
    AuthRefused(String),
    #[error("denomination {0} is not supported")]
    DenominationUnsupported(u64),
    #[error("minter key is not blind-capable or does not match the denomination")]
    SchemeMismatch,
    #[error("voucher is not signed by the bank")]
    VoucherInvalid,
    #[error("voucher already used")]
    VoucherReused,
    #[error("token already redeemed")]
    DoubleRedeem,
    #[error("token provenance does not verify: {0}")]
    InvalidProvenance(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Asset(#[from] AssetError),
}

/// `w`: the bank's authorisation to withdraw `amount` from `account`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WithdrawalAuthorisation {
    pub account: String,
    pub amount: u64,
    pub serial: u64,
    pub bank: VerifyingKey,
    pub sig: Signature,
}

fn auth_message(account: &str, amount: u64, serial: u64) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(tag::WITHDRAWAL_AUTH)
        .str(account)
        .u64(amount)
        .u64(serial);
    w.finish()
}

impl WithdrawalAuthorisation {
    pub fn signature_valid(&self) -> bool {
        self.bank.verify(
            &auth_message(&self.account, self.amount, self.serial),
            &self.sig,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VoucherKind {
    /// Funded by debiting an account.
    Debit,
    /// Funded by tokens the bank has already redeemed.
    Recycled { token_ids: Vec<Digest> },
}

/// `F̃`: bank-signed value that a minter or bulletin board accepts once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Voucher {
    pub kind: VoucherKind,
    pub amount: u64,
    pub serial: u64,
    pub bank: VerifyingKey,
    pub sig: Signature,
}

fn voucher_message(kind: &VoucherKind, amount: u64, serial: u64) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(tag::VOUCHER);
    encode_kind(&mut w, kind);
    w.u64(amount).u64(serial);
    w.finish()
}

fn encode_kind(w: &mut Writer, kind: &VoucherKind) {
    match kind {
        VoucherKind::Debit => {
            w.u8(0);
        }
        VoucherKind::Recycled { token_ids } => {
            w.u8(1).seq(token_ids);
        }
    }
}

impl Voucher {
    pub fn signature_valid(&self) -> bool {
        self.bank.verify(
            &voucher_message(&self.kind, self.amount, self.serial),
            &self.sig,
        )
    }

    pub fn id(&self) -> Digest {
        message_hash(self)
    }
}

/// How message (5) / (3) is funded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Funding {
    Authorisation(WithdrawalAuthorisation),
    Voucher(Voucher),
}

impl Funding {
    pub fn amount(&self) -> u64 {
        match self {
            Funding::Authorisation(w) => w.amount,
            Funding::Voucher(v) => v.amount,
        }
    }
}

/// `B`: consumer hello naming a denomination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindInitRequest {
    pub session: u64,
    pub denomination: u64,
}

/// `B′`: the minter's blind key for the requested denomination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindInitResponse {
    pub session: u64,
    pub denomination: u64,
    pub key: VerifyingKey,
}

/// `(F̃, β(F₀))` registered on the bulletin board under one-time key `k_b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BulletinEntry {
    pub voucher: Voucher,
    pub commitment: SignedCommitment,
    pub key: VerifyingKey,
    pub sig: Signature,
}

/// Digest of the pair `(F̃, β(F₀))`.
pub fn bulletin_pair_digest(voucher: &Voucher, commitment: &SignedCommitment) -> Digest {
    tagged_hash(
        Domain::Message,
        &[&voucher.to_canonical(), &commitment.to_canonical()],
    )
}

impl BulletinEntry {
    pub fn pair_digest(&self) -> Digest {
        bulletin_pair_digest(&self.voucher, &self.commitment)
    }

    pub fn registration(&self) -> Registration {
        Registration::new(self.key.clone(), self.pair_digest(), self.sig.clone())
    }
}

/// Evidence that `F₀` was created by burning a voucher: the board entry,
/// its inclusion proof, and the opening of `β(F₀)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BurnWitness {
    pub entry: BulletinEntry,
    pub board_root: SignedRoot,
    pub proof: ProofOfInclusion,
    pub linkage: LinkageProof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum BurnError {
    #[error("opened vector differs from the genesis vector")]
    VectorMismatch,
    #[error("commitment opening does not verify")]
    BadLinkage,
    #[error("opening refers to a different commitment than the board entry")]
    CommitmentMismatch,
    #[error("voucher signature invalid")]
    BadVoucher,
    #[error("board entry is not proven under the board root")]
    NotOnBoard,
}

/// Structural burn check. Trust in the voucher's bank and the board root is
/// the verifier's policy decision.
pub fn verify_burn(w: &BurnWitness, genesis: &UpdateVector) -> Result<(), BurnError> {
    if w.linkage.opened_vector != *genesis {
        return Err(BurnError::VectorMismatch);
    }
    if !verify_linkage(&w.linkage) {
        return Err(BurnError::BadLinkage);
    }
    if w.linkage.commitment_ref != w.entry.commitment {
        return Err(BurnError::CommitmentMismatch);
    }
    if !w.entry.voucher.signature_valid() {
        return Err(BurnError::BadVoucher);
    }
    let entry = ProvenanceEntry {
        root: w.board_root.clone(),
        proof: w.proof.clone(),
    };
    if !entry.proves(&w.entry.registration()) {
        return Err(BurnError::NotOnBoard);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RedeemTarget {
    Account { name: String },
    Voucher,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RedeemOutcome {
    Credited { account: String, amount: u64 },
    Voucher(Voucher),
}

/// A redemption awaiting its ledger registration.
#[derive(Debug, Clone)]
pub struct PendingRedeem {
    pub asset: Asset,
    pub amount: u64,
    pub target: RedeemTarget,
    pub registration: Registration,
}

#[derive(Debug)]
pub struct Bank {
    key: SigningKeyPair,
    accounts: BTreeMap<String, u64>,
    next_serial: u64,
    open_auths: BTreeMap<u64, (String, u64)>,
    spent_vouchers: BTreeSet<Digest>,
    minter_keys: BTreeMap<VerifyingKey, u64>,
    redeem_keys: BTreeMap<VerifyingKey, SigningKeyPair>,
    redeemed: BTreeSet<Digest>,
    credited_total: u64,
    observed: Vec<Vec<u8>>,
}

impl Bank {
    pub fn new(key: SigningKeyPair) -> Self {
        Bank {
            key,
            accounts: BTreeMap::new(),
            next_serial: 0,
            open_auths: BTreeMap::new(),
            spent_vouchers: BTreeSet::new(),
            minter_keys: BTreeMap::new(),
            redeem_keys: BTreeMap::new(),
            redeemed: BTreeSet::new(),
            credited_total: 0,
            observed: Vec::new(),
        }
    }

    pub fn public(&self) -> &VerifyingKey {
        self.key.public()
    }

    pub fn open_account(&mut self, name: impl Into<String>, balance: u64) {
        self.accounts.insert(name.into(), balance);
    }

    pub fn balance(&self, name: &str) -> Option<u64> {
        self.accounts.get(name).copied()
    }

    /// Sum of all credits booked by redemption.
    pub fn credited_total(&self) -> u64 {
        self.credited_total
    }

    pub fn is_redeemed(&self, asset_id: &Digest) -> bool {
        self.redeemed.contains(asset_id)
    }

    /// Tell the bank which minter key stands for which denomination.
    pub fn recognise_minter_key(&mut self, key: VerifyingKey, denomination: u64) {
        self.minter_keys.insert(key, denomination);
    }

    /// Every payload the bank has handled, for unlinkability audits.
    pub fn observed(&self) -> &[Vec<u8>] {
        &self.observed
    }

    /// Pass a message between consumer and minter, keeping a copy.
    pub fn relay(&mut self, payload: &[u8]) {
        self.observed.push(payload.to_vec());
    }

    fn serial(&mut self) -> u64 {
        self.next_serial += 1;
        self.next_serial
    }

    /// Account-authorisation prologue: issue `w` for `amount`.
    pub fn authorise(
        &mut self,
        account: &str,
        amount: u64,
    ) -> Result<WithdrawalAuthorisation, MintError> {
        if !is_denomination(amount) {
            return Err(MintError::DenominationUnsupported(amount));
        }
        let balance = self
            .accounts
            .get(account)
            .ok_or_else(|| MintError::AuthRefused(format!("unknown account {account}")))?;
        if *balance < amount {
            return Err(MintError::AuthRefused(format!(
                "insufficient funds in {account}"
            )));
        }
        let serial = self.serial();
        let sig = self.key.sign(&auth_message(account, amount, serial));
        self.open_auths
            .insert(serial, (account.to_string(), amount));
        Ok(WithdrawalAuthorisation {
            account: account.to_string(),
            amount,
            serial,
            bank: self.public().clone(),
            sig,
        })
    }

    fn sign_voucher(&mut self, kind: VoucherKind, amount: u64) -> Voucher {
        let serial = self.serial();
        let sig = self.key.sign(&voucher_message(&kind, amount, serial));
        Voucher {
            kind,
            amount,
            serial,
            bank: self.public().clone(),
            sig,
        }
    }

    /// Turn funding into `F̃`: debit the account named by `w`, or accept a
    /// recycled voucher this bank issued.
    pub fn issue_voucher(&mut self, funding: &Funding) -> Result<Voucher, MintError> {
        self.observed.push(funding_bytes(funding));
        match funding {
            Funding::Authorisation(w) => {
                if w.bank != *self.public() || !w.signature_valid() {
                    return Err(MintError::AuthRefused(
                        "authorisation not signed by this bank".into(),
                    ));
                }
                if !is_denomination(w.amount) {
                    return Err(MintError::DenominationUnsupported(w.amount));
                }
                let (account, amount) = self.open_auths.remove(&w.serial).ok_or_else(|| {
                    MintError::AuthRefused("authorisation unknown or used".into())
                })?;
                if account != w.account || amount != w.amount {
                    return Err(MintError::AuthRefused(
                        "authorisation fields altered".into(),
                    ));
                }
                let bal = self
                    .accounts
                    .get_mut(&account)
                    .expect("authorised account exists");
                if *bal < amount {
                    return Err(MintError::AuthRefused(format!(
                        "insufficient funds in {account}"
                    )));
                }
                *bal -= amount;
                Ok(self.sign_voucher(VoucherKind::Debit, amount))
            }
            Funding::Voucher(v) => {
                if v.bank != *self.public() || !v.signature_valid() {
                    return Err(MintError::VoucherInvalid);
                }
                if !is_denomination(v.amount) {
                    return Err(MintError::DenominationUnsupported(v.amount));
                }
                if !self.spent_vouchers.insert(v.id()) {
                    return Err(MintError::VoucherReused);
                }
                Ok(v.clone())
            }
        }
    }

    /// Bank side of message (4): sign `(F̃, β(F₀))` with a fresh one-time
    /// board key.
    pub fn bulletin_entry<R: CryptoRand + ?Sized>(
        &mut self,
        voucher: Voucher,
        commitment: SignedCommitment,
        rng: &mut R,
    ) -> BulletinEntry {
        self.observed.push(commitment.to_canonical());
        let kb = SigningKeyPair::generate_standard(rng);
        let sig = kb.sign(bulletin_pair_digest(&voucher, &commitment).as_bytes());
        BulletinEntry {
            voucher,
            commitment,
            key: kb.public().clone(),
            sig,
        }
    }

    /// Fresh key a redeemer must transfer the token to.
    pub fn redeem_key<R: CryptoRand + ?Sized>(&mut self, rng: &mut R) -> VerifyingKey {
        let k = SigningKeyPair::generate_standard(rng);
        let pk = k.public().clone();
        self.redeem_keys.insert(pk.clone(), k);
        pk
    }

    /// Face value of a token issued under a recognised minter key or burn.
    pub fn value_of(&self, asset: &Asset) -> Option<u64> {
        match &asset.genesis_auth {
            GenesisAuth::Signature { issuer, .. } => self.minter_keys.get(issuer).copied(),
            GenesisAuth::Burn(w) if w.entry.voucher.bank == *self.public() => {
                Some(w.entry.voucher.amount)
            }
            GenesisAuth::Burn(_) => None,
        }
    }

    /// Check a redemption bundle before registering it.
    pub fn begin_redeem(
        &mut self,
        bundle: &TransferBundle,
        target: RedeemTarget,
        policy: &IssuerPolicy,
    ) -> Result<PendingRedeem, MintError> {
        let TransferBundle::Unregistered {
            asset,
            prior,
            registration,
        } = bundle
        else {
            return Err(MintError::InvalidProvenance(
                "bank registers redemptions itself".into(),
            ));
        };
        if self.redeemed.contains(&asset.id()) {
            return Err(MintError::DoubleRedeem);
        }
        let last = asset.latest_vector();
        if last.kind() != Some(UpdateKind::Redeem) || !self.redeem_keys.contains_key(&last.next_key)
        {
            return Err(MintError::InvalidProvenance(
                "last update is not a redemption to this bank".into(),
            ));
        }
        if asset.registration(asset.len()).as_ref() != Some(registration) {
            return Err(MintError::InvalidProvenance(
                "registration does not match the last update".into(),
            ));
        }
        let report = verify_provenance(asset, prior, policy);
        if !report.pending_last(asset) {
            let codes: Vec<String> = report
                .failures()
                .map(|f| format!("{:?}", f.failure.unwrap()))
                .collect();
            return Err(MintError::InvalidProvenance(codes.join(",")));
        }
        let amount = self.value_of(asset).ok_or_else(|| {
            MintError::InvalidProvenance("issuer has no known denomination".into())
        })?;
        if let RedeemTarget::Account { name } = &target {
            if !self.accounts.contains_key(name) {
                return Err(MintError::AuthRefused(format!("unknown account {name}")));
            }
        }
        Ok(PendingRedeem {
            asset: asset.clone(),
            amount,
            target,
            registration: registration.clone(),
        })
    }

    /// Book the outcome of the ledger registration.
    pub fn finish_redeem(
        &mut self,
        pending: PendingRedeem,
        registered: Result<RegistrationReceipt, LedgerError>,
    ) -> Result<RedeemOutcome, MintError> {
        match registered {
            Err(LedgerError::DuplicateKey { .. }) => return Err(MintError::DoubleRedeem),
            Err(e) => return Err(e.into()),
            Ok(_) => {}
        }
        if !self.redeemed.insert(pending.asset.id()) {
            return Err(MintError::DoubleRedeem);
        }
        match pending.target {
            RedeemTarget::Account { name } => {
                *self
                    .accounts
                    .get_mut(&name)
                    .expect("checked in begin_redeem") += pending.amount;
                self.credited_total += pending.amount;
                Ok(RedeemOutcome::Credited {
                    account: name,
                    amount: pending.amount,
                })
            }
            RedeemTarget::Voucher => {
                let v = self.sign_voucher(
                    VoucherKind::Recycled {
                        token_ids: vec![pending.asset.id()],
                    },
                    pending.amount,
                );
                Ok(RedeemOutcome::Voucher(v))
            }
        }
    }
}

fn funding_bytes(f: &Funding) -> Vec<u8> {
    match f {
        Funding::Authorisation(w) => w.to_canonical(),
        Funding::Voucher(v) => v.to_canonical(),
    }
}

/// Holds one blind-capable key per denomination.
#[derive(Debug)]
pub struct Minter {
    bank: VerifyingKey,
    keys: BTreeMap<u64, SigningKeyPair>,
    used_vouchers: BTreeSet<Digest>,
    observed: Vec<Vec<u8>>,
}

impl Minter {
    pub fn new(bank: VerifyingKey, keys: BTreeMap<u64, SigningKeyPair>) -> Result<Self, MintError> {
        for (q, k) in &keys {
            if !is_denomination(*q) {
                return Err(MintError::DenominationUnsupported(*q));
            }
            if k.scheme() != Scheme::BlindCapable {
                return Err(MintError::SchemeMismatch);
            }
        }
        Ok(Minter {
            bank,
            keys,
            used_vouchers: BTreeSet::new(),
            observed: Vec::new(),
        })
    }

    /// One fresh RSA key of `bits` per supported denomination.
    pub fn generate<R: CryptoRand>(
        bank: VerifyingKey,
        bits: usize,
        rng: &mut R,
    ) -> Result<Self, MintError> {
        let mut keys = BTreeMap::new();
        for q in DENOMINATIONS {
            keys.insert(q, SigningKeyPair::generate_blind(rng, bits)?);
        }
        Self::new(bank, keys)
    }

    pub fn public_keys(&self) -> BTreeMap<u64, VerifyingKey> {
        self.keys
            .iter()
            .map(|(q, k)| (*q, k.public().clone()))
            .collect()
    }

    pub fn observed(&self) -> &[Vec<u8>] {
        &self.observed
    }

    pub fn handle_init(&mut self, req: &BlindInitRequest) -> Result<BlindInitResponse, MintError> {
        let key = self
            .keys
            .get(&req.denomination)
            .ok_or(MintError::DenominationUnsupported(req.denomination))?;
        Ok(BlindInitResponse {
            session: req.session,
            denomination: req.denomination,
            key: key.public().clone(),
        })
    }

    /// Message (6) → (7): sign `b(h(F₀))` against a fresh voucher.
    pub fn handle_sign(
        &mut self,
        voucher: &Voucher,
        blinded: &BlindedMessage,
    ) -> Result<BlindSignature, MintError> {
        self.observed.push(voucher.to_canonical());
        self.observed.push(blinded.to_canonical());
        if voucher.bank != self.bank || !voucher.signature_valid() {
            return Err(MintError::VoucherInvalid);
        }
        let key = self
            .keys
            .get(&voucher.amount)
            .ok_or(MintError::DenominationUnsupported(voucher.amount))?;
        if self.used_vouchers.contains(&voucher.id()) {
            return Err(MintError::VoucherReused);
        }
        let sig = blind_sign(key, blinded)?;
        self.used_vouchers.insert(voucher.id());
        Ok(sig)
    }
}

/// Consumer state between messages (4) and (8).
#[derive(Debug)]
pub struct ChaumSession {
    pub denomination: u64,
    pub issuer: VerifyingKey,
    pub blinded: BlindedMessage,
    factor: crate::crypto::BlindingFactor,
    digest: Digest,
}

impl ChaumSession {
    /// After `B′`: blind `h(F₀)` under the offered key.
    pub fn start<R: CryptoRand + ?Sized>(
        requested: u64,
        response: &BlindInitResponse,
        f0: &UpdateVector,
        rng: &mut R,
    ) -> Result<Self, MintError> {
        if response.denomination != requested || response.key.scheme() != Scheme::BlindCapable {
            return Err(MintError::SchemeMismatch);
        }
        let digest = f0.digest();
        let (blinded, factor) = blind(&digest, &response.key, rng)?;
        Ok(ChaumSession {
            denomination: requested,
            issuer: response.key.clone(),
            blinded,
            factor,
            digest,
        })
    }

    /// After message (8): unblind and check the genesis signature.
    pub fn finish(mut self, sig: &BlindSignature) -> Result<GenesisAuth, MintError> {
        let sig = unblind(sig, &mut self.factor)?;
        if !self.issuer.verify(self.digest.as_bytes(), &sig) {
            return Err(MintError::Crypto(CryptoError::MalformedSignature));
        }
        Ok(GenesisAuth::Signature {
            issuer: self.issuer,
            sig,
        })
    }
}

/// Chaum-style withdrawal, messages (1)–(8), run in process.
pub fn chaum_withdraw<R: CryptoRand + ?Sized>(
    funding: Funding,
    f0: &UpdateVector,
    bank: &mut Bank,
    minter: &mut Minter,
    rng: &mut R,
    log: &mut FlowLog,
) -> Result<GenesisAuth, MintError> {
    let q = funding.amount();
    if !is_denomination(q) {
        return Err(MintError::DenominationUnsupported(q));
    }
    let req = BlindInitRequest {
        session: rng.next_u64(),
        denomination: q,
    };
    log.record(Flow::ChaumWithdraw, 1);
    bank.relay(&encode_json(&req));
    log.record(Flow::ChaumWithdraw, 2);
    let resp = minter.handle_init(&req)?;
    log.record(Flow::ChaumWithdraw, 3);
    bank.relay(&encode_json(&resp));
    log.record(Flow::ChaumWithdraw, 4);

    let session = ChaumSession::start(q, &resp, f0, rng)?;
    log.record(Flow::ChaumWithdraw, 5);
    bank.relay(&session.blinded.to_canonical());
    let voucher = bank.issue_voucher(&funding)?;
    log.record(Flow::ChaumWithdraw, 6);
    let blind_sig = minter.handle_sign(&voucher, &session.blinded)?;
    log.record(Flow::ChaumWithdraw, 7);
    bank.relay(&blind_sig.to_canonical());
    log.record(Flow::ChaumWithdraw, 8);
    session.finish(&blind_sig)
}

fn encode_json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("plain data serializes")
}

/// Consumer state for the ZKP-style withdrawal: `β(F₀)` and its opening.
#[derive(Debug, Clone)]
pub struct BurnSession {
    pub f0: UpdateVector,
    pub commitment: SignedCommitment,
    nonce: crate::crypto::Nonce,
}

impl BurnSession {
    pub fn start<R: CryptoRand + ?Sized>(
        f0: UpdateVector,
        committer: &SigningKeyPair,
        rng: &mut R,
    ) -> Self {
        let (commitment, nonce) = commit(&f0, committer, rng);
        BurnSession {
            f0,
            commitment,
            nonce,
        }
    }

    /// After message (6): assemble the witness a recipient checks.
    pub fn finish(
        self,
        entry: BulletinEntry,
        board_proof: ProvenanceEntry,
    ) -> Result<BurnWitness, BurnError> {
        let linkage = LinkageProof::open(self.f0.clone(), self.nonce, self.commitment);
        let w = BurnWitness {
            entry,
            board_root: board_proof.root,
            proof: board_proof.proof,
            linkage,
        };
        verify_burn(&w, &self.f0)?;
        Ok(w)
    }
}

/// ZKP-style withdrawal, messages (3)–(6), run in process. The board closes
/// an epoch between (4) and (5).
pub fn zkp_withdraw<R: CryptoRand + ?Sized>(
    funding: Funding,
    f0: &UpdateVector,
    committer: &SigningKeyPair,
    bank: &mut Bank,
    board: &mut Provider,
    rng: &mut R,
    log: &mut FlowLog,
) -> Result<BurnWitness, MintError> {
    let session = BurnSession::start(f0.clone(), committer, rng);
    log.record(Flow::ZkpWithdraw, 3);
    let voucher = bank.issue_voucher(&funding)?;
    let entry = bank.bulletin_entry(voucher, session.commitment.clone(), rng);
    log.record(Flow::ZkpWithdraw, 4);
    let receipt = board.submit_registration(entry.registration())?;
    board.close_epoch();
    let proof = board.fetch_entry(&receipt.key, receipt.epoch)?;
    log.record(Flow::ZkpWithdraw, 5);
    log.record(Flow::ZkpWithdraw, 6);
    session
        .finish(entry, proof)
        .map_err(|e| MintError::InvalidProvenance(e.to_string()))
}

/// Redemption as a recipient-registered transfer to the bank.
pub fn redeem(
    bank: &mut Bank,
    provider: &mut Provider,
    bundle: &TransferBundle,
    target: RedeemTarget,
    policy: &IssuerPolicy,
) -> Result<RedeemOutcome, MintError> {
    let pending = bank.begin_redeem(bundle, target, policy)?;
    crate::asset::latest_registration(&pending.asset, provider.id())?;
    let result = provider.submit_registration(pending.registration.clone());
    bank.finish_redeem(pending, result)
}

/// Redeemer side: sign the `REDEEM` update to the bank's fresh key.
pub fn redemption_bundle(
    asset: &Asset,
    provenance: &ProofOfProvenance,
    holder_key: &SigningKeyPair,
    bank_key: VerifyingKey,
) -> Result<TransferBundle, AssetError> {
    crate::asset::transfer(
        asset,
        provenance,
        holder_key,
        bank_key,
        UpdateKind::Redeem.bytes(),
        None,
    )
}

impl Canonical for WithdrawalAuthorisation {
    const TAG: u8 = tag::WITHDRAWAL_AUTH;
    fn encode_body(&self, w: &mut Writer) {
        w.str(&self.account)
            .u64(self.amount)
            .u64(self.serial)
            .item(&self.bank)
            .item(&self.sig);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(WithdrawalAuthorisation {
            account: r.str()?,
            amount: r.u64()?,
            serial: r.u64()?,
            bank: r.item()?,
            sig: r.item()?,
        })
    }
}

impl Canonical for Voucher {
    const TAG: u8 = tag::VOUCHER;
    fn encode_body(&self, w: &mut Writer) {
        encode_kind(w, &self.kind);
        w.u64(self.amount)
            .u64(self.serial)
            .item(&self.bank)
            .item(&self.sig);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let kind = match r.u8()? {
            0 => VoucherKind::Debit,
            1 => VoucherKind::Recycled {
                token_ids: r.seq()?,
            },
            _ => return Err(CodecError::Invalid("voucher kind")),
        };
        Ok(Voucher {
            kind,
            amount: r.u64()?,
            serial: r.u64()?,
            bank: r.item()?,
            sig: r.item()?,
        })
    }
}

impl Canonical for BlindInitRequest {
    const TAG: u8 = tag::BLIND_INIT_REQUEST;
    fn encode_body(&self, w: &mut Writer) {
        w.u64(self.session).u64(self.denomination);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(BlindInitRequest {
            session: r.u64()?,
            denomination: r.u64()?,
        })
    }
}

impl Canonical for BlindInitResponse {
    const TAG: u8 = tag::BLIND_INIT_RESPONSE;
    fn encode_body(&self, w: &mut Writer) {
        w.u64(self.session).u64(self.denomination).item(&self.key);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(BlindInitResponse {
            session: r.u64()?,
            denomination: r.u64()?,
            key: r.item()?,
        })
    }
}

impl Canonical for BulletinEntry {
    const TAG: u8 = tag::BULLETIN_ENTRY;
    fn encode_body(&self, w: &mut Writer) {
        w.item(&self.voucher)
            .item(&self.commitment)
            .item(&self.key)
            .item(&self.sig);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(BulletinEntry {
            voucher: r.item()?,
            commitment: r.item()?,
            key: r.item()?,
            sig: r.item()?,
        })
    }
}

impl Canonical for BurnWitness {
    const TAG: u8 = tag::BURN_WITNESS;
    fn encode_body(&self, w: &mut Writer) {
        w.item(&self.entry)
            .item(&self.board_root)
            .item(&self.proof)
            .item(&self.linkage);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(BurnWitness {
            entry: r.item()?,
            board_root: r.item()?,
            proof: r.item()?,
            linkage: r.item()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::asset::{create_genesis, genesis_vector, DirectTrust, LedgerRef, Wallet};
    use crate::flow::conforms;
    use crate::ledger::LedgerId;
    use crate::testutil::{blind_key, rng};

    struct Setup {
        bank: Bank,
        minter: Minter,
        board: Provider,
        notary: Provider,
        wallet: Wallet,
        rng: rand_chacha::ChaCha20Rng,
    }

    fn setup(seed: u64) -> Setup {
        let mut rng = rng(seed);
        let mut bank = Bank::new(SigningKeyPair::generate_standard(&mut rng));
        bank.open_account("alice", 200);
        bank.open_account("merchant", 0);
        let keys: BTreeMap<u64, SigningKeyPair> = DENOMINATIONS
            .iter()
            .enumerate()
            .map(|(i, q)| (*q, blind_key(i)))
            .collect();
        let minter = Minter::new(bank.public().clone(), keys).unwrap();
        for (q, k) in minter.public_keys() {
            bank.recognise_minter_key(k, q);
        }
        let mut board = Provider::new(
            LedgerId::new("board"),
            SigningKeyPair::generate_standard(&mut rng),
        );
        board.close_epoch();
        let mut notary = Provider::new(
            LedgerId::new("notary"),
            SigningKeyPair::generate_standard(&mut rng),
        );
        notary.close_epoch();
        Setup {
            bank,
            minter,
            board,
            notary,
            wallet: Wallet::new(),
            rng,
        }
    }

    impl Setup {
        fn policy(&self) -> IssuerPolicy {
            let mut issuers: Vec<_> = self.minter.public_keys().into_values().collect();
            issuers.push(self.bank.public().clone());
            IssuerPolicy::new(
                issuers,
                Arc::new(DirectTrust::from_providers([&self.board, &self.notary])),
            )
            .unwrap()
        }

        fn f0(&mut self) -> UpdateVector {
            let k1 = self.wallet.fresh_key(&mut self.rng);
            genesis_vector(UpdateKind::Mint.bytes(), LedgerRef::new("notary", 0), k1)
        }

        fn chaum(&mut self, q: u64) -> (Asset, FlowLog) {
            let f0 = self.f0();
            let w = self.bank.authorise("alice", q).unwrap();
            let mut log = FlowLog::new();
            let auth = chaum_withdraw(
                Funding::Authorisation(w),
                &f0,
                &mut self.bank,
                &mut self.minter,
                &mut self.rng,
                &mut log,
            )
            .unwrap();
            let a = create_genesis(f0.u, f0.ledger_ref.unwrap(), f0.next_key, auth).unwrap();
            (a, log)
        }
    }

    #[test]
    fn chaum_flow_conforms_and_verifies() {
        let mut s = setup(1);
        let (a, log) = s.chaum(10);
        assert!(conforms(Flow::ChaumWithdraw, &log.of(Flow::ChaumWithdraw)));
        assert!(verify_provenance(&a, &ProofOfProvenance::empty(), &s.policy()).is_valid());
        assert_eq!(s.bank.balance("alice"), Some(190));
    }

    #[test]
    fn unsupported_denomination_fails_before_minter() {
        let mut s = setup(2);
        assert_eq!(
            s.bank.authorise("alice", 7).unwrap_err(),
            MintError::DenominationUnsupported(7)
        );
        assert!(s.minter.observed().is_empty());
    }

    #[test]
    fn authorisation_is_single_use() {
        let mut s = setup(3);
        let w = s.bank.authorise("alice", 5).unwrap();
        s.bank
            .issue_voucher(&Funding::Authorisation(w.clone()))
            .unwrap();
        assert!(matches!(
            s.bank.issue_voucher(&Funding::Authorisation(w)),
            Err(MintError::AuthRefused(_))
        ));
    }

    #[test]
    fn minter_refuses_reused_voucher() {
        let mut s = setup(4);
        let w = s.bank.authorise("alice", 1).unwrap();
        let v = s.bank.issue_voucher(&Funding::Authorisation(w)).unwrap();
        let f0 = s.f0();
        let key = s.minter.public_keys()[&1].clone();
        let (b1, _) = blind(&f0.digest(), &key, &mut s.rng).unwrap();
        s.minter.handle_sign(&v, &b1).unwrap();
        assert_eq!(
            s.minter.handle_sign(&v, &b1).unwrap_err(),
            MintError::VoucherReused
        );
    }

    #[test]
    fn bank_and_minter_never_see_the_digest() {
        let mut s = setup(5);
        let mut digests = Vec::new();
        for _ in 0..10 {
            let (a, _) = s.chaum(1);
            digests.push(a.id());
            if let GenesisAuth::Signature { sig, .. } = &a.genesis_auth {
                digests.push(Digest(sig.bytes[..32].try_into().unwrap()));
            }
        }
        let views: Vec<&Vec<u8>> = s
            .bank
            .observed()
            .iter()
            .chain(s.minter.observed())
            .collect();
        for d in &digests {
            for v in &views {
                assert!(!v.windows(32).any(|w| w == d.as_bytes()));
            }
        }
    }

    #[test]
    fn zkp_flow_conforms_and_verifies() {
        let mut s = setup(6);
        let f0 = s.f0();
        let committer = SigningKeyPair::generate_standard(&mut s.rng);
        let w = s.bank.authorise("alice", 50).unwrap();
        let mut log = FlowLog::new();
        let witness = zkp_withdraw(
            Funding::Authorisation(w),
            &f0,
            &committer,
            &mut s.bank,
            &mut s.board,
            &mut s.rng,
            &mut log,
        )
        .unwrap();
        assert!(conforms(Flow::ZkpWithdraw, &log.of(Flow::ZkpWithdraw)));
        let a = create_genesis(
            f0.u.clone(),
            f0.ledger_ref.clone().unwrap(),
            f0.next_key.clone(),
            GenesisAuth::Burn(Box::new(witness.clone())),
        )
        .unwrap();
        assert!(verify_provenance(&a, &ProofOfProvenance::empty(), &s.policy()).is_valid());

        let mut other = f0.clone();
        other.u = b"MINT:other".to_vec();
        assert_eq!(
            verify_burn(&witness, &other).unwrap_err(),
            BurnError::VectorMismatch
        );
        let mut swapped = witness.clone();
        swapped.linkage.opened_vector = other.clone();
        assert_eq!(
            verify_burn(&swapped, &other).unwrap_err(),
            BurnError::BadLinkage
        );
    }

    #[test]
    fn redeem_credits_once() {
        let mut s = setup(7);
        let (a, _) = s.chaum(10);
        let policy = s.policy();
        let holder = s.wallet.key(a.current_key()).unwrap().clone();
        let bank_key = s.bank.redeem_key(&mut s.rng);
        let bundle = redemption_bundle(&a, &ProofOfProvenance::empty(), &holder, bank_key).unwrap();
        let target = RedeemTarget::Account {
            name: "merchant".into(),
        };
        let out = redeem(&mut s.bank, &mut s.notary, &bundle, target.clone(), &policy).unwrap();
        assert_eq!(
            out,
            RedeemOutcome::Credited {
                account: "merchant".into(),
                amount: 10
            }
        );
        assert_eq!(
            redeem(&mut s.bank, &mut s.notary, &bundle, target, &policy).unwrap_err(),
            MintError::DoubleRedeem
        );
        assert_eq!(s.bank.balance("merchant"), Some(10));
        assert_eq!(s.bank.credited_total(), 10);
    }

    #[test]
    fn replay_with_fresh_bank_key_is_refused() {
        let mut s = setup(8);
        let (a, _) = s.chaum(5);
        let policy = s.policy();
        let holder = s.wallet.key(a.current_key()).unwrap().clone();
        let first = redemption_bundle(
            &a,
            &ProofOfProvenance::empty(),
            &holder,
            s.bank.redeem_key(&mut s.rng),
        )
        .unwrap();
        let second = redemption_bundle(
            &a,
            &ProofOfProvenance::empty(),
            &holder,
            s.bank.redeem_key(&mut s.rng),
        )
        .unwrap();
        let target = RedeemTarget::Account {
            name: "merchant".into(),
        };
        redeem(&mut s.bank, &mut s.notary, &first, target.clone(), &policy).unwrap();
        assert_eq!(
            redeem(&mut s.bank, &mut s.notary, &second, target, &policy).unwrap_err(),
            MintError::DoubleRedeem
        );
    }

    #[test]
    fn recycled_voucher_funds_a_withdrawal() {
        let mut s = setup(9);
        let (a, _) = s.chaum(5);
        let policy = s.policy();
        let holder = s.wallet.key(a.current_key()).unwrap().clone();
        let bundle = redemption_bundle(
            &a,
            &ProofOfProvenance::empty(),
            &holder,
            s.bank.redeem_key(&mut s.rng),
        )
        .unwrap();
        let RedeemOutcome::Voucher(v) = redeem(
            &mut s.bank,
            &mut s.notary,
            &bundle,
            RedeemTarget::Voucher,
            &policy,
        )
        .unwrap() else {
            panic!("expected voucher")
        };
        let f0 = s.f0();
        let mut log = FlowLog::new();
        let auth = chaum_withdraw(
            Funding::Voucher(v.clone()),
            &f0,
            &mut s.bank,
            &mut s.minter,
            &mut s.rng,
            &mut log,
        )
        .unwrap();
        let b = create_genesis(f0.u, f0.ledger_ref.unwrap(), f0.next_key, auth).unwrap();
        assert!(verify_provenance(&b, &ProofOfProvenance::empty(), &s.policy()).is_valid());
        assert_eq!(
            s.bank.issue_voucher(&Funding::Voucher(v)).unwrap_err(),
            MintError::VoucherReused
        );
    }

    #[test]
    fn redeem_with_missing_proof_is_invalid() {
        let mut s = setup(10);
        let (a0, _) = s.chaum(1);
        let next = s.wallet.fresh_key(&mut s.rng);
        let (a1, _) = s
            .wallet
            .update(&a0, UpdateKind::Transfer.bytes(), None, next)
            .unwrap();
        crate::asset::register_update(&a1, &mut s.notary).unwrap();
        s.notary.close_epoch();
        let policy = s.policy();
        let holder = s.wallet.key(a1.current_key()).unwrap().clone();
        let bundle = redemption_bundle(
            &a1,
            &ProofOfProvenance::empty(),
            &holder,
            s.bank.redeem_key(&mut s.rng),
        )
        .unwrap();
        let err = redeem(
            &mut s.bank,
            &mut s.notary,
            &bundle,
            RedeemTarget::Voucher,
            &policy,
        )
        .unwrap_err();
        assert!(matches!(err, MintError::InvalidProvenance(_)));
    }

    #[test]
    fn wire_types_round_trip() {
        let mut s = setup(11);
        let w = s.bank.authorise("alice", 5).unwrap();
        assert_eq!(
            WithdrawalAuthorisation::from_canonical(&w.to_canonical()).unwrap(),
            w
        );
        let v = s.bank.issue_voucher(&Funding::Authorisation(w)).unwrap();
        assert_eq!(Voucher::from_canonical(&v.to_canonical()).unwrap(), v);
        let req = BlindInitRequest {
            session: 9,
            denomination: 5,
        };
        assert_eq!(
            BlindInitRequest::from_canonical(&req.to_canonical()).unwrap(),
            req
        );
    }
}
