//! USO assets: update vectors, signed updates, assets,
//! proofs of provenance and their verification.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{hex_bytes, tag, Canonical, CodecError, Reader, Writer};
use crate::crypto::{message_hash, CryptoRand, Digest, Signature, SigningKeyPair, VerifyingKey};
use crate::ledger::{
    LedgerError, LedgerId, ProvenanceEntry, Provider, Registration, RegistrationReceipt, SignedRoot,
};
use crate::mint::{verify_burn, BurnWitness};

/// Well-known `u_j` type tags. Any other octet string is accepted as opaque.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UpdateKind {
    Mint,
    Transfer,
    Redeem,
    BurnCommit,
    Rotate,
}

impl UpdateKind {
    pub const ALL: [UpdateKind; 5] = [
        UpdateKind::Mint,
        UpdateKind::Transfer,
        UpdateKind::Redeem,
        UpdateKind::BurnCommit,
        UpdateKind::Rotate,
    ];

    pub fn tag(self) -> &'static [u8] {
        match self {
            UpdateKind::Mint => b"MINT",
            UpdateKind::Transfer => b"TRANSFER",
            UpdateKind::Redeem => b"REDEEM",
            UpdateKind::BurnCommit => b"BURN-COMMIT",
            UpdateKind::Rotate => b"ROTATE",
        }
    }

    pub fn bytes(self) -> Vec<u8> {
        self.tag().to_vec()
    }

    /// Recognises `TAG` or `TAG:payload`.
    pub fn parse(u: &[u8]) -> Option<UpdateKind> {
        Self::ALL.into_iter().find(|k| {
            let t = k.tag();
            u.starts_with(t) && (u.len() == t.len() || u[t.len()] == b':')
        })
    }
}

/// `(L, i)`: a ledger and one of its epochs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LedgerRef {
    pub ledger_id: LedgerId,
    pub epoch: u64,
}

impl LedgerRef {
    pub fn new(ledger_id: impl Into<String>, epoch: u64) -> Self {
        LedgerRef {
            ledger_id: LedgerId::new(ledger_id),
            epoch,
        }
    }
}

/// `F_j = (u_j, G_{L,i}, k_{j+1})`. A missing ledger reference on `j ≥ 1`
/// inherits the previous provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateVector {
    #[serde(with = "hex_bytes")]
    pub u: Vec<u8>,
    pub ledger_ref: Option<LedgerRef>,
    pub next_key: VerifyingKey,
}

impl UpdateVector {
    pub fn new(u: Vec<u8>, ledger_ref: Option<LedgerRef>, next_key: VerifyingKey) -> Self {
        UpdateVector {
            u,
            ledger_ref,
            next_key,
        }
    }

    /// `h(F_j)`.
    pub fn digest(&self) -> Digest {
        message_hash(self)
    }

    pub fn kind(&self) -> Option<UpdateKind> {
        UpdateKind::parse(&self.u)
    }
}

/// `U_j = (F_j, s(h(F_j), k_j))`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Update {
    pub vector: UpdateVector,
    pub sig: Signature,
}

impl Update {
    /// The ledger registration of this update under its signing key.
    pub fn registration(&self, signer: &VerifyingKey) -> Registration {
        Registration::new(signer.clone(), self.vector.digest(), self.sig.clone())
    }
}

/// How `A₀` is authorised: a signature by an issuer key (direct or
/// unblinded), or a burn recorded on a bulletin board.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenesisAuth {
    Signature {
        issuer: VerifyingKey,
        sig: Signature,
    },
    Burn(Box<BurnWitness>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Asset {
    pub genesis: UpdateVector,
    pub genesis_auth: GenesisAuth,
    pub updates: Vec<Update>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssetError {
    #[error("genesis authorisation does not verify")]
    InvalidGenesisSig,
    #[error("genesis vector names no ledger")]
    MissingLedgerRef,
    #[error("private key does not match the asset's current key")]
    WrongKey,
    #[error("next key was already used in this asset")]
    KeyReuse,
    #[error("update must be registered with {expected}, not {actual}")]
    WrongProvider {
        expected: LedgerId,
        actual: LedgerId,
    },
    #[error("asset has no updates to register")]
    NothingToRegister,
    #[error("proof does not bind the latest update")]
    ProofMismatch,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl Asset {
    /// `h(F₀)`, stable for the asset's lifetime.
    pub fn id(&self) -> Digest {
        self.genesis.digest()
    }

    pub fn len(&self) -> usize {
        self.updates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.updates.is_empty()
    }

    /// `F_j`, with `F₀` at index 0.
    pub fn vector(&self, j: usize) -> Option<&UpdateVector> {
        match j {
            0 => Some(&self.genesis),
            _ => self.updates.get(j - 1).map(|u| &u.vector),
        }
    }

    pub fn latest_vector(&self) -> &UpdateVector {
        self.vector(self.updates.len()).expect("index in range")
    }

    /// Key that must sign the next update.
    pub fn current_key(&self) -> &VerifyingKey {
        &self.latest_vector().next_key
    }

    /// `k_j`: the key that signed update `j ≥ 1`.
    pub fn signer_of(&self, j: usize) -> Option<&VerifyingKey> {
        j.checked_sub(1)
            .and_then(|i| self.vector(i))
            .map(|v| &v.next_key)
    }

    /// Registration for update `j ≥ 1`.
    pub fn registration(&self, j: usize) -> Option<Registration> {
        let signer = self.signer_of(j)?;
        self.updates.get(j - 1).map(|u| u.registration(signer))
    }

    /// Provider that must register update `j ≥ 1`: the ledger named by the
    /// nearest `F_i` (`i < j`) carrying a reference.
    pub fn provider_for(&self, j: usize) -> Option<&LedgerId> {
        (0..j)
            .rev()
            .find_map(|i| self.vector(i)?.ledger_ref.as_ref())
            .map(|r| &r.ledger_id)
    }

    fn keys_in_chain(&self) -> impl Iterator<Item = &VerifyingKey> {
        (0..=self.updates.len())
            .filter_map(|i| self.vector(i))
            .map(|v| &v.next_key)
    }
}

/// `P_j`: one entry per registered update, in order. `P₀` is empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofOfProvenance {
    pub entries: Vec<ProvenanceEntry>,
}

impl ProofOfProvenance {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `P_j ← P_{j−1} | p(...)`.
    pub fn extended(&self, entry: ProvenanceEntry) -> Self {
        let mut entries = self.entries.clone();
        entries.push(entry);
        ProofOfProvenance { entries }
    }
}

/// Build `F₀` before it is signed.
pub fn genesis_vector(u0: Vec<u8>, ledger_ref: LedgerRef, next_key: VerifyingKey) -> UpdateVector {
    UpdateVector::new(u0, Some(ledger_ref), next_key)
}

/// `A₀ ← (F₀, s(h(F₀), k₀))`, checking the authorisation against `F₀`.
pub fn create_genesis(
    u0: Vec<u8>,
    ledger_ref: LedgerRef,
    next_key: VerifyingKey,
    auth: GenesisAuth,
) -> Result<Asset, AssetError> {
    let genesis = genesis_vector(u0, ledger_ref, next_key);
    if !genesis_auth_valid(&genesis, &auth) {
        return Err(AssetError::InvalidGenesisSig);
    }
    Ok(Asset {
        genesis,
        genesis_auth: auth,
        updates: Vec::new(),
    })
}

fn genesis_auth_valid(genesis: &UpdateVector, auth: &GenesisAuth) -> bool {
    match auth {
        GenesisAuth::Signature { issuer, sig } => issuer.verify(genesis.digest().as_bytes(), sig),
        GenesisAuth::Burn(w) => verify_burn(w, genesis).is_ok(),
    }
}

/// Sign `F_j` with `k_j` and append it. Returns the new asset and the update.
pub fn make_update(
    asset: &Asset,
    u: Vec<u8>,
    ledger_ref: Option<LedgerRef>,
    next_key: VerifyingKey,
    current_key: &SigningKeyPair,
) -> Result<(Asset, Update), AssetError> {
    if current_key.public() != asset.current_key() {
        return Err(AssetError::WrongKey);
    }
    if asset.keys_in_chain().any(|k| *k == next_key) {
        return Err(AssetError::KeyReuse);
    }
    let vector = UpdateVector::new(u, ledger_ref, next_key);
    let sig = current_key.sign(vector.digest().as_bytes());
    let update = Update { vector, sig };
    let mut next = asset.clone();
    next.updates.push(update.clone());
    Ok((next, update))
}

/// Submit the latest update to `provider`, which must be the one named by
/// the previous vector.
pub fn register_update(
    asset: &Asset,
    provider: &mut Provider,
) -> Result<RegistrationReceipt, AssetError> {
    let reg = latest_registration(asset, provider.id())?;
    Ok(provider.submit_registration(reg)?)
}

/// The latest update's registration, checked against the intended provider.
pub fn latest_registration(asset: &Asset, provider: &LedgerId) -> Result<Registration, AssetError> {
    let j = asset.len();
    if j == 0 {
        return Err(AssetError::NothingToRegister);
    }
    let expected = asset.provider_for(j).ok_or(AssetError::MissingLedgerRef)?;
    if expected != provider {
        return Err(AssetError::WrongProvider {
            expected: expected.clone(),
            actual: provider.clone(),
        });
    }
    Ok(asset.registration(j).expect("j in range"))
}

/// After the receipt's epoch closes, fetch the proof and extend `P`.
pub fn collect_proof(
    asset: &Asset,
    provenance: &ProofOfProvenance,
    provider: &Provider,
    receipt: &RegistrationReceipt,
) -> Result<ProofOfProvenance, AssetError> {
    let entry = provider.fetch_entry(&receipt.key, receipt.epoch)?;
    append_proof(asset, provenance, entry)
}

/// Extend `P` with `entry` if it proves the asset's latest update.
pub fn append_proof(
    asset: &Asset,
    provenance: &ProofOfProvenance,
    entry: ProvenanceEntry,
) -> Result<ProofOfProvenance, AssetError> {
    let reg = asset
        .registration(asset.len())
        .ok_or(AssetError::NothingToRegister)?;
    if !entry.proves(&reg) {
        return Err(AssetError::ProofMismatch);
    }
    Ok(provenance.extended(entry))
}

/// Maps `(ledger, epoch)` to the signed root the verifier trusts.
pub trait RootResolver: Send + Sync {
    fn resolve(&self, ledger: &LedgerId, epoch: u64) -> Option<SignedRoot>;
}

/// Trust in roots fetched directly from providers whose operator keys are
/// known in advance.
#[derive(Debug, Clone, Default)]
pub struct DirectTrust {
    operators: BTreeMap<LedgerId, VerifyingKey>,
    roots: BTreeMap<(LedgerId, u64), SignedRoot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrustError {
    #[error("no operator key known for {0}")]
    UnknownLedger(LedgerId),
    #[error("root is not signed by the known operator")]
    BadOperator,
    #[error("a different root is already trusted for this epoch")]
    Conflict,
}

impl DirectTrust {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn trust_operator(&mut self, ledger: LedgerId, key: VerifyingKey) {
        self.operators.insert(ledger, key);
    }

    pub fn add_root(&mut self, root: SignedRoot) -> Result<(), TrustError> {
        let op = self
            .operators
            .get(&root.ledger_id)
            .ok_or_else(|| TrustError::UnknownLedger(root.ledger_id.clone()))?;
        if *op != root.operator || !root.signature_valid() {
            return Err(TrustError::BadOperator);
        }
        let slot = (root.ledger_id.clone(), root.epoch);
        match self.roots.get(&slot) {
            Some(existing) if *existing != root => Err(TrustError::Conflict),
            _ => {
                self.roots.insert(slot, root);
                Ok(())
            }
        }
    }

    /// Snapshot every closed root of the given providers.
    pub fn from_providers<'a>(providers: impl IntoIterator<Item = &'a Provider>) -> Self {
        let mut t = DirectTrust::new();
        for p in providers {
            t.trust_operator(p.id().clone(), p.operator_key().clone());
            for e in 0..p.open_epoch() {
                t.add_root(p.get_signed_root(e).expect("closed"))
                    .expect("own roots are consistent");
            }
        }
        t
    }

    pub fn roots(&self) -> impl Iterator<Item = &SignedRoot> {
        self.roots.values()
    }

    pub fn operators(&self) -> impl Iterator<Item = (&LedgerId, &VerifyingKey)> {
        self.operators.iter()
    }
}

impl RootResolver for DirectTrust {
    fn resolve(&self, ledger: &LedgerId, epoch: u64) -> Option<SignedRoot> {
        self.roots.get(&(ledger.clone(), epoch)).cloned()
    }
}

/// Recognised issuer keys plus the root resolver.
#[derive(Clone)]
pub struct IssuerPolicy {
    issuers: BTreeSet<VerifyingKey>,
    resolver: Arc<dyn RootResolver>,
}

impl fmt::Debug for IssuerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IssuerPolicy")
            .field("issuers", &self.issuers.len())
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("issuer policy needs at least one issuer key")]
pub struct EmptyPolicy;

impl IssuerPolicy {
    pub fn new(
        issuers: impl IntoIterator<Item = VerifyingKey>,
        resolver: Arc<dyn RootResolver>,
    ) -> Result<Self, EmptyPolicy> {
        let issuers: BTreeSet<_> = issuers.into_iter().collect();
        if issuers.is_empty() {
            return Err(EmptyPolicy);
        }
        Ok(IssuerPolicy { issuers, resolver })
    }

    pub fn recognises(&self, key: &VerifyingKey) -> bool {
        self.issuers.contains(key)
    }

    pub fn issuers(&self) -> impl Iterator<Item = &VerifyingKey> {
        self.issuers.iter()
    }

    pub fn resolver(&self) -> &dyn RootResolver {
        self.resolver.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Check {
    GenesisRef,
    GenesisAuth,
    ChainRule,
    KeyFreshness,
    ProvenanceLength,
    LedgerContinuity,
    RootResolution,
    Inclusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Failure {
    MissingLedgerRef,
    UnresolvedGenesisRef,
    InvalidGenesisSig,
    UnknownIssuer,
    InvalidBurnWitness,
    ChainBroken,
    KeyReuse,
    MissingRegistration,
    ExtraProof,
    WrongLedger,
    UnresolvedRoot,
    ProofMismatch,
    InvalidInclusion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub check: Check,
    /// Update index the finding concerns, when it concerns one.
    pub index: Option<usize>,
    pub failure: Option<Failure>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub findings: Vec<Finding>,
}

impl VerificationReport {
    fn record(&mut self, check: Check, index: Option<usize>, failure: Option<Failure>) {
        self.findings.push(Finding {
            check,
            index,
            failure,
        });
    }

    fn pass(&mut self, check: Check, index: Option<usize>) {
        self.record(check, index, None);
    }

    fn fail(&mut self, check: Check, index: Option<usize>, failure: Failure) {
        self.record(check, index, Some(failure));
    }

    pub fn failures(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.failure.is_some())
    }

    pub fn has(&self, failure: Failure) -> bool {
        self.failures().any(|f| f.failure == Some(failure))
    }

    /// All checks passed: the holder has possession.
    pub fn is_valid(&self) -> bool {
        self.failures().next().is_none()
    }

    /// Everything verifies except that the last update awaits its proof.
    pub fn pending_last(&self, asset: &Asset) -> bool {
        let mut fails = self.failures();
        matches!(
            (fails.next(), fails.next()),
            (Some(Finding { failure: Some(Failure::MissingRegistration), index: Some(j), .. }), None)
                if *j == asset.len()
        )
    }
}

/// Full possession check over `(A_n, P_n)`.
pub fn verify_provenance(
    asset: &Asset,
    provenance: &ProofOfProvenance,
    policy: &IssuerPolicy,
) -> VerificationReport {
    let mut report = VerificationReport::default();
    let resolver = policy.resolver();

    match &asset.genesis.ledger_ref {
        None => report.fail(Check::GenesisRef, Some(0), Failure::MissingLedgerRef),
        Some(r) if resolver.resolve(&r.ledger_id, r.epoch).is_none() => {
            report.fail(Check::GenesisRef, Some(0), Failure::UnresolvedGenesisRef)
        }
        Some(_) => report.pass(Check::GenesisRef, Some(0)),
    }

    match &asset.genesis_auth {
        GenesisAuth::Signature { issuer, sig } => {
            if !policy.recognises(issuer) {
                report.fail(Check::GenesisAuth, Some(0), Failure::UnknownIssuer);
            } else if !issuer.verify(asset.genesis.digest().as_bytes(), sig) {
                report.fail(Check::GenesisAuth, Some(0), Failure::InvalidGenesisSig);
            } else {
                report.pass(Check::GenesisAuth, Some(0));
            }
        }
        GenesisAuth::Burn(w) => {
            if !policy.recognises(&w.entry.voucher.bank) {
                report.fail(Check::GenesisAuth, Some(0), Failure::UnknownIssuer);
            } else if verify_burn(w, &asset.genesis).is_err()
                || !root_resolves(resolver, &w.board_root)
            {
                report.fail(Check::GenesisAuth, Some(0), Failure::InvalidBurnWitness);
            } else {
                report.pass(Check::GenesisAuth, Some(0));
            }
        }
    }

    let mut seen = HashSet::new();
    for j in 0..=asset.len() {
        let v = asset.vector(j).expect("in range");
        if seen.insert(&v.next_key) {
            report.pass(Check::KeyFreshness, Some(j));
        } else {
            report.fail(Check::KeyFreshness, Some(j), Failure::KeyReuse);
        }
    }

    for j in 1..=asset.len() {
        let signer = asset.signer_of(j).expect("in range");
        let u = &asset.updates[j - 1];
        if signer.verify(u.vector.digest().as_bytes(), &u.sig) {
            report.pass(Check::ChainRule, Some(j));
        } else {
            report.fail(Check::ChainRule, Some(j), Failure::ChainBroken);
        }
    }

    let n = asset.len();
    let m = provenance.len();
    if m == n {
        report.pass(Check::ProvenanceLength, None);
    }
    for j in (m + 1)..=n {
        report.fail(
            Check::ProvenanceLength,
            Some(j),
            Failure::MissingRegistration,
        );
    }
    for j in (n + 1)..=m {
        report.fail(Check::ProvenanceLength, Some(j), Failure::ExtraProof);
    }

    for (i, entry) in provenance.entries.iter().enumerate().take(n) {
        let j = i + 1;
        let expected = asset.provider_for(j);
        if expected == Some(&entry.root.ledger_id) {
            report.pass(Check::LedgerContinuity, Some(j));
        } else {
            report.fail(Check::LedgerContinuity, Some(j), Failure::WrongLedger);
        }

        if root_resolves(resolver, &entry.root) {
            report.pass(Check::RootResolution, Some(j));
        } else {
            report.fail(Check::RootResolution, Some(j), Failure::UnresolvedRoot);
        }

        let reg = asset.registration(j).expect("in range");
        if entry.proof.key != reg.trie_key() || entry.proof.value_digest != reg.leaf_value_digest()
        {
            report.fail(Check::Inclusion, Some(j), Failure::ProofMismatch);
        } else if !entry.proof.verify(&entry.root.root) {
            report.fail(Check::Inclusion, Some(j), Failure::InvalidInclusion);
        } else {
            report.pass(Check::Inclusion, Some(j));
        }
    }
    report
}

fn root_resolves(resolver: &dyn RootResolver, root: &SignedRoot) -> bool {
    root.signature_valid() && resolver.resolve(&root.ledger_id, root.epoch).as_ref() == Some(root)
}

/// Control check: `entry` proves the asset's latest update under a root
/// the policy trusts, at the ledger the previous vector names.
pub fn control_check(asset: &Asset, entry: &ProvenanceEntry, policy: &IssuerPolicy) -> bool {
    let Some(reg) = asset.registration(asset.len()) else {
        return false;
    };
    asset.provider_for(asset.len()) == Some(&entry.root.ledger_id)
        && entry.proves(&reg)
        && root_resolves(policy.resolver(), &entry.root)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TransferMode {
    SenderRegisters,
    RecipientRegisters,
}

/// What the sender hands over: `(F_j, P_j)` once registered, or
/// `(F_j, P_{j−1}, k_j, s(h(F_j), k_j))` for the recipient to register.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TransferBundle {
    Registered {
        asset: Asset,
        provenance: ProofOfProvenance,
    },
    Unregistered {
        asset: Asset,
        prior: ProofOfProvenance,
        registration: Registration,
    },
}

impl TransferBundle {
    pub fn asset(&self) -> &Asset {
        match self {
            TransferBundle::Registered { asset, .. }
            | TransferBundle::Unregistered { asset, .. } => asset,
        }
    }
}

/// Sign the transfer update to `recipient_key` with the sender's current key.
pub fn transfer(
    asset: &Asset,
    provenance: &ProofOfProvenance,
    sender_key: &SigningKeyPair,
    recipient_key: VerifyingKey,
    u: Vec<u8>,
    ledger_ref: Option<LedgerRef>,
) -> Result<TransferBundle, AssetError> {
    let (next, update) = make_update(asset, u, ledger_ref, recipient_key, sender_key)?;
    let registration = update.registration(sender_key.public());
    Ok(TransferBundle::Unregistered {
        asset: next,
        prior: provenance.clone(),
        registration,
    })
}

/// Sender-registered transfer, run end to end against one provider.
pub fn transfer_sender_registered(
    asset: &Asset,
    provenance: &ProofOfProvenance,
    sender_key: &SigningKeyPair,
    recipient_key: VerifyingKey,
    provider: &mut Provider,
) -> Result<TransferBundle, AssetError> {
    let TransferBundle::Unregistered { asset, prior, .. } = transfer(
        asset,
        provenance,
        sender_key,
        recipient_key,
        UpdateKind::Transfer.bytes(),
        None,
    )?
    else {
        unreachable!("transfer yields an unregistered bundle")
    };
    let receipt = register_update(&asset, provider)?;
    provider.close_epoch();
    let provenance = collect_proof(&asset, &prior, provider, &receipt)?;
    Ok(TransferBundle::Registered { asset, provenance })
}

/// Single-owner key store. Keys are retired once they sign an update.
#[derive(Debug, Default)]
pub struct Wallet {
    keys: BTreeMap<VerifyingKey, SigningKeyPair>,
    retired: BTreeSet<VerifyingKey>,
}

impl Wallet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fresh_key<R: CryptoRand + ?Sized>(&mut self, rng: &mut R) -> VerifyingKey {
        let k = SigningKeyPair::generate_standard(rng);
        let pk = k.public().clone();
        self.keys.insert(pk.clone(), k);
        pk
    }

    /// A live (not yet retired) key.
    pub fn key(&self, pk: &VerifyingKey) -> Option<&SigningKeyPair> {
        if self.retired.contains(pk) {
            return None;
        }
        self.keys.get(pk)
    }

    pub fn controls(&self, asset: &Asset) -> bool {
        self.key(asset.current_key()).is_some()
    }

    pub fn is_retired(&self, pk: &VerifyingKey) -> bool {
        self.retired.contains(pk)
    }

    /// `make_update` with the asset's current key, which is then retired.
    pub fn update(
        &mut self,
        asset: &Asset,
        u: Vec<u8>,
        ledger_ref: Option<LedgerRef>,
        next_key: VerifyingKey,
    ) -> Result<(Asset, Update), AssetError> {
        let current = asset.current_key().clone();
        let sk = self.key(&current).ok_or(AssetError::WrongKey)?;
        let out = make_update(asset, u, ledger_ref, next_key, sk)?;
        self.retired.insert(current);
        Ok(out)
    }
}

impl Canonical for LedgerRef {
    const TAG: u8 = tag::LEDGER_REF;
    fn encode_body(&self, w: &mut Writer) {
        w.str(self.ledger_id.as_str()).u64(self.epoch);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(LedgerRef {
            ledger_id: LedgerId(r.str()?),
            epoch: r.u64()?,
        })
    }
}

impl Canonical for UpdateVector {
    const TAG: u8 = tag::UPDATE_VECTOR;
    fn encode_body(&self, w: &mut Writer) {
        w.bytes(&self.u)
            .option(self.ledger_ref.as_ref())
            .item(&self.next_key);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(UpdateVector {
            u: r.bytes()?.to_vec(),
            ledger_ref: r.option()?,
            next_key: r.item()?,
        })
    }
}

impl Canonical for Update {
    const TAG: u8 = tag::UPDATE;
    fn encode_body(&self, w: &mut Writer) {
        w.item(&self.vector).item(&self.sig);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Update {
            vector: r.item()?,
            sig: r.item()?,
        })
    }
}

impl Canonical for GenesisAuth {
    const TAG: u8 = tag::GENESIS_AUTH;
    fn encode_body(&self, w: &mut Writer) {
        match self {
            GenesisAuth::Signature { issuer, sig } => {
                w.u8(0).item(issuer).item(sig);
            }
            GenesisAuth::Burn(b) => {
                w.u8(1).item(b.as_ref());
            }
        }
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match r.u8()? {
            0 => Ok(GenesisAuth::Signature {
                issuer: r.item()?,
                sig: r.item()?,
            }),
            1 => Ok(GenesisAuth::Burn(Box::new(r.item()?))),
            _ => Err(CodecError::Invalid("genesis auth kind")),
        }
    }
}

impl Canonical for Asset {
    const TAG: u8 = tag::ASSET;
    fn encode_body(&self, w: &mut Writer) {
        w.item(&self.genesis)
            .item(&self.genesis_auth)
            .seq(&self.updates);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Asset {
            genesis: r.item()?,
            genesis_auth: r.item()?,
            updates: r.seq()?,
        })
    }
}

impl Canonical for ProofOfProvenance {
    const TAG: u8 = tag::PROVENANCE;
    fn encode_body(&self, w: &mut Writer) {
        w.seq(&self.entries);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(ProofOfProvenance { entries: r.seq()? })
    }
}

/// Everything a verifier needs besides the asset: issuer keys, provider
/// operator keys and the roots it has fetched.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustBundle {
    pub issuers: Vec<VerifyingKey>,
    pub operators: Vec<(LedgerId, VerifyingKey)>,
    pub roots: Vec<SignedRoot>,
}

impl TrustBundle {
    pub fn policy(&self) -> Result<IssuerPolicy, String> {
        let mut trust = DirectTrust::new();
        for (l, k) in &self.operators {
            trust.trust_operator(l.clone(), k.clone());
        }
        for r in &self.roots {
            trust
                .add_root(r.clone())
                .map_err(|e| format!("{}@{}: {e}", r.ledger_id, r.epoch))?;
        }
        IssuerPolicy::new(self.issuers.iter().cloned(), Arc::new(trust)).map_err(|e| e.to_string())
    }
}

impl Canonical for TrustBundle {
    const TAG: u8 = tag::TRUST_BUNDLE;
    fn encode_body(&self, w: &mut Writer) {
        w.seq(&self.issuers);
        w.u32(self.operators.len() as u32);
        for (l, k) in &self.operators {
            w.item(l).item(k);
        }
        w.seq(&self.roots);
    }
    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let issuers = r.seq()?;
        let n = r.u32()? as usize;
        let mut operators = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            operators.push((r.item()?, r.item()?));
        }
        Ok(TrustBundle {
            issuers,
            operators,
            roots: r.seq()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rng;

    struct World {
        issuer: SigningKeyPair,
        provider: Provider,
        wallet: Wallet,
        rng: rand_chacha::ChaCha20Rng,
    }

    fn world(seed: u64) -> World {
        let mut rng = rng(seed);
        let issuer = SigningKeyPair::generate_standard(&mut rng);
        let mut provider = Provider::new(
            LedgerId::new("notary"),
            SigningKeyPair::generate_standard(&mut rng),
        );
        provider.close_epoch();
        World {
            issuer,
            provider,
            wallet: Wallet::new(),
            rng,
        }
    }

    impl World {
        fn policy(&self) -> IssuerPolicy {
            IssuerPolicy::new(
                [self.issuer.public().clone()],
                Arc::new(DirectTrust::from_providers([&self.provider])),
            )
            .unwrap()
        }

        fn genesis(&mut self) -> Asset {
            let k1 = self.wallet.fresh_key(&mut self.rng);
            let f0 = genesis_vector(Vec::new(), LedgerRef::new("notary", 0), k1.clone());
            let sig = self.issuer.sign(f0.digest().as_bytes());
            create_genesis(
                Vec::new(),
                LedgerRef::new("notary", 0),
                k1,
                GenesisAuth::Signature {
                    issuer: self.issuer.public().clone(),
                    sig,
                },
            )
            .unwrap()
        }

        fn step(&mut self, asset: &Asset, prov: &ProofOfProvenance) -> (Asset, ProofOfProvenance) {
            let next = self.wallet.fresh_key(&mut self.rng);
            let (a, _) = self
                .wallet
                .update(asset, UpdateKind::Rotate.bytes(), None, next)
                .unwrap();
            let receipt = register_update(&a, &mut self.provider).unwrap();
            self.provider.close_epoch();
            let p = collect_proof(&a, prov, &self.provider, &receipt).unwrap();
            (a, p)
        }
    }

    #[test]
    fn genesis_verifies_with_empty_provenance() {
        let mut w = world(1);
        let a = w.genesis();
        let report = verify_provenance(&a, &ProofOfProvenance::empty(), &w.policy());
        assert!(report.is_valid(), "{report:?}");
    }

    #[test]
    fn tampered_genesis_is_rejected() {
        let mut w = world(2);
        let k1 = w.wallet.fresh_key(&mut w.rng);
        let f0 = genesis_vector(b"x".to_vec(), LedgerRef::new("notary", 0), k1.clone());
        let sig = w.issuer.sign(f0.digest().as_bytes());
        let auth = GenesisAuth::Signature {
            issuer: w.issuer.public().clone(),
            sig,
        };
        let other = w.wallet.fresh_key(&mut w.rng);
        for (u, r, k) in [
            (b"y".to_vec(), LedgerRef::new("notary", 0), k1.clone()),
            (b"x".to_vec(), LedgerRef::new("notary", 1), k1.clone()),
            (b"x".to_vec(), LedgerRef::new("notaries", 0), k1.clone()),
            (b"x".to_vec(), LedgerRef::new("notary", 0), other),
        ] {
            assert_eq!(
                create_genesis(u, r, k, auth.clone()).unwrap_err(),
                AssetError::InvalidGenesisSig
            );
        }
    }

    #[test]
    fn three_updates_verify() {
        let mut w = world(3);
        let a0 = w.genesis();
        let (mut a, mut p) = (a0, ProofOfProvenance::empty());
        for _ in 0..3 {
            (a, p) = w.step(&a, &p);
        }
        assert_eq!(p.len(), 3);
        let report = verify_provenance(&a, &p, &w.policy());
        assert!(report.is_valid(), "{report:?}");
    }

    #[test]
    fn truncated_provenance_flags_last_update() {
        let mut w = world(4);
        let a0 = w.genesis();
        let (a, p) = w.step(&a0, &ProofOfProvenance::empty());
        let (a, mut p) = w.step(&a, &p);
        p.entries.pop();
        let report = verify_provenance(&a, &p, &w.policy());
        assert!(report.has(Failure::MissingRegistration));
        assert!(report.pending_last(&a));
    }

    #[test]
    fn rogue_root_is_unresolved() {
        let mut w = world(5);
        let a0 = w.genesis();
        let (a, mut p) = w.step(&a0, &ProofOfProvenance::empty());
        let rogue = SigningKeyPair::generate_standard(&mut w.rng);
        let e = &mut p.entries[0];
        e.root = SignedRoot::sign(e.root.ledger_id.clone(), e.root.epoch, e.root.root, &rogue);
        let report = verify_provenance(&a, &p, &w.policy());
        assert!(report.has(Failure::UnresolvedRoot));
    }

    #[test]
    fn stale_key_is_wrong_key() {
        let mut w = world(6);
        let a0 = w.genesis();
        let k1 = a0.current_key().clone();
        let stale = w.wallet.keys.get(&k1).unwrap().clone();
        let (a1, _) = w.step(&a0, &ProofOfProvenance::empty());
        let fresh = w.wallet.fresh_key(&mut w.rng);
        assert_eq!(
            make_update(&a1, vec![], None, fresh, &stale).unwrap_err(),
            AssetError::WrongKey
        );
        let fresh = w.wallet.fresh_key(&mut w.rng);
        assert_eq!(
            w.wallet.update(&a0, vec![], None, fresh).unwrap_err(),
            AssetError::WrongKey
        );
    }

    #[test]
    fn wrong_provider_is_rejected() {
        let mut w = world(7);
        let a0 = w.genesis();
        let next = w.wallet.fresh_key(&mut w.rng);
        let (a1, _) = w.wallet.update(&a0, vec![], None, next).unwrap();
        let mut other = Provider::new(
            LedgerId::new("elsewhere"),
            SigningKeyPair::generate_standard(&mut w.rng),
        );
        assert!(matches!(
            register_update(&a1, &mut other),
            Err(AssetError::WrongProvider { .. })
        ));
    }

    #[test]
    fn reused_next_key_is_rejected() {
        let mut w = world(8);
        let a0 = w.genesis();
        let k1 = a0.current_key().clone();
        assert_eq!(
            w.wallet.update(&a0, vec![], None, k1).unwrap_err(),
            AssetError::KeyReuse
        );
    }

    #[test]
    fn competing_spends_have_one_winner() {
        let mut w = world(9);
        let a0 = w.genesis();
        let k1 = w.wallet.key(a0.current_key()).unwrap().clone();
        let bob = w.wallet.fresh_key(&mut w.rng);
        let carol = w.wallet.fresh_key(&mut w.rng);
        let (to_bob, _) = make_update(&a0, UpdateKind::Transfer.bytes(), None, bob, &k1).unwrap();
        let (to_carol, _) =
            make_update(&a0, UpdateKind::Transfer.bytes(), None, carol, &k1).unwrap();
        assert!(register_update(&to_bob, &mut w.provider).is_ok());
        assert_eq!(
            register_update(&to_carol, &mut w.provider).unwrap_err(),
            AssetError::Ledger(LedgerError::DuplicateKey { first_epoch: 1 })
        );
    }

    #[test]
    fn recipient_registration_gives_control_before_possession() {
        let mut w = world(10);
        let a0 = w.genesis();
        let sender = w.wallet.key(a0.current_key()).unwrap().clone();
        let bob = w.wallet.fresh_key(&mut w.rng);
        let bundle = transfer(
            &a0,
            &ProofOfProvenance::empty(),
            &sender,
            bob,
            UpdateKind::Transfer.bytes(),
            None,
        )
        .unwrap();
        let TransferBundle::Unregistered {
            asset,
            prior,
            registration,
        } = bundle
        else {
            panic!()
        };
        let receipt = w.provider.submit_registration(registration).unwrap();
        w.provider.close_epoch();
        let entry = w.provider.fetch_entry(&receipt.key, receipt.epoch).unwrap();
        let policy = w.policy();
        assert!(control_check(&asset, &entry, &policy));
        let before = verify_provenance(&asset, &prior, &policy);
        assert!(before.pending_last(&asset));
        let full = append_proof(&asset, &prior, entry).unwrap();
        assert!(verify_provenance(&asset, &full, &policy).is_valid());
    }

    #[test]
    fn sender_registered_transfer_verifies() {
        let mut w = world(11);
        let a0 = w.genesis();
        let sender = w.wallet.key(a0.current_key()).unwrap().clone();
        let bob = w.wallet.fresh_key(&mut w.rng);
        let b = transfer_sender_registered(
            &a0,
            &ProofOfProvenance::empty(),
            &sender,
            bob.clone(),
            &mut w.provider,
        )
        .unwrap();
        let TransferBundle::Registered { asset, provenance } = b else {
            panic!()
        };
        assert_eq!(asset.current_key(), &bob);
        assert!(verify_provenance(&asset, &provenance, &w.policy()).is_valid());
    }

    #[test]
    fn update_kinds_parse() {
        assert_eq!(UpdateKind::parse(b"REDEEM"), Some(UpdateKind::Redeem));
        assert_eq!(UpdateKind::parse(b"REDEEM:acct"), Some(UpdateKind::Redeem));
        assert_eq!(UpdateKind::parse(b"REDEEMED"), None);
        assert_eq!(UpdateKind::parse(b""), None);
    }

    #[test]
    fn canonical_round_trip() {
        let mut w = world(12);
        let a0 = w.genesis();
        let (a, p) = w.step(&a0, &ProofOfProvenance::empty());
        assert_eq!(Asset::from_canonical(&a.to_canonical()).unwrap(), a);
        assert_eq!(
            ProofOfProvenance::from_canonical(&p.to_canonical()).unwrap(),
            p
        );
    }

    #[test]
    fn empty_policy_is_refused() {
        assert!(IssuerPolicy::new([], Arc::new(DirectTrust::new())).is_err());
    }
}
