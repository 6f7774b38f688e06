use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha20Rng;
use uso_core::anchor::{verify_stacked, AnchorRoot, StackedProof};
use uso_core::asset::{
    append_proof, create_genesis, genesis_vector, transfer, verify_provenance, Asset, GenesisAuth, LedgerRef,
    ProofOfProvenance, TransferBundle, UpdateKind, UpdateVector,
};
use uso_core::crypto::{SigningKeyPair, VerifyingKey};
use uso_core::flow::Flow;
use uso_core::ledger::{LedgerError, SignedRoot};
use uso_core::mint::{BlindInitRequest, BurnSession, ChaumSession, Funding, Voucher};
use uso_core::trie::{ProofOfInclusion, RootDigest};

use super::{Command, Ctx, RootBook, Tag};
use crate::scenario::Mode;
use crate::wire::{Message, ProviderReply, ProviderRequest};

/// An asset together with its proof of provenance.
#[derive(Debug, Clone)]
pub struct Holding {
    pub asset: Asset,
    pub provenance: ProofOfProvenance,
}

enum Withdrawal {
    Chaum { chaum: Option<ChaumSession> },
    Zkp { board: String, burn: Option<BurnSession> },
}

enum Session {
    Withdraw { handle: String, bank: String, amount: u64, f0: UpdateVector, how: Withdrawal },
    Receive { handle: String, from: String, key: VerifyingKey },
    RecvRegistering { handle: String, from: String, asset: Asset, prior: ProofOfProvenance },
    SendRegistering { handle: String, to: String, asset: Asset, prior: ProofOfProvenance },
    SendAwait { handle: String },
    Stack(StackBuild),
}

struct StackBuild {
    handle: String,
    through: Vec<String>,
    level: usize,
    top: AnchorRoot,
    /// `(committed, proof)` pairs collected from the top down.
    layers: Vec<(SignedRoot, ProofOfInclusion)>,
    expect: VerifyingKey,
}

pub struct ConsumerActor {
    pub name: String,
    rng: ChaCha20Rng,
    keys: BTreeMap<VerifyingKey, SigningKeyPair>,
    retired: BTreeSet<VerifyingKey>,
    pub book: RootBook,
    pub double_spender: bool,
    pub holdings: BTreeMap<String, Holding>,
    /// Every asset this consumer withdrew, with its withdrawal session.
    pub withdrawn: Vec<(u64, Asset)>,
    pub vouchers: BTreeMap<String, Voucher>,
    pub stacks: BTreeMap<String, (StackedProof, RootDigest)>,
    sessions: BTreeMap<u64, Session>,
    pending_funding: BTreeMap<u64, Funding>,
}

pub(crate) fn ledger_code(e: &LedgerError) -> &'static str {
    match e {
        LedgerError::DuplicateKey { .. } => "DUPLICATE_KEY",
        LedgerError::InvalidSignature => "INVALID_SIGNATURE",
        LedgerError::KeyNotFound => "KEY_NOT_FOUND",
        LedgerError::KeyPresent => "KEY_PRESENT",
        LedgerError::EpochOpen(_) => "EPOCH_OPEN",
        LedgerError::UnknownEpoch(_) => "UNKNOWN_EPOCH",
    }
}

pub(crate) fn transfer_flow(mode: Mode) -> Flow {
    match mode {
        Mode::Sender => Flow::TransferSender,
        Mode::Recipient => Flow::TransferRecipient,
    }
}

impl ConsumerActor {
    pub fn new(name: &str, rng: ChaCha20Rng, book: RootBook, double_spender: bool) -> Self {
        ConsumerActor {
            name: name.to_string(),
            rng,
            keys: BTreeMap::new(),
            retired: BTreeSet::new(),
            book,
            double_spender,
            holdings: BTreeMap::new(),
            withdrawn: Vec::new(),
            vouchers: BTreeMap::new(),
            stacks: BTreeMap::new(),
            sessions: BTreeMap::new(),
            pending_funding: BTreeMap::new(),
        }
    }

    fn fresh_key(&mut self) -> VerifyingKey {
        let k = SigningKeyPair::generate_standard(&mut self.rng);
        let pk = k.public().clone();
        self.keys.insert(pk.clone(), k);
        pk
    }

    pub fn on_command(&mut self, cmd: Command, ctx: &mut Ctx) -> Result<(), String> {
        match cmd {
            Command::WithdrawChaum { bank, amount, ledger, handle, voucher } => {
                self.start_withdrawal(bank, amount, ledger, handle, voucher, None, ctx)
            }
            Command::WithdrawZkp { bank, board, amount, ledger, handle, voucher } => {
                self.start_withdrawal(bank, amount, ledger, handle, voucher, Some(board), ctx)
            }
            Command::Request { from, handle, mode } => {
                let key = self.fresh_key();
                let session = ctx.new_session();
                let msg = Message::PayTo { reference: handle.clone(), key: key.clone(), mode, redeem: false };
                ctx.send(&from, session, Tag::step(transfer_flow(mode), 1), msg);
                self.sessions.insert(session, Session::Receive { handle, from, key });
                Ok(())
            }
            Command::Gossip { to } => {
                ctx.send(&to, 0, Tag::NONE, Message::Gossip { roots: self.book.roots() });
                Ok(())
            }
            Command::Stack { handle, through } => self.start_stack(handle, through, ctx),
            other => Err(format!("consumer cannot {other:?}")),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn start_withdrawal(
        &mut self,
        bank: String,
        amount: u64,
        ledger: String,
        handle: String,
        voucher: Option<String>,
        board: Option<String>,
        ctx: &mut Ctx,
    ) -> Result<(), String> {
        let epoch = self.book.latest_epoch(&ledger).ok_or_else(|| format!("no root known for {ledger}"))?;
        let funding = match &voucher {
            Some(v) => Some(Funding::Voucher(self.vouchers.remove(v).ok_or_else(|| format!("no voucher {v}"))?)),
            None => None,
        };
        let k1 = self.fresh_key();
        let f0 = genesis_vector(UpdateKind::Mint.bytes(), LedgerRef::new(ledger, epoch), k1);
        let session = ctx.new_session();
        let how = match board {
            None => Withdrawal::Chaum { chaum: None },
            Some(board) => Withdrawal::Zkp { board, burn: None },
        };
        let flow = match how {
            Withdrawal::Chaum { .. } => Flow::ChaumWithdraw,
            Withdrawal::Zkp { .. } => Flow::ZkpWithdraw,
        };
        self.sessions.insert(session, Session::Withdraw { handle, bank: bank.clone(), amount, f0, how });
        match funding {
            Some(f) => self.fund(session, f, ctx),
            None => {
                let msg = Message::AuthRequest { account: self.name.clone(), amount };
                ctx.send(&bank, session, Tag::aux(Some(flow)), msg);
            }
        }
        Ok(())
    }

    /// Funding in hand: open the numbered part of the withdrawal.
    fn fund(&mut self, session: u64, funding: Funding, ctx: &mut Ctx) {
        let Some(Session::Withdraw { bank, amount, f0, how, .. }) = self.sessions.get_mut(&session) else {
            return;
        };
        match how {
            Withdrawal::Chaum { .. } => {
                let request = BlindInitRequest { session: rand::RngCore::next_u64(&mut self.rng), denomination: *amount };
                let bank = bank.clone();
                self.pending_funding.insert(session, funding);
                ctx.send(&bank, session, Tag::step(Flow::ChaumWithdraw, 1), Message::BlindInit { request });
            }
            Withdrawal::Zkp { board, burn } => {
                let committer = SigningKeyPair::generate_standard(&mut self.rng);
                let s = BurnSession::start(f0.clone(), &committer, &mut self.rng);
                let msg = Message::BurnRequest { funding, commitment: s.commitment.clone(), board: board.clone() };
                *burn = Some(s);
                let bank = bank.clone();
                ctx.send(&bank, session, Tag::step(Flow::ZkpWithdraw, 3), msg);
            }
        }
    }

    fn start_stack(&mut self, handle: String, through: Vec<String>, ctx: &mut Ctx) -> Result<(), String> {
        let holding = self.holdings.get(&handle).ok_or_else(|| format!("{} holds no {handle}", self.name))?;
        let entry = holding.provenance.entries.last().ok_or("asset has no registered updates")?;
        let top_name = through.last().ok_or("stack needs at least one ledger")?;
        let top = self
            .book
            .anchors
            .get(top_name)
            .and_then(|m| m.values().next_back())
            .cloned()
            .ok_or_else(|| format!("no anchor seen from {top_name}"))?;
        let level = through.len() - 1;
        let expect = self.operator_below(&through, level, &entry.root.ledger_id.0, ctx)?;
        let session = ctx.new_session();
        ctx.send(&through[level], session, Tag::NONE, Message::ProveAnchored { operator: expect.clone(), t: top.t() });
        self.sessions.insert(session, Session::Stack(StackBuild { handle, through, level, top, layers: Vec::new(), expect }));
        Ok(())
    }

    /// Key whose root is committed in `through[level]`.
    fn operator_below(&self, through: &[String], level: usize, ledger: &str, ctx: &Ctx) -> Result<VerifyingKey, String> {
        if level == 0 {
            ctx.dir.operators.get(ledger).cloned().ok_or_else(|| format!("unknown ledger {ledger}"))
        } else {
            let below = &through[level - 1];
            ctx.dir.dlts.get(below).map(|d| d.0.clone()).ok_or_else(|| format!("unknown ledger {below}"))
        }
    }

    pub fn on_message(&mut self, from: &str, session: u64, tag: Tag, msg: Message, ctx: &mut Ctx) {
        match msg {
            Message::PublishRoot { root } => self.book.learn(root, ctx),
            Message::Gossip { roots } => roots.into_iter().for_each(|r| self.book.learn(r, ctx)),
            Message::Evidence { evidence } => self.book.record_evidence(evidence, ctx),
            Message::AnchorPublished { anchor } => self.book.learn_anchor(from, anchor, ctx),
            Message::VoucherIssued { reference, voucher } => {
                ctx.event("VOUCHER", reference.clone());
                self.vouchers.insert(reference, voucher);
            }
            Message::AuthGrant { auth } => self.fund(session, Funding::Authorisation(auth), ctx),
            Message::BlindOffer { response } => self.on_blind_offer(session, response, ctx),
            Message::BlindSigned { sig } => {
                let Some(Session::Withdraw { handle, f0, how: Withdrawal::Chaum { chaum }, .. }) =
                    self.sessions.remove(&session)
                else {
                    return ctx.event("UNEXPECTED", "blind_signed");
                };
                let auth = chaum.ok_or("no blinding session".to_string()).and_then(|c| c.finish(&sig).map_err(|e| e.to_string()));
                self.finish_withdrawal(session, handle, f0, auth, ctx);
            }
            Message::BurnPosted { entry, proof } => {
                let Some(Session::Withdraw { handle, f0, how: Withdrawal::Zkp { burn, .. }, .. }) =
                    self.sessions.remove(&session)
                else {
                    return ctx.event("UNEXPECTED", "burn_posted");
                };
                self.book.learn(proof.root.clone(), ctx);
                let auth = burn
                    .ok_or("no burn session".to_string())
                    .and_then(|b| b.finish(entry, proof).map_err(|e| e.to_string()))
                    .map(|w| GenesisAuth::Burn(Box::new(w)));
                self.finish_withdrawal(session, handle, f0, auth, ctx);
            }
            Message::PayTo { reference, key, mode, redeem } => self.on_pay_to(from, session, tag, reference, key, mode, redeem, ctx),
            Message::Handoff { reference, bundle } => self.on_handoff(from, session, reference, bundle, ctx),
            Message::ProviderReply { reply } => self.on_provider_reply(session, reply, ctx),
            Message::Registered { reference, entry } => {
                self.book.learn(entry.root.clone(), ctx);
                if let Some(Session::SendAwait { handle }) = self.sessions.remove(&session) {
                    ctx.event("SENT", handle);
                } else {
                    ctx.event("UNEXPECTED", format!("registered {reference}"));
                }
            }
            Message::AnchorProof { root, t, proof } => self.on_anchor_proof(session, root, t, proof, ctx),
            Message::Refused { reference, code, detail } => {
                self.sessions.remove(&session);
                ctx.event("REFUSED", format!("{reference}: {code} {detail}"));
            }
            other => ctx.event("UNEXPECTED", other.kind()),
        }
    }

    fn on_blind_offer(&mut self, session: u64, response: uso_core::mint::BlindInitResponse, ctx: &mut Ctx) {
        let Some(funding) = self.pending_funding.remove(&session) else {
            return ctx.event("UNEXPECTED", "blind_offer");
        };
        let Some(Session::Withdraw { bank, amount, f0, how: Withdrawal::Chaum { chaum }, .. }) = self.sessions.get_mut(&session) else {
            return ctx.event("UNEXPECTED", "blind_offer");
        };
        match ChaumSession::start(*amount, &response, f0, &mut self.rng) {
            Ok(s) => {
                let msg = Message::Withdraw { funding, blinded: s.blinded.clone() };
                *chaum = Some(s);
                let bank = bank.clone();
                ctx.send(&bank, session, Tag::step(Flow::ChaumWithdraw, 5), msg);
            }
            Err(e) => {
                self.sessions.remove(&session);
                ctx.event("WITHDRAW_FAILED", e.to_string());
            }
        }
    }

    fn finish_withdrawal(&mut self, session: u64, handle: String, f0: UpdateVector, auth: Result<GenesisAuth, String>, ctx: &mut Ctx) {
        let asset = auth.and_then(|a| {
            let r = f0.ledger_ref.clone().expect("genesis names a ledger");
            create_genesis(f0.u.clone(), r, f0.next_key.clone(), a).map_err(|e| e.to_string())
        });
        match asset {
            Ok(asset) => {
                self.withdrawn.push((session, asset.clone()));
                self.holdings.insert(handle.clone(), Holding { asset, provenance: ProofOfProvenance::empty() });
                ctx.event("WITHDRAWN", handle);
            }
            Err(e) => ctx.event("WITHDRAW_FAILED", format!("{handle}: {e}")),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_pay_to(
        &mut self,
        from: &str,
        session: u64,
        tag: Tag,
        reference: String,
        key: VerifyingKey,
        mode: Mode,
        redeem: bool,
        ctx: &mut Ctx,
    ) {
        let Some(h) = self.holdings.get(&reference).cloned() else {
            return ctx.refuse(from, session, tag, &reference, "NO_SUCH_ASSET", "");
        };
        let current = h.asset.current_key().clone();
        let spent = self.retired.contains(&current) && !self.double_spender;
        let Some(sk) = self.keys.get(&current).filter(|_| !spent) else {
            return ctx.refuse(from, session, tag, &reference, "NOT_CONTROLLED", "");
        };
        let kind = if redeem { UpdateKind::Redeem } else { UpdateKind::Transfer };
        let bundle = match transfer(&h.asset, &h.provenance, sk, key, kind.bytes(), None) {
            Ok(b) => b,
            Err(e) => return ctx.refuse(from, session, tag, &reference, "TRANSFER_FAILED", e.to_string()),
        };
        if !self.double_spender {
            self.retired.insert(current);
            self.holdings.remove(&reference);
        }
        if redeem || mode == Mode::Recipient {
            ctx.send(from, session, tag.reply(), Message::Handoff { reference: reference.clone(), bundle });
            self.sessions.insert(session, Session::SendAwait { handle: reference });
            return;
        }
        let TransferBundle::Unregistered { asset, prior, registration } = bundle else {
            unreachable!("transfer yields an unregistered bundle")
        };
        let Some(provider) = asset.provider_for(asset.len()).map(|l| l.0.clone()) else {
            return ctx.event("TRANSFER_FAILED", "no ledger for update");
        };
        ctx.send(&provider, session, tag.reply(), Message::Provider { request: ProviderRequest::Submit { registration } });
        self.sessions.insert(session, Session::SendRegistering { handle: reference, to: from.to_string(), asset, prior });
    }

    fn on_handoff(&mut self, from: &str, session: u64, reference: String, bundle: TransferBundle, ctx: &mut Ctx) {
        let Some(Session::Receive { handle, key, from: expected }) = self.sessions.remove(&session) else {
            return ctx.event("UNEXPECTED", format!("handoff {reference}"));
        };
        if from != expected {
            return ctx.event("UNEXPECTED", format!("handoff {reference} from {from}"));
        }
        let flow = match &bundle {
            TransferBundle::Registered { .. } => Flow::TransferSender,
            TransferBundle::Unregistered { .. } => Flow::TransferRecipient,
        };
        if bundle.asset().latest_vector().next_key != key {
            ctx.event("INVALID_ASSET", format!("{handle}: not addressed to the requested key"));
            return ctx.refuse(from, session, Tag::aux(Some(flow)), &reference, "INVALID_ASSET", "wrong key");
        }
        match bundle {
            TransferBundle::Registered { asset, provenance } => {
                self.book.learn_from(&asset, &provenance, ctx);
                let report = verify_provenance(&asset, &provenance, &self.book.policy(ctx.dir));
                if report.is_valid() {
                    self.holdings.insert(handle.clone(), Holding { asset, provenance });
                    ctx.event("RECEIVED", handle);
                } else {
                    ctx.event("INVALID_ASSET", format!("{handle}: {}", failures(&report)));
                }
            }
            TransferBundle::Unregistered { asset, prior, registration } => {
                self.book.learn_from(&asset, &prior, ctx);
                let report = verify_provenance(&asset, &prior, &self.book.policy(ctx.dir));
                let matches = asset.registration(asset.len()).as_ref() == Some(&registration);
                let provider = asset.provider_for(asset.len()).map(|l| l.0.clone());
                match provider {
                    Some(provider) if matches && report.pending_last(&asset) => {
                        let msg = Message::Provider { request: ProviderRequest::Submit { registration } };
                        ctx.send(&provider, session, Tag::step(flow, 3), msg);
                        self.sessions.insert(session, Session::RecvRegistering { handle, from: from.to_string(), asset, prior });
                    }
                    _ => {
                        ctx.event("INVALID_ASSET", format!("{handle}: {}", failures(&report)));
                        ctx.refuse(from, session, Tag::aux(Some(flow)), &reference, "INVALID_ASSET", "");
                    }
                }
            }
        }
    }

    fn on_provider_reply(&mut self, session: u64, reply: ProviderReply, ctx: &mut Ctx) {
        match (self.sessions.remove(&session), reply) {
            (Some(Session::SendRegistering { handle, to, asset, prior }), ProviderReply::Included { entry }) => {
                self.book.learn(entry.root.clone(), ctx);
                match append_proof(&asset, &prior, entry) {
                    Ok(provenance) => {
                        let bundle = TransferBundle::Registered { asset, provenance };
                        ctx.send(&to, session, Tag::step(Flow::TransferSender, 4), Message::Handoff { reference: handle.clone(), bundle });
                        ctx.event("SENT", handle);
                    }
                    Err(e) => ctx.event("TRANSFER_FAILED", format!("{handle}: {e}")),
                }
            }
            (Some(Session::RecvRegistering { handle, from, asset, prior }), ProviderReply::Included { entry }) => {
                self.book.learn(entry.root.clone(), ctx);
                match append_proof(&asset, &prior, entry.clone()) {
                    Ok(provenance) => {
                        self.holdings.insert(handle.clone(), Holding { asset, provenance });
                        let msg = Message::Registered { reference: handle.clone(), entry };
                        ctx.send(&from, session, Tag::step(Flow::TransferRecipient, 5), msg);
                        ctx.event("RECEIVED", handle);
                    }
                    Err(e) => ctx.event("TRANSFER_FAILED", format!("{handle}: {e}")),
                }
            }
            (
                Some(Session::SendRegistering { handle, to, .. } | Session::RecvRegistering { handle, from: to, .. }),
                ProviderReply::Rejected { error },
            ) => {
                let code = ledger_code(&error);
                ctx.event(code, format!("{handle}: {error}"));
                ctx.refuse(&to, session, Tag::NONE, &handle, code, error.to_string());
            }
            (Some(Session::Stack(build)), ProviderReply::Included { entry }) => self.finish_stack(session, build, entry.proof, ctx),
            (Some(Session::Stack(build)), ProviderReply::Rejected { error }) => {
                ctx.event("STACK_FAILED", format!("{}: {error}", build.handle));
            }
            (s, r) => {
                if let Some(s) = s {
                    self.sessions.insert(session, s);
                }
                ctx.event("UNEXPECTED", format!("{r:?}").chars().take(40).collect::<String>());
            }
        }
    }

    fn on_anchor_proof(&mut self, session: u64, root: SignedRoot, t: u64, proof: ProofOfInclusion, ctx: &mut Ctx) {
        let Some(Session::Stack(mut build)) = self.sessions.remove(&session) else {
            return ctx.event("UNEXPECTED", "anchor_proof");
        };
        if root.operator != build.expect || !root.signature_valid() {
            return ctx.event("STACK_FAILED", format!("{}: wrong root at t={t}", build.handle));
        }
        build.layers.push((root.clone(), proof));
        let Some(h) = self.holdings.get(&build.handle) else {
            return ctx.event("STACK_FAILED", format!("{}: asset gone", build.handle));
        };
        let entry = h.provenance.entries.last().expect("checked when the stack started").clone();
        let key = h.asset.registration(h.asset.len()).expect("registered").key;
        if build.level > 0 {
            build.level -= 1;
            match self.operator_below(&build.through, build.level, &entry.root.ledger_id.0, ctx) {
                Ok(expect) => build.expect = expect,
                Err(e) => return ctx.event("STACK_FAILED", e),
            }
            let msg = Message::ProveAnchored { operator: build.expect.clone(), t: root.epoch };
            ctx.send(&build.through[build.level], session, Tag::NONE, msg);
            self.sessions.insert(session, Session::Stack(build));
        } else if root == entry.root {
            self.finish_stack(session, build, entry.proof, ctx);
        } else {
            let msg = Message::Provider { request: ProviderRequest::FetchEntry { key, epoch: root.epoch } };
            ctx.send(&entry.root.ledger_id.0, session, Tag::NONE, msg);
            self.sessions.insert(session, Session::Stack(build));
        }
    }

    fn finish_stack(&mut self, _session: u64, build: StackBuild, base: ProofOfInclusion, ctx: &mut Ctx) {
        let mut stack = StackedProof::new(base);
        for (committed, proof) in build.layers.into_iter().rev() {
            stack.push(committed, proof);
        }
        let top = build.top.digest();
        if verify_stacked(&stack, &top) {
            ctx.event("STACK_OK", build.handle.clone());
        } else {
            ctx.event("STACK_FAILED", build.handle.clone());
        }
        self.stacks.insert(build.handle, (stack, top));
    }
}

fn failures(report: &uso_core::asset::VerificationReport) -> String {
    report.failures().map(|f| format!("{:?}", f.failure.expect("failures carry a cause"))).collect::<Vec<_>>().join(",")
}
