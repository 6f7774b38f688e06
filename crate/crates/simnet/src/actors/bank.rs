use std::collections::BTreeMap;

use rand_chacha::ChaCha20Rng;
use uso_core::asset::TransferBundle;
use uso_core::codec::Canonical;
use uso_core::flow::Flow;
use uso_core::ledger::{ProvenanceEntry, RegistrationReceipt};
use uso_core::mint::{Bank, BulletinEntry, MintError, PendingRedeem, RedeemOutcome, RedeemTarget};

use super::consumer::ledger_code;
use super::{Command, Ctx, RootBook, Tag};
use crate::scenario::Mode;
use crate::wire::{Message, ProviderReply, ProviderRequest};

enum Redeem {
    AwaitHandoff { holder: String, target: RedeemTarget, voucher_handle: Option<String> },
    Registering { holder: String, handle: String, pending: Box<PendingRedeem>, voucher_handle: Option<String> },
}

pub struct BankActor {
    pub name: String,
    pub bank: Bank,
    rng: ChaCha20Rng,
    pub book: RootBook,
    minter: Option<String>,
    /// Withdrawal session → consumer being served.
    relayed: BTreeMap<u64, String>,
    posting: BTreeMap<u64, (String, BulletinEntry)>,
    redeems: BTreeMap<u64, Redeem>,
}

impl BankActor {
    pub fn new(name: &str, bank: Bank, rng: ChaCha20Rng, book: RootBook, minter: Option<String>) -> Self {
        BankActor {
            name: name.to_string(),
            bank,
            rng,
            book,
            minter,
            relayed: BTreeMap::new(),
            posting: BTreeMap::new(),
            redeems: BTreeMap::new(),
        }
    }

    pub fn on_command(&mut self, cmd: Command, ctx: &mut Ctx) -> Result<(), String> {
        match cmd {
            Command::Redeem { holder, handle, target, voucher_handle } => {
                let key = self.bank.redeem_key(&mut self.rng);
                let session = ctx.new_session();
                let msg = Message::PayTo { reference: handle, key, mode: Mode::Recipient, redeem: true };
                ctx.send(&holder, session, Tag::step(Flow::Redeem, 1), msg);
                self.redeems.insert(session, Redeem::AwaitHandoff { holder, target, voucher_handle });
                Ok(())
            }
            Command::Gossip { to } => {
                ctx.send(&to, 0, Tag::NONE, Message::Gossip { roots: self.book.roots() });
                Ok(())
            }
            other => Err(format!("bank cannot {other:?}")),
        }
    }

    fn minter(&self, ctx: &mut Ctx, from: &str, session: u64, tag: Tag) -> Option<String> {
        if self.minter.is_none() {
            ctx.refuse(from, session, tag, "", "NO_MINTER", "bank has no minter");
        }
        self.minter.clone()
    }

    /// Forward a withdrawal message, keeping the copy a relay sees.
    fn relay(&mut self, to: &str, session: u64, tag: Tag, msg: Message, ctx: &mut Ctx) {
        self.bank.relay(&msg.encode());
        ctx.send(to, session, tag, msg);
    }

    pub fn on_message(&mut self, from: &str, session: u64, tag: Tag, msg: Message, ctx: &mut Ctx) {
        match msg {
            Message::PublishRoot { root } => self.book.learn(root, ctx),
            Message::Gossip { roots } => roots.into_iter().for_each(|r| self.book.learn(r, ctx)),
            Message::Evidence { evidence } => self.book.record_evidence(evidence, ctx),
            Message::AnchorPublished { anchor } => self.book.learn_anchor(from, anchor, ctx),
            Message::AuthRequest { account, amount } => match self.bank.authorise(&account, amount) {
                Ok(auth) => ctx.send(from, session, tag, Message::AuthGrant { auth }),
                Err(e) => {
                    ctx.event("AUTH_REFUSED", format!("{account}: {e}"));
                    ctx.refuse(from, session, tag, &account, "AUTH_REFUSED", e.to_string());
                }
            },
            Message::BlindInit { request } => {
                let Some(minter) = self.minter(ctx, from, session, tag) else { return };
                self.relayed.insert(session, from.to_string());
                self.relay(&minter, session, tag.reply(), Message::BlindInit { request }, ctx);
            }
            Message::BlindOffer { response } => {
                if let Some(c) = self.relayed.get(&session).cloned() {
                    self.relay(&c, session, tag.reply(), Message::BlindOffer { response }, ctx);
                }
            }
            Message::Withdraw { funding, blinded } => {
                let Some(minter) = self.minter(ctx, from, session, tag) else { return };
                self.bank.relay(&blinded.to_canonical());
                match self.bank.issue_voucher(&funding) {
                    Ok(voucher) => {
                        self.relayed.insert(session, from.to_string());
                        ctx.send(&minter, session, tag.reply(), Message::MintRequest { voucher, blinded });
                    }
                    Err(e) => {
                        ctx.event("FUNDING_REFUSED", e.to_string());
                        ctx.refuse(from, session, tag, "", "FUNDING_REFUSED", e.to_string());
                    }
                }
            }
            Message::BlindSigned { sig } => {
                if let Some(c) = self.relayed.remove(&session) {
                    self.relay(&c, session, tag.reply(), Message::BlindSigned { sig }, ctx);
                }
            }
            Message::BurnRequest { funding, commitment, board } => match self.bank.issue_voucher(&funding) {
                Ok(voucher) => {
                    let entry = self.bank.bulletin_entry(voucher, commitment, &mut self.rng);
                    let msg = Message::Provider { request: ProviderRequest::Submit { registration: entry.registration() } };
                    ctx.send(&board, session, tag.reply(), msg);
                    self.posting.insert(session, (from.to_string(), entry));
                }
                Err(e) => {
                    ctx.event("FUNDING_REFUSED", e.to_string());
                    ctx.refuse(from, session, tag, "", "FUNDING_REFUSED", e.to_string());
                }
            },
            Message::ProviderReply { reply } => self.on_provider_reply(session, tag, reply, ctx),
            Message::Handoff { reference, bundle } => self.on_handoff(from, session, tag, reference, bundle, ctx),
            Message::Refused { reference, code, detail } => {
                if let Some(c) = self.relayed.remove(&session) {
                    ctx.send(&c, session, tag, Message::Refused { reference, code, detail });
                } else {
                    self.redeems.remove(&session);
                    ctx.event("REFUSED", format!("{reference}: {code} {detail}"));
                }
            }
            other => ctx.event("UNEXPECTED", other.kind()),
        }
    }

    fn on_handoff(&mut self, from: &str, session: u64, tag: Tag, reference: String, bundle: TransferBundle, ctx: &mut Ctx) {
        let Some(Redeem::AwaitHandoff { holder, target, voucher_handle }) = self.redeems.remove(&session) else {
            return ctx.event("UNEXPECTED", format!("handoff {reference}"));
        };
        if let TransferBundle::Unregistered { asset, prior, .. } = &bundle {
            self.book.learn_from(asset, prior, ctx);
        }
        let policy = self.book.policy(ctx.dir);
        match self.bank.begin_redeem(&bundle, target, &policy) {
            Ok(pending) => {
                let asset = &pending.asset;
                let Some(provider) = asset.provider_for(asset.len()).map(|l| l.0.clone()) else {
                    return ctx.event("REDEEM_REFUSED", "no ledger for update");
                };
                let msg = Message::Provider { request: ProviderRequest::Submit { registration: pending.registration.clone() } };
                ctx.send(&provider, session, tag.reply(), msg);
                self.redeems.insert(session, Redeem::Registering { holder, handle: reference, pending: Box::new(pending), voucher_handle });
            }
            Err(e) => {
                let code = redeem_code(&e);
                ctx.event(code, format!("{reference}: {e}"));
                ctx.refuse(from, session, tag, &reference, code, e.to_string());
            }
        }
    }

    fn on_provider_reply(&mut self, session: u64, tag: Tag, reply: ProviderReply, ctx: &mut Ctx) {
        if let Some((consumer, entry)) = self.posting.remove(&session) {
            match reply {
                ProviderReply::Included { entry: proof } => {
                    self.book.learn(proof.root.clone(), ctx);
                    ctx.send(&consumer, session, tag.reply(), Message::BurnPosted { entry, proof });
                }
                ProviderReply::Rejected { error } => {
                    ctx.event(ledger_code(&error), error.to_string());
                    ctx.refuse(&consumer, session, tag, "", ledger_code(&error), error.to_string());
                }
                other => ctx.event("UNEXPECTED", format!("{other:?}")),
            }
            return;
        }
        let Some(Redeem::Registering { holder, handle, pending, voucher_handle }) = self.redeems.remove(&session) else {
            return ctx.event("UNEXPECTED", "provider reply");
        };
        let registered = match &reply {
            ProviderReply::Included { entry } if entry.proves(&pending.registration) => {
                self.book.learn(entry.root.clone(), ctx);
                Ok(receipt_for(entry, &pending))
            }
            ProviderReply::Rejected { error } => Err(error.clone()),
            _ => return ctx.event("REDEEM_REFUSED", format!("{handle}: unusable ledger reply")),
        };
        match self.bank.finish_redeem(*pending, registered) {
            Ok(outcome) => {
                let ProviderReply::Included { entry } = reply else { unreachable!("rejections fail to finish") };
                match outcome {
                    RedeemOutcome::Credited { account, amount } => {
                        ctx.event("REDEEMED", format!("{handle} -> {account} +{amount}"));
                    }
                    RedeemOutcome::Voucher(voucher) => {
                        ctx.event("REDEEMED", format!("{handle} -> voucher {}", voucher.amount));
                        let reference = voucher_handle.unwrap_or_else(|| handle.clone());
                        ctx.send(&holder, 0, Tag::aux(Some(Flow::Redeem)), Message::VoucherIssued { reference, voucher });
                    }
                }
                ctx.send(&holder, session, Tag::step(Flow::Redeem, 5), Message::Registered { reference: handle, entry });
            }
            Err(e) => {
                let code = redeem_code(&e);
                ctx.event(code, format!("{handle}: {e}"));
                ctx.refuse(&holder, session, tag, &handle, code, e.to_string());
            }
        }
    }
}

fn receipt_for(entry: &ProvenanceEntry, pending: &PendingRedeem) -> RegistrationReceipt {
    RegistrationReceipt {
        ledger_id: entry.root.ledger_id.clone(),
        epoch: entry.root.epoch,
        key: pending.registration.key.clone(),
    }
}

fn redeem_code(e: &MintError) -> &'static str {
    match e {
        MintError::DoubleRedeem => "DOUBLE_REDEEM",
        _ => "REDEEM_REFUSED",
    }
}
