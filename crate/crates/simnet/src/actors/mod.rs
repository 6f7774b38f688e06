//! Simulation actors. Each is a serialized state machine that reacts to
//! commands from the scenario runner, delivered messages and its own timers.

mod bank;
mod consumer;
mod dlt;
mod minter;
mod provider;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use uso_core::anchor::{detect_equivocation, AnchorRoot, EquivocationEvidence};
use uso_core::asset::{Asset, DirectTrust, GenesisAuth, IssuerPolicy, ProofOfProvenance, TrustBundle, TrustError};
use uso_core::crypto::{tagged_hash, Domain, VerifyingKey};
use uso_core::flow::Flow;
use uso_core::ledger::{LedgerId, SignedRoot};
use uso_core::mint::RedeemTarget;

pub use bank::BankActor;
pub use consumer::{ConsumerActor, Holding};
pub use dlt::DltActor;
pub use minter::MinterActor;
pub use provider::ProviderActor;

use crate::scenario::Mode;
use crate::transport::Timer;
use crate::wire::Message;

/// Public keys every actor may know in advance.
#[derive(Debug, Clone, Default)]
pub struct Directory {
    pub banks: BTreeMap<String, VerifyingKey>,
    pub minter_of: BTreeMap<String, String>,
    pub minter_keys: BTreeMap<String, BTreeMap<u64, VerifyingKey>>,
    pub operators: BTreeMap<String, VerifyingKey>,
    pub dlts: BTreeMap<String, (VerifyingKey, Vec<VerifyingKey>)>,
    pub subscribers: Vec<String>,
}

impl Directory {
    pub fn issuers(&self) -> Vec<VerifyingKey> {
        self.minter_keys
            .values()
            .flat_map(|m| m.values().cloned())
            .chain(self.banks.values().cloned())
            .collect()
    }

    pub fn dlt_named_by_key(&self, key: &VerifyingKey) -> Option<&str> {
        self.dlts.iter().find(|(_, (k, _))| k == key).map(|(n, _)| n.as_str())
    }
}

/// Per-actor seeded randomness: `h(seed ‖ name)`.
pub fn actor_rng(seed: u64, name: &str) -> ChaCha20Rng {
    let d = tagged_hash(Domain::Message, &[&seed.to_be_bytes(), name.as_bytes()]);
    ChaCha20Rng::from_seed(d.0)
}

/// Commands the runner issues to start protocol activity.
#[derive(Debug, Clone)]
pub enum Command {
    WithdrawChaum { bank: String, amount: u64, ledger: String, handle: String, voucher: Option<String> },
    WithdrawZkp { bank: String, board: String, amount: u64, ledger: String, handle: String, voucher: Option<String> },
    Request { from: String, handle: String, mode: Mode },
    Redeem { holder: String, handle: String, target: RedeemTarget, voucher_handle: Option<String> },
    CloseEpoch,
    ForkEpoch { honest: Vec<String>, forked: Vec<String> },
    Gossip { to: String },
    SubmitRoot { dlt: String },
    Anchor,
    Stack { handle: String, through: Vec<String> },
}

/// How a message is placed in a numbered flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tag {
    pub flow: Option<Flow>,
    pub step: Option<u8>,
}

impl Tag {
    pub const NONE: Tag = Tag { flow: None, step: None };

    pub fn step(flow: Flow, step: u8) -> Tag {
        Tag { flow: Some(flow), step: Some(step) }
    }

    pub fn aux(flow: Option<Flow>) -> Tag {
        Tag { flow, step: None }
    }

    /// The tag of a reply to a message tagged `self`.
    pub fn reply(self) -> Tag {
        Tag { flow: self.flow, step: self.step.map(|s| s + 1) }
    }
}

#[derive(Debug, Clone)]
pub struct Outgoing {
    pub to: String,
    pub session: u64,
    pub tag: Tag,
    pub msg: Message,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct ActorEvent {
    pub code: String,
    pub detail: String,
}

/// What a handler may do: send, set timers, report events.
pub struct Ctx<'a> {
    pub now: u64,
    pub dir: &'a Directory,
    pub(crate) outbox: Vec<Outgoing>,
    pub(crate) timers: Vec<(u64, Timer)>,
    pub(crate) events: Vec<ActorEvent>,
    pub(crate) next_session: &'a mut u64,
}

impl<'a> Ctx<'a> {
    pub fn new(now: u64, dir: &'a Directory, next_session: &'a mut u64) -> Self {
        Ctx { now, dir, outbox: Vec::new(), timers: Vec::new(), events: Vec::new(), next_session }
    }

    pub fn new_session(&mut self) -> u64 {
        *self.next_session += 1;
        *self.next_session
    }

    pub fn send(&mut self, to: &str, session: u64, tag: Tag, msg: Message) {
        self.outbox.push(Outgoing { to: to.to_string(), session, tag, msg });
    }

    pub fn timer(&mut self, after: u64, timer: Timer) {
        self.timers.push((self.now + after, timer));
    }

    pub fn event(&mut self, code: &str, detail: impl Into<String>) {
        self.events.push(ActorEvent { code: code.to_string(), detail: detail.into() });
    }

    pub fn refuse(&mut self, to: &str, session: u64, tag: Tag, reference: &str, code: &str, detail: impl Into<String>) {
        let detail = detail.into();
        self.send(to, session, Tag::aux(tag.flow), Message::Refused { reference: reference.into(), code: code.into(), detail });
    }
}

/// Roots, anchors and evidence an actor has seen.
#[derive(Debug, Clone)]
pub struct RootBook {
    trust: DirectTrust,
    seen: Vec<SignedRoot>,
    pub anchors: BTreeMap<String, BTreeMap<u64, AnchorRoot>>,
    pub evidence: Vec<EquivocationEvidence>,
}

impl RootBook {
    pub fn new(dir: &Directory) -> Self {
        let mut trust = DirectTrust::new();
        for (name, key) in &dir.operators {
            trust.trust_operator(LedgerId::new(name.clone()), key.clone());
        }
        RootBook { trust, seen: Vec::new(), anchors: BTreeMap::new(), evidence: Vec::new() }
    }

    pub fn roots(&self) -> Vec<SignedRoot> {
        self.seen.clone()
    }

    pub fn latest_epoch(&self, ledger: &str) -> Option<u64> {
        self.seen.iter().filter(|r| r.ledger_id.as_str() == ledger).map(|r| r.epoch).max()
    }

    /// Take in an operator-signed root. A conflicting root for an epoch
    /// already trusted yields evidence.
    pub fn learn(&mut self, root: SignedRoot, ctx: &mut Ctx) {
        if self.seen.contains(&root) {
            return;
        }
        match self.trust.add_root(root.clone()) {
            Ok(()) => self.seen.push(root),
            Err(TrustError::Conflict) => {
                let ev = detect_equivocation(self.seen.iter().chain([&root]));
                self.seen.push(root);
                if let Some(ev) = ev {
                    self.record_evidence(ev, ctx);
                }
            }
            Err(e) => ctx.event("ROOT_REJECTED", format!("{}@{}: {e}", root.ledger_id, root.epoch)),
        }
    }

    pub fn record_evidence(&mut self, ev: EquivocationEvidence, ctx: &mut Ctx) {
        if !ev.verify() {
            ctx.event("BAD_EVIDENCE", "evidence does not verify");
            return;
        }
        let dup = self.evidence.iter().any(|e| {
            (e.first == ev.first && e.second == ev.second) || (e.first == ev.second && e.second == ev.first)
        });
        if !dup {
            ctx.event("EVIDENCE", format!("{}@{}", ev.first.ledger_id, ev.first.epoch));
            self.evidence.push(ev);
        }
    }

    pub fn learn_anchor(&mut self, dlt: &str, anchor: AnchorRoot, ctx: &mut Ctx) {
        let Some((service, participants)) = ctx.dir.dlts.get(dlt) else {
            ctx.event("ANCHOR_REJECTED", format!("unknown ledger {dlt}"));
            return;
        };
        if anchor.signed.operator != *service || !anchor.verify(participants) {
            ctx.event("ANCHOR_REJECTED", format!("{dlt}@{}", anchor.t()));
            return;
        }
        self.anchors.entry(dlt.to_string()).or_default().insert(anchor.t(), anchor);
    }

    /// Learn the roots a provenance refers to, so conflicts surface.
    pub fn learn_from(&mut self, asset: &Asset, provenance: &ProofOfProvenance, ctx: &mut Ctx) {
        for e in &provenance.entries {
            self.learn(e.root.clone(), ctx);
        }
        if let GenesisAuth::Burn(w) = &asset.genesis_auth {
            self.learn(w.board_root.clone(), ctx);
        }
    }

    /// What this actor trusts, in exportable form.
    pub fn bundle(&self, dir: &Directory) -> TrustBundle {
        TrustBundle {
            issuers: dir.issuers(),
            operators: self.trust.operators().map(|(l, k)| (l.clone(), k.clone())).collect(),
            roots: self.trust.roots().cloned().collect(),
        }
    }

    pub fn policy(&self, dir: &Directory) -> IssuerPolicy {
        IssuerPolicy::new(dir.issuers(), Arc::new(self.trust.clone())).expect("directory lists issuers")
    }
}

pub enum Actor {
    Consumer(ConsumerActor),
    Bank(BankActor),
    Minter(MinterActor),
    Provider(ProviderActor),
    Dlt(DltActor),
}

impl Actor {
    pub fn on_command(&mut self, cmd: Command, ctx: &mut Ctx) -> Result<(), String> {
        match self {
            Actor::Consumer(a) => a.on_command(cmd, ctx),
            Actor::Bank(a) => a.on_command(cmd, ctx),
            Actor::Provider(a) => a.on_command(cmd, ctx),
            Actor::Dlt(a) => a.on_command(cmd, ctx),
            Actor::Minter(_) => Err("minters take no commands".into()),
        }
    }

    pub fn on_message(&mut self, from: &str, session: u64, tag: Tag, msg: Message, ctx: &mut Ctx) {
        match self {
            Actor::Consumer(a) => a.on_message(from, session, tag, msg, ctx),
            Actor::Bank(a) => a.on_message(from, session, tag, msg, ctx),
            Actor::Minter(a) => a.on_message(from, session, tag, msg, ctx),
            Actor::Provider(a) => a.on_message(from, session, tag, msg, ctx),
            Actor::Dlt(a) => a.on_message(from, session, tag, msg, ctx),
        }
    }

    pub fn on_timer(&mut self, timer: Timer, ctx: &mut Ctx) {
        if let Actor::Provider(a) = self {
            a.on_timer(timer, ctx)
        }
    }

    pub fn evidence(&self) -> &[EquivocationEvidence] {
        match self {
            Actor::Consumer(a) => &a.book.evidence,
            Actor::Bank(a) => &a.book.evidence,
            Actor::Dlt(a) => a.dlt.evidence(),
            Actor::Minter(_) | Actor::Provider(_) => &[],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn actor_generators_depend_on_seed_and_name() {
        let draw = |seed, name| actor_rng(seed, name).next_u64();
        assert_eq!(draw(1, "alice"), draw(1, "alice"));
        assert_ne!(draw(1, "alice"), draw(1, "bob"));
        assert_ne!(draw(1, "alice"), draw(2, "alice"));
    }

    #[test]
    fn replies_advance_numbered_steps_only() {
        assert_eq!(Tag::step(Flow::Redeem, 2).reply(), Tag::step(Flow::Redeem, 3));
        assert_eq!(Tag::aux(Some(Flow::Redeem)).reply(), Tag::aux(Some(Flow::Redeem)));
        assert_eq!(Tag::NONE.reply(), Tag::NONE);
    }
}
