//! Scenario runner: builds the actors, injects each step and runs the event
//! loop to quiescence before the next.

use std::collections::BTreeMap;

use serde::Serialize;
use uso_core::anchor::{verify_stacked, Dlt};
use uso_core::asset::{verify_provenance, GenesisAuth};
use uso_core::crypto::{tagged_hash, Domain, SigningKeyPair};
use uso_core::flow::{Flow, Role};
use uso_core::ledger::{EquivocatingProvider, LedgerId, Provider};
use uso_core::mint::{Bank, Minter, RedeemTarget};

use crate::actors::{
    actor_rng, Actor, BankActor, Command, ConsumerActor, Ctx, Directory, DltActor, MinterActor, Outgoing,
    ProviderActor, RootBook, Tag,
};
use crate::scenario::{Kind, Scenario, Step};
use crate::transcript::{Record, Transcript};
use crate::transport::{Envelope, Event, Network, SimClock};
use crate::wire::Message;
use crate::SimError;

/// Deliveries past this count abort the run as a runaway.
const EVENT_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EventRecord {
    /// Index of the scenario step that caused it; `None` during setup.
    pub step: Option<usize>,
    pub tick: u64,
    pub actor: String,
    pub code: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssertionResult {
    pub step: usize,
    pub op: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    #[serde(skip)]
    pub transcript: Transcript,
    pub events: Vec<EventRecord>,
    pub assertions: Vec<AssertionResult>,
    pub failure: Option<(usize, String)>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.assertions.iter().all(|a| a.passed)
    }

    pub fn result(&self) -> Result<(), SimError> {
        match &self.failure {
            Some((index, reason)) => Err(SimError::StepFailure { index: *index, reason: reason.clone() }),
            None => Ok(()),
        }
    }

    pub fn events_of<'a>(&'a self, actor: &'a str, code: &'a str) -> impl Iterator<Item = &'a EventRecord> + 'a {
        self.events.iter().filter(move |e| e.actor == actor && e.code == code)
    }
}

pub struct World {
    pub seed: u64,
    pub dir: Directory,
    pub actors: BTreeMap<String, Actor>,
    kinds: BTreeMap<String, Kind>,
    clock: SimClock,
    net: Network,
    next_session: u64,
    initiators: BTreeMap<u64, String>,
    /// Raw withdrawal bodies delivered to banks and minters, by session.
    pub audit: BTreeMap<u64, Vec<Vec<u8>>>,
    pub transcript: Transcript,
    pub events: Vec<EventRecord>,
    pub assertions: Vec<AssertionResult>,
    pub failure: Option<(usize, String)>,
    name: String,
}

/// Run `scenario` with its own seed, or `seed` if given.
pub fn run(scenario: &Scenario, seed: Option<u64>) -> Result<RunReport, SimError> {
    Ok(World::run(scenario, seed)?.report())
}

impl World {
    pub fn new(scenario: &Scenario, seed: Option<u64>) -> Result<World, SimError> {
        scenario.validate()?;
        let seed = seed.unwrap_or(scenario.seed);
        let a = &scenario.actors;
        let mut dir = Directory::default();
        let mut rngs: BTreeMap<String, _> =
            scenario.kinds().keys().map(|n| (n.to_string(), actor_rng(seed, n))).collect();
        let mut rng = |n: &str| rngs.remove(n).expect("every declared actor has a generator");

        let mut ledgers = Vec::new();
        for (p, board) in a.providers.iter().map(|p| (p, false)).chain(a.boards.iter().map(|b| (b, true))) {
            let mut r = rng(&p.name);
            let op = SigningKeyPair::generate_standard(&mut r);
            dir.operators.insert(p.name.clone(), op.public().clone());
            let inner = Provider::new(LedgerId::new(p.name.clone()), op);
            ledgers.push((p.name.clone(), board, ProviderActor::new(&p.name, EquivocatingProvider::new(inner), r, p.epoch_ticks, p.equivocating)));
        }
        let mut dlts = Vec::new();
        for d in &a.dlts {
            let mut r = rng(&d.name);
            let service = SigningKeyPair::generate_standard(&mut r);
            let parts: Vec<_> = (0..d.participants).map(|_| SigningKeyPair::generate_standard(&mut r)).collect();
            let dlt = Dlt::new(LedgerId::new(d.name.clone()), service, parts);
            dir.dlts.insert(d.name.clone(), (dlt.service_key().clone(), dlt.participant_keys()));
            dlts.push(DltActor { name: d.name.clone(), dlt });
        }
        let mut banks = Vec::new();
        for b in &a.banks {
            let mut r = rng(&b.name);
            let key = SigningKeyPair::generate_standard(&mut r);
            dir.banks.insert(b.name.clone(), key.public().clone());
            let mut bank = Bank::new(key);
            for (acct, bal) in &b.accounts {
                bank.open_account(acct.clone(), *bal);
            }
            banks.push((b.name.clone(), bank, r));
        }
        let mut minters = Vec::new();
        for m in &a.minters {
            let mut r = rng(&m.name);
            let mut keys = BTreeMap::new();
            for q in &m.denominations {
                let k = SigningKeyPair::generate_blind(&mut r, m.key_bits).map_err(|e| SimError::Schema(e.to_string()))?;
                keys.insert(*q, k);
            }
            let bank_key = dir.banks[&m.bank].clone();
            let minter = Minter::new(bank_key, keys).map_err(|e| SimError::Schema(e.to_string()))?;
            dir.minter_keys.insert(m.name.clone(), minter.public_keys());
            dir.minter_of.insert(m.bank.clone(), m.name.clone());
            minters.push(MinterActor { name: m.name.clone(), minter });
        }
        dir.subscribers = a.consumers.iter().map(|c| c.name.clone()).chain(a.banks.iter().map(|b| b.name.clone())).collect();

        let mut actors = BTreeMap::new();
        for (name, _, p) in ledgers {
            actors.insert(name, Actor::Provider(p));
        }
        for d in dlts {
            actors.insert(d.name.clone(), Actor::Dlt(d));
        }
        for (name, mut bank, r) in banks {
            let minter = dir.minter_of.get(&name).cloned();
            if let Some(m) = &minter {
                for (q, k) in &dir.minter_keys[m] {
                    bank.recognise_minter_key(k.clone(), *q);
                }
            }
            let book = RootBook::new(&dir);
            actors.insert(name.clone(), Actor::Bank(BankActor::new(&name, bank, r, book, minter)));
        }
        for m in minters {
            actors.insert(m.name.clone(), Actor::Minter(m));
        }
        for c in &a.consumers {
            let book = RootBook::new(&dir);
            actors.insert(c.name.clone(), Actor::Consumer(ConsumerActor::new(&c.name, rng(&c.name), book, c.double_spender)));
        }

        let net_seed = tagged_hash(Domain::Message, &[b"network", &seed.to_be_bytes()]).0;
        let mut world = World {
            seed,
            dir,
            actors,
            kinds: scenario.kinds().into_iter().map(|(n, k)| (n.to_string(), k)).collect(),
            clock: SimClock::default(),
            net: Network::new(&scenario.network, net_seed),
            next_session: 0,
            initiators: BTreeMap::new(),
            audit: BTreeMap::new(),
            transcript: Transcript::default(),
            events: Vec::new(),
            assertions: Vec::new(),
            failure: None,
            name: scenario.name.clone(),
        };
        // Every ledger opens with an empty, published epoch 0.
        let ledger_names: Vec<String> =
            a.providers.iter().chain(&a.boards).map(|p| p.name.clone()).collect();
        for name in ledger_names {
            world.command(&name, Command::CloseEpoch, None).map_err(|reason| SimError::StepFailure { index: 0, reason })?;
        }
        world.pump(None).map_err(|reason| SimError::StepFailure { index: 0, reason })?;
        world.clock.advance(1);
        Ok(world)
    }

    /// Build the world and run every step.
    pub fn run(scenario: &Scenario, seed: Option<u64>) -> Result<World, SimError> {
        let mut w = World::new(scenario, seed)?;
        for (i, step) in scenario.steps.iter().enumerate() {
            if step.is_assertion() {
                let (passed, detail) = w.check(step, i);
                w.assertions.push(AssertionResult { step: i, op: step.op().to_string(), passed, detail });
                continue;
            }
            let outcome = w.apply(step, i).and_then(|()| w.pump(Some(i)));
            if let Err(reason) = outcome {
                w.events.push(EventRecord {
                    step: Some(i),
                    tick: w.clock.now(),
                    actor: String::new(),
                    code: "STEP_FAILURE".into(),
                    detail: reason.clone(),
                });
                w.failure = Some((i, reason));
                break;
            }
            w.clock.advance(1);
        }
        Ok(w)
    }

    pub fn report(&self) -> RunReport {
        RunReport {
            scenario: self.name.clone(),
            seed: self.seed,
            transcript: self.transcript.clone(),
            events: self.events.clone(),
            assertions: self.assertions.clone(),
            failure: self.failure.clone(),
        }
    }

    pub fn consumer(&self, name: &str) -> Option<&ConsumerActor> {
        match self.actors.get(name) {
            Some(Actor::Consumer(c)) => Some(c),
            _ => None,
        }
    }

    pub fn bank(&self, name: &str) -> Option<&BankActor> {
        match self.actors.get(name) {
            Some(Actor::Bank(b)) => Some(b),
            _ => None,
        }
    }

    fn apply(&mut self, step: &Step, i: usize) -> Result<(), String> {
        let at = Some(i);
        match step.clone() {
            Step::WithdrawChaum { consumer, bank, amount, ledger, asset, voucher } => {
                self.command(&consumer, Command::WithdrawChaum { bank, amount, ledger, handle: asset, voucher }, at)
            }
            Step::WithdrawZkp { consumer, bank, board, amount, ledger, asset, voucher } => self.command(
                &consumer,
                Command::WithdrawZkp { bank, board, amount, ledger, handle: asset, voucher },
                at,
            ),
            Step::Transfer { from, to, asset, mode } => {
                self.command(&to, Command::Request { from, handle: asset, mode }, at)
            }
            Step::DoubleSpend { holder, asset, recipients, mode } => {
                for r in recipients {
                    self.command(&r, Command::Request { from: holder.clone(), handle: asset.clone(), mode }, at)?;
                }
                Ok(())
            }
            Step::Redeem { holder, bank, asset, account, voucher } => {
                let target = match (&voucher, account) {
                    (Some(_), _) => RedeemTarget::Voucher,
                    (None, account) => RedeemTarget::Account { name: account.unwrap_or_else(|| holder.clone()) },
                };
                self.command(&bank, Command::Redeem { holder, handle: asset, target, voucher_handle: voucher }, at)
            }
            Step::CloseEpoch { provider } => {
                let cmd = if self.kinds.get(&provider) == Some(&Kind::Dlt) { Command::Anchor } else { Command::CloseEpoch };
                self.command(&provider, cmd, at)
            }
            Step::ForkEpoch { provider, honest, forked } => self.command(&provider, Command::ForkEpoch { honest, forked }, at),
            Step::Gossip { from, to } => self.command(&from, Command::Gossip { to }, at),
            Step::SubmitRoot { from, dlt } => self.command(&from, Command::SubmitRoot { dlt }, at),
            Step::Anchor { dlt } => self.command(&dlt, Command::Anchor, at),
            Step::Stack { holder, asset, through } => self.command(&holder, Command::Stack { handle: asset, through }, at),
            s => Err(format!("{} is not a command", s.op())),
        }
    }

    fn command(&mut self, actor: &str, cmd: Command, step: Option<usize>) -> Result<(), String> {
        self.dispatch(actor, step, |a, ctx| a.on_command(cmd, ctx))
    }

    /// Run `f` on `actor` and route what it sent, scheduled and reported.
    fn dispatch<R>(&mut self, actor: &str, step: Option<usize>, f: impl FnOnce(&mut Actor, &mut Ctx) -> R) -> R {
        let now = self.clock.now();
        let a = self.actors.get_mut(actor).expect("validated actor names");
        let mut ctx = Ctx::new(now, &self.dir, &mut self.next_session);
        let r = f(a, &mut ctx);
        let Ctx { outbox, timers, events, .. } = ctx;
        for o in outbox {
            self.emit(actor, o);
        }
        for (at, timer) in timers {
            self.clock.schedule(at, Event::Timer { actor: actor.to_string(), timer });
        }
        for e in events {
            self.events.push(EventRecord { step, tick: now, actor: actor.to_string(), code: e.code, detail: e.detail });
        }
        r
    }

    fn role_of(&self, actor: &str, flow: Flow, session: u64) -> Option<Role> {
        Some(match self.kinds.get(actor)? {
            Kind::Bank => Role::Bank,
            Kind::Minter => Role::Minter,
            Kind::Board => Role::BulletinBoard,
            Kind::Provider | Kind::Dlt => Role::Relay,
            Kind::Consumer => match flow {
                Flow::TransferSender | Flow::TransferRecipient => {
                    if self.initiators.get(&session).map(String::as_str) == Some(actor) {
                        Role::Recipient
                    } else {
                        Role::Sender
                    }
                }
                _ => Role::Consumer,
            },
            Kind::AnyLedger | Kind::Any => return None,
        })
    }

    fn emit(&mut self, from: &str, o: Outgoing) {
        if o.session != 0 {
            self.initiators.entry(o.session).or_insert_with(|| from.to_string());
        }
        let (from_role, to_role) = match (o.tag.flow, o.tag.step) {
            (Some(flow), Some(_)) => (self.role_of(from, flow, o.session), self.role_of(&o.to, flow, o.session)),
            _ => (None, None),
        };
        let now = self.clock.now();
        let env = Envelope {
            from: from.to_string(),
            to: o.to.clone(),
            session: o.session,
            flow: o.tag.flow,
            step: o.tag.step,
            from_role,
            to_role,
            label: o.msg.label(o.tag.flow),
            kind: o.msg.kind(),
            sent_at: now,
            body: o.msg.encode(),
        };
        let at = now + self.net.delay(from, &o.to);
        self.clock.schedule(at, Event::Deliver(env));
    }

    fn pump(&mut self, step: Option<usize>) -> Result<(), String> {
        let mut n = 0;
        while let Some((tick, ev)) = self.clock.pop() {
            n += 1;
            if n > EVENT_LIMIT {
                return Err("event limit reached".into());
            }
            match ev {
                Event::Deliver(env) => {
                    self.transcript.push(Record::of(&env, tick));
                    if !self.actors.contains_key(&env.to) {
                        continue;
                    }
                    let withdrawal = matches!(env.flow, Some(Flow::ChaumWithdraw | Flow::ZkpWithdraw));
                    if withdrawal && matches!(self.kinds.get(&env.to), Some(Kind::Bank | Kind::Minter)) {
                        self.audit.entry(env.session).or_default().push(env.body.clone());
                    }
                    let msg = Message::decode(&env.body).map_err(|e| format!("undecodable message: {e}"))?;
                    let tag = Tag { flow: env.flow, step: env.step };
                    let from = env.from.clone();
                    self.dispatch(&env.to, step, |a, ctx| a.on_message(&from, env.session, tag, msg, ctx));
                }
                Event::Timer { actor, timer } => self.dispatch(&actor, step, |a, ctx| a.on_timer(timer, ctx)),
            }
        }
        Ok(())
    }

    fn check(&self, step: &Step, i: usize) -> (bool, String) {
        match step {
            Step::AssertValid { holder, asset } => {
                let Some(h) = self.consumer(holder).and_then(|c| c.holdings.get(asset).map(|h| (c, h))) else {
                    return (false, format!("{holder} holds no {asset}"));
                };
                let report = verify_provenance(&h.1.asset, &h.1.provenance, &h.0.book.policy(&self.dir));
                let fails: Vec<String> = report.failures().map(|f| format!("{:?}", f.failure)).collect();
                (report.is_valid(), fails.join(","))
            }
            Step::AssertBalance { bank, account, equals } => {
                let got = self.bank(bank).and_then(|b| b.bank.balance(account));
                (got == Some(*equals), format!("balance {got:?}"))
            }
            Step::AssertEvent { actor, code, count, step } => {
                let n = self
                    .events
                    .iter()
                    .filter(|e| &e.actor == actor && &e.code == code && step.is_none_or(|s| e.step == Some(s)))
                    .count();
                let ok = match count {
                    Some(c) => n == *c,
                    None => n > 0,
                };
                (ok, format!("{n} x {code}"))
            }
            Step::AssertEventTotal { actors, code, count, step } => {
                let n = self
                    .events
                    .iter()
                    .filter(|e| actors.contains(&e.actor) && &e.code == code && e.step == Some(*step))
                    .count();
                (n == *count, format!("{n} x {code}"))
            }
            Step::AssertEvidence { actor } => {
                let ev = self.actors.get(actor).map(Actor::evidence).unwrap_or_default();
                (!ev.is_empty() && ev.iter().all(|e| e.verify()), format!("{} pieces", ev.len()))
            }
            Step::AssertStacked { holder, asset } => match self.consumer(holder).and_then(|c| c.stacks.get(asset)) {
                Some((proof, top)) => (verify_stacked(proof, top), format!("depth {}", proof.depth())),
                None => (false, format!("{holder} built no stack for {asset}")),
            },
            Step::AssertConforms { flow, sessions } => {
                let seen = self.transcript.sessions(*flow).len();
                let diffs = self.transcript.diff(*flow);
                let detail = match diffs.first() {
                    Some(d) => format!("session {}: {:?}", d.session, d.observed),
                    None => format!("{seen} sessions"),
                };
                (diffs.is_empty() && seen == *sessions, detail)
            }
            Step::AssertUnlinkable { bank } => self.unlinkable(bank),
            s => (false, format!("step {i}: {} is not an assertion", s.op())),
        }
    }

    /// No message `bank` or its minter received while withdrawing a token
    /// contains that token's `h(F₀)` or unblinded signature, raw or hex.
    pub fn unlinkable(&self, bank: &str) -> (bool, String) {
        let Some(minter) = self.dir.minter_of.get(bank) else {
            return (false, format!("{bank} has no minter"));
        };
        let keys: Vec<_> = self.dir.minter_keys[minter].values().collect();
        let (mut tokens, mut payloads, mut leaks) = (0, 0, 0);
        for c in self.actors.values().filter_map(|a| if let Actor::Consumer(c) = a { Some(c) } else { None }) {
            for (session, asset) in &c.withdrawn {
                let GenesisAuth::Signature { issuer, sig } = &asset.genesis_auth else { continue };
                if !keys.contains(&issuer) {
                    continue;
                }
                let d = asset.genesis.digest();
                let secrets = [d.0.to_vec(), d.to_hex().into_bytes(), sig.bytes.clone(), hex::encode(&sig.bytes).into_bytes()];
                let seen = self.audit.get(session).map(Vec::as_slice).unwrap_or_default();
                tokens += 1;
                payloads += seen.len();
                leaks += secrets
                    .iter()
                    .filter(|s| seen.iter().any(|p| p.windows(s.len()).any(|w| w == s.as_slice())))
                    .count();
            }
        }
        if tokens == 0 {
            return (false, "no blind-signed tokens to audit".into());
        }
        (leaks == 0, format!("{tokens} tokens, {payloads} payloads, {leaks} leaks"))
    }
}
