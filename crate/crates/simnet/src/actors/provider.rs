use rand::RngCore;
use rand_chacha::ChaCha20Rng;
use uso_core::crypto::{Digest, SigningKeyPair, VerifyingKey};
use uso_core::ledger::{EquivocatingProvider, Registration, SignedRoot};

use super::consumer::ledger_code;
use super::{Command, Ctx, Tag};
use crate::transport::Timer;
use crate::wire::{Message, ProviderReply, ProviderRequest};

/// An integrity provider or bulletin board. Replies to submissions are held
/// until the epoch holding them closes.
pub struct ProviderActor {
    pub name: String,
    pub ledger: EquivocatingProvider,
    rng: ChaCha20Rng,
    epoch_ticks: u64,
    equivocating: bool,
    waiting: Vec<(String, u64, Tag, VerifyingKey)>,
    scheduled: bool,
}

impl ProviderActor {
    pub fn new(name: &str, ledger: EquivocatingProvider, rng: ChaCha20Rng, epoch_ticks: u64, equivocating: bool) -> Self {
        ProviderActor {
            name: name.to_string(),
            ledger,
            rng,
            epoch_ticks: epoch_ticks.max(1),
            equivocating,
            waiting: Vec::new(),
            scheduled: false,
        }
    }

    pub fn on_command(&mut self, cmd: Command, ctx: &mut Ctx) -> Result<(), String> {
        match cmd {
            Command::CloseEpoch => {
                let root = self.ledger.inner_mut().close_epoch();
                self.publish(&root, &root, &[], ctx);
                Ok(())
            }
            Command::ForkEpoch { honest, forked } => {
                if !self.equivocating {
                    return Err(format!("{} is not declared equivocating", self.name));
                }
                let ghost = SigningKeyPair::generate_standard(&mut self.rng);
                let mut d = [0u8; 32];
                self.rng.fill_bytes(&mut d);
                let reg = Registration::new(ghost.public().clone(), Digest(d), ghost.sign(&d));
                let (h, f) = self.ledger.close_epoch_forked(reg);
                for to in honest.iter().filter(|n| !ctx.dir.subscribers.contains(n)) {
                    ctx.send(to, 0, Tag::NONE, Message::PublishRoot { root: h.clone() });
                }
                self.publish(&h, &f, &forked, ctx);
                Ok(())
            }
            Command::SubmitRoot { dlt } => {
                let inner = self.ledger.inner();
                let epoch = inner.latest_closed().ok_or("no closed epoch")?;
                let root = inner.get_signed_root(epoch).map_err(|e| e.to_string())?;
                ctx.send(&dlt, 0, Tag::NONE, Message::SubmitRoot { root });
                Ok(())
            }
            other => Err(format!("provider cannot {other:?}")),
        }
    }

    pub fn on_timer(&mut self, timer: Timer, ctx: &mut Ctx) {
        match timer {
            Timer::CloseEpoch if self.scheduled => {
                let root = self.ledger.inner_mut().close_epoch();
                self.publish(&root, &root, &[], ctx);
            }
            Timer::CloseEpoch => {}
        }
    }

    /// Announce a closed epoch and answer held submissions. Subscribers in
    /// `forked` see `forged`; everyone else sees `honest`.
    fn publish(&mut self, honest: &SignedRoot, forged: &SignedRoot, forked: &[String], ctx: &mut Ctx) {
        self.scheduled = false;
        ctx.event("EPOCH_CLOSED", format!("{}@{}", self.name, honest.epoch));
        for to in ctx.dir.subscribers.clone() {
            let root = if forked.contains(&to) { forged } else { honest };
            ctx.send(&to, 0, Tag::NONE, Message::PublishRoot { root: root.clone() });
        }
        for (to, session, tag, key) in std::mem::take(&mut self.waiting) {
            let reply = match self.ledger.inner().fetch_entry(&key, honest.epoch) {
                Ok(entry) => ProviderReply::Included { entry },
                Err(error) => ProviderReply::Rejected { error },
            };
            ctx.send(&to, session, tag, Message::ProviderReply { reply });
        }
    }

    pub fn on_message(&mut self, from: &str, session: u64, tag: Tag, msg: Message, ctx: &mut Ctx) {
        let Message::Provider { request } = msg else {
            return ctx.event("UNEXPECTED", msg.kind());
        };
        let inner = self.ledger.inner_mut();
        let reply = match request {
            ProviderRequest::Submit { registration } => match inner.submit_registration(registration) {
                Ok(receipt) => {
                    self.waiting.push((from.to_string(), session, tag.reply(), receipt.key));
                    if !self.scheduled {
                        self.scheduled = true;
                        ctx.timer(self.epoch_ticks, Timer::CloseEpoch);
                    }
                    return;
                }
                Err(error) => {
                    ctx.event(ledger_code(&error), format!("{from}: {error}"));
                    ProviderReply::Rejected { error }
                }
            },
            ProviderRequest::GetRoot { epoch } => match inner.get_signed_root(epoch) {
                Ok(root) => ProviderReply::Root { root },
                Err(error) => ProviderReply::Rejected { error },
            },
            ProviderRequest::FetchEntry { key, epoch } => match inner.fetch_entry(&key, epoch) {
                Ok(entry) => ProviderReply::Included { entry },
                Err(error) => ProviderReply::Rejected { error },
            },
            ProviderRequest::FetchExclusion { key, epoch } => match inner.fetch_exclusion(&key, epoch) {
                Ok(proof) => ProviderReply::Excluded { proof },
                Err(error) => ProviderReply::Rejected { error },
            },
        };
        ctx.send(from, session, Tag::aux(tag.flow), Message::ProviderReply { reply });
    }
}
