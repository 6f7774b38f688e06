use uso_core::anchor::{AnchorError, Dlt};
use uso_core::ledger::SignedRoot;

use super::{Command, Ctx, Tag};
use crate::wire::Message;

/// A distributed ledger that anchors provider roots.
pub struct DltActor {
    pub name: String,
    pub dlt: Dlt,
}

impl DltActor {
    pub fn on_command(&mut self, cmd: Command, ctx: &mut Ctx) -> Result<(), String> {
        match cmd {
            Command::Anchor => {
                let anchor = self.dlt.anchor_tick();
                ctx.event("ANCHORED", format!("{}@{}", self.name, anchor.t()));
                for to in ctx.dir.subscribers.clone() {
                    ctx.send(&to, 0, Tag::NONE, Message::AnchorPublished { anchor: anchor.clone() });
                }
                Ok(())
            }
            Command::SubmitRoot { dlt } => {
                let t = self.dlt.next_t().checked_sub(1).ok_or("nothing anchored yet")?;
                let anchor = self.dlt.get_anchor(t).map_err(|e| e.to_string())?;
                ctx.send(&dlt, 0, Tag::NONE, Message::SubmitRoot { root: anchor.signed });
                Ok(())
            }
            other => Err(format!("ledger cannot {other:?}")),
        }
    }

    fn submit(&mut self, root: SignedRoot, ctx: &mut Ctx) {
        let label = format!("{}@{}", root.ledger_id, root.epoch);
        match self.dlt.submit_root(root) {
            Ok(()) => ctx.event("SUBMITTED", label),
            Err(AnchorError::ConflictingSubmission(ev)) => {
                ctx.event("EVIDENCE", label);
                for to in ctx.dir.subscribers.clone() {
                    ctx.send(&to, 0, Tag::NONE, Message::Evidence { evidence: (*ev).clone() });
                }
            }
            Err(e) => ctx.event("SUBMIT_REJECTED", format!("{label}: {e}")),
        }
    }

    pub fn on_message(&mut self, from: &str, session: u64, _tag: Tag, msg: Message, ctx: &mut Ctx) {
        match msg {
            Message::SubmitRoot { root } => self.submit(root, ctx),
            Message::Gossip { roots } => roots.into_iter().for_each(|r| self.submit(r, ctx)),
            Message::ProveAnchored { operator, t } => {
                let answer = self
                    .dlt
                    .anchored_root(&operator, t)
                    .and_then(|root| Ok((root, self.dlt.prove_anchored(&operator, t)?)));
                match answer {
                    Ok((root, proof)) => ctx.send(from, session, Tag::NONE, Message::AnchorProof { root, t, proof }),
                    Err(e) => ctx.refuse(from, session, Tag::NONE, "", "NOT_ANCHORED", e.to_string()),
                }
            }
            Message::Evidence { .. } | Message::AnchorPublished { .. } | Message::PublishRoot { .. } => {}
            other => ctx.event("UNEXPECTED", other.kind()),
        }
    }
}
