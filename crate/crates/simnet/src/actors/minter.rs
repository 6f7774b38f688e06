use uso_core::mint::Minter;

use super::{Ctx, Tag};
use crate::wire::Message;

pub struct MinterActor {
    pub name: String,
    pub minter: Minter,
}

impl MinterActor {
    pub fn on_message(&mut self, from: &str, session: u64, tag: Tag, msg: Message, ctx: &mut Ctx) {
        match msg {
            Message::BlindInit { request } => match self.minter.handle_init(&request) {
                Ok(response) => ctx.send(from, session, tag.reply(), Message::BlindOffer { response }),
                Err(e) => {
                    ctx.event("MINT_REFUSED", e.to_string());
                    ctx.refuse(from, session, tag, "", "MINT_REFUSED", e.to_string());
                }
            },
            Message::MintRequest { voucher, blinded } => match self.minter.handle_sign(&voucher, &blinded) {
                Ok(sig) => ctx.send(from, session, tag.reply(), Message::BlindSigned { sig }),
                Err(e) => {
                    ctx.event("MINT_REFUSED", e.to_string());
                    ctx.refuse(from, session, tag, "", "MINT_REFUSED", e.to_string());
                }
            },
            other => ctx.event("UNEXPECTED", other.kind()),
        }
    }
}
