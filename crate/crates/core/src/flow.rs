//! Numbered message sequences of the withdrawal and transfer protocols.
//!
//! Flows record a [`FlowStep`] per message; conformance tests compare the
//! recorded sequence against the reference tables here.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Consumer,
    Bank,
    Minter,
    BulletinBoard,
    Sender,
    Recipient,
    Relay,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Consumer => "consumer",
            Role::Bank => "bank",
            Role::Minter => "minter",
            Role::BulletinBoard => "bulletin_board",
            Role::Sender => "sender",
            Role::Recipient => "recipient",
            Role::Relay => "relay",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flow {
    ChaumWithdraw,
    ZkpWithdraw,
    TransferSender,
    TransferRecipient,
    Redeem,
}

impl Flow {
    pub fn reference(self) -> &'static [FlowSpec] {
        match self {
            Flow::ChaumWithdraw => &CHAUM_WITHDRAW,
            Flow::ZkpWithdraw => &ZKP_WITHDRAW,
            Flow::TransferSender => &TRANSFER_SENDER,
            Flow::TransferRecipient => &TRANSFER_RECIPIENT,
            Flow::Redeem => &REDEEM,
        }
    }
}

/// One row of a reference sequence: `(step) from → to : label`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowSpec {
    pub step: u8,
    pub from: Role,
    pub to: Role,
    pub label: &'static str,
}

const fn row(step: u8, from: Role, to: Role, label: &'static str) -> FlowSpec {
    FlowSpec {
        step,
        from,
        to,
        label,
    }
}

use Role::*;

pub const CHAUM_WITHDRAW: [FlowSpec; 8] = [
    row(1, Consumer, Bank, "B"),
    row(2, Bank, Minter, "B"),
    row(3, Minter, Bank, "B'"),
    row(4, Bank, Consumer, "B'"),
    row(5, Consumer, Bank, "w, b(h(F0))"),
    row(6, Bank, Minter, "F~, b(h(F0))"),
    row(7, Minter, Bank, "s(b(h(F0)))"),
    row(8, Bank, Consumer, "s(b(h(F0)))"),
];

pub const ZKP_WITHDRAW: [FlowSpec; 4] = [
    row(3, Consumer, Bank, "w, beta(F0)"),
    row(4, Bank, BulletinBoard, "F~, beta(F0)"),
    row(5, BulletinBoard, Bank, "p(G_BB, k_b, (F~, beta(F0)))"),
    row(6, Bank, Consumer, "p(G_BB, k_b, (F~, beta(F0)))"),
];

pub const TRANSFER_SENDER: [FlowSpec; 4] = [
    row(1, Recipient, Sender, "k_j+1"),
    row(2, Sender, Relay, "k_j, s(h(F_j), k_j)"),
    row(3, Relay, Sender, "p(G_L, k_j, h(F_j))"),
    row(4, Sender, Recipient, "F_j, P_j"),
];

pub const TRANSFER_RECIPIENT: [FlowSpec; 5] = [
    row(1, Recipient, Sender, "k_j+1"),
    row(2, Sender, Recipient, "F_j, P_j-1, k_j, s(h(F_j), k_j)"),
    row(3, Recipient, Relay, "k_j, s(h(F_j), k_j)"),
    row(4, Relay, Recipient, "p(G_L, k_j, h(F_j))"),
    row(5, Recipient, Sender, "p(G_L, k_j, h(F_j))"),
];

/// Redemption is a recipient-registered transfer with the bank as recipient.
pub const REDEEM: [FlowSpec; 5] = [
    row(1, Bank, Consumer, "k_j+1"),
    row(2, Consumer, Bank, "F_j, P_j-1, k_j, s(h(F_j), k_j)"),
    row(3, Bank, Relay, "k_j, s(h(F_j), k_j)"),
    row(4, Relay, Bank, "p(G_L, k_j, h(F_j))"),
    row(5, Bank, Consumer, "p(G_L, k_j, h(F_j))"),
];

/// A message as it was actually sent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowStep {
    pub flow: Flow,
    pub step: u8,
    pub from: Role,
    pub to: Role,
    pub label: String,
}

#[derive(Debug, Default, Clone)]
pub struct FlowLog {
    pub steps: Vec<FlowStep>,
}

impl FlowLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record reference step `step` of `flow`.
    pub fn record(&mut self, flow: Flow, step: u8) {
        let row = flow
            .reference()
            .iter()
            .find(|s| s.step == step)
            .unwrap_or_else(|| panic!("{flow:?} has no step {step}"));
        self.steps.push(FlowStep {
            flow,
            step,
            from: row.from,
            to: row.to,
            label: row.label.to_string(),
        });
    }

    pub fn of(&self, flow: Flow) -> Vec<&FlowStep> {
        self.steps.iter().filter(|s| s.flow == flow).collect()
    }
}

/// Whether `observed` is exactly the reference sequence of `flow`.
pub fn conforms(flow: Flow, observed: &[&FlowStep]) -> bool {
    let reference = flow.reference();
    observed.len() == reference.len()
        && observed.iter().zip(reference).all(|(o, r)| {
            o.step == r.step && o.from == r.from && o.to == r.to && o.label == r.label
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_steps_are_consecutive() {
        for flow in [
            Flow::ChaumWithdraw,
            Flow::ZkpWithdraw,
            Flow::TransferSender,
            Flow::TransferRecipient,
        ] {
            let r = flow.reference();
            for w in r.windows(2) {
                assert_eq!(w[1].step, w[0].step + 1);
            }
        }
        assert_eq!(ZKP_WITHDRAW[0].step, 3);
    }

    #[test]
    fn reordered_log_does_not_conform() {
        let mut log = FlowLog::new();
        for s in [1, 2, 4, 3] {
            log.record(Flow::TransferSender, s);
        }
        assert!(!conforms(
            Flow::TransferSender,
            &log.of(Flow::TransferSender)
        ));
        let mut log = FlowLog::new();
        for s in 1..=4 {
            log.record(Flow::TransferSender, s);
        }
        assert!(conforms(
            Flow::TransferSender,
            &log.of(Flow::TransferSender)
        ));
    }
}
