//! Scenario scripts: declared actors, network shape and an ordered list of
//! steps. The JSON form is described by `scenarios/schema.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use uso_core::flow::Flow;

use crate::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub seed: u64,
    pub actors: Actors,
    #[serde(default)]
    pub network: NetworkConfig,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Actors {
    #[serde(default)]
    pub consumers: Vec<ConsumerDecl>,
    #[serde(default)]
    pub banks: Vec<BankDecl>,
    #[serde(default)]
    pub minters: Vec<MinterDecl>,
    #[serde(default)]
    pub providers: Vec<ProviderDecl>,
    #[serde(default)]
    pub boards: Vec<ProviderDecl>,
    #[serde(default)]
    pub dlts: Vec<DltDecl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumerDecl {
    pub name: String,
    /// Keeps spent keys live and answers every payment request.
    #[serde(default)]
    pub double_spender: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankDecl {
    pub name: String,
    #[serde(default)]
    pub accounts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinterDecl {
    pub name: String,
    pub bank: String,
    #[serde(default = "default_denominations")]
    pub denominations: Vec<u64>,
    #[serde(default = "default_key_bits")]
    pub key_bits: usize,
}

fn default_denominations() -> Vec<u64> {
    uso_core::mint::DENOMINATIONS.to_vec()
}

fn default_key_bits() -> usize {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderDecl {
    pub name: String,
    /// Ticks between the first pending registration and the epoch close.
    #[serde(default = "one")]
    pub epoch_ticks: u64,
    #[serde(default)]
    pub equivocating: bool,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DltDecl {
    pub name: String,
    #[serde(default = "three")]
    pub participants: usize,
}

fn three() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "one")]
    pub default_delay: u64,
    /// Extra delivery delay drawn uniformly from `0..=jitter` per message.
    #[serde(default)]
    pub jitter: u64,
    #[serde(default)]
    pub links: Vec<LinkDecl>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { default_delay: 1, jitter: 0, links: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDecl {
    pub from: String,
    pub to: String,
    pub delay: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sender,
    Recipient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    WithdrawChaum {
        consumer: String,
        bank: String,
        amount: u64,
        ledger: String,
        asset: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        voucher: Option<String>,
    },
    WithdrawZkp {
        consumer: String,
        bank: String,
        board: String,
        amount: u64,
        ledger: String,
        asset: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        voucher: Option<String>,
    },
    Transfer {
        from: String,
        to: String,
        asset: String,
        mode: Mode,
    },
    DoubleSpend {
        holder: String,
        asset: String,
        recipients: Vec<String>,
        mode: Mode,
    },
    Redeem {
        holder: String,
        bank: String,
        asset: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        account: Option<String>,
        /// Take a recycled voucher under this name instead of a credit.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        voucher: Option<String>,
    },
    CloseEpoch {
        provider: String,
    },
    ForkEpoch {
        provider: String,
        honest: Vec<String>,
        forked: Vec<String>,
    },
    Gossip {
        from: String,
        to: String,
    },
    SubmitRoot {
        from: String,
        dlt: String,
    },
    Anchor {
        dlt: String,
    },
    Stack {
        holder: String,
        asset: String,
        through: Vec<String>,
    },
    AssertValid {
        holder: String,
        asset: String,
    },
    AssertBalance {
        bank: String,
        account: String,
        equals: u64,
    },
    AssertEvent {
        actor: String,
        code: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        count: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step: Option<usize>,
    },
    /// Across `actors`, `code` occurs exactly `count` times in `step`.
    AssertEventTotal {
        actors: Vec<String>,
        code: String,
        count: usize,
        step: usize,
    },
    AssertEvidence {
        actor: String,
    },
    AssertStacked {
        holder: String,
        asset: String,
    },
    AssertConforms {
        flow: Flow,
        sessions: usize,
    },
    AssertUnlinkable {
        bank: String,
    },
}

impl Step {
    pub fn op(&self) -> &'static str {
        match self {
            Step::WithdrawChaum { .. } => "withdraw_chaum",
            Step::WithdrawZkp { .. } => "withdraw_zkp",
            Step::Transfer { .. } => "transfer",
            Step::DoubleSpend { .. } => "double_spend",
            Step::Redeem { .. } => "redeem",
            Step::CloseEpoch { .. } => "close_epoch",
            Step::ForkEpoch { .. } => "fork_epoch",
            Step::Gossip { .. } => "gossip",
            Step::SubmitRoot { .. } => "submit_root",
            Step::Anchor { .. } => "anchor",
            Step::Stack { .. } => "stack",
            Step::AssertValid { .. } => "assert_valid",
            Step::AssertBalance { .. } => "assert_balance",
            Step::AssertEvent { .. } => "assert_event",
            Step::AssertEventTotal { .. } => "assert_event_total",
            Step::AssertEvidence { .. } => "assert_evidence",
            Step::AssertStacked { .. } => "assert_stacked",
            Step::AssertConforms { .. } => "assert_conforms",
            Step::AssertUnlinkable { .. } => "assert_unlinkable",
        }
    }

    pub fn is_assertion(&self) -> bool {
        self.op().starts_with("assert_")
    }

    /// Every `(actor name, expected kind)` the step refers to.
    fn references(&self) -> Vec<(&str, Kind)> {
        use Kind::*;
        let mut v: Vec<(&str, Kind)> = Vec::new();
        match self {
            Step::WithdrawChaum { consumer, bank, ledger, .. } => {
                v.extend([(consumer.as_str(), Consumer), (bank.as_str(), Bank), (ledger.as_str(), Provider)])
            }
            Step::WithdrawZkp { consumer, bank, board, ledger, .. } => v.extend([
                (consumer.as_str(), Consumer),
                (bank.as_str(), Bank),
                (board.as_str(), Board),
                (ledger.as_str(), Provider),
            ]),
            Step::Transfer { from, to, .. } => v.extend([(from.as_str(), Consumer), (to.as_str(), Consumer)]),
            Step::DoubleSpend { holder, recipients, .. } => {
                v.push((holder, Consumer));
                v.extend(recipients.iter().map(|r| (r.as_str(), Consumer)));
            }
            Step::Redeem { holder, bank, .. } => v.extend([(holder.as_str(), Consumer), (bank.as_str(), Bank)]),
            Step::CloseEpoch { provider } => v.push((provider, AnyLedger)),
            Step::ForkEpoch { provider, honest, forked } => {
                v.push((provider, Provider));
                v.extend(honest.iter().chain(forked).map(|r| (r.as_str(), Any)));
            }
            Step::Gossip { from, to } => v.extend([(from.as_str(), Any), (to.as_str(), Any)]),
            Step::SubmitRoot { from, dlt } => v.extend([(from.as_str(), AnyLedger), (dlt.as_str(), Dlt)]),
            Step::Anchor { dlt } => v.push((dlt, Dlt)),
            Step::Stack { holder, through, .. } => {
                v.push((holder, Consumer));
                v.extend(through.iter().map(|d| (d.as_str(), Dlt)));
            }
            Step::AssertValid { holder, .. } | Step::AssertStacked { holder, .. } => v.push((holder, Consumer)),
            Step::AssertBalance { bank, .. } | Step::AssertUnlinkable { bank } => v.push((bank, Bank)),
            Step::AssertEvent { actor, .. } | Step::AssertEvidence { actor } => v.push((actor, Any)),
            Step::AssertEventTotal { actors, .. } => v.extend(actors.iter().map(|a| (a.as_str(), Any))),
            Step::AssertConforms { .. } => {}
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    Consumer,
    Bank,
    Minter,
    Provider,
    Board,
    Dlt,
    AnyLedger,
    Any,
}

impl Kind {
    fn accepts(self, actual: Kind) -> bool {
        match self {
            Kind::Any => true,
            Kind::AnyLedger => matches!(actual, Kind::Provider | Kind::Board | Kind::Dlt),
            k => k == actual,
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| SimError::Schema(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub(crate) fn kinds(&self) -> BTreeMap<&str, Kind> {
        let a = &self.actors;
        let mut m = BTreeMap::new();
        m.extend(a.consumers.iter().map(|c| (c.name.as_str(), Kind::Consumer)));
        m.extend(a.banks.iter().map(|c| (c.name.as_str(), Kind::Bank)));
        m.extend(a.minters.iter().map(|c| (c.name.as_str(), Kind::Minter)));
        m.extend(a.providers.iter().map(|c| (c.name.as_str(), Kind::Provider)));
        m.extend(a.boards.iter().map(|c| (c.name.as_str(), Kind::Board)));
        m.extend(a.dlts.iter().map(|c| (c.name.as_str(), Kind::Dlt)));
        m
    }

    /// Names are unique, every reference resolves to an actor of the right
    /// kind, and every bank has exactly one minter.
    pub fn validate(&self) -> Result<(), SimError> {
        let a = &self.actors;
        let all: Vec<&str> = a
            .consumers
            .iter()
            .map(|c| c.name.as_str())
            .chain(a.banks.iter().map(|c| c.name.as_str()))
            .chain(a.minters.iter().map(|c| c.name.as_str()))
            .chain(a.providers.iter().map(|c| c.name.as_str()))
            .chain(a.boards.iter().map(|c| c.name.as_str()))
            .chain(a.dlts.iter().map(|c| c.name.as_str()))
            .collect();
        let mut seen = BTreeSet::new();
        for n in &all {
            if !seen.insert(*n) {
                return Err(SimError::Schema(format!("actor name {n} declared twice")));
            }
        }
        let kinds = self.kinds();
        let check = |name: &str, want: Kind| -> Result<(), SimError> {
            match kinds.get(name) {
                Some(k) if want.accepts(*k) => Ok(()),
                Some(k) => Err(SimError::Schema(format!("{name} is a {k:?}, expected {want:?}"))),
                None => Err(SimError::UnknownActor(name.to_string())),
            }
        };
        for m in &a.minters {
            check(&m.bank, Kind::Bank)?;
            for q in &m.denominations {
                if !uso_core::mint::is_denomination(*q) {
                    return Err(SimError::Schema(format!("minter {}: unsupported denomination {q}", m.name)));
                }
            }
        }
        for b in &a.banks {
            let n = a.minters.iter().filter(|m| m.bank == b.name).count();
            if n > 1 {
                return Err(SimError::Schema(format!("bank {} has {n} minters", b.name)));
            }
        }
        for l in &self.network.links {
            check(&l.from, Kind::Any)?;
            check(&l.to, Kind::Any)?;
        }
        for step in &self.steps {
            for (name, want) in step.references() {
                check(name, want)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        r#"{"name":"t","seed":1,"actors":{"consumers":[{"name":"alice"}],"providers":[{"name":"L1"}]},
            "steps":[{"op":"close_epoch","provider":"L1"}]}"#
            .to_string()
    }

    #[test]
    fn parses_minimal_script() {
        let s = Scenario::from_json(&minimal()).unwrap();
        assert_eq!(s.network.default_delay, 1);
        assert_eq!(s.steps[0].op(), "close_epoch");
    }

    #[test]
    fn unknown_fields_are_schema_errors() {
        let bad = minimal().replace("\"seed\":1", "\"seed\":1,\"colour\":2");
        assert!(matches!(Scenario::from_json(&bad), Err(SimError::Schema(_))));
    }

    #[test]
    fn undeclared_actor_is_reported() {
        let bad = minimal().replace("\"provider\":\"L1\"}]", "\"provider\":\"L7\"}]");
        assert_eq!(Scenario::from_json(&bad), Err(SimError::UnknownActor("L7".into())));
    }

    #[test]
    fn kind_mismatch_is_a_schema_error() {
        let bad = minimal().replace("\"provider\":\"L1\"}]", "\"provider\":\"alice\"}]");
        assert!(matches!(Scenario::from_json(&bad), Err(SimError::Schema(_))));
    }
}
