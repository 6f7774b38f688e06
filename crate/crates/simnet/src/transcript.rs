//! Delivered-message log, written as JSON lines.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use uso_core::crypto::hash;
use uso_core::flow::{conforms, Flow, FlowStep, Role};

use crate::transport::Envelope;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub tick: u64,
    pub sent: u64,
    pub from: String,
    pub to: String,
    pub session: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub flow: Option<Flow>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub step: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub from_role: Option<Role>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub to_role: Option<Role>,
    pub label: String,
    pub kind: String,
    pub digest: String,
}

impl Record {
    pub fn of(env: &Envelope, tick: u64) -> Self {
        Record {
            tick,
            sent: env.sent_at,
            from: env.from.clone(),
            to: env.to.clone(),
            session: env.session,
            flow: env.flow,
            step: env.step,
            from_role: env.from_role,
            to_role: env.to_role,
            label: env.label.clone(),
            kind: env.kind.to_string(),
            digest: hash(&env.body).to_hex(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub records: Vec<Record>,
}

/// One mismatch between a recorded session and its reference flow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlowDiff {
    pub session: u64,
    pub flow: Flow,
    pub observed: Vec<String>,
    pub expected: Vec<String>,
}

impl Transcript {
    pub fn push(&mut self, r: Record) {
        self.records.push(r);
    }

    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("plain data") + "\n").collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Transcript { records })
    }

    /// Messages an actor received.
    pub fn view<'a>(&'a self, actor: &'a str) -> impl Iterator<Item = &'a Record> + 'a {
        self.records.iter().filter(move |r| r.to == actor)
    }

    /// Numbered messages of `flow`, grouped by session.
    pub fn sessions(&self, flow: Flow) -> BTreeMap<u64, Vec<FlowStep>> {
        let mut out: BTreeMap<u64, Vec<FlowStep>> = BTreeMap::new();
        for r in &self.records {
            if r.flow != Some(flow) {
                continue;
            }
            let (Some(step), Some(from), Some(to)) = (r.step, r.from_role, r.to_role) else {
                continue;
            };
            out.entry(r.session)
                .or_default()
                .push(FlowStep { flow, step, from, to, label: r.label.clone() });
        }
        out
    }

    /// Structural diff of every recorded `flow` session against the
    /// reference sequence. Empty means every session conforms.
    pub fn diff(&self, flow: Flow) -> Vec<FlowDiff> {
        let show = |step: u8, from: Role, to: Role, label: &str| format!("({step}) {from} -> {to}: {label}");
        self.sessions(flow)
            .into_iter()
            .filter_map(|(session, steps)| {
                let refs: Vec<&FlowStep> = steps.iter().collect();
                if conforms(flow, &refs) {
                    return None;
                }
                Some(FlowDiff {
                    session,
                    flow,
                    observed: steps.iter().map(|s| show(s.step, s.from, s.to, &s.label)).collect(),
                    expected: flow.reference().iter().map(|s| show(s.step, s.from, s.to, s.label)).collect(),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(session: u64, flow: Flow, s: &uso_core::flow::FlowSpec) -> Record {
        Record {
            tick: s.step as u64,
            sent: 0,
            from: "a".into(),
            to: "b".into(),
            session,
            flow: Some(flow),
            step: Some(s.step),
            from_role: Some(s.from),
            to_role: Some(s.to),
            label: s.label.into(),
            kind: "test".into(),
            digest: String::new(),
        }
    }

    fn reference(session: u64, flow: Flow) -> Vec<Record> {
        flow.reference().iter().map(|s| record(session, flow, s)).collect()
    }

    #[test]
    fn reference_sessions_have_no_diff() {
        let mut t = Transcript::default();
        for flow in [Flow::ChaumWithdraw, Flow::TransferRecipient] {
            reference(7, flow).into_iter().for_each(|r| t.push(r));
        }
        assert!(t.diff(Flow::ChaumWithdraw).is_empty());
        assert_eq!(t.sessions(Flow::TransferRecipient)[&7].len(), 5);
    }

    #[test]
    fn swapped_or_missing_steps_are_reported() {
        let mut swapped = reference(1, Flow::TransferSender);
        swapped.swap(1, 2);
        let mut missing = reference(2, Flow::TransferSender);
        missing.pop();
        let t = Transcript { records: swapped.into_iter().chain(missing).collect() };
        let diffs = t.diff(Flow::TransferSender);
        assert_eq!(diffs.iter().map(|d| d.session).collect::<Vec<_>>(), [1, 2]);
        assert_eq!(diffs[1].observed.len(), 3);
        assert_eq!(diffs[1].expected.len(), 4);
    }

    #[test]
    fn unnumbered_records_are_not_flow_steps() {
        let mut r = reference(3, Flow::Redeem).remove(0);
        r.step = None;
        let t = Transcript { records: vec![r] };
        assert!(t.sessions(Flow::Redeem).is_empty());
        assert_eq!(t.view("b").count(), 1);
    }
}
