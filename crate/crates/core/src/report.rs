//! Deterministic run reports.
//!
//! A report is pretty-printed JSON whose field order is fixed by the struct
//! layout and whose maps are ordered, so two runs of the same scenario give
//! the same bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::{ObjectRecord, ObjectState, ShardId};
use crate::scenario::{AssertionResult, ScenarioOutcome};

pub const REPORT_SCHEMA: &str = "xshard-report/1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRow {
    pub id: String,
    pub state: String,
    pub seq: u64,
}

impl ObjectRow {
    pub fn of(r: &ObjectRecord) -> Self {
        Self { id: r.id.to_string(), state: state_name(r.state), seq: r.seq }
    }
}

pub fn state_name(s: ObjectState) -> String {
    match s {
        ObjectState::Active => "active".into(),
        ObjectState::Locked { txn, seq } => format!("locked(t{txn},{seq})"),
        ObjectState::Inactive => "inactive".into(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxnReport {
    pub classification: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub counterfactual: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageCounts {
    pub total: u64,
    pub injected: u64,
    pub dropped: u64,
    pub by_kind: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogSummary {
    pub entries: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub scenario: String,
    pub protocol: String,
    pub num_shards: u16,
    pub seed: u64,
    /// Object tables when the observation window opened.
    pub before: BTreeMap<String, Vec<ObjectRow>>,
    pub after: BTreeMap<String, Vec<ObjectRow>>,
    pub transactions: BTreeMap<String, TxnReport>,
    pub messages: MessageCounts,
    pub recording_log: LogSummary,
    pub delivery_trace: String,
    pub assertions: Vec<AssertionResult>,
    pub passed: bool,
}

fn tables<'a>(t: impl Iterator<Item = (&'a ShardId, &'a Vec<ObjectRecord>)>) -> BTreeMap<String, Vec<ObjectRow>> {
    t.map(|(s, rs)| (s.to_string(), rs.iter().map(ObjectRow::of).collect())).collect()
}

impl Report {
    pub fn from_outcome(o: &ScenarioOutcome) -> Self {
        let stats = o.stats();
        let transactions = o
            .classifications
            .iter()
            .map(|(id, c)| {
                let detail = match c {
                    crate::oracle::Classification::Inconsistent(d) => Some(d.clone()),
                    _ => None,
                };
                let cf = o.counterfactual_classifications.get(id).map_or("none", |c| c.label());
                (
                    format!("t{id}"),
                    TxnReport { classification: c.label().into(), detail, counterfactual: cf.into() },
                )
            })
            .collect();
        Report {
            schema: REPORT_SCHEMA.into(),
            scenario: o.scenario.name.clone(),
            protocol: o.scenario.protocol.name().into(),
            num_shards: o.scenario.num_shards,
            seed: o.scenario.seed,
            before: tables(o.window.before.iter()),
            after: tables(o.snapshot.object_tables().iter()),
            transactions,
            messages: MessageCounts {
                total: stats.total(),
                injected: stats.injected,
                dropped: stats.dropped,
                by_kind: stats.by_kind.iter().map(|(k, v)| (k.name().to_string(), *v)).collect(),
            },
            recording_log: LogSummary { entries: o.log().len(), sha256: o.log().digest_hex() },
            delivery_trace: o.system.world.trace_digest(),
            assertions: o.assertions.clone(),
            passed: o.passed(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Codec(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Codec(e.to_string()))
    }
}

/// Side-by-side text rendering of the before/after object tables.
pub fn render_tables(report: &Report) -> String {
    let mut out = String::new();
    let shards: std::collections::BTreeSet<&String> = report.before.keys().chain(report.after.keys()).collect();
    for s in shards {
        let _ = writeln!(out, "{s}");
        let before = report.before.get(s).map(Vec::as_slice).unwrap_or(&[]);
        let after = report.after.get(s).map(Vec::as_slice).unwrap_or(&[]);
        let mut ids: Vec<&String> = before.iter().chain(after.iter()).map(|r| &r.id).collect();
        ids.sort();
        ids.dedup();
        for id in ids {
            let show = |rows: &[ObjectRow]| {
                rows.iter()
                    .find(|r| &r.id == id)
                    .map_or("-".to_string(), |r| format!("{} seq={}", r.state, r.seq))
            };
            let _ = writeln!(out, "  {id:<10} {:<24} -> {}", show(before), show(after));
        }
    }
    out
}
