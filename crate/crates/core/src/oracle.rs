//! Protocol-independent judge of final worlds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::{ObjectId, ObjectRecord, ObjectState, ShardId, Transaction, TxnId};
use crate::store::{Action, LedgerEvent};

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ShardView {
    pub objects: BTreeMap<ObjectId, ObjectRecord>,
    pub history: Vec<LedgerEvent>,
}

/// Everything the oracle needs, taken at quiescence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WorldSnapshot {
    pub quiescent: bool,
    pub shards: BTreeMap<ShardId, ShardView>,
    /// Transactions as submitted (Byzcuit: with dummies and s_T).
    pub txns: BTreeMap<TxnId, Transaction>,
    pub submitted: BTreeSet<TxnId>,
    /// Outcome each client learned.
    pub outcomes: BTreeMap<TxnId, bool>,
    /// Transactions some node still holds open state for.
    pub undecided: BTreeSet<TxnId>,
    /// Transactions that commit in the adversary-free counterfactual run.
    pub counterfactual_commits: BTreeSet<TxnId>,
}

impl WorldSnapshot {
    pub fn object(&self, id: ObjectId) -> Option<&ObjectRecord> {
        self.shards.values().find_map(|v| v.objects.get(&id))
    }

    fn history_of(&self, id: ObjectId) -> impl Iterator<Item = &LedgerEvent> {
        self.shards
            .values()
            .flat_map(|v| v.history.iter())
            .filter(move |e| e.obj == id)
    }

    /// Final object tables without histories, for equality checks.
    pub fn object_tables(&self) -> BTreeMap<ShardId, Vec<ObjectRecord>> {
        self.shards
            .iter()
            .map(|(s, v)| (*s, v.objects.values().cloned().collect()))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputStatus {
    /// Active and spendable.
    Available,
    /// Locked by the transaction itself.
    Stuck,
    /// Spent by the transaction itself.
    Consumed,
    /// Absent, spent or held by something else, or retired by a clone.
    Unavailable,
}

/// End-state shape of one transaction: what happened to each input and how
/// many times each output was created on its behalf.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub inputs: Vec<(ObjectId, InputStatus)>,
    pub outputs: Vec<(ObjectId, u32)>,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ins: Vec<String> = self.inputs.iter().map(|(o, s)| format!("{o}={s:?}")).collect();
        let outs: Vec<String> = self.outputs.iter().map(|(o, n)| format!("{o}x{n}")).collect();
        write!(f, "inputs[{}] outputs[{}]", ins.join(" "), outs.join(" "))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "detail")]
pub enum Classification {
    ConsistentCommit,
    ConsistentAbort,
    AvailabilityLoss,
    Inconsistent(String),
}

impl Classification {
    pub fn label(&self) -> &'static str {
        match self {
            Classification::ConsistentCommit => "consistent-commit",
            Classification::ConsistentAbort => "consistent-abort",
            Classification::AvailabilityLoss => "availability-loss",
            Classification::Inconsistent(_) => "inconsistent",
        }
    }

    pub fn is_inconsistent(&self) -> bool {
        matches!(self, Classification::Inconsistent(_))
    }

    pub fn is_consistent(&self) -> bool {
        matches!(self, Classification::ConsistentCommit | Classification::ConsistentAbort)
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Classification::Inconsistent(d) => write!(f, "inconsistent ({d})"),
            c => f.write_str(c.label()),
        }
    }
}

pub fn input_status(snap: &WorldSnapshot, id: ObjectId, txn: TxnId) -> InputStatus {
    let Some(rec) = snap.object(id) else { return InputStatus::Unavailable };
    match rec.state {
        ObjectState::Active => InputStatus::Available,
        ObjectState::Locked { txn: t, .. } if t == txn => InputStatus::Stuck,
        ObjectState::Locked { .. } => InputStatus::Unavailable,
        ObjectState::Inactive => {
            let last = snap
                .history_of(id)
                .filter(|e| e.action != Action::BumpSeq)
                .last();
            match last {
                Some(e) if e.action == Action::Inactivate && e.txn == Some(txn) => InputStatus::Consumed,
                _ => InputStatus::Unavailable,
            }
        }
    }
}

pub fn shape(snap: &WorldSnapshot, txn: &Transaction) -> Shape {
    let inputs = txn.inputs.iter().map(|r| (r.id, input_status(snap, r.id, txn.id))).collect();
    let outputs = txn
        .outputs
        .iter()
        .map(|r| {
            let n = snap
                .history_of(r.id)
                .filter(|e| e.action == Action::Create && e.txn == Some(txn.id))
                .count() as u32;
            (r.id, n)
        })
        .collect();
    Shape { inputs, outputs }
}

/// Classifies a transaction purely from the snapshot.
pub fn classify(snap: &WorldSnapshot, txn_id: TxnId) -> Result<Classification> {
    if !snap.quiescent {
        return Err(Error::NotQuiescent);
    }
    let txn = snap
        .txns
        .get(&txn_id)
        .ok_or_else(|| Error::MalformedTransaction(format!("unknown txn {txn_id}")))?;
    Ok(classify_shape(&shape(snap, txn), snap.counterfactual_commits.contains(&txn_id)))
}

pub fn classify_shape(shape: &Shape, should_commit: bool) -> Classification {
    let all_consumed = shape.inputs.iter().all(|(_, s)| *s == InputStatus::Consumed);
    let any_consumed = shape.inputs.iter().any(|(_, s)| *s == InputStatus::Consumed);
    let any_stuck = shape.inputs.iter().any(|(_, s)| *s == InputStatus::Stuck);
    let all_once = shape.outputs.iter().all(|(_, n)| *n == 1);
    let none_created = shape.outputs.iter().all(|(_, n)| *n == 0);

    if all_consumed && all_once {
        return Classification::ConsistentCommit;
    }
    if none_created && !any_consumed && !any_stuck {
        return if should_commit {
            Classification::AvailabilityLoss
        } else {
            Classification::ConsistentAbort
        };
    }
    if none_created {
        return Classification::AvailabilityLoss;
    }
    let mut clauses = Vec::new();
    for (o, s) in &shape.inputs {
        if *s != InputStatus::Consumed {
            clauses.push(format!("input {o} {}", status_word(*s)));
        }
    }
    for (o, n) in &shape.outputs {
        match n {
            0 => clauses.push(format!("output {o} not created")),
            1 => {}
            n => clauses.push(format!("output {o} created {n} times")),
        }
    }
    Classification::Inconsistent(clauses.join("; "))
}

fn status_word(s: InputStatus) -> &'static str {
    match s {
        InputStatus::Available => "still active",
        InputStatus::Stuck => "still locked",
        InputStatus::Consumed => "consumed",
        InputStatus::Unavailable => "not spent by this transaction",
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxnRecord {
    pub txn: Transaction,
    /// Every input existed and was Active when the transaction was submitted.
    pub valid_at_submission: bool,
    pub classification: Classification,
    pub shape: Shape,
}

/// At most one transaction of every pair sharing an input commits.
pub fn check_conflict_exclusivity(history: &[TxnRecord]) -> bool {
    for (i, a) in history.iter().enumerate() {
        for b in &history[i + 1..] {
            let shared = a
                .txn
                .inputs
                .iter()
                .any(|x| b.txn.inputs.iter().any(|y| x.id == y.id));
            if shared
                && committed_anything(a)
                && committed_anything(b)
            {
                return false;
            }
        }
    }
    true
}

fn committed_anything(r: &TxnRecord) -> bool {
    r.classification == Classification::ConsistentCommit
        || r.shape.inputs.iter().any(|(_, s)| *s == InputStatus::Consumed)
            && r.shape.outputs.iter().any(|(_, n)| *n > 0)
}

/// No transaction that was invalid at submission commits or creates outputs.
pub fn check_validity(history: &[TxnRecord]) -> bool {
    history.iter().filter(|r| !r.valid_at_submission).all(|r| {
        r.classification != Classification::ConsistentCommit
            && r.shape.outputs.iter().all(|(_, n)| *n == 0)
    })
}

/// Every submitted transaction was decided and no node holds open state.
pub fn check_liveness(snap: &WorldSnapshot) -> bool {
    snap.submitted
        .iter()
        .all(|t| snap.outcomes.contains_key(t) && !snap.undecided.contains(t))
}
