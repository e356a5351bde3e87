//! Client-led two-phase commit. Shards spend inputs optimistically in
//! phase 1; the client gathers votes and broadcasts the decision.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ledger::{FaultConfig, ObjectId, ShardId, Transaction, TxnId};
use crate::message::{validate_cert, ActorId, Body, ProtocolMessage};
use crate::store::ObjectStore;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AtomixShard {
    pub id: ShardId,
    pub store: ObjectStore,
    /// Objects this shard inactivated in phase 1, per transaction. An Abort
    /// re-activates them; a commit leaves the entry in place.
    pub journal: BTreeMap<TxnId, Vec<ObjectId>>,
}

impl AtomixShard {
    pub fn new(id: ShardId) -> Self {
        Self { id, store: ObjectStore::new(id), journal: BTreeMap::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AtomixPending {
    pub txn: Transaction,
    pub votes: BTreeMap<ShardId, ProtocolMessage>,
    /// The client abandons the transaction even if every shard accepts.
    pub withdraw: bool,
}

impl AtomixPending {
    pub fn new(txn: Transaction, withdraw: bool) -> Self {
        Self { txn, votes: BTreeMap::new(), withdraw }
    }
}

pub fn atomix_phase1(shard: &mut AtomixShard, txn: &Transaction, f: u16) -> Result<ProtocolMessage> {
    if !txn.manages_input(shard.id) {
        return Err(Error::NotConcerned { shard: shard.id, txn: txn.id });
    }
    let local: Vec<_> = txn.local_inputs(shard.id).collect();
    let ok = local.iter().all(|&x| shard.store.is_active(x));
    let body = if ok {
        for &x in &local {
            shard.store.inactivate(x, txn.id);
        }
        shard.journal.entry(txn.id).or_default().extend(local);
        Body::AtomixPreAccept { txn: txn.clone() }
    } else {
        Body::AtomixPreAbort { txn: txn.clone() }
    };
    Ok(ProtocolMessage::signed(shard.id, f, body))
}

/// Records a vote at the client (first per shard wins).
pub fn atomix_client_record(pending: &mut AtomixPending, vote: &ProtocolMessage) {
    if let Some(s) = vote.sender_shard() {
        pending.votes.entry(s).or_insert_with(|| vote.clone());
    }
}

/// Once every input shard has voted: Accept (with all PreAccept proofs) to
/// the output shards, or Abort (with the PreAbort proofs) to the input shards.
pub fn atomix_client_decide(pending: &AtomixPending, client: u16) -> Option<(ProtocolMessage, Vec<ActorId>)> {
    let txn = &pending.txn;
    let inputs = txn.input_shards();
    if !inputs.iter().all(|s| pending.votes.contains_key(s)) {
        return None;
    }
    let accepts = pending
        .votes
        .values()
        .all(|v| matches!(v.body, Body::AtomixPreAccept { .. }));
    let sender = ActorId::Client(client);
    if accepts && !pending.withdraw {
        let proofs = pending.votes.values().cloned().collect();
        let msg = ProtocolMessage::unsigned(sender, Body::AtomixAccept { txn: txn.clone(), proofs });
        let to = txn.output_shards().into_iter().map(ActorId::Shard).collect();
        Some((msg, to))
    } else {
        let proofs: Vec<_> = if accepts {
            pending.votes.values().cloned().collect()
        } else {
            pending
                .votes
                .values()
                .filter(|v| matches!(v.body, Body::AtomixPreAbort { .. }))
                .cloned()
                .collect()
        };
        let msg = ProtocolMessage::unsigned(sender, Body::AtomixAbort { txn: txn.clone(), proofs });
        let to = inputs.into_iter().map(ActorId::Shard).collect();
        Some((msg, to))
    }
}

fn proofs_valid(txn: &Transaction, proofs: &[ProtocolMessage], faults: &FaultConfig, accept: bool) -> bool {
    let ok_vote = |p: &ProtocolMessage| {
        p.txn() == txn
            && p.sender_shard().is_some_and(|s| txn.manages_input(s))
            && validate_cert(p, faults)
    };
    if accept {
        txn.input_shards().iter().all(|&s| {
            proofs.iter().any(|p| {
                p.sender_shard() == Some(s)
                    && matches!(p.body, Body::AtomixPreAccept { .. })
                    && ok_vote(p)
            })
        })
    } else {
        !proofs.is_empty()
            && proofs.iter().all(|p| {
                matches!(p.body, Body::AtomixPreAccept { .. } | Body::AtomixPreAbort { .. }) && ok_vote(p)
            })
    }
}

/// Applies a client decision. No check that the transaction is still
/// pending: Accept creates local outputs and Abort re-activates whatever
/// the journal holds for the transaction.
pub fn atomix_apply(shard: &mut AtomixShard, msg: &ProtocolMessage, faults: &FaultConfig) -> bool {
    match &msg.body {
        Body::AtomixAccept { txn, proofs } if proofs_valid(txn, proofs, faults, true) => {
            let mut changed = false;
            for y in txn.local_outputs(shard.id).collect::<Vec<_>>() {
                changed |= shard.store.create(y, txn.id);
            }
            changed
        }
        Body::AtomixAbort { txn, proofs } if proofs_valid(txn, proofs, faults, false) => {
            let Some(objs) = shard.journal.remove(&txn.id) else { return false };
            let mut changed = false;
            for x in objs {
                changed |= shard.store.reactivate(x, txn.id);
            }
            changed
        }
        _ => false,
    }
}
