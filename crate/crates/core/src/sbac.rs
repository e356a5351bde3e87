//! Shard-led two-phase commit. Input shards exchange votes directly and
//! each decides locally; output-only shards just apply the decision.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ledger::{FaultConfig, ShardId, Transaction, TxnId};
use crate::message::{validate_cert, ActorId, Body, ProtocolMessage};
use crate::net::Effect;
use crate::store::ObjectStore;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SbacPending {
    pub txn: Transaction,
    /// This shard's own phase-1 vote, once cast.
    pub own: Option<bool>,
    /// First vote received per input shard (including our own).
    pub votes: BTreeMap<ShardId, bool>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SbacShard {
    pub id: ShardId,
    pub store: ObjectStore,
    pub pending: BTreeMap<TxnId, SbacPending>,
}

impl SbacShard {
    pub fn new(id: ShardId) -> Self {
        Self { id, store: ObjectStore::new(id), pending: BTreeMap::new() }
    }

    fn pending_entry(&mut self, txn: &Transaction) -> &mut SbacPending {
        self.pending.entry(txn.id).or_insert_with(|| SbacPending {
            txn: txn.clone(),
            own: None,
            votes: BTreeMap::new(),
        })
    }
}

/// Local check and vote. Locks every local input on success.
pub fn sbac_phase1(shard: &mut SbacShard, txn: &Transaction, f: u16) -> Result<ProtocolMessage> {
    if !txn.manages_input(shard.id) {
        return Err(Error::NotConcerned { shard: shard.id, txn: txn.id });
    }
    let local: Vec<_> = txn.local_inputs(shard.id).collect();
    let ok = local.iter().all(|&x| shard.store.is_active(x));
    if ok {
        for &x in &local {
            shard.store.lock(x, txn.id, 0);
        }
    }
    let me = shard.id;
    let entry = shard.pending_entry(txn);
    entry.own = Some(ok);
    entry.votes.entry(me).or_insert(ok);
    let body = if ok {
        Body::SbacPreAccept { txn: txn.clone() }
    } else {
        Body::SbacPreAbort { txn: txn.clone() }
    };
    Ok(ProtocolMessage::signed(me, f, body))
}

/// Decides once this shard has voted and holds one vote per input shard.
/// Returns the decision message; `None` while votes are missing.
pub fn sbac_phase2(shard: &mut SbacShard, txn_id: TxnId, f: u16) -> Option<ProtocolMessage> {
    let entry = shard.pending.get(&txn_id)?;
    entry.own?;
    let txn = entry.txn.clone();
    if !txn.input_shards().iter().all(|s| entry.votes.contains_key(s)) {
        return None;
    }
    let commit = entry.votes.values().all(|&v| v);
    let own = entry.own == Some(true);
    shard.pending.remove(&txn_id);

    let locals: Vec<_> = txn.local_inputs(shard.id).collect();
    if commit {
        for x in locals {
            shard.store.inactivate(x, txn.id);
        }
        for y in txn.local_outputs(shard.id).collect::<Vec<_>>() {
            shard.store.create(y, txn.id);
        }
        Some(ProtocolMessage::signed(shard.id, f, Body::SbacAccept { txn }))
    } else {
        if own {
            for x in locals {
                shard.store.unlock(x, txn.id, None);
            }
        }
        Some(ProtocolMessage::signed(shard.id, f, Body::SbacAbort { txn }))
    }
}

/// Output-only shard receiving a decision: any certified Accept creates the
/// local outputs. There is deliberately no check against replays.
pub fn sbac_output_apply(shard: &mut SbacShard, msg: &ProtocolMessage) -> Vec<crate::ledger::ObjectId> {
    let Body::SbacAccept { txn } = &msg.body else { return vec![] };
    txn.local_outputs(shard.id)
        .collect::<Vec<_>>()
        .into_iter()
        .filter(|&y| shard.store.create(y, txn.id))
        .collect()
}

fn decision_effects(shard: ShardId, decision: ProtocolMessage) -> Vec<Effect> {
    let txn = decision.txn().clone();
    let mut out = vec![Effect::Send { to: ActorId::Client(txn.client), msg: decision.clone() }];
    for s in txn.output_only_shards() {
        if s != shard {
            out.push(Effect::Send { to: ActorId::Shard(s), msg: decision.clone() });
        }
    }
    out
}

pub(crate) fn handle(shard: &mut SbacShard, faults: &FaultConfig, msg: &ProtocolMessage) -> Vec<Effect> {
    let f = faults.f_of(shard.id).unwrap_or(0);
    match &msg.body {
        Body::SbacSubmit { txn } => {
            if shard.pending.get(&txn.id).is_some_and(|p| p.own.is_some()) {
                return vec![];
            }
            let Ok(vote) = sbac_phase1(shard, txn, f) else { return vec![] };
            let mut out: Vec<Effect> = txn
                .input_shards()
                .into_iter()
                .filter(|&s| s != shard.id)
                .map(|s| Effect::Send { to: ActorId::Shard(s), msg: vote.clone() })
                .collect();
            if let Some(d) = sbac_phase2(shard, txn.id, f) {
                out.extend(decision_effects(shard.id, d));
            }
            out
        }
        Body::SbacPreAccept { txn } | Body::SbacPreAbort { txn } => {
            let Some(from) = msg.sender_shard() else { return vec![] };
            if from == shard.id
                || !txn.manages_input(from)
                || !txn.manages_input(shard.id)
                || !validate_cert(msg, faults)
            {
                return vec![];
            }
            let accept = matches!(msg.body, Body::SbacPreAccept { .. });
            shard.pending_entry(txn).votes.entry(from).or_insert(accept);
            match sbac_phase2(shard, txn.id, f) {
                Some(d) => decision_effects(shard.id, d),
                None => vec![],
            }
        }
        Body::SbacAccept { txn } => {
            let from_input = msg.sender_shard().is_some_and(|s| txn.manages_input(s));
            if from_input && !txn.manages_input(shard.id) && validate_cert(msg, faults) {
                sbac_output_apply(shard, msg);
            }
            vec![]
        }
        _ => vec![],
    }
}
