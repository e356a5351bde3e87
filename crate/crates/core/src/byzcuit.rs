//! TM-coordinated two-phase commit hardened with transaction sequence
//! numbers, dummy objects, session caching, takeover and object cloning.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::ledger::{
    shard_of, tx_sequence_number, FaultConfig, ObjRef, ObjectId, ObjectState, SeqNo, ShardId,
    Transaction, TxnId, DEFAULT_OVERFLOW_THRESHOLD,
};
use crate::message::{validate_cert, ActorId, Body, ProtocolMessage};
use crate::net::{Effect, Tick, TimerTag};
use crate::store::ObjectStore;

pub type SessionKey = (TxnId, SeqNo);

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ByzParams {
    pub num_shards: u16,
    pub faults: FaultConfig,
    pub overflow_threshold: SeqNo,
    /// Objects whose seq reaches `overflow_threshold - clone_margin` after an
    /// abort are cloned.
    pub clone_margin: SeqNo,
    /// Actors a stuck shard asks to take over the TM role.
    pub takeover: Vec<ActorId>,
    pub stuck_timeout: Tick,
    pub max_stuck_notices: u8,
}

impl ByzParams {
    pub fn new(num_shards: u16, f: u16) -> Self {
        Self {
            num_shards,
            faults: FaultConfig::uniform(num_shards, f),
            overflow_threshold: DEFAULT_OVERFLOW_THRESHOLD,
            clone_margin: 1,
            takeover: Vec::new(),
            stuck_timeout: 8,
            max_stuck_notices: 3,
        }
    }

    fn f(&self, shard: ShardId) -> u16 {
        self.faults.f_of(shard).unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ByzShard {
    pub id: ShardId,
    pub store: ObjectStore,
    /// Sessions between phase 1 and phase 2.
    pub cache: BTreeMap<SessionKey, Transaction>,
    /// Our own phase-1 vote per session, kept for idempotent re-emission.
    pub persisted_votes: BTreeMap<SessionKey, ProtocolMessage>,
}

impl ByzShard {
    pub fn new(id: ShardId) -> Self {
        Self {
            id,
            store: ObjectStore::new(id),
            cache: BTreeMap::new(),
            persisted_votes: BTreeMap::new(),
        }
    }
}

/// Adds, for every shard that holds outputs but no real input, the first
/// available dummy of that shard as an input, plus its replacement as an output.
pub fn attach_dummies(txn: &Transaction, available: &BTreeMap<ShardId, Vec<ObjectId>>) -> Result<Transaction> {
    let mut out = txn.clone();
    let real_inputs: BTreeSet<ShardId> = txn.inputs.iter().filter(|r| !r.id.dummy).map(|r| r.shard).collect();
    let needs: BTreeSet<ShardId> = txn
        .output_shards()
        .into_iter()
        .filter(|s| !real_inputs.contains(s))
        .collect();
    for s in needs {
        if txn.inputs.iter().any(|r| r.id.dummy && r.shard == s) {
            continue;
        }
        let d = available
            .get(&s)
            .and_then(|v| v.first().copied())
            .ok_or(Error::DummyExhausted(s))?;
        out.inputs.push(ObjRef { id: d, shard: s });
        let next = d.next_dummy().expect("dummy ids have a successor");
        out.outputs.push(ObjRef { id: next, shard: s });
    }
    out.validate()?;
    Ok(out)
}

/// Stamps `s_T` (max over input and dummy seqs; unknown objects count as 0)
/// and addresses one submission to every concerned shard.
pub fn byzcuit_submit(
    txn: &Transaction,
    seqs: &BTreeMap<ObjectId, SeqNo>,
    client: u16,
    reply_to: ActorId,
) -> Result<(Transaction, Vec<(ActorId, ProtocolMessage)>)> {
    let input_seqs: Vec<SeqNo> = txn.inputs.iter().map(|r| seqs.get(&r.id).copied().unwrap_or(0)).collect();
    let s_t = tx_sequence_number(&input_seqs)?;
    let stamped = txn.clone().with_seq(s_t);
    let msgs = stamped
        .concerned_shards()
        .into_iter()
        .map(|s| {
            let body = Body::ByzSubmit { txn: stamped.clone(), reply_to };
            (ActorId::Shard(s), ProtocolMessage::unsigned(ActorId::Client(client), body))
        })
        .collect();
    Ok((stamped, msgs))
}

/// Caches the session and votes. Accepts iff every local input/dummy is
/// Active with seq ≤ s_T; accepted objects are locked under (T, s_T).
pub fn byzcuit_phase1(shard: &mut ByzShard, txn: &Transaction, params: &ByzParams) -> Result<ProtocolMessage> {
    let Some(s) = txn.seq else {
        return Err(Error::MalformedTransaction(format!("txn {} has no sequence number", txn.id)));
    };
    if !txn.manages_input(shard.id) {
        return Err(Error::NotConcerned { shard: shard.id, txn: txn.id });
    }
    let key = (txn.id, s);
    shard.cache.insert(key, txn.clone());
    let local: Vec<_> = txn.local_inputs(shard.id).collect();
    let ok = local.iter().all(|&x| {
        shard
            .store
            .get(x)
            .is_some_and(|r| r.state.is_active() && s >= r.seq)
    });
    let body = if ok {
        let observed = local.iter().map(|&x| (x, shard.store.get(x).expect("checked").seq)).collect();
        for &x in &local {
            shard.store.lock(x, txn.id, s);
        }
        Body::ByzPreAccept { txn: txn.clone(), observed }
    } else {
        Body::ByzPreAbort { txn: txn.clone() }
    };
    let vote = ProtocolMessage::signed(shard.id, params.f(shard.id), body);
    shard.persisted_votes.insert(key, vote.clone());
    Ok(vote)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TmSession {
    pub txn: Transaction,
    pub votes: BTreeMap<ShardId, ProtocolMessage>,
    pub decision: Option<ProtocolMessage>,
    pub queried: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Tm {
    pub id: u16,
    pub sessions: BTreeMap<SessionKey, TmSession>,
}

impl Tm {
    pub fn new(id: u16) -> Self {
        Self { id, sessions: BTreeMap::new() }
    }
}

/// Decision once every concerned shard has voted: Accept embedding all the
/// PreAccepts, otherwise Abort embedding all votes (at least one PreAbort).
pub fn tm_decide(tm: u16, session: &TmSession) -> Option<ProtocolMessage> {
    let concerned = session.txn.concerned_shards();
    if !concerned.iter().all(|s| session.votes.contains_key(s)) {
        return None;
    }
    let votes: Vec<ProtocolMessage> = session.votes.values().cloned().collect();
    let commit = votes.iter().all(|v| matches!(v.body, Body::ByzPreAccept { .. }));
    let txn = session.txn.clone();
    let body = if commit { Body::ByzAccept { txn, votes } } else { Body::ByzAbort { txn, votes } };
    Some(ProtocolMessage::unsigned(ActorId::Tm(tm), body))
}

fn vote_for(v: &ProtocolMessage, txn: &Transaction, faults: &FaultConfig) -> bool {
    v.txn() == txn
        && v.sender_shard().is_some_and(|s| txn.manages_input(s))
        && validate_cert(v, faults)
}

/// Checks the evidence carried by a decision for session `txn`.
pub fn decision_evidence_valid(msg: &ProtocolMessage, faults: &FaultConfig) -> bool {
    match &msg.body {
        Body::ByzAccept { txn, votes } => {
            let Some(s) = txn.seq else { return false };
            let per_shard = txn.concerned_shards().into_iter().all(|c| {
                votes.iter().any(|v| {
                    v.sender_shard() == Some(c)
                        && matches!(v.body, Body::ByzPreAccept { .. })
                        && vote_for(v, txn, faults)
                })
            });
            let max_observed = votes
                .iter()
                .filter_map(|v| match &v.body {
                    Body::ByzPreAccept { observed, .. } => observed.iter().map(|o| o.1).max(),
                    _ => None,
                })
                .max()
                .unwrap_or(0);
            per_shard && s >= max_observed
        }
        Body::ByzAbort { txn, votes } => votes
            .iter()
            .any(|v| matches!(v.body, Body::ByzPreAbort { .. }) && vote_for(v, txn, faults)),
        _ => false,
    }
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct Phase2Result {
    pub applied: bool,
    pub committed: bool,
    pub cloned: Vec<(ObjectId, ObjectId)>,
    pub notify: Option<ProtocolMessage>,
}

/// Applies a decision to a cached session; anything else is ignored
/// without touching state.
pub fn byzcuit_phase2(shard: &mut ByzShard, msg: &ProtocolMessage, params: &ByzParams) -> Phase2Result {
    let (txn, commit) = match &msg.body {
        Body::ByzAccept { txn, .. } => (txn, true),
        Body::ByzAbort { txn, .. } => (txn, false),
        _ => return Phase2Result::default(),
    };
    let Some(s) = txn.seq else { return Phase2Result::default() };
    let key = (txn.id, s);
    if shard.cache.get(&key) != Some(txn) || !decision_evidence_valid(msg, &params.faults) {
        return Phase2Result::default();
    }
    let local: Vec<_> = txn.local_inputs(shard.id).collect();
    let mut cloned = Vec::new();
    if commit {
        for &x in &local {
            if shard.store.get(x).map(|r| r.state) == Some(ObjectState::Locked { txn: txn.id, seq: s }) {
                shard.store.inactivate(x, txn.id);
            }
        }
        for y in txn.local_outputs(shard.id).collect::<Vec<_>>() {
            shard.store.create(y, txn.id);
        }
    } else {
        let bumped = s.saturating_add(1);
        for &x in &local {
            shard.store.unlock(x, txn.id, Some(s));
            shard.store.bump_seq(x, bumped, txn.id);
        }
        let limit = params.overflow_threshold.saturating_sub(params.clone_margin);
        for &x in &local {
            let due = shard.store.get(x).is_some_and(|r| r.state.is_active() && r.seq >= limit);
            if due {
                if let Ok(c) = clone_object(shard, x, params) {
                    cloned.push((x, c));
                }
            }
        }
    }
    shard.cache.remove(&key);
    let notify = (txn.first_input_shard() == shard.id).then(|| {
        ProtocolMessage::signed(
            shard.id,
            params.f(shard.id),
            Body::ByzOutcome { txn: txn.clone(), committed: commit },
        )
    });
    Phase2Result { applied: true, committed: commit, cloned, notify }
}

/// Replaces an object close to sequence-number overflow with a fresh copy.
pub fn clone_object(shard: &mut ByzShard, obj: ObjectId, params: &ByzParams) -> Result<ObjectId> {
    let limit = params.overflow_threshold.saturating_sub(params.clone_margin);
    match shard.store.get(obj) {
        Some(r) if r.state.is_active() && r.seq >= limit => {}
        _ => return Err(Error::CloneRejected(obj)),
    }
    let fresh = shard.store.clone_object(obj, params.num_shards).ok_or(Error::CloneRejected(obj))?;
    debug_assert_eq!(shard_of(fresh, params.num_shards), shard.id);
    Ok(fresh)
}

pub(crate) fn shard_handle(shard: &mut ByzShard, params: &ByzParams, payload_msg: Option<&ProtocolMessage>, timer: Option<TimerTag>) -> Vec<Effect> {
    if let Some(tag) = timer {
        let key = (tag.txn, tag.seq);
        let Some(txn) = shard.cache.get(&key).cloned() else { return vec![] };
        let notice = ProtocolMessage::signed(shard.id, params.f(shard.id), Body::ByzStuck { txn });
        let mut out: Vec<Effect> = params
            .takeover
            .iter()
            .map(|&to| Effect::Send { to, msg: notice.clone() })
            .collect();
        if tag.attempt + 1 < params.max_stuck_notices {
            out.push(Effect::Timer {
                after: params.stuck_timeout,
                tag: TimerTag { attempt: tag.attempt + 1, ..tag },
            });
        }
        return out;
    }
    let Some(msg) = payload_msg else { return vec![] };
    match &msg.body {
        Body::ByzSubmit { txn, reply_to } => {
            let Some(s) = txn.seq else { return vec![] };
            if let Some(vote) = shard.persisted_votes.get(&(txn.id, s)) {
                return vec![Effect::Send { to: *reply_to, msg: vote.clone() }];
            }
            let Ok(vote) = byzcuit_phase1(shard, txn, params) else { return vec![] };
            let mut out = vec![Effect::Send { to: *reply_to, msg: vote }];
            if !params.takeover.is_empty() {
                out.push(Effect::Timer {
                    after: params.stuck_timeout,
                    tag: TimerTag { txn: txn.id, seq: s, attempt: 0 },
                });
            }
            out
        }
        Body::ByzAccept { .. } | Body::ByzAbort { .. } => {
            let r = byzcuit_phase2(shard, msg, params);
            match r.notify {
                Some(n) => vec![Effect::Send { to: ActorId::Client(n.txn().client), msg: n }],
                None => vec![],
            }
        }
        _ => vec![],
    }
}

fn broadcast(txn: &Transaction, msg: &ProtocolMessage) -> Vec<Effect> {
    txn.concerned_shards()
        .into_iter()
        .map(|s| Effect::Send { to: ActorId::Shard(s), msg: msg.clone() })
        .collect()
}

pub(crate) fn tm_handle(tm: &mut Tm, params: &ByzParams, msg: &ProtocolMessage) -> Vec<Effect> {
    match &msg.body {
        Body::ByzPreAccept { txn, .. } | Body::ByzPreAbort { txn } => {
            let (Some(s), Some(from)) = (txn.seq, msg.sender_shard()) else { return vec![] };
            if !txn.manages_input(from) || !validate_cert(msg, &params.faults) {
                return vec![];
            }
            let session = tm.sessions.entry((txn.id, s)).or_insert_with(|| TmSession {
                txn: txn.clone(),
                votes: BTreeMap::new(),
                decision: None,
                queried: false,
            });
            if session.txn != *txn || session.decision.is_some() {
                return vec![];
            }
            session.votes.entry(from).or_insert_with(|| msg.clone());
            match tm_decide(tm.id, session) {
                Some(d) => {
                    session.decision = Some(d.clone());
                    broadcast(txn, &d)
                }
                None => vec![],
            }
        }
        Body::ByzStuck { txn } => tm_takeover(tm, params, msg, txn),
        _ => vec![],
    }
}

/// Takeover on a certified stuck notice: resend our decision if we have
/// one, otherwise ask every concerned shard for its (persisted) vote.
pub fn tm_takeover(tm: &mut Tm, params: &ByzParams, notice: &ProtocolMessage, txn: &Transaction) -> Vec<Effect> {
    let (Some(s), Some(from)) = (txn.seq, notice.sender_shard()) else { return vec![] };
    if !txn.manages_input(from) || !validate_cert(notice, &params.faults) {
        return vec![];
    }
    let me = ActorId::Tm(tm.id);
    let session = tm.sessions.entry((txn.id, s)).or_insert_with(|| TmSession {
        txn: txn.clone(),
        votes: BTreeMap::new(),
        decision: None,
        queried: false,
    });
    if let Some(d) = &session.decision {
        return broadcast(txn, d);
    }
    if session.queried {
        return vec![];
    }
    session.queried = true;
    let query = ProtocolMessage::unsigned(me, Body::ByzSubmit { txn: txn.clone(), reply_to: me });
    broadcast(txn, &query)
}
