//! Simulation harness: a configured world of shards, clients and TMs.

use std::collections::{BTreeMap, BTreeSet};

use crate::byzcuit::{attach_dummies, byzcuit_submit, ByzParams, Tm};
use crate::error::{Error, Result};
use crate::ledger::{shard_of, ObjectId, ObjectRecord, ObjectState, SeqNo, ShardId, Transaction, TxnId, DEFAULT_OVERFLOW_THRESHOLD};
use crate::message::{ActorId, ProtocolMessage};
use crate::net::{EventKey, NetConfig, Payload, Tick, World};
use crate::node::{Client, Command, Node, NodeEnv, Protocol};
use crate::oracle::{self, Classification, ShardView, TxnRecord, WorldSnapshot};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SystemConfig {
    pub protocol: Protocol,
    pub num_shards: u16,
    pub f: u16,
    pub dummy_pool: u8,
    pub overflow_threshold: SeqNo,
    pub clone_margin: SeqNo,
    /// Ids of takeover TM actors (Byzcuit).
    pub takeover: Vec<u16>,
    pub stuck_timeout: Tick,
    pub max_stuck_notices: u8,
    pub net: NetConfig,
}

impl SystemConfig {
    pub fn new(protocol: Protocol, num_shards: u16) -> Self {
        Self {
            protocol,
            num_shards,
            f: 1,
            dummy_pool: 8,
            overflow_threshold: DEFAULT_OVERFLOW_THRESHOLD,
            clone_margin: 1,
            takeover: Vec::new(),
            stuck_timeout: 8,
            max_stuck_notices: 3,
            net: NetConfig::default(),
        }
    }

    fn params(&self) -> ByzParams {
        let mut p = ByzParams::new(self.num_shards, self.f);
        p.overflow_threshold = self.overflow_threshold;
        p.clone_margin = self.clone_margin;
        p.takeover = self.takeover.iter().map(|&t| ActorId::Tm(t)).collect();
        p.stuck_timeout = self.stuck_timeout;
        p.max_stuck_notices = self.max_stuck_notices;
        p
    }
}

/// Canonical object id `k` on `shard`: `k * num_shards + shard`.
pub fn oid(k: u64, shard: u16, num_shards: u16) -> ObjectId {
    ObjectId::real(k * num_shards as u64 + shard as u64)
}

#[derive(Clone)]
pub struct System {
    pub config: SystemConfig,
    pub world: World<Node>,
    /// Transactions as last submitted, keyed by id.
    pub txns: BTreeMap<TxnId, Transaction>,
    /// Validity of each transaction at its last submission.
    pub valid_at_submission: BTreeMap<TxnId, bool>,
    /// Dummies handed out since the last `release_dummies`, when reserving.
    reserved: Option<BTreeSet<ObjectId>>,
    next_fresh: u64,
}

impl std::fmt::Debug for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("System")
            .field("config", &self.config)
            .field("now", &self.world.now())
            .field("txns", &self.txns.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl System {
    pub fn new(config: SystemConfig) -> Self {
        let env = NodeEnv { protocol: config.protocol, params: config.params() };
        let mut world = World::new(env, config.net.clone());
        for s in 0..config.num_shards {
            let id = ShardId(s);
            let mut node = Node::shard(config.protocol, id);
            if config.protocol == Protocol::Byzcuit {
                let store = node.store_mut().expect("shard node");
                for slot in 0..config.dummy_pool {
                    store.seed(ObjectId::dummy(id, slot, 0), ObjectState::Active, 0);
                }
            }
            world.add_actor(ActorId::Shard(id), node);
        }
        for &t in &config.takeover {
            world.add_actor(ActorId::Tm(t), Node::Tm(Tm::new(t)));
        }
        Self {
            config,
            world,
            txns: BTreeMap::new(),
            valid_at_submission: BTreeMap::new(),
            reserved: None,
            next_fresh: 1_000,
        }
    }

    pub fn num_shards(&self) -> u16 {
        self.config.num_shards
    }

    pub fn protocol(&self) -> Protocol {
        self.config.protocol
    }

    pub fn oid(&self, k: u64, shard: u16) -> ObjectId {
        oid(k, shard, self.config.num_shards)
    }

    /// Allocates an id on `shard` that no scenario object uses.
    pub fn fresh_object(&mut self, shard: ShardId) -> ObjectId {
        let id = self.oid(self.next_fresh, shard.0);
        self.next_fresh += 1;
        id
    }

    fn ensure_client(&mut self, client: u16) {
        let id = ActorId::Client(client);
        if self.world.actor(id).is_none() {
            self.world.add_actor(id, Node::Client(Client { id: client, ..Default::default() }));
            if self.config.protocol == Protocol::Byzcuit {
                self.world.add_actor(ActorId::Tm(client), Node::Tm(Tm::new(client)));
            }
        }
    }

    pub fn add_object(&mut self, id: ObjectId, state: ObjectState, seq: SeqNo) {
        let shard = shard_of(id, self.config.num_shards);
        self.world
            .actor_mut(ActorId::Shard(shard))
            .and_then(Node::store_mut)
            .expect("shard exists")
            .seed(id, state, seq);
    }

    pub fn object(&self, id: ObjectId) -> Option<&ObjectRecord> {
        let shard = shard_of(id, self.config.num_shards);
        self.world.actor(ActorId::Shard(shard))?.store()?.get(id)
    }

    pub fn transaction(&self, id: TxnId, client: u16, inputs: &[ObjectId], outputs: &[ObjectId]) -> Result<Transaction> {
        Transaction::new(id, client, inputs, outputs, self.config.num_shards)
    }

    /// Subsequent dummy attachments avoid each other until released.
    pub fn reserve_dummies(&mut self) {
        self.reserved = Some(BTreeSet::new());
    }

    pub fn release_dummies(&mut self) {
        self.reserved = None;
    }

    fn available_dummies(&self) -> BTreeMap<ShardId, Vec<ObjectId>> {
        let mut out = BTreeMap::new();
        for s in 0..self.config.num_shards {
            let id = ShardId(s);
            let Some(store) = self.world.actor(ActorId::Shard(id)).and_then(Node::store) else { continue };
            let free: Vec<_> = store
                .active_dummies()
                .filter(|d| !self.reserved.as_ref().is_some_and(|r| r.contains(d)))
                .collect();
            out.insert(id, free);
        }
        out
    }

    /// Completes a transaction the way its client would before submitting:
    /// Byzcuit clients attach dummies and query sequence numbers.
    pub fn prepare(&mut self, txn: &Transaction) -> Result<Transaction> {
        if self.config.protocol != Protocol::Byzcuit {
            return Ok(txn.clone());
        }
        let with_dummies = attach_dummies(txn, &self.available_dummies())?;
        if let Some(r) = self.reserved.as_mut() {
            r.extend(with_dummies.inputs.iter().filter(|i| i.id.dummy).map(|i| i.id));
        }
        let seqs: BTreeMap<ObjectId, SeqNo> = with_dummies
            .inputs
            .iter()
            .filter_map(|r| self.object(r.id).map(|o| (r.id, o.seq)))
            .collect();
        let (stamped, _) = byzcuit_submit(&with_dummies, &seqs, txn.client, ActorId::Tm(txn.client))?;
        Ok(stamped)
    }

    /// Schedules the client of `txn` to submit it at tick `at`.
    pub fn submit_at(
        &mut self,
        txn: &Transaction,
        at: Tick,
        only: Option<Vec<ShardId>>,
        withdraw: bool,
    ) -> Result<Transaction> {
        self.ensure_client(txn.client);
        let prepared = self.prepare(txn)?;
        self.submit_prepared(&prepared, at, only, withdraw)?;
        Ok(prepared)
    }

    /// Submits `prepared` as-is (no dummy attachment or seq query), e.g. to
    /// deliver an earlier submission to further shards.
    pub fn submit_prepared(
        &mut self,
        prepared: &Transaction,
        at: Tick,
        only: Option<Vec<ShardId>>,
        withdraw: bool,
    ) -> Result<()> {
        self.ensure_client(prepared.client);
        let valid = prepared
            .inputs
            .iter()
            .all(|r| self.object(r.id).is_some_and(|o| o.state.is_active()));
        self.valid_at_submission.insert(prepared.id, valid);
        self.txns.insert(prepared.id, prepared.clone());
        let cmd = Command::Submit { txn: prepared.clone(), only, withdraw };
        let client = ActorId::Client(prepared.client);
        self.world.submit(at, client, client, Payload::Command(cmd))?;
        Ok(())
    }

    pub fn submit(&mut self, txn: &Transaction) -> Result<Transaction> {
        let now = self.world.now();
        self.submit_at(txn, now, None, false)
    }

    pub fn inject(&mut self, msg: ProtocolMessage, target: ActorId, at: Tick) -> Result<EventKey> {
        self.world.inject(msg, target, at)
    }

    pub fn crash(&mut self, actor: ActorId, at: Tick) {
        self.world.crash(actor, at);
    }

    pub fn run(&mut self) -> u64 {
        self.world.run()
    }

    /// Spends `obj` with a single-input transaction whose one output is a
    /// fresh object on the same shard, and runs it to quiescence.
    pub fn spend(&mut self, obj: ObjectId, txn_id: TxnId, client: u16) -> Result<Transaction> {
        let shard = shard_of(obj, self.config.num_shards);
        let out = self.fresh_object(shard);
        let t = self.transaction(txn_id, client, &[obj], &[out])?;
        let t = self.submit(&t)?;
        self.run();
        Ok(t)
    }

    pub fn add_takeover_tm(&mut self, id: u16) -> Result<()> {
        if !self.config.takeover.contains(&id) {
            return Err(Error::UnknownActor(format!("tm:{id} is not configured for takeover")));
        }
        self.world.add_actor(ActorId::Tm(id), Node::Tm(Tm::new(id)));
        Ok(())
    }

    pub fn snapshot(&self) -> WorldSnapshot {
        let mut snap = WorldSnapshot {
            quiescent: self.world.is_quiescent(),
            txns: self.txns.clone(),
            ..Default::default()
        };
        for (id, node) in self.world.actors() {
            if let (ActorId::Shard(s), Some(store)) = (id, node.store()) {
                snap.shards.insert(
                    s,
                    ShardView {
                        objects: store.records().map(|r| (r.id, r.clone())).collect(),
                        history: store.history().to_vec(),
                    },
                );
            }
            if let Some(c) = node.client() {
                snap.submitted.extend(c.submitted.iter().copied());
                for (t, o) in &c.outcomes {
                    snap.outcomes.entry(*t).or_insert(*o);
                }
            }
            snap.undecided.extend(node.undecided());
        }
        snap
    }

    /// Classification plus validity bookkeeping for `txn`.
    pub fn record(&self, snap: &WorldSnapshot, txn: TxnId) -> Result<TxnRecord> {
        let t = snap
            .txns
            .get(&txn)
            .ok_or_else(|| Error::MalformedTransaction(format!("unknown txn {txn}")))?;
        Ok(TxnRecord {
            txn: t.clone(),
            valid_at_submission: self.valid_at_submission.get(&txn).copied().unwrap_or(false),
            classification: oracle::classify(snap, txn)?,
            shape: oracle::shape(snap, t),
        })
    }

    pub fn classify(&self, txn: TxnId, counterfactual_commit: bool) -> Result<Classification> {
        let mut snap = self.snapshot();
        if counterfactual_commit {
            snap.counterfactual_commits.insert(txn);
        }
        oracle::classify(&snap, txn)
    }
}
