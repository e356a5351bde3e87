//! Attacker recipes: vote elicitation, table attacks, and the exhaustive
//! replay sweep.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::hash::{Hash, Hasher};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ledger::{shard_of, ObjectId, ObjectState, ShardId, Transaction, TxnId};
use crate::message::{ActorId, MessageKind, Phase, ProtocolMessage};
use crate::net::{EventKey, Payload, RecordFilter, RecordedMessage, RecordingLog};
use crate::node::Protocol;
use crate::oracle::{self, Classification, Shape};
use crate::scenario::{run_scenario, ScenarioOutcome, AUX_TXN_BASE};
use crate::system::{oid, System, SystemConfig};
use crate::tables::{attack_row, AttackRow};

/// Gets `shard` to emit `vote` for `txn` and records it, while leaving every
/// non-auxiliary object as it was.
///
/// An auxiliary transaction T′ over one input of `txn` plus `aux_object`
/// (which does not exist) is first delivered only to the shard holding that
/// input, which holds it. `txn` is then submitted: the shard whose input is
/// held refuses, the other accepts, and `txn` aborts. Finally T′ reaches the
/// auxiliary object's shard, is refused there, and aborts, releasing the
/// held input. Holding the sibling input elicits a pre-accept from `shard`;
/// holding `shard`'s own input elicits a pre-abort.
pub fn elicit(
    sys: &mut System,
    vote: MessageKind,
    shard: ShardId,
    txn: &Transaction,
    aux_txn: TxnId,
    aux_object: ObjectId,
) -> Result<RecordedMessage> {
    let n = sys.num_shards();
    let accept = match vote.phase() {
        Phase::PreAccept => true,
        Phase::PreAbort => false,
        _ => return Err(Error::ElicitationFailed(format!("{} is not a phase-1 vote", vote.name()))),
    };
    let x_target = txn
        .local_inputs(shard)
        .next()
        .ok_or(Error::NotConcerned { shard, txn: txn.id })?;
    let x_other = txn
        .inputs
        .iter()
        .map(|r| r.id)
        .find(|&o| !o.dummy && shard_of(o, n) != shard)
        .ok_or_else(|| Error::ElicitationFailed(format!("txn {} has inputs on one shard only", txn.id)))?;
    let held = if accept { x_other } else { x_target };
    let held_shard = shard_of(held, n);
    let aux_shard = shard_of(aux_object, n);
    if aux_shard == held_shard {
        return Err(Error::ElicitationFailed(format!(
            "auxiliary object {aux_object} must live on a shard other than {held_shard}"
        )));
    }
    if sys.object(aux_object).is_some_and(|o| o.state.is_active()) {
        return Err(Error::ElicitationFailed(format!("auxiliary object {aux_object} must not be spendable")));
    }

    let start = sys.world.log().len();
    let aux = sys.transaction(aux_txn, txn.client, &[held, aux_object], &[])?;
    let now = sys.world.now();
    let aux = sys.submit_at(&aux, now, Some(vec![held_shard]), false)?;
    sys.run();
    let now = sys.world.now();
    sys.submit_at(txn, now, None, false)?;
    sys.run();
    let now = sys.world.now();
    sys.submit_prepared(&aux, now, Some(vec![aux_shard]), false)?;
    sys.run();

    sys.world.log().entries[start..]
        .iter()
        .find(|e| e.origin == ActorId::Shard(shard) && e.msg.kind() == vote && e.msg.txn_id() == txn.id)
        .cloned()
        .ok_or_else(|| Error::ElicitationFailed(format!("{shard} never sent {} for txn {}", vote.name(), txn.id)))
}

pub fn elicit_sbac_preaccept(
    sys: &mut System,
    shard: ShardId,
    txn: &Transaction,
    aux_txn: TxnId,
    aux_object: ObjectId,
) -> Result<RecordedMessage> {
    elicit(sys, MessageKind::SbacPreAccept, shard, txn, aux_txn, aux_object)
}

pub fn elicit_sbac_preabort(
    sys: &mut System,
    shard: ShardId,
    txn: &Transaction,
    aux_txn: TxnId,
    aux_object: ObjectId,
) -> Result<RecordedMessage> {
    elicit(sys, MessageKind::SbacPreAbort, shard, txn, aux_txn, aux_object)
}

pub fn elicit_atomix_preaccept(
    sys: &mut System,
    shard: ShardId,
    txn: &Transaction,
    aux_txn: TxnId,
    aux_object: ObjectId,
) -> Result<RecordedMessage> {
    elicit(sys, MessageKind::AtomixPreAccept, shard, txn, aux_txn, aux_object)
}

#[derive(Debug)]
pub struct AttackOutcome {
    pub row: AttackRow,
    pub outcome: ScenarioOutcome,
}

impl AttackOutcome {
    /// Whether the run ended as the row says (or, for Byzcuit, exactly as
    /// without the adversary).
    pub fn matches(&self) -> bool {
        self.outcome.passed()
    }

    pub fn classification(&self) -> &Classification {
        &self.outcome.classifications[&crate::tables::T]
    }

    pub fn shape(&self) -> Shape {
        let snap = &self.outcome.snapshot;
        oracle::shape(snap, &snap.txns[&crate::tables::T])
    }
}

pub fn run_table_attack(table: u8, row: u8, protocol: Protocol) -> Result<AttackOutcome> {
    let row = attack_row(table, row, protocol)?;
    let outcome = run_scenario(&row.scenario)?;
    Ok(AttackOutcome { row, outcome })
}

/// Limits of the exhaustive sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SweepBounds {
    pub max_shards: u16,
    /// Total injected copies per schedule.
    pub max_injections: u8,
    /// Copies of any one recorded message per schedule.
    pub max_copies: u8,
}

impl SweepBounds {
    pub fn new(max_shards: u16, max_injections: u8) -> Self {
        Self { max_shards, max_injections, max_copies: 2 }
    }

    /// Rough number of explored states, for refusal messages.
    pub fn estimate(&self) -> f64 {
        let n = self.max_shards.max(2) as f64;
        let candidates = 8.0 * n + 6.0;
        let interleavings = 20f64.powf(n);
        interleavings * candidates.powi(self.max_injections as i32)
    }

    pub fn check(&self) -> Result<()> {
        let within = (2..=3).contains(&self.max_shards) && self.max_injections <= 2 && self.max_copies <= 2;
        if within {
            Ok(())
        } else {
            Err(Error::SizeGuard(format!(
                "shards must be 2..=3 and injections/copies at most 2; requested {} shards, {} injections, \
                 estimated {:.1e} states",
                self.max_shards,
                self.max_injections,
                self.estimate()
            )))
        }
    }
}

/// Initial availability of the canonical inputs in one sweep world.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Variant {
    pub x1_spent: bool,
    pub x2_spent: bool,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant { x1_spent: false, x2_spent: false },
        Variant { x1_spent: true, x2_spent: false },
        Variant { x1_spent: false, x2_spent: true },
        Variant { x1_spent: true, x2_spent: true },
    ];

    fn should_commit(self) -> bool {
        !self.x1_spent && !self.x2_spent
    }
}

/// One distinct end state found by the sweep, with a schedule reaching it.
#[derive(Clone, Debug, Serialize)]
pub struct EndState {
    pub variant: Variant,
    pub shape: Shape,
    pub classification: Classification,
    pub schedule: Vec<String>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SweepReport {
    pub protocol: Option<Protocol>,
    pub shards: u16,
    pub max_injections: u8,
    /// Quiescent schedules per classification label.
    pub by_class: BTreeMap<String, u64>,
    pub states: u64,
    /// Distinct inconsistent end states (by variant and shape).
    pub inconsistent: Vec<EndState>,
    /// Schedules classified differently from the injection-free run.
    pub deviations: u64,
    /// Schedules whose log still held a message with a fresh s_T once T
    /// completed (Byzcuit only).
    pub fresh_leftovers: u64,
}

impl SweepReport {
    pub fn schedules(&self) -> u64 {
        self.by_class.values().sum()
    }

    pub fn inconsistent_count(&self) -> u64 {
        self.by_class.get("inconsistent").copied().unwrap_or(0)
    }

    pub fn has_shape(&self, shape: &Shape) -> bool {
        self.inconsistent.iter().any(|e| &e.shape == shape)
    }

    fn merge(&mut self, other: SweepReport) {
        for (k, v) in other.by_class {
            *self.by_class.entry(k).or_default() += v;
        }
        self.states += other.states;
        self.deviations += other.deviations;
        self.fresh_leftovers += other.fresh_leftovers;
        self.inconsistent.extend(other.inconsistent);
    }
}

pub const SWEEP_TXN: TxnId = 1;

/// How often the sweep spends T's outputs at quiescence, so that replays
/// can recreate them once per round.
const OUTPUT_SPEND_ROUNDS: u8 = 2;

/// The canonical transaction for `n` shards: inputs on shards 0 and 1,
/// one output per shard.
pub fn sweep_transaction(n: u16) -> Transaction {
    let outs: Vec<ObjectId> = (0..n).map(|s| oid(2, s, n)).collect();
    Transaction::new(SWEEP_TXN, 0, &[oid(1, 0, n), oid(1, 1, n)], &outs, n).expect("canonical transaction")
}

/// A world with the canonical inputs, every vote elicited, and the prior
/// log of a committed run.
fn sweep_base(protocol: Protocol, n: u16, cfg: impl Fn(&mut SystemConfig)) -> Result<(System, RecordingLog)> {
    let mut config = SystemConfig::new(protocol, n);
    cfg(&mut config);
    let mut sys = System::new(config);
    let txn = sweep_transaction(n);
    for r in &txn.inputs {
        sys.add_object(r.id, ObjectState::Active, 0);
    }
    prepare_sweep(sys, &txn)
}

/// Arms the adversary against `txn`, whose two inputs live on shards 0 and
/// 1 of `sys`: records a committed run in a fork, then elicits a pre-accept
/// and a pre-abort from both input shards. Auxiliary objects are `oid(3, s)`.
pub fn prepare_sweep(mut sys: System, txn: &Transaction) -> Result<(System, RecordingLog)> {
    let n = sys.num_shards();
    let mut fork = sys.clone();
    fork.submit(txn)?;
    fork.run();
    let prior = fork.world.log().clone();

    let (pre_accept, pre_abort) = match sys.protocol() {
        Protocol::Sbac => (MessageKind::SbacPreAccept, MessageKind::SbacPreAbort),
        Protocol::Atomix => (MessageKind::AtomixPreAccept, MessageKind::AtomixPreAbort),
        Protocol::Byzcuit => (MessageKind::ByzPreAccept, MessageKind::ByzPreAbort),
    };
    let mut aux_txn = 2;
    for shard in [0u16, 1] {
        for (vote, aux_shard) in [(pre_accept, shard), (pre_abort, 1 - shard)] {
            elicit(&mut sys, vote, ShardId(shard), txn, aux_txn, oid(3, aux_shard, n))?;
            aux_txn += 1;
        }
    }
    Ok((sys, prior))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Candidate {
    origin: ActorId,
    msg: ProtocolMessage,
}

fn replayable(msg: &ProtocolMessage) -> bool {
    msg.txn_id() == SWEEP_TXN
        && matches!(msg.kind().phase(), Phase::PreAccept | Phase::PreAbort | Phase::Accept | Phase::Abort)
}

/// Where a replayed copy of `c` can do anything: the recipients its kind of
/// message normally has.
fn targets(protocol: Protocol, n: u16, c: &Candidate) -> Vec<ActorId> {
    let shards = || (0..n).map(ActorId::shard);
    let is_vote = c.msg.kind().is_vote();
    match (protocol, is_vote) {
        (Protocol::Sbac, true) => [0u16, 1].into_iter().map(ActorId::shard).filter(|&a| a != c.origin).collect(),
        (Protocol::Sbac, false) => shards().filter(|&a| a != c.origin).collect(),
        (Protocol::Atomix, true) => vec![ActorId::Client(0)],
        (Protocol::Atomix, false) => shards().collect(),
        (Protocol::Byzcuit, true) => vec![ActorId::Tm(0)],
        (Protocol::Byzcuit, false) => shards().collect(),
    }
}

/// Whether `msg` is stale: some object it names has moved past its s_T,
/// or is spent or gone. Messages without an s_T are trivially stale.
pub fn is_stale(sys: &System, msg: &ProtocolMessage) -> bool {
    let t = msg.txn();
    let Some(s) = t.seq else { return true };
    t.inputs.iter().any(|r| match sys.object(r.id) {
        None => true,
        Some(o) => o.state == ObjectState::Inactive || o.seq > s,
    })
}

/// Every message the adversary holds for `txn` is stale.
pub fn no_fresh_leftovers(sys: &System, logs: &[&RecordingLog], txn: TxnId) -> bool {
    logs.iter()
        .flat_map(|l| l.entries.iter())
        .filter(|e| e.msg.txn_id() == txn)
        .all(|e| is_stale(sys, &e.msg))
}

/// Interned candidate messages; indices are stable for one explorer.
#[derive(Default)]
struct Interner {
    items: Vec<Candidate>,
    index: HashMap<Candidate, u32>,
}

impl Interner {
    fn intern(&mut self, c: Candidate) -> u32 {
        if let Some(&i) = self.index.get(&c) {
            return i;
        }
        let i = self.items.len() as u32;
        self.items.push(c.clone());
        self.index.insert(c, i);
        i
    }
}

struct Explorer {
    protocol: Protocol,
    n: u16,
    bounds: SweepBounds,
    variant: Variant,
    txn: Transaction,
    interner: Interner,
    /// Recorded before the run starts: prior run and elicitations.
    fixed: BTreeSet<u32>,
    seen: HashSet<u64>,
    shapes: BTreeSet<Shape>,
    path: Vec<String>,
    report: SweepReport,
    next_aux: TxnId,
}

/// One point of the search. The world records nothing here; the messages
/// it emits for the transaction are tracked in `recorded` instead.
#[derive(Clone)]
struct Node {
    sys: System,
    recorded: BTreeSet<u32>,
    copies: BTreeMap<u32, u8>,
    used: u8,
    /// Rounds in which T's active outputs were spent at quiescence.
    output_spends: u8,
}

impl Explorer {
    fn key(&self, node: &Node) -> u64 {
        let mut h = DefaultHasher::new();
        node.sys.world.fingerprint().hash(&mut h);
        node.recorded.hash(&mut h);
        node.copies.hash(&mut h);
        node.used.hash(&mut h);
        node.output_spends.hash(&mut h);
        h.finish()
    }

    fn describe(ev: &crate::net::Event<crate::node::Command>) -> String {
        match &ev.payload {
            Payload::Message(m) => format!(
                "deliver {} {} -> {}{}",
                m.kind().name(),
                ev.origin,
                ev.target,
                if ev.injected { " (injected)" } else { "" }
            ),
            Payload::Command(_) => format!("deliver submit command -> {}", ev.target),
            Payload::Timer(_) => format!("fire timer at {}", ev.target),
        }
    }

    fn record_end(&mut self, node: &Node) -> Result<()> {
        let mut snap = node.sys.snapshot();
        if self.variant.should_commit() {
            snap.counterfactual_commits.insert(SWEEP_TXN);
        }
        let c = oracle::classify(&snap, SWEEP_TXN)?;
        *self.report.by_class.entry(c.label().to_string()).or_default() += 1;
        let expected =
            if self.variant.should_commit() { Classification::ConsistentCommit } else { Classification::ConsistentAbort };
        if c != expected {
            self.report.deviations += 1;
        }
        if self.protocol == Protocol::Byzcuit {
            let fresh = self
                .fixed
                .iter()
                .chain(node.recorded.iter())
                .any(|&i| !is_stale(&node.sys, &self.interner.items[i as usize].msg));
            if fresh {
                self.report.fresh_leftovers += 1;
            }
        }
        if c.is_inconsistent() {
            let shape = oracle::shape(&snap, &snap.txns[&SWEEP_TXN]);
            if self.shapes.insert(shape.clone()) {
                self.report.inconsistent.push(EndState {
                    variant: self.variant,
                    shape,
                    classification: c,
                    schedule: self.path.clone(),
                });
            }
        }
        Ok(())
    }

    fn explore(&mut self, node: Node) -> Result<()> {
        if !self.seen.insert(self.key(&node)) {
            return Ok(());
        }
        self.report.states += 1;
        let pending = node.sys.world.pending();

        if pending.is_empty() {
            self.record_end(&node)?;
            if node.output_spends < OUTPUT_SPEND_ROUNDS {
                let mut next = node.clone();
                next.output_spends += 1;
                let mut spent = false;
                for r in &self.txn.outputs {
                    if next.sys.object(r.id).is_some_and(|o| o.state.is_active()) {
                        next.sys.spend(r.id, self.next_aux, 0)?;
                        self.next_aux += 1;
                        spent = true;
                    }
                }
                if spent {
                    self.path.push("spend active outputs".into());
                    self.explore(next)?;
                    self.path.pop();
                    return Ok(());
                }
            }
        }

        for key in pending {
            self.deliver(&node, key)?;
        }
        if node.used < self.bounds.max_injections {
            let cands: Vec<u32> = self.fixed.union(&node.recorded).copied().collect();
            for i in cands {
                if node.copies.get(&i).copied().unwrap_or(0) >= self.bounds.max_copies {
                    continue;
                }
                let c = self.interner.items[i as usize].clone();
                for to in targets(self.protocol, self.n, &c) {
                    let mut next = node.clone();
                    let now = next.sys.world.now();
                    next.sys.inject(c.msg.clone(), to, now)?;
                    *next.copies.entry(i).or_default() += 1;
                    next.used += 1;
                    self.path.push(format!("inject {} from {} -> {to}", c.msg.kind().name(), c.origin));
                    self.explore(next)?;
                    self.path.pop();
                }
            }
        }
        Ok(())
    }

    fn deliver(&mut self, node: &Node, key: EventKey) -> Result<()> {
        let mut next = node.clone();
        let first_new = next.sys.world.next_seq();
        let ev = next.sys.world.deliver(key).expect("pending event");
        let emitted: Vec<Candidate> = next
            .sys
            .world
            .pending_events()
            .filter(|e| e.seq_no >= first_new && !e.injected)
            .filter_map(|e| match &e.payload {
                Payload::Message(m) if replayable(m) => Some(Candidate { origin: e.origin, msg: m.clone() }),
                _ => None,
            })
            .collect();
        for c in emitted {
            let i = self.interner.intern(c);
            next.recorded.insert(i);
        }
        self.path.push(Self::describe(&ev));
        self.explore(next)?;
        self.path.pop();
        Ok(())
    }
}

fn sweep_variant(
    protocol: Protocol,
    bounds: SweepBounds,
    base: &System,
    prior: &RecordingLog,
    txn: &Transaction,
    variant: Variant,
) -> Result<SweepReport> {
    let n = bounds.max_shards;
    let mut sys = base.clone();
    let mut next_aux = AUX_TXN_BASE;
    for (spent, r) in [(variant.x1_spent, &txn.inputs[0]), (variant.x2_spent, &txn.inputs[1])] {
        if spent {
            sys.spend(r.id, next_aux, 0)?;
            next_aux += 1;
        }
    }
    let mut interner = Interner::default();
    let mut fixed = BTreeSet::new();
    for e in prior.entries.iter().chain(sys.world.log().entries.iter()) {
        if replayable(&e.msg) {
            fixed.insert(interner.intern(Candidate { origin: e.origin, msg: e.msg.clone() }));
        }
    }
    sys.world.policy.record = RecordFilter::Nothing;
    sys.world.clear_log();
    sys.world.disable_trace();
    sys.submit(txn)?;

    let mut ex = Explorer {
        protocol,
        n,
        bounds,
        variant,
        txn: txn.clone(),
        interner,
        fixed,
        seen: HashSet::new(),
        shapes: BTreeSet::new(),
        path: Vec::new(),
        report: SweepReport::default(),
        next_aux,
    };
    let root = Node { sys, recorded: BTreeSet::new(), copies: BTreeMap::new(), used: 0, output_spends: 0 };
    ex.explore(root)?;
    Ok(ex.report)
}

/// Explores every interleaving of the canonical transaction with up to
/// `max_injections` replayed copies of anything the adversary recorded
/// (prior committed run, elicited votes, and the run itself), over the four
/// availability variants of its inputs.
pub fn exhaustive_replay_sweep(protocol: Protocol, bounds: SweepBounds) -> Result<SweepReport> {
    exhaustive_replay_sweep_with(protocol, bounds, |_| {})
}

/// As [`exhaustive_replay_sweep`], with a hook to adjust the system
/// configuration (e.g. the overflow threshold) and an optional world to
/// start from instead of a fresh one.
pub fn exhaustive_replay_sweep_with(
    protocol: Protocol,
    bounds: SweepBounds,
    cfg: impl Fn(&mut SystemConfig),
) -> Result<SweepReport> {
    bounds.check()?;
    let (base, prior) = sweep_base(protocol, bounds.max_shards, cfg)?;
    sweep_from(protocol, bounds, &base, &prior, &sweep_transaction(bounds.max_shards))
}

/// Sweeps `txn` from a world armed by [`prepare_sweep`].
pub fn sweep_from(
    protocol: Protocol,
    bounds: SweepBounds,
    base: &System,
    prior: &RecordingLog,
    txn: &Transaction,
) -> Result<SweepReport> {
    bounds.check()?;
    if txn.id != SWEEP_TXN {
        return Err(Error::MalformedTransaction(format!("swept transaction must have id {SWEEP_TXN}")));
    }
    let parts: Vec<Result<SweepReport>> = Variant::ALL
        .par_iter()
        .map(|&v| sweep_variant(protocol, bounds, base, prior, txn, v))
        .collect();
    let mut report = SweepReport {
        protocol: Some(protocol),
        shards: bounds.max_shards,
        max_injections: bounds.max_injections,
        ..Default::default()
    };
    for p in parts {
        report.merge(p?);
    }
    report.inconsistent.sort_by(|a, b| (a.variant, &a.shape).cmp(&(b.variant, &b.shape)));
    report.inconsistent.dedup_by(|a, b| a.shape == b.shape);
    Ok(report)
}

/// Prepares the sweep's starting world so callers can alter it first.
pub fn sweep_world(protocol: Protocol, n: u16, cfg: impl Fn(&mut SystemConfig)) -> Result<(System, RecordingLog)> {
    sweep_base(protocol, n, cfg)
}

/// Visits the quiescent end of every delivery order of the events pending
/// in `sys`, once per distinct end state. Returns the number of distinct
/// states explored.
pub fn for_each_interleaving(sys: &System, mut visit: impl FnMut(&System) -> Result<()>) -> Result<u64> {
    fn go(
        sys: &System,
        seen: &mut HashSet<u64>,
        visit: &mut dyn FnMut(&System) -> Result<()>,
    ) -> Result<()> {
        if !seen.insert(sys.world.fingerprint()) {
            return Ok(());
        }
        let pending = sys.world.pending();
        if pending.is_empty() {
            return visit(sys);
        }
        for key in pending {
            let mut next = sys.clone();
            next.world.deliver(key);
            go(&next, seen, visit)?;
        }
        Ok(())
    }
    let mut start = sys.clone();
    start.world.disable_trace();
    let mut seen = HashSet::new();
    go(&start, &mut seen, &mut visit)?;
    Ok(seen.len() as u64)
}

/// Number of sweep workers from `XSHARD_WORKERS`, if set.
pub fn configure_workers() {
    if let Some(n) = std::env::var("XSHARD_WORKERS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}
