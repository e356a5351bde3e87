//! Deterministic discrete-event message fabric.
//!
//! Events are delivered in `(deliver_at, seq_no)` order. The adversary sits
//! on every link: it can record, delay and drop messages and inject recorded
//! copies at any future tick. The same world can instead be driven by an
//! explorer that delivers pending events in any order it likes.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fmt::Debug;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ledger::{SeqNo, TxnId};
use crate::message::{put_entry, ActorId, Cursor, MessageKind, Phase, ProtocolMessage, Role, WIRE_VERSION};

pub type Tick = u64;

/// Timer payload armed by an actor for itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimerTag {
    pub txn: TxnId,
    pub seq: SeqNo,
    pub attempt: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Payload<C> {
    Message(ProtocolMessage),
    Timer(TimerTag),
    Command(C),
}

impl<C> Payload<C> {
    pub fn message(&self) -> Option<&ProtocolMessage> {
        match self {
            Payload::Message(m) => Some(m),
            _ => None,
        }
    }
}

/// Side effects an actor requests from the fabric.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Effect {
    Send { to: ActorId, msg: ProtocolMessage },
    Timer { after: Tick, tag: TimerTag },
}

pub trait Actor: Clone + Hash {
    type Env: Debug;
    type Command: Clone + Debug + Hash + Ord + Serialize;

    fn handle(
        &mut self,
        env: &Self::Env,
        now: Tick,
        origin: ActorId,
        payload: &Payload<Self::Command>,
    ) -> Vec<Effect>;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event<C> {
    pub seq_no: u64,
    pub deliver_at: Tick,
    pub origin: ActorId,
    pub target: ActorId,
    pub payload: Payload<C>,
    pub injected: bool,
}

/// Queue position of a pending event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventKey {
    pub deliver_at: Tick,
    pub seq_no: u64,
}

/// Partial match over a message event; `None` fields match anything.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventPattern {
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_actor")]
    pub origin: Option<ActorId>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_actor")]
    pub target: Option<ActorId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<MessageKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub txn: Option<TxnId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected: Option<bool>,
}

impl EventPattern {
    pub fn matches(&self, origin: ActorId, target: ActorId, msg: &ProtocolMessage, injected: bool) -> bool {
        self.origin.is_none_or(|o| o == origin)
            && self.target.is_none_or(|t| t == target)
            && self.kind.is_none_or(|k| k == msg.kind())
            && self.txn.is_none_or(|t| t == msg.txn_id())
            && self.injected.is_none_or(|i| i == injected)
    }
}

/// Which emitted messages the adversary keeps a copy of.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub enum RecordFilter {
    /// Everything except client submissions.
    #[default]
    Observable,
    Nothing,
    Patterns(Vec<EventPattern>),
}

impl RecordFilter {
    pub fn matches(&self, origin: ActorId, target: ActorId, msg: &ProtocolMessage) -> bool {
        match self {
            RecordFilter::Observable => {
                !(origin.role() == Role::Client && msg.kind().phase() == Phase::Submit)
            }
            RecordFilter::Nothing => false,
            RecordFilter::Patterns(ps) => ps.iter().any(|p| p.matches(origin, target, msg, false)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct AdversaryPolicy {
    pub record: RecordFilter,
    /// Extra latency added to matching genuine emissions.
    pub delays: Vec<(EventPattern, Tick)>,
    /// Matching deliveries are discarded.
    pub drops: Vec<EventPattern>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordedMessage {
    pub tick: Tick,
    pub origin: ActorId,
    pub target: ActorId,
    pub msg: ProtocolMessage,
}

/// Messages observed by the adversary, in emission order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct RecordingLog {
    pub entries: Vec<RecordedMessage>,
}

impl RecordingLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: RecordedMessage) {
        self.entries.push(entry);
    }

    pub fn extend(&mut self, other: &RecordingLog) {
        self.entries.extend(other.entries.iter().cloned());
    }

    /// Version byte, `u32` entry count, then length-prefixed entries.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![WIRE_VERSION];
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            put_entry(&mut out, e);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        cur.version()?;
        let n = cur.u32()?;
        let mut entries = Vec::with_capacity(n.min(1 << 16) as usize);
        for _ in 0..n {
            entries.push(cur.entry()?);
        }
        cur.finish()?;
        Ok(Self { entries })
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(Sha256::digest(self.encode()))
    }
}

/// Counts of genuine (non-injected) emissions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct MessageStats {
    pub by_kind: BTreeMap<MessageKind, u64>,
    pub by_route: BTreeMap<(Role, Role, MessageKind), u64>,
    pub injected: u64,
    pub dropped: u64,
}

impl MessageStats {
    pub fn total(&self) -> u64 {
        self.by_kind.values().sum()
    }

    pub fn kind(&self, kind: MessageKind) -> u64 {
        self.by_kind.get(&kind).copied().unwrap_or(0)
    }

    pub fn route(&self, from: Role, to: Role, kind: MessageKind) -> u64 {
        self.by_route.get(&(from, to, kind)).copied().unwrap_or(0)
    }

    pub fn since(&self, earlier: &MessageStats) -> MessageStats {
        let mut out = self.clone();
        for (k, v) in &earlier.by_kind {
            *out.by_kind.entry(*k).or_default() -= v;
        }
        for (k, v) in &earlier.by_route {
            *out.by_route.entry(*k).or_default() -= v;
        }
        out.by_kind.retain(|_, v| *v > 0);
        out.by_route.retain(|_, v| *v > 0);
        out.injected -= earlier.injected;
        out.dropped -= earlier.dropped;
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct NetConfig {
    /// Seed for per-event latency jitter.
    pub seed: u64,
    /// Maximum extra latency; 0 disables jitter.
    pub jitter: Tick,
    /// When set, each shard handles at most one message per tick.
    pub shard_service_time: bool,
}

/// Actor state shared between cloned worlds until one of them writes to it.
/// The hash is computed lazily and dropped on every write.
#[derive(Clone)]
struct Slot<A> {
    actor: Arc<A>,
    hash: OnceLock<u64>,
}

impl<A: Actor> Slot<A> {
    fn new(actor: A) -> Self {
        Self { actor: Arc::new(actor), hash: OnceLock::new() }
    }

    fn get_mut(&mut self) -> &mut A {
        self.hash = OnceLock::new();
        Arc::make_mut(&mut self.actor)
    }

    fn hash(&self) -> u64 {
        *self.hash.get_or_init(|| {
            let mut h = DefaultHasher::new();
            self.actor.hash(&mut h);
            h.finish()
        })
    }
}

#[derive(Clone)]
pub struct World<A: Actor> {
    now: Tick,
    next_seq: u64,
    queue: BTreeMap<EventKey, Event<A::Command>>,
    actors: BTreeMap<ActorId, Slot<A>>,
    env: Arc<A::Env>,
    crashed: BTreeMap<ActorId, Tick>,
    busy_until: BTreeMap<ActorId, Tick>,
    pub policy: AdversaryPolicy,
    pub config: NetConfig,
    log: RecordingLog,
    stats: MessageStats,
    trace: Sha256,
    tracing: bool,
    delivered: u64,
}

impl<A: Actor> World<A> {
    pub fn new(env: A::Env, config: NetConfig) -> Self {
        Self {
            now: 0,
            next_seq: 0,
            queue: BTreeMap::new(),
            actors: BTreeMap::new(),
            env: Arc::new(env),
            crashed: BTreeMap::new(),
            busy_until: BTreeMap::new(),
            policy: AdversaryPolicy::default(),
            config,
            log: RecordingLog::default(),
            stats: MessageStats::default(),
            trace: Sha256::new(),
            tracing: true,
            delivered: 0,
        }
    }

    pub fn add_actor(&mut self, id: ActorId, actor: A) {
        self.actors.insert(id, Slot::new(actor));
    }

    pub fn actor(&self, id: ActorId) -> Option<&A> {
        self.actors.get(&id).map(|s| &*s.actor)
    }

    pub fn actor_mut(&mut self, id: ActorId) -> Option<&mut A> {
        self.actors.get_mut(&id).map(Slot::get_mut)
    }

    pub fn actors(&self) -> impl Iterator<Item = (ActorId, &A)> {
        self.actors.iter().map(|(k, v)| (*k, &*v.actor))
    }

    pub fn env(&self) -> &A::Env {
        &self.env
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn log(&self) -> &RecordingLog {
        &self.log
    }

    pub fn stats(&self) -> &MessageStats {
        &self.stats
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn is_quiescent(&self) -> bool {
        self.queue.is_empty()
    }

    /// Stops folding deliveries into the trace digest, which is then frozen.
    /// Used by exhaustive search, where the digest is never read.
    pub fn disable_trace(&mut self) {
        self.tracing = false;
    }

    /// Hex SHA-256 over every delivery so far, in order.
    pub fn trace_digest(&self) -> String {
        hex::encode(self.trace.clone().finalize())
    }

    /// Deliveries to `actor` at or after `at` are lost.
    pub fn crash(&mut self, actor: ActorId, at: Tick) {
        self.crashed.insert(actor, at);
    }

    pub fn is_crashed(&self, actor: ActorId, at: Tick) -> bool {
        self.crashed.get(&actor).is_some_and(|&c| at >= c)
    }

    /// Enqueues an event; scheduling in the past is an error.
    pub fn submit(
        &mut self,
        deliver_at: Tick,
        origin: ActorId,
        target: ActorId,
        payload: Payload<A::Command>,
    ) -> Result<EventKey> {
        self.schedule(deliver_at, origin, target, payload, false)
    }

    fn schedule(
        &mut self,
        deliver_at: Tick,
        origin: ActorId,
        target: ActorId,
        payload: Payload<A::Command>,
        injected: bool,
    ) -> Result<EventKey> {
        if deliver_at < self.now {
            return Err(Error::PastDated { at: deliver_at, now: self.now });
        }
        let key = EventKey { deliver_at, seq_no: self.next_seq };
        self.next_seq += 1;
        self.queue.insert(
            key,
            Event { seq_no: key.seq_no, deliver_at, origin, target, payload, injected },
        );
        Ok(key)
    }

    /// Enqueues an injected copy of recording `index` from this world's log.
    pub fn inject_replay(&mut self, index: usize, target: ActorId, deliver_at: Tick) -> Result<EventKey> {
        let msg = self
            .log
            .entries
            .get(index)
            .ok_or(Error::UnknownRecording(index))?
            .msg
            .clone();
        self.inject(msg, target, deliver_at)
    }

    /// Enqueues an injected copy of a message recorded elsewhere (for
    /// example in a prior run's log).
    pub fn inject(&mut self, msg: ProtocolMessage, target: ActorId, deliver_at: Tick) -> Result<EventKey> {
        let key = self.schedule(deliver_at, ActorId::Adversary, target, Payload::Message(msg), true)?;
        self.stats.injected += 1;
        Ok(key)
    }

    /// Delivers the earliest pending event; `None` when quiescent.
    pub fn step(&mut self) -> Option<Event<A::Command>> {
        let key = *self.queue.keys().next()?;
        self.deliver(key)
    }

    pub fn run(&mut self) -> u64 {
        let mut n = 0;
        while self.step().is_some() {
            n += 1;
        }
        n
    }

    /// Delivers every event due at or before `tick`, then advances the clock.
    pub fn run_until(&mut self, tick: Tick) -> u64 {
        let mut n = 0;
        while let Some(key) = self.queue.keys().next().copied() {
            if key.deliver_at > tick {
                break;
            }
            self.deliver(key);
            n += 1;
        }
        self.now = self.now.max(tick);
        n
    }

    /// Forgets everything recorded so far.
    pub fn clear_log(&mut self) {
        self.log.entries.clear();
    }

    /// Sequence number the next scheduled event will get.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn pending(&self) -> Vec<EventKey> {
        self.queue.keys().copied().collect()
    }

    pub fn pending_events(&self) -> impl Iterator<Item = &Event<A::Command>> {
        self.queue.values()
    }

    /// Delivers a specific pending event regardless of queue order.
    pub fn deliver(&mut self, key: EventKey) -> Option<Event<A::Command>> {
        let ev = self.queue.remove(&key)?;
        self.now = self.now.max(ev.deliver_at);
        self.delivered += 1;
        self.trace_event(&ev);

        let dropped = self.is_crashed(ev.target, self.now)
            || match &ev.payload {
                Payload::Message(m) => self
                    .policy
                    .drops
                    .iter()
                    .any(|p| p.matches(ev.origin, ev.target, m, ev.injected)),
                _ => false,
            };
        if dropped {
            self.stats.dropped += 1;
            return Some(ev);
        }
        let Some(actor) = self.actors.get_mut(&ev.target).map(Slot::get_mut) else {
            self.stats.dropped += 1;
            return Some(ev);
        };
        let effects = actor.handle(&self.env, self.now, ev.origin, &ev.payload);
        for effect in effects {
            match effect {
                Effect::Send { to, msg } => self.emit(ev.target, to, msg),
                Effect::Timer { after, tag } => {
                    let at = self.now + after.max(1);
                    self.schedule(at, ev.target, ev.target, Payload::Timer(tag), false)
                        .expect("future tick");
                }
            }
        }
        Some(ev)
    }

    fn emit(&mut self, origin: ActorId, target: ActorId, msg: ProtocolMessage) {
        let kind = msg.kind();
        *self.stats.by_kind.entry(kind).or_default() += 1;
        *self
            .stats
            .by_route
            .entry((origin.role(), target.role(), kind))
            .or_default() += 1;
        if self.policy.record.matches(origin, target, &msg) {
            self.log.push(RecordedMessage { tick: self.now, origin, target, msg: msg.clone() });
        }
        let delay: Tick = self
            .policy
            .delays
            .iter()
            .filter(|(p, _)| p.matches(origin, target, &msg, false))
            .map(|(_, d)| *d)
            .sum();
        let mut at = self.now + 1 + delay + self.jitter(self.next_seq);
        if self.config.shard_service_time && target.role() == Role::Shard {
            let free = self.busy_until.entry(target).or_insert(0);
            at = at.max(*free);
            *free = at + 1;
        }
        self.schedule(at, origin, target, Payload::Message(msg), false)
            .expect("future tick");
    }

    fn jitter(&self, seq_no: u64) -> Tick {
        if self.config.jitter == 0 {
            return 0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ seq_no);
        rng.gen_range(0..=self.config.jitter)
    }

    fn trace_event(&mut self, ev: &Event<A::Command>) {
        if !self.tracing {
            return;
        }
        let bytes = bincode::serialize(&(ev.deliver_at, ev.origin, ev.target, &ev.payload, ev.injected))
            .expect("in-memory encoding cannot fail");
        self.trace.update((bytes.len() as u32).to_le_bytes());
        self.trace.update(bytes);
    }

    /// State identity for interleaving exploration: actor states plus the
    /// multiset of pending deliveries, ignoring timing, logs and counters.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (id, slot) in &self.actors {
            id.hash(&mut h);
            slot.hash().hash(&mut h);
        }
        self.crashed.hash(&mut h);
        let mut pending: Vec<_> = self
            .queue
            .values()
            .map(|e| (e.origin, e.target, &e.payload, e.injected))
            .collect();
        pending.sort();
        pending.hash(&mut h);
        h.finish()
    }
}

/// Serde helper storing optional actor ids in their text form.
mod opt_actor {
    use super::ActorId;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<ActorId>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(a) => s.serialize_str(&a.to_string()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<ActorId>, D::Error> {
        let s: Option<String> = Option::deserialize(d)?;
        s.map(|s| s.parse().map_err(serde::de::Error::custom)).transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{ObjectId, ShardId, Transaction};
    use crate::message::Body;

    /// Echoes every message back to its sender once, and logs what it saw.
    #[derive(Clone, Debug, Hash, Default)]
    struct Echo {
        seen: Vec<(Tick, TxnId)>,
    }

    impl Actor for Echo {
        type Env = ();
        type Command = u8;

        fn handle(&mut self, _: &(), now: Tick, _origin: ActorId, payload: &Payload<u8>) -> Vec<Effect> {
            match payload {
                Payload::Message(m) => {
                    self.seen.push((now, m.txn_id()));
                    if m.sender != ActorId::Client(0) {
                        return vec![];
                    }
                    let reply = ProtocolMessage::signed(ShardId(0), 1, m.body.clone());
                    vec![Effect::Send { to: ActorId::Client(0), msg: reply }]
                }
                _ => vec![],
            }
        }
    }

    fn msg(id: TxnId) -> ProtocolMessage {
        let txn = Transaction::new(id, 0, &[ObjectId::real(0)], &[], 1).unwrap();
        ProtocolMessage::unsigned(ActorId::Client(0), Body::SbacSubmit { txn })
    }

    fn world() -> World<Echo> {
        let mut w = World::new((), NetConfig::default());
        w.add_actor(ActorId::shard(0), Echo::default());
        w.add_actor(ActorId::Client(0), Echo::default());
        w
    }

    fn seen(w: &World<Echo>, a: ActorId) -> Vec<(Tick, TxnId)> {
        w.actor(a).unwrap().seen.clone()
    }

    #[test]
    fn delivers_in_tick_then_submission_order() {
        let mut w = world();
        let s = ActorId::shard(0);
        w.submit(5, ActorId::Client(0), s, Payload::Message(msg(1))).unwrap();
        w.submit(2, ActorId::Client(0), s, Payload::Message(msg(2))).unwrap();
        w.submit(2, ActorId::Client(0), s, Payload::Message(msg(3))).unwrap();
        assert_eq!(w.pending().len(), 3);
        let first = w.step().unwrap();
        assert_eq!(first.deliver_at, 2);
        assert_eq!(w.now(), 2);
        w.run();
        assert_eq!(seen(&w, s), vec![(2, 2), (2, 3), (5, 1)]);
        assert!(w.step().is_none());
    }

    #[test]
    fn rejects_past_dated_events() {
        let mut w = world();
        w.submit(3, ActorId::Client(0), ActorId::shard(0), Payload::Message(msg(1))).unwrap();
        w.run_until(3);
        assert_eq!(w.now(), 3);
        let err = w.submit(2, ActorId::Client(0), ActorId::shard(0), Payload::Message(msg(1)));
        assert!(matches!(err, Err(Error::PastDated { at: 2, now: 3 })));
        assert!(w.submit(5, ActorId::Client(0), ActorId::shard(0), Payload::Message(msg(1))).is_ok());
    }

    #[test]
    fn recording_is_passive_and_replays_are_delivered() {
        let mut w = world();
        w.submit(0, ActorId::Client(0), ActorId::shard(0), Payload::Message(msg(7))).unwrap();
        w.run();
        assert_eq!(w.log().len(), 1);
        assert_eq!(seen(&w, ActorId::Client(0)), vec![(1, 7)]);

        w.inject_replay(0, ActorId::Client(0), 4).unwrap();
        w.inject_replay(0, ActorId::Client(0), 4).unwrap();
        assert!(matches!(w.inject_replay(9, ActorId::Client(0), 5), Err(Error::UnknownRecording(9))));
        w.run();
        assert_eq!(seen(&w, ActorId::Client(0)).len(), 3);
        assert_eq!(w.stats().injected, 2);
        // Injected copies are not counted as genuine emissions.
        assert_eq!(w.stats().total(), 1);
    }

    #[test]
    fn crashed_actor_loses_deliveries() {
        let mut w = world();
        w.crash(ActorId::shard(0), 2);
        w.submit(1, ActorId::Client(0), ActorId::shard(0), Payload::Message(msg(1))).unwrap();
        w.submit(2, ActorId::Client(0), ActorId::shard(0), Payload::Message(msg(2))).unwrap();
        w.run();
        assert_eq!(seen(&w, ActorId::shard(0)), vec![(1, 1)]);
        assert_eq!(w.stats().dropped, 1);
    }

    #[test]
    fn delays_and_drops_apply() {
        let mut w = world();
        w.policy.delays.push((EventPattern { kind: Some(MessageKind::SbacSubmit), ..Default::default() }, 10));
        w.policy.drops.push(EventPattern { txn: Some(2), ..Default::default() });
        w.submit(0, ActorId::Client(0), ActorId::shard(0), Payload::Message(msg(1))).unwrap();
        w.submit(0, ActorId::Client(0), ActorId::shard(0), Payload::Message(msg(2))).unwrap();
        w.run();
        assert_eq!(seen(&w, ActorId::Client(0)), vec![(11, 1)]);
    }

    #[test]
    fn recording_log_round_trips() {
        let mut w = world();
        for i in 0..3 {
            w.submit(0, ActorId::Client(0), ActorId::shard(0), Payload::Message(msg(i))).unwrap();
        }
        w.run();
        let bytes = w.log().encode();
        let back = RecordingLog::decode(&bytes).unwrap();
        assert_eq!(&back, w.log());
        assert_eq!(back.encode(), bytes);
        assert!(RecordingLog::decode(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn identical_inputs_give_identical_traces() {
        let run = |jitter| {
            let mut w = world();
            w.config = NetConfig { seed: 42, jitter, shard_service_time: false };
            for i in 0..5 {
                w.submit(i, ActorId::Client(0), ActorId::shard(0), Payload::Message(msg(i))).unwrap();
            }
            w.run();
            (w.trace_digest(), seen(&w, ActorId::Client(0)))
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(0).0, run(3).0);
    }

    #[test]
    fn fingerprint_ignores_delivery_order_of_independent_events() {
        let mut a = world();
        a.submit(0, ActorId::Client(0), ActorId::shard(0), Payload::Timer(TimerTag { txn: 1, seq: 0, attempt: 0 })).unwrap();
        a.submit(0, ActorId::Client(0), ActorId::Client(0), Payload::Timer(TimerTag { txn: 2, seq: 0, attempt: 0 })).unwrap();
        let mut b = a.clone();
        let keys = a.pending();
        a.deliver(keys[0]);
        a.deliver(keys[1]);
        b.deliver(keys[1]);
        b.deliver(keys[0]);
        assert_eq!(a.fingerprint(), b.fingerprint());
    }
}
