//! Declarative scenario scripts (TOML) and the stage runner.
//!
//! A scenario seeds a world, then executes stages in order. Each stage
//! schedules its work relative to the current tick and runs the world to
//! quiescence before the next one starts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::adversary;
use crate::error::{Error, Result};
use crate::ledger::{shard_of, ObjectId, ObjectRecord, ObjectState, SeqNo, ShardId, Transaction, TxnId};
use crate::message::{ActorId, MessageKind, Phase};
use crate::net::{EventPattern, MessageStats, RecordedMessage, RecordingLog, Tick};
use crate::node::Protocol;
use crate::oracle::{self, Classification, WorldSnapshot};
use crate::store::Action;
use crate::system::{System, SystemConfig};

pub const SCENARIO_SCHEMA: &str = "xshard-scenario/1";

/// Transaction ids from here up are reserved for harness-made spends.
pub const AUX_TXN_BASE: TxnId = 1_000;

fn default_f() -> u16 {
    1
}

fn default_pool() -> u8 {
    8
}

fn default_inject_at() -> Tick {
    1
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_zero(n: &u64) -> bool {
    *n == 0
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub protocol: Protocol,
    pub num_shards: u16,
    #[serde(default = "default_f")]
    pub f: u16,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub jitter: Tick,
    #[serde(default = "default_pool")]
    pub dummy_pool: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overflow_threshold: Option<SeqNo>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub takeover: Vec<u16>,
    /// Hex of an encoded recording log to use as the `prior` log.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_log: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objects: Vec<ObjectSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transactions: Vec<TxnSpec>,
    /// Stages run on a fork of the freshly seeded world; what the adversary
    /// records there becomes the `prior` log.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prior: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assertions: Vec<Assertion>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedState {
    #[default]
    Active,
    Inactive,
    /// Declared for reference only; never created.
    Absent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shard: Option<u16>,
    #[serde(default)]
    pub state: SeedState,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub seq: SeqNo,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxnSpec {
    pub id: TxnId,
    #[serde(default)]
    pub client: u16,
    pub inputs: Vec<u64>,
    #[serde(default)]
    pub outputs: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Stage {
    /// Makes `shard` emit `vote` for `txn` without committing it, using an
    /// auxiliary transaction over `aux_object` (which must not exist).
    Elicit { vote: MessageKind, shard: u16, txn: TxnId, aux_txn: TxnId, aux_object: u64 },
    /// Spends each object with a single-input transaction.
    Spend { objects: Vec<u64> },
    /// Spends whichever outputs of `txn` are currently active.
    SpendOutputs { txn: TxnId },
    Run {
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        submit: Vec<SubmitSpec>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        inject: Vec<Injection>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        crash: Vec<CrashSpec>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        drop: Vec<EventPattern>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        delay: Vec<DelaySpec>,
    },
    /// Injections after the fact.
    Replay { inject: Vec<Injection> },
}

impl Stage {
    pub fn run(submit: Vec<SubmitSpec>, inject: Vec<Injection>) -> Self {
        Stage::Run { submit, inject, crash: vec![], drop: vec![], delay: vec![] }
    }

    fn injections(&self) -> &[Injection] {
        match self {
            Stage::Run { inject, .. } | Stage::Replay { inject } => inject,
            _ => &[],
        }
    }

    fn strip_injections(&mut self) {
        match self {
            Stage::Run { inject, .. } | Stage::Replay { inject } => inject.clear(),
            _ => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitSpec {
    pub txn: TxnId,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub at: Tick,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub only: Option<Vec<u16>>,
    /// Atomix only: the client aborts even if every shard pre-accepts.
    #[serde(default, skip_serializing_if = "is_false")]
    pub withdraw: bool,
}

impl SubmitSpec {
    pub fn now(txn: TxnId) -> Self {
        Self { txn, at: 0, only: None, withdraw: false }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogSource {
    /// This world's own recording log.
    #[default]
    Run,
    /// The log recorded in `prior` stages or given as `prior_log`.
    Prior,
}

/// Delivers copies of a recorded message: the `occurrence`-th entry (in
/// recording order) matching origin, kind, txn and optionally target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    #[serde(default)]
    pub log: LogSource,
    pub origin: String,
    pub kind: MessageKind,
    pub txn: TxnId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "is_zero_usize")]
    pub occurrence: usize,
    pub to: Vec<String>,
    #[serde(default = "default_inject_at")]
    pub at: Tick,
}

fn is_zero_usize(n: &usize) -> bool {
    *n == 0
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashSpec {
    pub actor: String,
    pub at: Tick,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelaySpec {
    pub matching: EventPattern,
    pub ticks: Tick,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassLabel {
    ConsistentCommit,
    ConsistentAbort,
    AvailabilityLoss,
    Inconsistent,
}

impl ClassLabel {
    pub fn of(c: &Classification) -> Self {
        match c {
            Classification::ConsistentCommit => ClassLabel::ConsistentCommit,
            Classification::ConsistentAbort => ClassLabel::ConsistentAbort,
            Classification::AvailabilityLoss => ClassLabel::AvailabilityLoss,
            Classification::Inconsistent(_) => ClassLabel::Inconsistent,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::ConsistentCommit => "consistent-commit",
            ClassLabel::ConsistentAbort => "consistent-abort",
            ClassLabel::AvailabilityLoss => "availability-loss",
            ClassLabel::Inconsistent => "inconsistent",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateLabel {
    Active,
    Locked,
    Inactive,
    Absent,
}

impl StateLabel {
    pub fn of(rec: Option<&ObjectRecord>) -> Self {
        match rec.map(|r| r.state) {
            None => StateLabel::Absent,
            Some(ObjectState::Active) => StateLabel::Active,
            Some(ObjectState::Locked { .. }) => StateLabel::Locked,
            Some(ObjectState::Inactive) => StateLabel::Inactive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Assertion {
    Classification { txn: TxnId, is: ClassLabel },
    Object {
        id: u64,
        state: StateLabel,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seq: Option<SeqNo>,
    },
    /// `id` was created on behalf of `txn` exactly `times` times.
    Created { id: u64, txn: TxnId, times: u32 },
    /// Same classification and final object tables as the run without
    /// injections.
    MatchesCounterfactual { txn: TxnId },
    NotInconsistent,
    Liveness,
    /// Exactly these actors emitted or acted for `txn` inside the
    /// observation window, and exactly in these ways.
    Traces { txn: TxnId, actors: Vec<TraceSpec> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    pub actor: String,
    #[serde(default)]
    pub sent: Vec<Phase>,
    #[serde(default)]
    pub actions: Vec<ActionSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpec {
    pub action: Action,
    pub object: u64,
}

impl TraceSpec {
    pub fn from_trace(actor: ActorId, t: &ActorTrace) -> Self {
        Self {
            actor: actor.to_string(),
            sent: t.sent.iter().copied().collect(),
            actions: t
                .actions
                .iter()
                .map(|(a, o)| ActionSpec { action: *a, object: o.id })
                .collect(),
        }
    }

    fn to_trace(&self) -> Result<(ActorId, ActorTrace)> {
        let actor = parse_actor(&self.actor, "traces.actor")?;
        let actions: Vec<_> = self.actions.iter().map(|a| (a.action, ObjectId::real(a.object))).collect();
        Ok((actor, ActorTrace::new(&self.sent, &actions)))
    }
}

pub fn render_traces(traces: &BTreeMap<ActorId, ActorTrace>) -> String {
    let parts: Vec<String> = traces
        .iter()
        .filter(|(_, t)| !t.is_empty())
        .map(|(a, t)| {
            let sent: Vec<&str> = t.sent.iter().map(|p| p.name()).collect();
            let acts: Vec<String> = t.actions.iter().map(|(a, o)| format!("{} {o}", a.name())).collect();
            format!("{a} {{{}}}[{}]", sent.join(", "), acts.join(", "))
        })
        .collect();
    parts.join("; ")
}

impl Assertion {
    pub fn describe(&self) -> String {
        match self {
            Assertion::Classification { txn, is } => format!("txn {txn} is {}", is.name()),
            Assertion::Object { id, state, seq } => match seq {
                Some(s) => format!("o{id} is {state:?} with seq {s}").to_lowercase(),
                None => format!("o{id} is {state:?}").to_lowercase(),
            },
            Assertion::Created { id, txn, times } => format!("o{id} created {times} time(s) by txn {txn}"),
            Assertion::MatchesCounterfactual { txn } => format!("txn {txn} matches the injection-free run"),
            Assertion::NotInconsistent => "no transaction is inconsistent".into(),
            Assertion::Liveness => "every submitted transaction is decided".into(),
            Assertion::Traces { txn, .. } => format!("per-actor messages and ledger actions for txn {txn}"),
        }
    }
}

fn scenario_err(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Scenario { location: location.into(), message: message.into() }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

fn parse_actor(s: &str, location: &str) -> Result<ActorId> {
    s.parse::<ActorId>().map_err(|_| scenario_err(location, format!("unknown actor `{s}`")))
}

fn kind_protocol(kind: MessageKind) -> Protocol {
    let name = kind.name();
    if name.starts_with("sbac") {
        Protocol::Sbac
    } else if name.starts_with("atomix") {
        Protocol::Atomix
    } else {
        Protocol::Byzcuit
    }
}

impl Scenario {
    pub fn new(name: &str, protocol: Protocol, num_shards: u16) -> Self {
        Self {
            schema: SCENARIO_SCHEMA.into(),
            name: name.into(),
            protocol,
            num_shards,
            f: 1,
            seed: 0,
            jitter: 0,
            dummy_pool: default_pool(),
            overflow_threshold: None,
            takeover: vec![],
            prior_log: None,
            objects: vec![],
            transactions: vec![],
            prior: vec![],
            stages: vec![],
            assertions: vec![],
        }
    }

    /// Parses and validates; errors carry `line:col` or a field path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let scn: Scenario = toml::from_str(text).map_err(|e| {
            let location = match e.span() {
                Some(span) => {
                    let (l, c) = line_col(text, span.start);
                    let src = text.lines().nth(l - 1).unwrap_or("").trim();
                    format!("line {l}, column {c} (`{src}`)")
                }
                None => "document".into(),
            };
            scenario_err(location, e.message().trim())
        })?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Codec(e.to_string()))
    }

    pub fn declared_objects(&self) -> BTreeSet<u64> {
        let mut ids: BTreeSet<u64> = self.objects.iter().map(|o| o.id).collect();
        ids.extend(self.transactions.iter().flat_map(|t| t.outputs.iter().copied()));
        ids
    }

    fn txn_spec(&self, id: TxnId) -> Option<&TxnSpec> {
        self.transactions.iter().find(|t| t.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(scenario_err("schema", format!("expected `{SCENARIO_SCHEMA}`, found `{}`", self.schema)));
        }
        if self.num_shards == 0 || self.num_shards > 1024 {
            return Err(scenario_err("num_shards", "must be between 1 and 1024"));
        }
        if 3 * self.f as u32 + 1 > 64 {
            return Err(scenario_err("f", "at most 21 (3f+1 nodes per shard, 64 max)"));
        }
        let n = self.num_shards;
        let mut seen = BTreeSet::new();
        for (i, o) in self.objects.iter().enumerate() {
            if !seen.insert(o.id) {
                return Err(scenario_err(format!("objects[{i}].id"), format!("duplicate object {}", o.id)));
            }
            let owner = (o.id % n as u64) as u16;
            if o.shard.is_some_and(|s| s != owner) {
                return Err(scenario_err(
                    format!("objects[{i}].shard"),
                    format!("object {} belongs to shard {owner}", o.id),
                ));
            }
        }
        let declared = self.declared_objects();
        let check_obj = |loc: String, id: u64| -> Result<()> {
            if declared.contains(&id) {
                Ok(())
            } else {
                Err(scenario_err(loc, format!("object {id} is not declared")))
            }
        };
        let mut txn_ids = BTreeSet::new();
        for (i, t) in self.transactions.iter().enumerate() {
            let loc = format!("transactions[{i}]");
            if !txn_ids.insert(t.id) {
                return Err(scenario_err(format!("{loc}.id"), format!("duplicate transaction {}", t.id)));
            }
            if t.id >= AUX_TXN_BASE {
                return Err(scenario_err(format!("{loc}.id"), format!("ids from {AUX_TXN_BASE} up are reserved")));
            }
            for (j, &o) in t.inputs.iter().enumerate() {
                check_obj(format!("{loc}.inputs[{j}]"), o)?;
            }
            let objs = |v: &[u64]| v.iter().map(|&i| ObjectId::real(i)).collect::<Vec<_>>();
            Transaction::new(t.id, t.client, &objs(&t.inputs), &objs(&t.outputs), n)
                .map_err(|e| scenario_err(loc, e.to_string()))?;
        }
        let check_txn = |loc: String, id: TxnId| -> Result<()> {
            if txn_ids.contains(&id) {
                Ok(())
            } else {
                Err(scenario_err(loc, format!("transaction {id} is not declared")))
            }
        };
        let check_shard = |loc: String, s: u16| -> Result<()> {
            if s < n {
                Ok(())
            } else {
                Err(scenario_err(loc, format!("shard {s} out of range (num_shards = {n})")))
            }
        };
        let check_kind = |loc: String, k: MessageKind| -> Result<()> {
            if kind_protocol(k) == self.protocol {
                Ok(())
            } else {
                Err(scenario_err(loc, format!("`{}` is not a {} message", k.name(), self.protocol)))
            }
        };
        let check_actor = |loc: String, s: &str| -> Result<()> {
            match parse_actor(s, &loc)? {
                ActorId::Shard(id) => check_shard(loc, id.0),
                _ => Ok(()),
            }
        };
        for (section, stages) in [("prior", &self.prior), ("stages", &self.stages)] {
            for (i, st) in stages.iter().enumerate() {
                let loc = format!("{section}[{i}]");
                match st {
                    Stage::Elicit { vote, shard, txn, aux_txn, aux_object } => {
                        if !vote.is_vote() {
                            return Err(scenario_err(format!("{loc}.vote"), "only phase-1 votes can be elicited"));
                        }
                        check_kind(format!("{loc}.vote"), *vote)?;
                        check_shard(format!("{loc}.shard"), *shard)?;
                        check_txn(format!("{loc}.txn"), *txn)?;
                        if txn_ids.contains(aux_txn) || *aux_txn >= AUX_TXN_BASE {
                            return Err(scenario_err(
                                format!("{loc}.aux_txn"),
                                "must be an unused id below the reserved range",
                            ));
                        }
                        check_obj(format!("{loc}.aux_object"), *aux_object)?;
                    }
                    Stage::Spend { objects } => {
                        for (j, &o) in objects.iter().enumerate() {
                            check_obj(format!("{loc}.objects[{j}]"), o)?;
                        }
                    }
                    Stage::SpendOutputs { txn } => check_txn(format!("{loc}.txn"), *txn)?,
                    Stage::Run { submit, crash, .. } => {
                        for (j, s) in submit.iter().enumerate() {
                            check_txn(format!("{loc}.submit[{j}].txn"), s.txn)?;
                            for &sh in s.only.iter().flatten() {
                                check_shard(format!("{loc}.submit[{j}].only"), sh)?;
                            }
                        }
                        for (j, c) in crash.iter().enumerate() {
                            check_actor(format!("{loc}.crash[{j}].actor"), &c.actor)?;
                        }
                    }
                    Stage::Replay { .. } => {}
                }
                for (j, inj) in st.injections().iter().enumerate() {
                    let iloc = format!("{loc}.inject[{j}]");
                    check_actor(format!("{iloc}.origin"), &inj.origin)?;
                    check_kind(format!("{iloc}.kind"), inj.kind)?;
                    if let Some(t) = &inj.target {
                        check_actor(format!("{iloc}.target"), t)?;
                    }
                    if inj.to.is_empty() {
                        return Err(scenario_err(format!("{iloc}.to"), "needs at least one target"));
                    }
                    for (k, t) in inj.to.iter().enumerate() {
                        check_actor(format!("{iloc}.to[{k}]"), t)?;
                    }
                }
            }
        }
        if self.prior_log.is_some() && !self.prior.is_empty() {
            return Err(scenario_err("prior_log", "give either `prior` stages or `prior_log`, not both"));
        }
        for (i, a) in self.assertions.iter().enumerate() {
            let loc = format!("assertions[{i}]");
            match a {
                Assertion::Classification { txn, .. } | Assertion::MatchesCounterfactual { txn } => {
                    check_txn(format!("{loc}.txn"), *txn)?
                }
                Assertion::Object { id, .. } => check_obj(format!("{loc}.id"), *id)?,
                Assertion::Created { id, txn, .. } => {
                    check_obj(format!("{loc}.id"), *id)?;
                    check_txn(format!("{loc}.txn"), *txn)?;
                }
                Assertion::NotInconsistent | Assertion::Liveness => {}
                Assertion::Traces { txn, actors } => {
                    check_txn(format!("{loc}.txn"), *txn)?;
                    for (j, t) in actors.iter().enumerate() {
                        check_actor(format!("{loc}.actors[{j}].actor"), &t.actor)?;
                        for (k, a) in t.actions.iter().enumerate() {
                            check_obj(format!("{loc}.actors[{j}].actions[{k}].object"), a.object)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn has_injections(&self) -> bool {
        self.stages.iter().any(|s| !s.injections().is_empty())
    }

    /// The same script with every injection removed.
    pub fn without_injections(&self) -> Scenario {
        let mut out = self.clone();
        for st in &mut out.stages {
            st.strip_injections();
        }
        out
    }

    pub fn system_config(&self) -> SystemConfig {
        let mut cfg = SystemConfig::new(self.protocol, self.num_shards);
        cfg.f = self.f;
        cfg.dummy_pool = self.dummy_pool;
        if let Some(t) = self.overflow_threshold {
            cfg.overflow_threshold = t;
        }
        cfg.takeover = self.takeover.clone();
        cfg.net.seed = self.seed;
        cfg.net.jitter = self.jitter;
        cfg
    }

    pub fn transaction(&self, id: TxnId) -> Result<Transaction> {
        let t = self
            .txn_spec(id)
            .ok_or_else(|| scenario_err("transactions", format!("transaction {id} is not declared")))?;
        let objs = |v: &[u64]| v.iter().map(|&i| ObjectId::real(i)).collect::<Vec<_>>();
        Transaction::new(t.id, t.client, &objs(&t.inputs), &objs(&t.outputs), self.num_shards)
    }
}

/// What one actor did for one transaction inside the observation window:
/// the phases of the messages it emitted and the ledger actions it took.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ActorTrace {
    pub sent: BTreeSet<Phase>,
    /// Sorted, so comparisons ignore ordering.
    pub actions: Vec<(Action, ObjectId)>,
}

impl ActorTrace {
    pub fn new(sent: &[Phase], actions: &[(Action, ObjectId)]) -> Self {
        let mut actions = actions.to_vec();
        actions.sort();
        Self { sent: sent.iter().copied().collect(), actions }
    }

    pub fn is_empty(&self) -> bool {
        self.sent.is_empty() && self.actions.is_empty()
    }
}

/// Start of the observation window: the first `run` stage.
#[derive(Clone, Debug, Default)]
pub struct Window {
    pub log_start: usize,
    pub history_start: BTreeMap<ShardId, usize>,
    pub before: BTreeMap<ShardId, Vec<ObjectRecord>>,
}

impl Window {
    pub fn open(sys: &System) -> Self {
        let snap = sys.snapshot();
        Self {
            log_start: sys.world.log().len(),
            history_start: snap.shards.iter().map(|(s, v)| (*s, v.history.len())).collect(),
            before: snap.object_tables(),
        }
    }

    pub fn traces(&self, sys: &System, txn: TxnId) -> BTreeMap<ActorId, ActorTrace> {
        let mut out: BTreeMap<ActorId, ActorTrace> = BTreeMap::new();
        for e in &sys.world.log().entries[self.log_start..] {
            if e.msg.txn_id() == txn {
                out.entry(e.origin).or_default().sent.insert(e.msg.kind().phase());
            }
        }
        for (id, node) in sys.world.actors() {
            let (ActorId::Shard(s), Some(store)) = (id, node.store()) else { continue };
            let start = self.history_start.get(&s).copied().unwrap_or(0);
            for e in &store.history()[start..] {
                if e.txn == Some(txn) {
                    out.entry(id).or_default().actions.push((e.action, e.obj));
                }
            }
        }
        for t in out.values_mut() {
            t.actions.sort();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub check: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct ScenarioOutcome {
    pub scenario: Scenario,
    pub system: System,
    pub window: Window,
    pub snapshot: WorldSnapshot,
    pub counterfactual: WorldSnapshot,
    pub classifications: BTreeMap<TxnId, Classification>,
    pub counterfactual_classifications: BTreeMap<TxnId, Classification>,
    pub traces: BTreeMap<TxnId, BTreeMap<ActorId, ActorTrace>>,
    pub prior_log: RecordingLog,
    pub assertions: Vec<AssertionResult>,
}

impl ScenarioOutcome {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn stats(&self) -> &MessageStats {
        self.system.world.stats()
    }

    pub fn log(&self) -> &RecordingLog {
        self.system.world.log()
    }

    pub fn created_times(&self, id: ObjectId, txn: TxnId) -> u32 {
        created_times(&self.snapshot, id, txn)
    }
}

pub fn created_times(snap: &WorldSnapshot, id: ObjectId, txn: TxnId) -> u32 {
    snap.shards
        .values()
        .flat_map(|v| v.history.iter())
        .filter(|e| e.obj == id && e.action == Action::Create && e.txn == Some(txn))
        .count() as u32
}

struct Exec<'a> {
    scn: &'a Scenario,
    sys: System,
    prior: RecordingLog,
    next_aux: TxnId,
    window: Option<Window>,
}

impl Exec<'_> {
    fn stages(&mut self, stages: &[Stage], section: &str) -> Result<()> {
        for (i, st) in stages.iter().enumerate() {
            self.stage(st).map_err(|e| match e {
                Error::Scenario { .. } => e,
                other => scenario_err(format!("{section}[{i}]"), other.to_string()),
            })?;
        }
        Ok(())
    }

    fn spend(&mut self, obj: ObjectId) -> Result<()> {
        let id = self.next_aux;
        self.next_aux += 1;
        self.sys.spend(obj, id, 0)?;
        Ok(())
    }

    fn inject(&mut self, inj: &Injection, base: Tick) -> Result<()> {
        let msg = resolve(inj, self.sys.world.log(), &self.prior)?.msg.clone();
        for t in &inj.to {
            let to = parse_actor(t, "inject.to")?;
            self.sys.inject(msg.clone(), to, base + inj.at)?;
        }
        Ok(())
    }

    fn stage(&mut self, st: &Stage) -> Result<()> {
        let base = self.sys.world.now();
        match st {
            Stage::Elicit { vote, shard, txn, aux_txn, aux_object } => {
                let t = self.scn.transaction(*txn)?;
                adversary::elicit(&mut self.sys, *vote, ShardId(*shard), &t, *aux_txn, ObjectId::real(*aux_object))?;
            }
            Stage::Spend { objects } => {
                for &o in objects {
                    self.spend(ObjectId::real(o))?;
                }
            }
            Stage::SpendOutputs { txn } => {
                let t = self.scn.transaction(*txn)?;
                for r in &t.outputs {
                    if self.sys.object(r.id).is_some_and(|o| o.state.is_active()) {
                        self.spend(r.id)?;
                    }
                }
            }
            Stage::Run { submit, inject, crash, drop, delay } => {
                if self.window.is_none() {
                    self.window = Some(Window::open(&self.sys));
                }
                let saved = self.sys.world.policy.clone();
                self.sys.world.policy.drops.extend(drop.iter().cloned());
                self.sys.world.policy.delays.extend(delay.iter().map(|d| (d.matching.clone(), d.ticks)));
                for s in submit {
                    let t = self.scn.transaction(s.txn)?;
                    let only = s.only.as_ref().map(|v| v.iter().map(|&i| ShardId(i)).collect());
                    self.sys.submit_at(&t, base + s.at, only, s.withdraw)?;
                }
                for c in crash {
                    self.sys.crash(parse_actor(&c.actor, "crash.actor")?, base + c.at);
                }
                for inj in inject {
                    self.inject(inj, base)?;
                }
                self.sys.run();
                self.sys.world.policy = saved;
            }
            Stage::Replay { inject } => {
                for inj in inject {
                    self.inject(inj, base)?;
                }
                self.sys.run();
            }
        }
        Ok(())
    }
}

/// Finds the recording an injection refers to.
pub fn resolve<'l>(inj: &Injection, run: &'l RecordingLog, prior: &'l RecordingLog) -> Result<&'l RecordedMessage> {
    let log = match inj.log {
        LogSource::Run => run,
        LogSource::Prior => prior,
    };
    let origin = parse_actor(&inj.origin, "inject.origin")?;
    let target = inj.target.as_deref().map(|t| parse_actor(t, "inject.target")).transpose()?;
    log.entries
        .iter()
        .filter(|e| {
            e.origin == origin
                && e.msg.kind() == inj.kind
                && e.msg.txn_id() == inj.txn
                && target.is_none_or(|t| t == e.target)
        })
        .nth(inj.occurrence)
        .ok_or_else(|| {
            Error::NoMatchingRecording(format!(
                "{} from {} for txn {} (occurrence {}) in the {:?} log",
                inj.kind.name(),
                inj.origin,
                inj.txn,
                inj.occurrence,
                inj.log
            ))
        })
}

fn seeded_system(scn: &Scenario) -> System {
    let mut sys = System::new(scn.system_config());
    for o in &scn.objects {
        let state = match o.state {
            SeedState::Active => ObjectState::Active,
            SeedState::Inactive => ObjectState::Inactive,
            SeedState::Absent => continue,
        };
        sys.add_object(ObjectId::real(o.id), state, o.seq);
    }
    sys
}

fn execute(scn: &Scenario) -> Result<(System, Window, RecordingLog)> {
    let sys = seeded_system(scn);
    let prior = if !scn.prior.is_empty() {
        let mut fork = Exec { scn, sys: sys.clone(), prior: RecordingLog::default(), next_aux: AUX_TXN_BASE, window: None };
        fork.stages(&scn.prior, "prior")?;
        fork.sys.world.log().clone()
    } else if let Some(h) = &scn.prior_log {
        let bytes = hex::decode(h.trim()).map_err(|e| scenario_err("prior_log", e.to_string()))?;
        RecordingLog::decode(&bytes).map_err(|e| scenario_err("prior_log", e.to_string()))?
    } else {
        RecordingLog::default()
    };
    let mut exec = Exec { scn, sys, prior, next_aux: AUX_TXN_BASE, window: None };
    exec.stages(&scn.stages, "stages")?;
    let window = match exec.window {
        Some(w) => w,
        None => Window { log_start: 0, history_start: BTreeMap::new(), before: BTreeMap::new() },
    };
    Ok((exec.sys, window, exec.prior))
}

fn classify_all(scn: &Scenario, snap: &WorldSnapshot) -> Result<BTreeMap<TxnId, Classification>> {
    let mut out = BTreeMap::new();
    for t in &scn.transactions {
        if snap.txns.contains_key(&t.id) {
            out.insert(t.id, oracle::classify(snap, t.id)?);
        }
    }
    Ok(out)
}

/// Runs the scenario, its injection-free counterfactual, and the assertions.
pub fn run_scenario(scn: &Scenario) -> Result<ScenarioOutcome> {
    scn.validate()?;
    let (sys, window, prior_log) = execute(scn)?;
    let cf_sys = if scn.has_injections() { execute(&scn.without_injections())?.0 } else { sys.clone() };

    let mut cf_snap = cf_sys.snapshot();
    let commits: BTreeSet<TxnId> = scn
        .transactions
        .iter()
        .filter_map(|t| cf_snap.txns.get(&t.id))
        .filter(|t| oracle::classify_shape(&oracle::shape(&cf_snap, t), false) == Classification::ConsistentCommit)
        .map(|t| t.id)
        .collect();
    cf_snap.counterfactual_commits = commits.clone();
    let mut snap = sys.snapshot();
    snap.counterfactual_commits = commits;

    let classifications = classify_all(scn, &snap)?;
    let counterfactual_classifications = classify_all(scn, &cf_snap)?;
    let traces = classifications.keys().map(|&t| (t, window.traces(&sys, t))).collect();

    let mut out = ScenarioOutcome {
        scenario: scn.clone(),
        system: sys,
        window,
        snapshot: snap,
        counterfactual: cf_snap,
        classifications,
        counterfactual_classifications,
        traces,
        prior_log,
        assertions: vec![],
    };
    out.assertions = scn.assertions.iter().map(|a| evaluate(a, &out)).collect();
    Ok(out)
}

fn evaluate(a: &Assertion, o: &ScenarioOutcome) -> AssertionResult {
    let (passed, detail) = match a {
        Assertion::Classification { txn, is } => match o.classifications.get(txn) {
            Some(c) => (ClassLabel::of(c) == *is, format!("got {c}")),
            None => (false, "transaction was never submitted".into()),
        },
        Assertion::Object { id, state, seq } => {
            let rec = o.snapshot.object(ObjectId::real(*id));
            let got = StateLabel::of(rec);
            let seq_ok = seq.is_none_or(|s| rec.is_some_and(|r| r.seq == s));
            let detail = match rec {
                Some(r) => format!("got {got:?} with seq {}", r.seq).to_lowercase(),
                None => "got absent".into(),
            };
            (got == *state && seq_ok, detail)
        }
        Assertion::Created { id, txn, times } => {
            let n = o.created_times(ObjectId::real(*id), *txn);
            (n == *times, format!("created {n} time(s)"))
        }
        Assertion::MatchesCounterfactual { txn } => {
            let got = o.classifications.get(txn);
            let want = o.counterfactual_classifications.get(txn);
            let same_tables = o.snapshot.object_tables() == o.counterfactual.object_tables();
            let detail = match (got, want) {
                (Some(g), Some(w)) => format!("got {g}, injection-free run gives {w}; tables equal: {same_tables}"),
                _ => "transaction was never submitted".into(),
            };
            (got.is_some() && got == want && same_tables, detail)
        }
        Assertion::NotInconsistent => {
            let bad: Vec<String> = o
                .classifications
                .iter()
                .filter(|(_, c)| c.is_inconsistent())
                .map(|(t, c)| format!("txn {t}: {c}"))
                .collect();
            (bad.is_empty(), bad.join("; "))
        }
        Assertion::Liveness => {
            let ok = oracle::check_liveness(&o.snapshot);
            let undecided: Vec<String> = o.snapshot.undecided.iter().map(|t| t.to_string()).collect();
            (ok, if ok { String::new() } else { format!("undecided: {}", undecided.join(", ")) })
        }
        Assertion::Traces { txn, actors } => {
            let want: Result<BTreeMap<ActorId, ActorTrace>> = actors.iter().map(TraceSpec::to_trace).collect();
            let got: BTreeMap<ActorId, ActorTrace> = o
                .traces
                .get(txn)
                .into_iter()
                .flatten()
                .filter(|(_, t)| !t.is_empty())
                .map(|(a, t)| (*a, t.clone()))
                .collect();
            match want {
                Ok(mut want) => {
                    want.retain(|_, t| !t.is_empty());
                    let ok = want == got;
                    let detail = if ok {
                        String::new()
                    } else {
                        format!("expected {}; got {}", render_traces(&want), render_traces(&got))
                    };
                    (ok, detail)
                }
                Err(e) => (false, e.to_string()),
            }
        }
    };
    AssertionResult { check: a.describe(), passed, detail }
}

/// Object id helper for the canonical layout: `k * num_shards + shard`.
pub fn canonical_id(k: u64, shard: u16, num_shards: u16) -> u64 {
    k * num_shards as u64 + shard as u64
}

/// The shard a declared object id lives on.
pub fn shard_for(id: u64, num_shards: u16) -> ShardId {
    shard_of(ObjectId::real(id), num_shards)
}

#[cfg(test)]
mod tests {
    use super::*;

    const COMMIT: &str = r#"
schema = "xshard-scenario/1"
name = "commit"
protocol = "sbac"
num_shards = 3

[[objects]]
id = 3

[[objects]]
id = 4

[[transactions]]
id = 1
inputs = [3, 4]
outputs = [6, 7, 8]

[[stages]]
kind = "run"
submit = [{ txn = 1 }]

[[assertions]]
check = "classification"
txn = 1
is = "consistent-commit"

[[assertions]]
check = "object"
id = 3
state = "inactive"
"#;

    #[test]
    fn parses_and_runs_a_commit() {
        let scn = Scenario::from_toml(COMMIT).unwrap();
        let out = run_scenario(&scn).unwrap();
        assert!(out.passed(), "{:?}", out.assertions);
        let t = &out.traces[&1];
        assert_eq!(t[&ActorId::shard(2)].actions, vec![(Action::Create, ObjectId::real(8))]);
    }

    #[test]
    fn unknown_field_is_located() {
        let bad = COMMIT.replace("num_shards = 3", "num_shards = 3\nbogus = 1");
        match Scenario::from_toml(&bad) {
            Err(Error::Scenario { location, message }) => {
                assert!(location.starts_with("line 6"), "{location}");
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn undeclared_object_is_named() {
        let bad = COMMIT.replace("inputs = [3, 4]", "inputs = [3, 5]");
        match Scenario::from_toml(&bad) {
            Err(Error::Scenario { location, .. }) => assert_eq!(location, "transactions[0].inputs[1]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn toml_round_trip() {
        let scn = Scenario::from_toml(COMMIT).unwrap();
        let again = Scenario::from_toml(&scn.to_toml().unwrap()).unwrap();
        assert_eq!(scn, again);
    }
}
