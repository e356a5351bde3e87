//! Actor wiring: every simulated participant is a `Node`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::atomix::{self, AtomixPending, AtomixShard};
use crate::byzcuit::{self, ByzParams, ByzShard, Tm};
use crate::error::Error;
use crate::ledger::{ShardId, Transaction, TxnId};
use crate::message::{validate_cert, ActorId, Body, ProtocolMessage};
use crate::net::{Actor, Effect, Payload, Tick};
use crate::sbac::{self, SbacShard};
use crate::store::ObjectStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Sbac,
    Atomix,
    Byzcuit,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Sbac, Protocol::Atomix, Protocol::Byzcuit];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Sbac => "sbac",
            Protocol::Atomix => "atomix",
            Protocol::Byzcuit => "byzcuit",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Scenario {
                location: "protocol".into(),
                message: format!("unknown protocol `{s}` (expected sbac, atomix or byzcuit)"),
            })
    }
}

/// Instructions the harness gives a client.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Command {
    Submit {
        txn: Transaction,
        /// Restrict delivery to these shards (used by elicitation recipes).
        only: Option<Vec<ShardId>>,
        withdraw: bool,
    },
}

#[derive(Clone, Debug)]
pub struct NodeEnv {
    pub protocol: Protocol,
    pub params: ByzParams,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Client {
    pub id: u16,
    pub submitted: BTreeSet<TxnId>,
    /// First outcome learned per transaction.
    pub outcomes: BTreeMap<TxnId, bool>,
    pub atomix: BTreeMap<TxnId, AtomixPending>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Sbac(SbacShard),
    Atomix(AtomixShard),
    Byz(ByzShard),
    Client(Client),
    Tm(Tm),
}

impl Node {
    pub fn shard(protocol: Protocol, id: ShardId) -> Self {
        match protocol {
            Protocol::Sbac => Node::Sbac(SbacShard::new(id)),
            Protocol::Atomix => Node::Atomix(AtomixShard::new(id)),
            Protocol::Byzcuit => Node::Byz(ByzShard::new(id)),
        }
    }

    pub fn store(&self) -> Option<&ObjectStore> {
        match self {
            Node::Sbac(s) => Some(&s.store),
            Node::Atomix(s) => Some(&s.store),
            Node::Byz(s) => Some(&s.store),
            _ => None,
        }
    }

    pub fn store_mut(&mut self) -> Option<&mut ObjectStore> {
        match self {
            Node::Sbac(s) => Some(&mut s.store),
            Node::Atomix(s) => Some(&mut s.store),
            Node::Byz(s) => Some(&mut s.store),
            _ => None,
        }
    }

    pub fn client(&self) -> Option<&Client> {
        match self {
            Node::Client(c) => Some(c),
            _ => None,
        }
    }

    /// Transactions this node still holds open protocol state for.
    pub fn undecided(&self) -> BTreeSet<TxnId> {
        match self {
            Node::Sbac(s) => s
                .pending
                .iter()
                .filter(|(_, p)| p.own.is_some())
                .map(|(t, _)| *t)
                .collect(),
            Node::Atomix(_) => BTreeSet::new(),
            Node::Byz(s) => s.cache.keys().map(|k| k.0).collect(),
            Node::Client(c) => c.atomix.keys().copied().collect(),
            Node::Tm(_) => BTreeSet::new(),
        }
    }
}

fn client_handle(c: &mut Client, env: &NodeEnv, payload: &Payload<Command>) -> Vec<Effect> {
    let me = ActorId::Client(c.id);
    match payload {
        Payload::Command(Command::Submit { txn, only, withdraw }) => {
            c.submitted.insert(txn.id);
            c.outcomes.remove(&txn.id);
            let targets: Vec<ShardId> = match only {
                Some(v) => v.clone(),
                None => match env.protocol {
                    Protocol::Byzcuit => txn.concerned_shards().into_iter().collect(),
                    _ => txn.input_shards().into_iter().collect(),
                },
            };
            let body = match env.protocol {
                Protocol::Sbac => Body::SbacSubmit { txn: txn.clone() },
                Protocol::Atomix => {
                    // Resubmitting to further shards keeps the votes gathered so far.
                    match c.atomix.get_mut(&txn.id) {
                        Some(p) if p.txn == *txn => p.withdraw = *withdraw,
                        _ => {
                            c.atomix.insert(txn.id, AtomixPending::new(txn.clone(), *withdraw));
                        }
                    }
                    Body::AtomixSubmit { txn: txn.clone() }
                }
                Protocol::Byzcuit => Body::ByzSubmit { txn: txn.clone(), reply_to: ActorId::Tm(c.id) },
            };
            let msg = ProtocolMessage::unsigned(me, body);
            targets
                .into_iter()
                .map(|s| Effect::Send { to: ActorId::Shard(s), msg: msg.clone() })
                .collect()
        }
        Payload::Message(msg) => {
            let faults = &env.params.faults;
            match &msg.body {
                Body::AtomixPreAccept { txn } | Body::AtomixPreAbort { txn } => {
                    let Some(p) = c.atomix.get_mut(&txn.id) else { return vec![] };
                    let from_input = msg.sender_shard().is_some_and(|s| txn.manages_input(s));
                    if p.txn != *txn || !from_input || !validate_cert(msg, faults) {
                        return vec![];
                    }
                    atomix::atomix_client_record(p, msg);
                    let Some((decision, to)) = atomix::atomix_client_decide(p, c.id) else {
                        return vec![];
                    };
                    c.atomix.remove(&txn.id);
                    let committed = matches!(decision.body, Body::AtomixAccept { .. });
                    c.outcomes.entry(txn.id).or_insert(committed);
                    to.into_iter()
                        .map(|to| Effect::Send { to, msg: decision.clone() })
                        .collect()
                }
                Body::SbacAccept { txn } | Body::SbacAbort { txn } | Body::ByzOutcome { txn, .. } => {
                    if validate_cert(msg, faults) {
                        let committed = match &msg.body {
                            Body::ByzOutcome { committed, .. } => *committed,
                            b => matches!(b, Body::SbacAccept { .. }),
                        };
                        c.outcomes.entry(txn.id).or_insert(committed);
                    }
                    vec![]
                }
                _ => vec![],
            }
        }
        Payload::Timer(_) => vec![],
    }
}

impl Actor for Node {
    type Env = NodeEnv;
    type Command = Command;

    fn handle(&mut self, env: &NodeEnv, _now: Tick, _origin: ActorId, payload: &Payload<Command>) -> Vec<Effect> {
        let params = &env.params;
        match self {
            Node::Client(c) => client_handle(c, env, payload),
            Node::Sbac(s) => match payload {
                Payload::Message(m) => sbac::handle(s, &params.faults, m),
                _ => vec![],
            },
            Node::Atomix(s) => match payload {
                Payload::Message(m) => match &m.body {
                    Body::AtomixSubmit { txn } => {
                        let f = params.faults.f_of(s.id).unwrap_or(0);
                        match atomix::atomix_phase1(s, txn, f) {
                            Ok(vote) => vec![Effect::Send { to: ActorId::Client(txn.client), msg: vote }],
                            Err(_) => vec![],
                        }
                    }
                    Body::AtomixAccept { .. } | Body::AtomixAbort { .. } => {
                        atomix::atomix_apply(s, m, &params.faults);
                        vec![]
                    }
                    _ => vec![],
                },
                _ => vec![],
            },
            Node::Byz(s) => match payload {
                Payload::Message(m) => byzcuit::shard_handle(s, params, Some(m), None),
                Payload::Timer(t) => byzcuit::shard_handle(s, params, None, Some(*t)),
                Payload::Command(_) => vec![],
            },
            Node::Tm(t) => match payload {
                Payload::Message(m) => byzcuit::tm_handle(t, params, m),
                _ => vec![],
            },
        }
    }
}
