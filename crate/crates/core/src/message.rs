//! Protocol messages, quorum-certificate binding and the canonical wire encoding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ledger::{FaultConfig, ObjectId, QuorumCert, SeqNo, ShardId, Transaction, TxnId};

/// Version byte prefixed to every encoded message and recording log.
pub const WIRE_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActorId {
    Shard(ShardId),
    Client(u16),
    Tm(u16),
    Adversary,
}

impl ActorId {
    pub fn shard(index: u16) -> Self {
        ActorId::Shard(ShardId(index))
    }

    pub fn as_shard(self) -> Option<ShardId> {
        match self {
            ActorId::Shard(s) => Some(s),
            _ => None,
        }
    }

    pub fn role(self) -> Role {
        match self {
            ActorId::Shard(_) => Role::Shard,
            ActorId::Client(_) => Role::Client,
            ActorId::Tm(_) => Role::Tm,
            ActorId::Adversary => Role::Adversary,
        }
    }
}

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActorId::Shard(s) => write!(f, "shard:{}", s.0),
            ActorId::Client(c) => write!(f, "client:{c}"),
            ActorId::Tm(t) => write!(f, "tm:{t}"),
            ActorId::Adversary => f.write_str("adversary"),
        }
    }
}

impl FromStr for ActorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "adversary" {
            return Ok(ActorId::Adversary);
        }
        let bad = || Error::UnknownActor(s.to_string());
        let (role, idx) = s.split_once(':').ok_or_else(bad)?;
        let idx: u16 = idx.parse().map_err(|_| bad())?;
        match role {
            "shard" => Ok(ActorId::shard(idx)),
            "client" => Ok(ActorId::Client(idx)),
            "tm" => Ok(ActorId::Tm(idx)),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Shard,
    Client,
    Tm,
    Adversary,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Body {
    SbacSubmit { txn: Transaction },
    SbacPreAccept { txn: Transaction },
    SbacPreAbort { txn: Transaction },
    SbacAccept { txn: Transaction },
    SbacAbort { txn: Transaction },

    AtomixSubmit { txn: Transaction },
    AtomixPreAccept { txn: Transaction },
    AtomixPreAbort { txn: Transaction },
    /// Proofs are the phase-1 vote messages, each carrying its certificate.
    AtomixAccept { txn: Transaction, proofs: Vec<ProtocolMessage> },
    AtomixAbort { txn: Transaction, proofs: Vec<ProtocolMessage> },

    /// Session `(txn.id, txn.seq)`; votes go to `reply_to`.
    ByzSubmit { txn: Transaction, reply_to: ActorId },
    /// `observed` lists the local input/dummy sequence numbers at vote time.
    ByzPreAccept { txn: Transaction, observed: Vec<(ObjectId, SeqNo)> },
    ByzPreAbort { txn: Transaction },
    ByzAccept { txn: Transaction, votes: Vec<ProtocolMessage> },
    ByzAbort { txn: Transaction, votes: Vec<ProtocolMessage> },
    ByzOutcome { txn: Transaction, committed: bool },
    /// A shard still holding a cached session asks a takeover TM for help.
    ByzStuck { txn: Transaction },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    SbacSubmit,
    SbacPreAccept,
    SbacPreAbort,
    SbacAccept,
    SbacAbort,
    AtomixSubmit,
    AtomixPreAccept,
    AtomixPreAbort,
    AtomixAccept,
    AtomixAbort,
    ByzSubmit,
    ByzPreAccept,
    ByzPreAbort,
    ByzAccept,
    ByzAbort,
    ByzOutcome,
    ByzStuck,
}

/// Protocol-independent role of a message within two-phase commit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Submit,
    PreAccept,
    PreAbort,
    Accept,
    Abort,
    Outcome,
    Stuck,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Submit => "submit",
            Phase::PreAccept => "pre-accept",
            Phase::PreAbort => "pre-abort",
            Phase::Accept => "accept",
            Phase::Abort => "abort",
            Phase::Outcome => "outcome",
            Phase::Stuck => "stuck",
        }
    }
}

impl MessageKind {
    pub const ALL: [MessageKind; 17] = [
        MessageKind::SbacSubmit,
        MessageKind::SbacPreAccept,
        MessageKind::SbacPreAbort,
        MessageKind::SbacAccept,
        MessageKind::SbacAbort,
        MessageKind::AtomixSubmit,
        MessageKind::AtomixPreAccept,
        MessageKind::AtomixPreAbort,
        MessageKind::AtomixAccept,
        MessageKind::AtomixAbort,
        MessageKind::ByzSubmit,
        MessageKind::ByzPreAccept,
        MessageKind::ByzPreAbort,
        MessageKind::ByzAccept,
        MessageKind::ByzAbort,
        MessageKind::ByzOutcome,
        MessageKind::ByzStuck,
    ];

    pub fn phase(self) -> Phase {
        use MessageKind::*;
        match self {
            SbacSubmit | AtomixSubmit | ByzSubmit => Phase::Submit,
            SbacPreAccept | AtomixPreAccept | ByzPreAccept => Phase::PreAccept,
            SbacPreAbort | AtomixPreAbort | ByzPreAbort => Phase::PreAbort,
            SbacAccept | AtomixAccept | ByzAccept => Phase::Accept,
            SbacAbort | AtomixAbort | ByzAbort => Phase::Abort,
            ByzOutcome => Phase::Outcome,
            ByzStuck => Phase::Stuck,
        }
    }

    pub fn is_vote(self) -> bool {
        matches!(self.phase(), Phase::PreAccept | Phase::PreAbort)
    }

    pub fn is_decision(self) -> bool {
        matches!(self.phase(), Phase::Accept | Phase::Abort)
    }

    pub fn name(self) -> &'static str {
        use MessageKind::*;
        match self {
            SbacSubmit => "sbac-submit",
            SbacPreAccept => "sbac-pre-accept",
            SbacPreAbort => "sbac-pre-abort",
            SbacAccept => "sbac-accept",
            SbacAbort => "sbac-abort",
            AtomixSubmit => "atomix-submit",
            AtomixPreAccept => "atomix-pre-accept",
            AtomixPreAbort => "atomix-pre-abort",
            AtomixAccept => "atomix-accept",
            AtomixAbort => "atomix-abort",
            ByzSubmit => "byz-submit",
            ByzPreAccept => "byz-pre-accept",
            ByzPreAbort => "byz-pre-abort",
            ByzAccept => "byz-accept",
            ByzAbort => "byz-abort",
            ByzOutcome => "byz-outcome",
            ByzStuck => "byz-stuck",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MessageKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MessageKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Codec(format!("unknown message kind `{s}`")))
    }
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        use MessageKind as K;
        match self {
            Body::SbacSubmit { .. } => K::SbacSubmit,
            Body::SbacPreAccept { .. } => K::SbacPreAccept,
            Body::SbacPreAbort { .. } => K::SbacPreAbort,
            Body::SbacAccept { .. } => K::SbacAccept,
            Body::SbacAbort { .. } => K::SbacAbort,
            Body::AtomixSubmit { .. } => K::AtomixSubmit,
            Body::AtomixPreAccept { .. } => K::AtomixPreAccept,
            Body::AtomixPreAbort { .. } => K::AtomixPreAbort,
            Body::AtomixAccept { .. } => K::AtomixAccept,
            Body::AtomixAbort { .. } => K::AtomixAbort,
            Body::ByzSubmit { .. } => K::ByzSubmit,
            Body::ByzPreAccept { .. } => K::ByzPreAccept,
            Body::ByzPreAbort { .. } => K::ByzPreAbort,
            Body::ByzAccept { .. } => K::ByzAccept,
            Body::ByzAbort { .. } => K::ByzAbort,
            Body::ByzOutcome { .. } => K::ByzOutcome,
            Body::ByzStuck { .. } => K::ByzStuck,
        }
    }

    pub fn txn(&self) -> &Transaction {
        match self {
            Body::SbacSubmit { txn }
            | Body::SbacPreAccept { txn }
            | Body::SbacPreAbort { txn }
            | Body::SbacAccept { txn }
            | Body::SbacAbort { txn }
            | Body::AtomixSubmit { txn }
            | Body::AtomixPreAccept { txn }
            | Body::AtomixPreAbort { txn }
            | Body::AtomixAccept { txn, .. }
            | Body::AtomixAbort { txn, .. }
            | Body::ByzSubmit { txn, .. }
            | Body::ByzPreAccept { txn, .. }
            | Body::ByzPreAbort { txn }
            | Body::ByzAccept { txn, .. }
            | Body::ByzAbort { txn, .. }
            | Body::ByzOutcome { txn, .. }
            | Body::ByzStuck { txn } => txn,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProtocolMessage {
    pub sender: ActorId,
    pub body: Body,
    /// Present on shard-issued messages only.
    pub cert: Option<QuorumCert>,
}

impl ProtocolMessage {
    /// Unsigned message from a client or TM.
    pub fn unsigned(sender: ActorId, body: Body) -> Self {
        Self { sender, body, cert: None }
    }

    /// Message attested by the `2f + 1` honest nodes of `shard`.
    pub fn signed(shard: ShardId, f: u16, body: Body) -> Self {
        let sender = ActorId::Shard(shard);
        let digest = payload_digest(sender, &body);
        Self { sender, body, cert: Some(QuorumCert::honest(shard, f, digest)) }
    }

    /// Best certificate an adversary with `f` corrupted nodes can attach.
    pub fn forged(shard: ShardId, f: u16, body: Body) -> Self {
        let sender = ActorId::Shard(shard);
        let digest = payload_digest(sender, &body);
        Self { sender, body, cert: Some(QuorumCert::forged(shard, f, digest)) }
    }

    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }

    pub fn txn(&self) -> &Transaction {
        self.body.txn()
    }

    pub fn txn_id(&self) -> TxnId {
        self.txn().id
    }

    pub fn sender_shard(&self) -> Option<ShardId> {
        self.sender.as_shard()
    }
}

/// Digest a certificate binds: first 8 bytes of SHA-256 over the encoded
/// (sender, body) pair.
pub fn payload_digest(sender: ActorId, body: &Body) -> u64 {
    let bytes = bincode::serialize(&(sender, body)).expect("in-memory encoding cannot fail");
    let hash = Sha256::digest(&bytes);
    u64::from_le_bytes(hash[..8].try_into().expect("sha256 output is 32 bytes"))
}

/// True iff `msg` carries at least `f + 1` attestations from its sender
/// shard over exactly this payload.
pub fn validate_cert(msg: &ProtocolMessage, faults: &FaultConfig) -> bool {
    let (Some(cert), Some(shard)) = (msg.cert.as_ref(), msg.sender_shard()) else {
        return false;
    };
    cert.shard == shard
        && faults.cert_threshold_met(cert)
        && cert.payload_digest == payload_digest(msg.sender, &msg.body)
}

pub fn encode_message(msg: &ProtocolMessage) -> Vec<u8> {
    let body = bincode::serialize(msg).expect("in-memory encoding cannot fail");
    let mut out = Vec::with_capacity(body.len() + 5);
    out.push(WIRE_VERSION);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn decode_message(bytes: &[u8]) -> Result<ProtocolMessage> {
    let mut cur = Cursor::new(bytes);
    cur.version()?;
    let msg = cur.entry()?;
    cur.finish()?;
    Ok(msg)
}

/// Reader over the length-prefixed framing shared by messages and logs.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Codec(format!("truncated input at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn version(&mut self) -> Result<()> {
        match self.take(1)?[0] {
            WIRE_VERSION => Ok(()),
            v => Err(Error::Codec(format!("unsupported wire version {v}"))),
        }
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn entry<T: serde::de::DeserializeOwned + Serialize>(&mut self) -> Result<T> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        let value: T = bincode::deserialize(raw).map_err(|e| Error::Codec(e.to_string()))?;
        // Canonical form: reject encodings that would not re-encode identically.
        if bincode::serialize(&value).map_err(|e| Error::Codec(e.to_string()))? != raw {
            return Err(Error::Codec("non-canonical entry".into()));
        }
        Ok(value)
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::Codec(format!("{} trailing bytes", self.bytes.len() - self.pos)))
        }
    }
}

pub(crate) fn put_entry<T: Serialize>(out: &mut Vec<u8>, value: &T) {
    let raw = bincode::serialize(value).expect("in-memory encoding cannot fail");
    out.extend_from_slice(&(raw.len() as u32).to_le_bytes());
    out.extend_from_slice(&raw);
}
