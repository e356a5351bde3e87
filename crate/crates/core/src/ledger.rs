//! Object and transaction data model shared by all three commit protocols.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TxnId = u64;
pub type SeqNo = u64;

/// Default overflow threshold for object sequence numbers.
pub const DEFAULT_OVERFLOW_THRESHOLD: SeqNo = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ShardId(pub u16);

impl ShardId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ShardId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "shard:{}", self.0)
    }
}

const DUMMY_SHARD_SHIFT: u32 = 48;
const DUMMY_GEN_SHIFT: u32 = 8;
const DUMMY_GEN_MASK: u64 = (1 << (DUMMY_SHARD_SHIFT - DUMMY_GEN_SHIFT)) - 1;

/// Identifier of a ledger object.
///
/// Dummy ids carry their minting shard in bits 48..64, a generation in bits
/// 8..48 and a pool slot in bits 0..8, so a consumed dummy in slot `k`
/// is always replaced by generation `g + 1` of the same slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectId {
    pub id: u64,
    pub dummy: bool,
}

impl ObjectId {
    pub const fn real(id: u64) -> Self {
        Self { id, dummy: false }
    }

    pub fn dummy(shard: ShardId, slot: u8, generation: u64) -> Self {
        let id = ((shard.0 as u64) << DUMMY_SHARD_SHIFT)
            | ((generation & DUMMY_GEN_MASK) << DUMMY_GEN_SHIFT)
            | slot as u64;
        Self { id, dummy: true }
    }

    pub fn dummy_shard(self) -> Option<ShardId> {
        self.dummy
            .then_some(ShardId((self.id >> DUMMY_SHARD_SHIFT) as u16))
    }

    pub fn dummy_generation(self) -> Option<u64> {
        self.dummy
            .then_some((self.id >> DUMMY_GEN_SHIFT) & DUMMY_GEN_MASK)
    }

    /// Next generation of a dummy in the same pool slot.
    pub fn next_dummy(self) -> Option<ObjectId> {
        let shard = self.dummy_shard()?;
        let gen = self.dummy_generation()?;
        Some(ObjectId::dummy(shard, (self.id & 0xff) as u8, gen + 1))
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.dummy_shard(), self.dummy_generation()) {
            (Some(s), Some(g)) => write!(f, "d{}.{}.{}", s.0, self.id & 0xff, g),
            _ => write!(f, "o{}", self.id),
        }
    }
}

/// Stable object-to-shard mapping: `id mod num_shards`, except that dummy
/// objects belong to the shard that minted them.
pub fn shard_of(obj: ObjectId, num_shards: u16) -> ShardId {
    assert!(num_shards >= 1, "at least one shard is required");
    match obj.dummy_shard() {
        Some(s) => s,
        None => ShardId((obj.id % num_shards as u64) as u16),
    }
}

/// Id of the fresh copy minted by the clone procedure. Real objects keep
/// their shard because the stride is a multiple of `num_shards`.
pub fn clone_id(obj: ObjectId, num_shards: u16) -> ObjectId {
    match obj.next_dummy() {
        Some(next) => next,
        None => ObjectId::real(obj.id + ((num_shards as u64) << 32)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum ObjectState {
    Active,
    Locked { txn: TxnId, seq: SeqNo },
    Inactive,
}

impl ObjectState {
    pub fn is_active(self) -> bool {
        matches!(self, ObjectState::Active)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: ObjectId,
    pub state: ObjectState,
    pub seq: SeqNo,
    pub shard: ShardId,
}

impl ObjectRecord {
    pub fn active(id: ObjectId, shard: ShardId) -> Self {
        Self { id, state: ObjectState::Active, seq: 0, shard }
    }
}

/// An object reference inside a transaction, resolved to its owning shard.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjRef {
    pub id: ObjectId,
    pub shard: ShardId,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxnId,
    pub client: u16,
    pub inputs: Vec<ObjRef>,
    pub outputs: Vec<ObjRef>,
    /// Transaction sequence number; only set by Byzcuit clients.
    pub seq: Option<SeqNo>,
}

impl Transaction {
    pub fn new(
        id: TxnId,
        client: u16,
        inputs: &[ObjectId],
        outputs: &[ObjectId],
        num_shards: u16,
    ) -> Result<Self> {
        let resolve = |ids: &[ObjectId]| -> Vec<ObjRef> {
            ids.iter()
                .map(|&id| ObjRef { id, shard: shard_of(id, num_shards) })
                .collect()
        };
        let txn = Self {
            id,
            client,
            inputs: resolve(inputs),
            outputs: resolve(outputs),
            seq: None,
        };
        txn.validate()?;
        Ok(txn)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::MalformedTransaction(format!("txn {} has no inputs", self.id)));
        }
        let mut seen = BTreeSet::new();
        for r in self.inputs.iter().chain(&self.outputs) {
            if !seen.insert(r.id) {
                return Err(Error::MalformedTransaction(format!(
                    "txn {} names {} twice",
                    self.id, r.id
                )));
            }
        }
        Ok(())
    }

    pub fn with_seq(mut self, seq: SeqNo) -> Self {
        self.seq = Some(seq);
        self
    }

    pub fn input_shards(&self) -> BTreeSet<ShardId> {
        self.inputs.iter().map(|r| r.shard).collect()
    }

    pub fn output_shards(&self) -> BTreeSet<ShardId> {
        self.outputs.iter().map(|r| r.shard).collect()
    }

    /// Shards that manage outputs but none of the inputs.
    pub fn output_only_shards(&self) -> BTreeSet<ShardId> {
        let inputs = self.input_shards();
        self.output_shards()
            .into_iter()
            .filter(|s| !inputs.contains(s))
            .collect()
    }

    pub fn concerned_shards(&self) -> BTreeSet<ShardId> {
        let mut all = self.input_shards();
        all.extend(self.output_shards());
        all
    }

    pub fn local_inputs(&self, shard: ShardId) -> impl Iterator<Item = ObjectId> + '_ {
        self.inputs.iter().filter(move |r| r.shard == shard).map(|r| r.id)
    }

    pub fn local_outputs(&self, shard: ShardId) -> impl Iterator<Item = ObjectId> + '_ {
        self.outputs.iter().filter(move |r| r.shard == shard).map(|r| r.id)
    }

    pub fn manages_input(&self, shard: ShardId) -> bool {
        self.inputs.iter().any(|r| r.shard == shard)
    }

    /// Shard that notifies the client of a Byzcuit outcome.
    pub fn first_input_shard(&self) -> ShardId {
        self.inputs[0].shard
    }

    /// Checks that every output-only shard contributes exactly one dummy input.
    pub fn dummies_well_formed(&self) -> bool {
        let real_inputs: BTreeSet<ShardId> = self
            .inputs
            .iter()
            .filter(|r| !r.id.dummy)
            .map(|r| r.shard)
            .collect();
        let needs: BTreeSet<ShardId> = self
            .output_shards()
            .into_iter()
            .filter(|s| !real_inputs.contains(s))
            .collect();
        let mut dummy_shards = Vec::new();
        for r in self.inputs.iter().filter(|r| r.id.dummy) {
            dummy_shards.push(r.shard);
        }
        let unique: BTreeSet<ShardId> = dummy_shards.iter().copied().collect();
        unique.len() == dummy_shards.len() && unique == needs
    }
}

/// Transaction sequence number: the maximum of the input and dummy sequence numbers.
pub fn tx_sequence_number(input_seqs: &[SeqNo]) -> Result<SeqNo> {
    input_seqs
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::MalformedTransaction("no input sequence numbers".into()))
}

/// Set of node indices inside one shard, as a bitmask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeSet(pub u64);

impl NodeSet {
    pub fn first(n: u32) -> Self {
        if n >= 64 {
            NodeSet(u64::MAX)
        } else {
            NodeSet((1u64 << n) - 1)
        }
    }

    pub fn len(self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, node: u32) -> bool {
        node < 64 && self.0 & (1 << node) != 0
    }
}

/// Node attestations over a message payload digest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QuorumCert {
    pub shard: ShardId,
    pub attesting_nodes: NodeSet,
    pub payload_digest: u64,
}

impl QuorumCert {
    /// Certificate produced by an honest shard: all `2f + 1` honest nodes attest.
    pub fn honest(shard: ShardId, f: u16, payload_digest: u64) -> Self {
        Self {
            shard,
            attesting_nodes: NodeSet::first(2 * f as u32 + 1),
            payload_digest,
        }
    }

    /// The strongest certificate an adversary holding `f` corrupted nodes
    /// can synthesize on its own.
    pub fn forged(shard: ShardId, f: u16, payload_digest: u64) -> Self {
        let nodes = 3 * f as u32 + 1;
        let mut mask = 0u64;
        for n in (nodes - f as u32)..nodes {
            mask |= 1 << n;
        }
        Self { shard, attesting_nodes: NodeSet(mask), payload_digest }
    }
}

/// Per-shard fault bound `f` (shards have `3f + 1` nodes).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultConfig {
    pub f: Vec<u16>,
}

impl FaultConfig {
    pub fn uniform(num_shards: u16, f: u16) -> Self {
        Self { f: vec![f; num_shards as usize] }
    }

    pub fn f_of(&self, shard: ShardId) -> Option<u16> {
        self.f.get(shard.index()).copied()
    }

    pub fn num_shards(&self) -> u16 {
        self.f.len() as u16
    }

    /// True iff the certificate names a configured shard and carries at
    /// least `f + 1` attestations for it.
    pub fn cert_threshold_met(&self, cert: &QuorumCert) -> bool {
        match self.f_of(cert.shard) {
            Some(f) => cert.attesting_nodes.len() > f as u32,
            None => false,
        }
    }
}
