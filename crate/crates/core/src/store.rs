//! Per-shard object table with an append-only history of state changes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ledger::{clone_id, ObjectId, ObjectRecord, ObjectState, SeqNo, ShardId, TxnId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Create,
    Lock,
    Unlock,
    Inactivate,
    Reactivate,
    BumpSeq,
    /// The object was retired and replaced by a fresh copy.
    Clone,
}

impl Action {
    pub fn name(self) -> &'static str {
        match self {
            Action::Create => "create",
            Action::Lock => "lock",
            Action::Unlock => "unlock",
            Action::Inactivate => "inactivate",
            Action::Reactivate => "reactivate",
            Action::BumpSeq => "bump-seq",
            Action::Clone => "clone",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub obj: ObjectId,
    pub action: Action,
    /// Transaction on whose behalf the change happened; `None` for
    /// configuration and clone bookkeeping.
    pub txn: Option<TxnId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ObjectStore {
    pub shard: Option<ShardId>,
    objects: BTreeMap<ObjectId, ObjectRecord>,
    history: Vec<LedgerEvent>,
}

impl ObjectStore {
    pub fn new(shard: ShardId) -> Self {
        Self { shard: Some(shard), ..Default::default() }
    }

    fn shard(&self) -> ShardId {
        self.shard.expect("store is bound to a shard")
    }

    pub fn get(&self, id: ObjectId) -> Option<&ObjectRecord> {
        self.objects.get(&id)
    }

    pub fn records(&self) -> impl Iterator<Item = &ObjectRecord> {
        self.objects.values()
    }

    pub fn history(&self) -> &[LedgerEvent] {
        &self.history
    }

    fn log(&mut self, obj: ObjectId, action: Action, txn: Option<TxnId>) {
        self.history.push(LedgerEvent { obj, action, txn });
    }

    /// Configuration-time insertion; not attributed to any transaction.
    pub fn seed(&mut self, id: ObjectId, state: ObjectState, seq: SeqNo) {
        let shard = self.shard();
        self.objects.insert(id, ObjectRecord { id, state, seq, shard });
    }

    pub fn is_active(&self, id: ObjectId) -> bool {
        self.get(id).is_some_and(|r| r.state.is_active())
    }

    /// Creates `id` as Active unless a live (Active or Locked) copy exists.
    /// Inactive records are overwritten: spent objects are not remembered.
    pub fn create(&mut self, id: ObjectId, txn: TxnId) -> bool {
        if self
            .get(id)
            .is_some_and(|r| !matches!(r.state, ObjectState::Inactive))
        {
            return false;
        }
        let shard = self.shard();
        self.objects
            .insert(id, ObjectRecord { id, state: ObjectState::Active, seq: 0, shard });
        self.log(id, Action::Create, Some(txn));
        true
    }

    pub fn lock(&mut self, id: ObjectId, txn: TxnId, seq: SeqNo) {
        let rec = self.objects.get_mut(&id).expect("lock of unknown object");
        debug_assert!(rec.state.is_active());
        rec.state = ObjectState::Locked { txn, seq };
        self.log(id, Action::Lock, Some(txn));
    }

    /// Unlocks `id` if it is locked by `txn` (at any seq when `seq` is None).
    pub fn unlock(&mut self, id: ObjectId, txn: TxnId, seq: Option<SeqNo>) -> bool {
        let Some(rec) = self.objects.get_mut(&id) else { return false };
        match rec.state {
            ObjectState::Locked { txn: t, seq: s } if t == txn && seq.is_none_or(|q| q == s) => {
                rec.state = ObjectState::Active;
                self.log(id, Action::Unlock, Some(txn));
                true
            }
            _ => false,
        }
    }

    pub fn inactivate(&mut self, id: ObjectId, txn: TxnId) -> bool {
        let Some(rec) = self.objects.get_mut(&id) else { return false };
        if rec.state == ObjectState::Inactive {
            return false;
        }
        rec.state = ObjectState::Inactive;
        self.log(id, Action::Inactivate, Some(txn));
        true
    }

    pub fn reactivate(&mut self, id: ObjectId, txn: TxnId) -> bool {
        let Some(rec) = self.objects.get_mut(&id) else { return false };
        if rec.state == ObjectState::Active {
            return false;
        }
        rec.state = ObjectState::Active;
        self.log(id, Action::Reactivate, Some(txn));
        true
    }

    /// Raises the sequence number to at least `to`.
    pub fn bump_seq(&mut self, id: ObjectId, to: SeqNo, txn: TxnId) -> bool {
        let Some(rec) = self.objects.get_mut(&id) else { return false };
        if rec.seq >= to {
            return false;
        }
        rec.seq = to;
        self.log(id, Action::BumpSeq, Some(txn));
        true
    }

    /// Retires `id` and inserts a fresh Active copy with seq 0.
    pub fn clone_object(&mut self, id: ObjectId, num_shards: u16) -> Option<ObjectId> {
        let rec = self.objects.get_mut(&id)?;
        if !rec.state.is_active() {
            return None;
        }
        rec.state = ObjectState::Inactive;
        self.log(id, Action::Clone, None);
        let mut fresh = clone_id(id, num_shards);
        while self.objects.contains_key(&fresh) {
            fresh = clone_id(fresh, num_shards);
        }
        self.seed(fresh, ObjectState::Active, 0);
        Some(fresh)
    }

    /// Active dummies in id order.
    pub fn active_dummies(&self) -> impl Iterator<Item = ObjectId> + '_ {
        self.objects
            .values()
            .filter(|r| r.id.dummy && r.state.is_active())
            .map(|r| r.id)
    }
}
