use thiserror::Error;

use crate::ledger::{ObjectId, ShardId, TxnId};

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed transaction: {0}")]
    MalformedTransaction(String),

    #[error("{shard} manages no input of txn {txn}")]
    NotConcerned { shard: ShardId, txn: TxnId },

    #[error("cannot schedule at tick {at}: current tick is {now}")]
    PastDated { at: u64, now: u64 },

    #[error("no recorded message at index {0}")]
    UnknownRecording(usize),

    #[error("{0} has no active dummy object left")]
    DummyExhausted(ShardId),

    #[error("cannot clone {0}: object must be active and near overflow")]
    CloneRejected(ObjectId),

    #[error("snapshot taken before quiescence")]
    NotQuiescent,

    #[error("elicitation failed: {0}")]
    ElicitationFailed(String),

    #[error("sweep bounds exceed the guard ({0})")]
    SizeGuard(String),

    #[error("no recorded message matches {0}")]
    NoMatchingRecording(String),

    #[error("unknown actor `{0}`")]
    UnknownActor(String),

    #[error("unknown row {row} in table {table}")]
    UnknownRow { table: u8, row: u8 },

    #[error("table {table} does not apply to {protocol}")]
    ProtocolMismatch { table: u8, protocol: String },

    #[error("scenario error at {location}: {message}")]
    Scenario { location: String, message: String },

    #[error("codec error: {0}")]
    Codec(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
