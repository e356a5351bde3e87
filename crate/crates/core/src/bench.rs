//! Message-complexity and throughput-shape measurements.
//!
//! Throughput is measured in simulated time with per-shard service time
//! switched on, so each shard handles one message per tick and the figures
//! are deterministic. Wall-clock rates are reported alongside but are only
//! meaningful relative to each other on one host.

use std::time::Instant;

use serde::Serialize;

use crate::error::Result;
use crate::ledger::{ObjectState, TxnId};
use crate::message::{MessageKind, Role};
use crate::node::Protocol;
use crate::oracle::{self, Classification};
use crate::system::{oid, System, SystemConfig};

/// First object index used for outputs, well clear of the inputs.
const OUTPUT_BASE: u64 = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchConfig {
    pub protocol: Protocol,
    pub shards: u16,
    pub txs: u32,
    /// Place each output on the next shard so every Byzcuit transaction
    /// needs a dummy input there.
    pub force_dummies: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchPoint {
    pub protocol: String,
    pub shards: u16,
    pub txs: u32,
    pub force_dummies: bool,
    pub committed: u32,
    pub messages: u64,
    pub messages_per_commit: f64,
    /// Simulated ticks until quiescence.
    pub makespan: u64,
    /// Commits per 1000 simulated ticks.
    pub sim_throughput: f64,
    /// Commits per wall-clock second on this host.
    pub wall_throughput: f64,
}

/// Disjoint transactions spread round-robin over the shards: transaction
/// `i` spends one object on shard `i mod n` and creates one object on the
/// same shard, or on the next one with `force_dummies`.
pub fn run_bench(cfg: BenchConfig) -> Result<BenchPoint> {
    let n = cfg.shards;
    let mut sc = SystemConfig::new(cfg.protocol, n);
    sc.net.shard_service_time = true;
    let per_shard = cfg.txs.div_ceil(n as u32);
    sc.dummy_pool = u8::try_from(per_shard.max(8)).unwrap_or(u8::MAX);
    let mut sys = System::new(sc);
    sys.reserve_dummies();
    let mut ids: Vec<TxnId> = Vec::with_capacity(cfg.txs as usize);
    for i in 0..cfg.txs as u64 {
        let s = (i % n as u64) as u16;
        let out_shard = if cfg.force_dummies { (s + 1) % n } else { s };
        let x = oid(i, s, n);
        sys.add_object(x, ObjectState::Active, 0);
        let y = oid(OUTPUT_BASE + i, out_shard, n);
        let t = sys.transaction(i + 1, 0, &[x], &[y])?;
        sys.submit_at(&t, 0, None, false)?;
        ids.push(t.id);
    }
    sys.release_dummies();
    let start = Instant::now();
    sys.run();
    let wall = start.elapsed().as_secs_f64();
    let snap = sys.snapshot();
    let mut committed = 0;
    for id in ids {
        if oracle::classify(&snap, id)? == Classification::ConsistentCommit {
            committed += 1;
        }
    }
    let makespan = sys.world.now().max(1);
    let messages = sys.world.stats().total();
    Ok(BenchPoint {
        protocol: cfg.protocol.name().into(),
        shards: n,
        txs: cfg.txs,
        force_dummies: cfg.force_dummies,
        committed,
        messages,
        messages_per_commit: if committed == 0 { 0.0 } else { messages as f64 / committed as f64 },
        makespan,
        sim_throughput: committed as f64 * 1000.0 / makespan as f64,
        wall_throughput: if wall > 0.0 { committed as f64 / wall } else { f64::INFINITY },
    })
}

/// Protocol messages of one fault-free commit touching `n` shards, one
/// input and one output on each.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Complexity {
    pub protocol: String,
    pub shards: u16,
    pub total: u64,
    /// Shard-to-shard phase-1 votes (SBAC's quadratic term).
    pub shard_votes: u64,
}

pub fn message_complexity(protocol: Protocol, n: u16) -> Result<Complexity> {
    let mut sys = System::new(SystemConfig::new(protocol, n));
    let inputs: Vec<_> = (0..n).map(|s| oid(1, s, n)).collect();
    let outputs: Vec<_> = (0..n).map(|s| oid(2, s, n)).collect();
    for &x in &inputs {
        sys.add_object(x, ObjectState::Active, 0);
    }
    let t = sys.transaction(1, 0, &inputs, &outputs)?;
    sys.submit(&t)?;
    sys.run();
    let c = sys.classify(1, true)?;
    if c != Classification::ConsistentCommit {
        return Err(crate::Error::MalformedTransaction(format!("benchmark commit ended {c}")));
    }
    let st = sys.world.stats();
    let shard_votes = [MessageKind::SbacPreAccept, MessageKind::SbacPreAbort]
        .into_iter()
        .map(|k| st.route(Role::Shard, Role::Shard, k))
        .sum();
    Ok(Complexity { protocol: protocol.name().into(), shards: n, total: st.total(), shard_votes })
}

/// Expected Byzcuit commit cost: n submissions, n votes, n decisions and
/// one notification.
pub fn byzcuit_commit_messages(n: u16) -> u64 {
    3 * n as u64 + 1
}

/// Expected SBAC phase-1 cost: every input shard votes to every other.
pub fn sbac_phase1_votes(n: u16) -> u64 {
    n as u64 * (n as u64 - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byzcuit_three_shards_ten_messages() {
        assert_eq!(message_complexity(Protocol::Byzcuit, 3).unwrap().total, 10);
    }

    #[test]
    fn sbac_three_shards_six_votes() {
        assert_eq!(message_complexity(Protocol::Sbac, 3).unwrap().shard_votes, 6);
    }

    #[test]
    fn every_disjoint_transaction_commits() {
        for p in Protocol::ALL {
            for force_dummies in [false, true] {
                let b = run_bench(BenchConfig { protocol: p, shards: 3, txs: 30, force_dummies }).unwrap();
                assert_eq!(b.committed, 30, "{p} {force_dummies}");
            }
        }
    }
}
