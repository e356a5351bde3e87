//! Acceptance checks shared by the integration tests. Each check returns a
//! deterministic summary on success so that re-runs can be compared byte
//! for byte.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use xshard::adversary::{
    exhaustive_replay_sweep, for_each_interleaving, prepare_sweep, run_table_attack,
    sweep_from, SweepBounds, SweepReport,
};
use xshard::bench::{message_complexity, run_bench, BenchConfig};
use xshard::ledger::{clone_id, ObjectId, ObjectState, Transaction, TxnId};
use xshard::message::{ActorId, MessageKind, Role};
use xshard::node::Protocol;
use xshard::oracle::{self, Classification};
use xshard::report::Report;
use xshard::store::Action;
use xshard::system::{oid, System, SystemConfig};
use xshard::tables::{all_rows, highlighted, table_protocol};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn hex(bytes: impl AsRef<[u8]>) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Classification each table row must end with, from the row semantics:
/// highlighted rows are correct executions, a few rows only cost
/// availability, and every other row splits state.
fn expected_label(table: u8, row: u8, class: &Classification) -> bool {
    if highlighted(table, row) {
        return class.is_consistent();
    }
    match (table, row) {
        (1, 4) | (3, 2..=4) => *class == Classification::AvailabilityLoss,
        _ => class.is_inconsistent(),
    }
}

/// Criterion 1: every table row, plus its Byzcuit analog.
pub fn tables() -> Check {
    let mut digest = Sha256::new();
    let mut rows = 0;
    for (t, r) in all_rows() {
        let native = table_protocol(t).expect("known table");
        for p in [native, Protocol::Byzcuit] {
            let start = Instant::now();
            let o = run_table_attack(t, r, p).map_err(|e| format!("T{t} r{r} {p}: {e}"))?;
            let took = start.elapsed();
            ensure!(took < Duration::from_secs(1), "T{t} r{r} {p} took {took:?}");
            let failed: Vec<String> = o
                .outcome
                .assertions
                .iter()
                .filter(|a| !a.passed)
                .map(|a| format!("{}: {}", a.check, a.detail))
                .collect();
            ensure!(failed.is_empty(), "T{t} r{r} {p}: {}", failed.join("; "));
            let c = o.classification();
            if p == native {
                ensure!(expected_label(t, r, c), "T{t} r{r} {p} classified {c}");
            } else {
                ensure!(!c.is_inconsistent(), "T{t} r{r} byzcuit classified {c}");
            }
            let json = Report::from_outcome(&o.outcome).to_json().map_err(|e| e.to_string())?;
            digest.update(json.as_bytes());
            rows += 1;
        }
    }
    Ok(format!("{rows} runs, reports sha256 {}", hex(digest.finalize())))
}

fn sweep_json(r: &SweepReport) -> String {
    serde_json::to_string(r).expect("report serializes")
}

fn table_shape(t: u8, r: u8) -> Result<oracle::Shape, String> {
    run_table_attack(t, r, table_protocol(t).expect("known table"))
        .map(|o| o.shape())
        .map_err(|e| e.to_string())
}

/// Criteria 2 and 3 share one set of sweeps.
pub struct Sweeps {
    pub byzcuit: SweepReport,
    pub sbac: SweepReport,
    pub atomix: SweepReport,
    pub byzcuit_time: Duration,
}

pub fn sweeps() -> Result<Sweeps, String> {
    let bounds = SweepBounds::new(3, 2);
    let start = Instant::now();
    let byzcuit = exhaustive_replay_sweep(Protocol::Byzcuit, bounds).map_err(|e| e.to_string())?;
    let byzcuit_time = start.elapsed();
    let sbac = exhaustive_replay_sweep(Protocol::Sbac, bounds).map_err(|e| e.to_string())?;
    let atomix = exhaustive_replay_sweep(Protocol::Atomix, bounds).map_err(|e| e.to_string())?;
    Ok(Sweeps { byzcuit, sbac, atomix, byzcuit_time })
}

/// Criterion 2: Byzcuit resists every replay within bounds; SBAC and Atomix
/// do not, and the sweep rediscovers the tables' final worlds.
pub fn replay_sweep(s: &Sweeps) -> Check {
    ensure!(s.byzcuit.states > 0, "byzcuit sweep explored nothing");
    ensure!(
        s.byzcuit.inconsistent_count() == 0,
        "byzcuit: {} inconsistent schedules, e.g. {:?}",
        s.byzcuit.inconsistent_count(),
        s.byzcuit.inconsistent.first().map(|e| &e.schedule)
    );
    ensure!(s.byzcuit.deviations == 0, "byzcuit: {} schedules deviate from the replay-free run", s.byzcuit.deviations);
    ensure!(s.byzcuit_time < Duration::from_secs(300), "byzcuit sweep took {:?}", s.byzcuit_time);
    ensure!(s.sbac.inconsistent_count() >= 1, "sbac sweep found no inconsistency");
    ensure!(s.atomix.inconsistent_count() >= 1, "atomix sweep found no inconsistency");
    ensure!(s.sbac.inconsistent.len() >= 7, "sbac: only {} distinct inconsistent worlds", s.sbac.inconsistent.len());
    ensure!(s.sbac.has_shape(&table_shape(1, 6)?), "sbac sweep misses Table I row 6");
    ensure!(s.atomix.has_shape(&table_shape(4, 4)?), "atomix sweep misses Table IV row 4");
    ensure!(s.atomix.has_shape(&table_shape(4, 2)?), "atomix sweep misses Table IV row 2");
    for (t, r) in all_rows() {
        let p = table_protocol(t).expect("known table");
        let o = run_table_attack(t, r, p).map_err(|e| e.to_string())?;
        if o.classification().is_inconsistent() {
            let sweep = if p == Protocol::Sbac { &s.sbac } else { &s.atomix };
            ensure!(sweep.has_shape(&o.shape()), "{p} sweep misses T{t} r{r} ({})", o.shape());
        }
    }
    Ok(format!(
        "byzcuit {} schedules / {} states, 0 inconsistent; sbac {} inconsistent ({} worlds); atomix {} inconsistent ({} worlds); sha256 {}",
        s.byzcuit.schedules(),
        s.byzcuit.states,
        s.sbac.inconsistent_count(),
        s.sbac.inconsistent.len(),
        s.atomix.inconsistent_count(),
        s.atomix.inconsistent.len(),
        hex(format!("{}{}{}", sweep_json(&s.byzcuit), sweep_json(&s.sbac), sweep_json(&s.atomix)))
    ))
}

/// Criterion 3: no completed Byzcuit schedule leaves a fresh message.
pub fn session_freshness(s: &Sweeps) -> Check {
    ensure!(s.byzcuit.schedules() > 0, "no completed schedules");
    ensure!(s.byzcuit.fresh_leftovers == 0, "{} schedules kept a fresh message", s.byzcuit.fresh_leftovers);
    Ok(format!("{} completed schedules, 0 fresh messages", s.byzcuit.schedules()))
}

fn two_input_world(p: Protocol, n: u16, cfg: impl Fn(&mut SystemConfig)) -> (System, Transaction) {
    let mut c = SystemConfig::new(p, n);
    cfg(&mut c);
    let mut sys = System::new(c);
    let ins = [oid(1, 0, n), oid(1, 1, n)];
    for x in ins {
        sys.add_object(x, ObjectState::Active, 0);
    }
    let outs: Vec<ObjectId> = (0..n).map(|s| oid(2, s, n)).collect();
    let t = sys.transaction(1, 0, &ins, &outs).expect("well-formed");
    (sys, t)
}

/// Criterion 4a: the TM crashes at every tick of the run; the takeover
/// actor still gets every transaction decided, with the crash-free result.
pub fn liveness() -> Check {
    let mut runs = 0;
    let mut out = String::new();
    for n in [2u16, 3] {
        for spent in [false, true] {
            let (mut sys, t) = two_input_world(Protocol::Byzcuit, n, |c| c.takeover = vec![9]);
            if spent {
                sys.spend(t.inputs[0].id, 50, 0).map_err(|e| e.to_string())?;
            }
            sys.submit(&t).map_err(|e| e.to_string())?;
            let mut free = sys.clone();
            free.run();
            let want = free.classify(1, !spent).map_err(|e| e.to_string())?;
            ensure!(want.is_consistent(), "crash-free run ended {want}");
            let end = free.world.now();
            for at in 0..=end + 1 {
                let mut w = sys.clone();
                w.crash(ActorId::Tm(0), at);
                w.run();
                let snap = w.snapshot();
                ensure!(oracle::check_liveness(&snap), "n={n} crash at {at}: undecided {:?}", snap.undecided);
                let got = w.classify(1, !spent).map_err(|e| e.to_string())?;
                ensure!(got == want, "n={n} crash at {at}: {got}, crash-free {want}");
                ensure!(
                    snap.object_tables() == free.snapshot().object_tables(),
                    "n={n} crash at {at}: final objects differ from the crash-free run"
                );
                runs += 1;
            }
            let _ = write!(out, "n={n} {}:{} ticks; ", want.label(), end + 2);
        }
    }
    Ok(format!("{runs} crash runs decided; {out}"))
}

/// Criterion 4b: two transactions sharing x1, submitted together; in every
/// delivery order at most one commits.
pub fn consistency() -> Check {
    let mut out = String::new();
    for p in Protocol::ALL {
        for n in [2u16, 3] {
            let mut sys = System::new(SystemConfig::new(p, n));
            let (x1, x2, x3) = (oid(1, 0, n), oid(1, 1, n), oid(4, 1, n));
            for x in [x1, x2, x3] {
                sys.add_object(x, ObjectState::Active, 0);
            }
            let last = n - 1;
            let t = sys.transaction(1, 0, &[x1, x2], &[oid(2, last, n)]).map_err(|e| e.to_string())?;
            let u = sys.transaction(2, 1, &[x1, x3], &[oid(5, last, n)]).map_err(|e| e.to_string())?;
            sys.reserve_dummies();
            sys.submit(&t).map_err(|e| e.to_string())?;
            sys.submit(&u).map_err(|e| e.to_string())?;
            sys.release_dummies();
            let mut ends = 0u64;
            let mut commits = [0u64; 2];
            let states = for_each_interleaving(&sys, |w| {
                let snap = w.snapshot();
                let recs = [w.record(&snap, 1)?, w.record(&snap, 2)?];
                if !oracle::check_conflict_exclusivity(&recs) {
                    return Err(xshard::Error::MalformedTransaction(format!(
                        "{p} n={n}: both committed ({}, {})",
                        recs[0].classification, recs[1].classification
                    )));
                }
                for (i, r) in recs.iter().enumerate() {
                    if r.classification == Classification::ConsistentCommit {
                        commits[i] += 1;
                    }
                }
                ends += 1;
                Ok(())
            })
            .map_err(|e| e.to_string())?;
            ensure!(ends > 0, "{p} n={n}: no end states");
            ensure!(commits[0] > 0 && commits[1] > 0, "{p} n={n}: one side never wins ({commits:?})");
            let _ = write!(out, "{p}/{n}: {states} states {ends} ends; ");
        }
    }
    Ok(out)
}

/// Criterion 4c: spending an Inactive or nonexistent input never commits,
/// in any delivery order.
pub fn validity() -> Check {
    let mut out = String::new();
    for p in Protocol::ALL {
        for n in [2u16, 3] {
            for missing in [false, true] {
                let (mut sys, mut t) = two_input_world(p, n, |_| {});
                if missing {
                    let ghost = oid(7, 1, n);
                    let outs: Vec<ObjectId> = t.outputs.iter().map(|r| r.id).collect();
                    t = sys.transaction(1, 0, &[t.inputs[0].id, ghost], &outs).map_err(|e| e.to_string())?;
                } else {
                    sys.spend(t.inputs[0].id, 50, 0).map_err(|e| e.to_string())?;
                }
                sys.submit(&t).map_err(|e| e.to_string())?;
                let mut ends = 0u64;
                let states = for_each_interleaving(&sys, |w| {
                    let snap = w.snapshot();
                    let rec = w.record(&snap, 1)?;
                    if rec.valid_at_submission || !oracle::check_validity(std::slice::from_ref(&rec)) {
                        return Err(xshard::Error::MalformedTransaction(format!(
                            "{p} n={n}: invalid transaction ended {}",
                            rec.classification
                        )));
                    }
                    ends += 1;
                    Ok(())
                })
                .map_err(|e| e.to_string())?;
                let what = if missing { "absent" } else { "spent" };
                let _ = write!(out, "{p}/{n}/{what}: {states} states {ends} ends; ");
            }
        }
    }
    Ok(out)
}

/// Criterion 5: message counts of a fault-free commit, counted per route.
pub fn complexity() -> Check {
    let mut out = String::new();
    for n in 2u16..=5 {
        let b = message_complexity(Protocol::Byzcuit, n).map_err(|e| e.to_string())?;
        ensure!(b.total == 3 * n as u64 + 1, "byzcuit n={n}: {} messages", b.total);
        let s = message_complexity(Protocol::Sbac, n).map_err(|e| e.to_string())?;
        ensure!(s.shard_votes == n as u64 * (n as u64 - 1), "sbac n={n}: {} phase-1 votes", s.shard_votes);
        let _ = write!(out, "n={n}: byzcuit {} sbac-votes {}; ", b.total, s.shard_votes);
    }
    // Independent count from the raw route statistics.
    let n = 4;
    let (mut sys, _) = two_input_world(Protocol::Byzcuit, n, |_| {});
    let ins: Vec<ObjectId> = (0..n).map(|s| oid(1, s, n)).collect();
    for &x in &ins[2..] {
        sys.add_object(x, ObjectState::Active, 0);
    }
    let outs: Vec<ObjectId> = (0..n).map(|s| oid(2, s, n)).collect();
    let t = sys.transaction(1, 0, &ins, &outs).map_err(|e| e.to_string())?;
    sys.submit(&t).map_err(|e| e.to_string())?;
    sys.run();
    let st = sys.world.stats();
    let routes = [
        (Role::Client, Role::Shard, MessageKind::ByzSubmit, n as u64),
        (Role::Shard, Role::Tm, MessageKind::ByzPreAccept, n as u64),
        (Role::Tm, Role::Shard, MessageKind::ByzAccept, n as u64),
        (Role::Shard, Role::Client, MessageKind::ByzOutcome, 1),
    ];
    for (from, to, kind, want) in routes {
        let got = st.route(from, to, kind);
        ensure!(got == want, "{from:?}->{to:?} {kind}: {got}, want {want}");
    }
    Ok(out)
}

/// Objects used by the overflow script.
pub struct Overflow {
    pub sys: System,
    pub x1: ObjectId,
    pub clone: ObjectId,
    pub aborts: u32,
}

/// Aborts transactions on x1 (each also names an absent object) until the
/// clone fires with threshold 16.
pub fn drive_overflow() -> Result<Overflow, String> {
    let n = 3;
    let mut c = SystemConfig::new(Protocol::Byzcuit, n);
    c.overflow_threshold = 16;
    let mut sys = System::new(c);
    let (x1, x2) = (oid(1, 0, n), oid(1, 1, n));
    sys.add_object(x1, ObjectState::Active, 0);
    sys.add_object(x2, ObjectState::Active, 0);
    let mut last_seq = 0;
    let mut aborts = 0;
    while sys.object(x1).is_some_and(|r| r.state.is_active()) {
        ensure!(aborts < 100, "no clone after {aborts} aborts");
        let id: TxnId = 100 + aborts as TxnId;
        let t = sys
            .transaction(id, 0, &[x1, oid(50 + aborts as u64, 1, n)], &[oid(60 + aborts as u64, 0, n)])
            .map_err(|e| e.to_string())?;
        sys.submit(&t).map_err(|e| e.to_string())?;
        sys.run();
        let c = sys.classify(id, false).map_err(|e| e.to_string())?;
        ensure!(c == Classification::ConsistentAbort, "abort {aborts} ended {c}");
        let seq = sys.object(x1).map(|r| r.seq).unwrap_or(0);
        ensure!(seq >= last_seq, "seq of x1 went from {last_seq} to {seq}");
        last_seq = seq;
        aborts += 1;
    }
    Ok(Overflow { clone: clone_id(x1, n), sys, x1, aborts })
}

/// Criterion 6: the clone fires, the copy starts over at seq 0 and can be
/// spent, and the replay sweep over the copy still finds nothing.
pub fn overflow() -> Check {
    let o = drive_overflow()?;
    ensure!(o.aborts == 15, "clone fired after {} aborts, expected 15", o.aborts);
    let old = o.sys.object(o.x1).ok_or("x1 vanished")?;
    ensure!(old.state == ObjectState::Inactive, "x1 is {:?} after the clone", old.state);
    ensure!(old.seq == 15, "x1 retired at seq {}", old.seq);
    let fresh = o.sys.object(o.clone).ok_or("no clone created")?;
    ensure!(fresh.state == ObjectState::Active && fresh.seq == 0, "clone is {:?} seq {}", fresh.state, fresh.seq);
    let snap = o.sys.snapshot();
    let cloned = snap
        .shards
        .values()
        .flat_map(|v| v.history.iter())
        .any(|e| e.obj == o.x1 && e.action == Action::Clone);
    ensure!(cloned, "no clone event in the history");

    let mut spend = o.sys.clone();
    let t = spend.spend(o.clone, 500, 0).map_err(|e| e.to_string())?;
    let c = spend.classify(t.id, true).map_err(|e| e.to_string())?;
    ensure!(c == Classification::ConsistentCommit, "spending the clone ended {c}");

    let n = o.sys.num_shards();
    let outs: Vec<ObjectId> = (0..n).map(|s| oid(2, s, n)).collect();
    let txn = o.sys.transaction(1, 0, &[o.clone, oid(1, 1, n)], &outs).map_err(|e| e.to_string())?;
    let (base, prior) = prepare_sweep(o.sys.clone(), &txn).map_err(|e| e.to_string())?;
    let r = sweep_from(Protocol::Byzcuit, SweepBounds::new(3, 2), &base, &prior, &txn).map_err(|e| e.to_string())?;
    ensure!(r.schedules() > 0, "post-clone sweep explored nothing");
    ensure!(r.inconsistent_count() == 0, "post-clone sweep: {} inconsistent", r.inconsistent_count());
    ensure!(r.fresh_leftovers == 0, "post-clone sweep: {} schedules kept a fresh message", r.fresh_leftovers);
    Ok(format!(
        "clone after {} aborts; post-clone sweep {} schedules, 0 inconsistent; sha256 {}",
        o.aborts,
        r.schedules(),
        hex(sweep_json(&r))
    ))
}

/// Criterion 8 substitute: throughput shape in simulated time.
pub fn bench_shape() -> Check {
    let txs = 360;
    let mut out = String::new();
    let mut prev = 0.0;
    for n in 2u16..=10 {
        let plain = run_bench(BenchConfig { protocol: Protocol::Byzcuit, shards: n, txs, force_dummies: false })
            .map_err(|e| e.to_string())?;
        let dummies = run_bench(BenchConfig { protocol: Protocol::Byzcuit, shards: n, txs, force_dummies: true })
            .map_err(|e| e.to_string())?;
        ensure!(plain.committed == txs && dummies.committed == txs, "n={n}: not every transaction committed");
        ensure!(plain.sim_throughput >= prev, "n={n}: throughput fell from {prev:.1} to {:.1}", plain.sim_throughput);
        ensure!(
            dummies.sim_throughput < plain.sim_throughput,
            "n={n}: dummies {:.1} vs plain {:.1}",
            dummies.sim_throughput,
            plain.sim_throughput
        );
        prev = plain.sim_throughput;
        let _ = write!(out, "n={n}: {:.1}/{:.1}; ", plain.sim_throughput, dummies.sim_throughput);
    }
    Ok(out)
}
