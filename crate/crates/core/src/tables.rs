//! The four attack tables as runnable scenarios.
//!
//! Every row is scripted over the canonical world: three shards, inputs x1
//! (shard 0) and x2 (shard 1), outputs y1, y2, y3 (one per shard). Rows
//! are written once, in terms of the table's own protocol; the Byzcuit
//! variant of each row replays the equivalent Byzcuit messages (votes go
//! to the TM, decisions come from it) and is expected to end exactly like
//! the same script without injections.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ledger::{ObjectId, TxnId};
use crate::message::{ActorId, MessageKind, Phase};
use crate::node::Protocol;
use crate::scenario::{
    ActorTrace, Assertion, ClassLabel, Injection, LogSource, ObjectSpec, Scenario, SeedState, Stage, SubmitSpec,
    TraceSpec, TxnSpec,
};
use crate::store::Action;

pub const NUM_SHARDS: u16 = 3;
pub const X1: u64 = 3;
pub const X2: u64 = 4;
pub const Y1: u64 = 6;
pub const Y2: u64 = 7;
pub const Y3: u64 = 8;
/// Never-created auxiliary objects on shards 0 and 1, used by elicitation.
pub const AUX: [u64; 2] = [9, 10];
pub const T: TxnId = 1;

pub fn row_count(table: u8) -> Option<u8> {
    match table {
        1 => Some(9),
        2 => Some(8),
        3 => Some(10),
        4 => Some(4),
        _ => None,
    }
}

/// The protocol a table attacks.
pub fn table_protocol(table: u8) -> Option<Protocol> {
    match table {
        1 | 2 => Some(Protocol::Sbac),
        3 | 4 => Some(Protocol::Atomix),
        _ => None,
    }
}

/// Shaded rows are correct executions without an adversary.
pub fn highlighted(table: u8, row: u8) -> bool {
    matches!((table, row), (1, 1 | 5 | 7 | 9) | (2, 1 | 5) | (3, 1 | 5 | 7 | 9) | (4, 1 | 3))
}

/// Who a replayed message impersonates, in the table's own terms.
#[derive(Clone, Copy, Debug)]
enum From {
    Shard(u16),
    Client,
}

#[derive(Clone, Debug)]
struct Replay {
    prior: bool,
    from: From,
    phase: Phase,
    /// Shard targets (ignored for votes, whose target is protocol-defined).
    to: Vec<u16>,
}

#[derive(Clone, Debug)]
enum Step {
    Elicit { accept: bool, shard: u16 },
    Spend(Vec<u64>),
    Run { inject: Vec<Replay>, withdraw: bool },
    Replay(Vec<Replay>),
}

fn vote(from: u16, accept: bool) -> Replay {
    let phase = if accept { Phase::PreAccept } else { Phase::PreAbort };
    Replay { prior: false, from: From::Shard(from), phase, to: vec![] }
}

fn decision(prior: bool, from: From, accept: bool, to: &[u16]) -> Replay {
    let phase = if accept { Phase::Accept } else { Phase::Abort };
    Replay { prior, from, phase, to: to.to_vec() }
}

fn run(inject: Vec<Replay>) -> Step {
    Step::Run { inject, withdraw: false }
}

struct Script {
    prior: Vec<Step>,
    steps: Vec<Step>,
}

fn script(table: u8, row: u8) -> Script {
    use Step::*;
    let plain = |steps: Vec<Step>| Script { prior: vec![], steps };
    let forked = |steps: Vec<Step>| Script { prior: vec![run(vec![])], steps };
    let s1_acc = |prior| decision(prior, From::Shard(0), true, &[2]);
    let s2_acc = |prior| decision(prior, From::Shard(1), true, &[2]);
    match (table, row) {
        (1, 1) | (2, 1) | (3, 1) | (4, 1) => plain(vec![run(vec![])]),
        (1, 2) | (3, 2) => plain(vec![Elicit { accept: false, shard: 0 }, run(vec![vote(0, false)])]),
        (1, 3) | (3, 3) => plain(vec![Elicit { accept: false, shard: 1 }, run(vec![vote(1, false)])]),
        (1, 4) | (3, 4) => plain(vec![
            Elicit { accept: false, shard: 0 },
            Elicit { accept: false, shard: 1 },
            run(vec![vote(0, false), vote(1, false)]),
        ]),
        (1, 5) | (2, 5) | (3, 5) => plain(vec![Spend(vec![X1]), run(vec![])]),
        (1, 6) | (3, 6) => plain(vec![Elicit { accept: true, shard: 0 }, Spend(vec![X1]), run(vec![vote(0, true)])]),
        (1, 7) | (3, 7) => plain(vec![Spend(vec![X2]), run(vec![])]),
        (1, 8) | (3, 8) => plain(vec![Elicit { accept: true, shard: 1 }, Spend(vec![X2]), run(vec![vote(1, true)])]),
        (1, 9) | (3, 9) => plain(vec![Spend(vec![X1, X2]), run(vec![])]),
        (3, 10) => plain(vec![
            Elicit { accept: true, shard: 0 },
            Elicit { accept: true, shard: 1 },
            Spend(vec![X1, X2]),
            run(vec![vote(0, true), vote(1, true)]),
        ]),
        (2, 2) => plain(vec![run(vec![]), Spend(vec![Y3]), Replay(vec![s1_acc(false)])]),
        (2, 3) => plain(vec![run(vec![]), Spend(vec![Y3]), Replay(vec![s2_acc(false)])]),
        (2, 4) => plain(vec![
            run(vec![]),
            Spend(vec![Y3]),
            Replay(vec![s1_acc(false)]),
            Spend(vec![Y3]),
            Replay(vec![s2_acc(false)]),
        ]),
        (2, 6) => forked(vec![Spend(vec![X1]), run(vec![]), Replay(vec![s1_acc(true)])]),
        (2, 7) => forked(vec![Spend(vec![X1]), run(vec![]), Replay(vec![s2_acc(true)])]),
        (2, 8) => forked(vec![
            Spend(vec![X1]),
            run(vec![]),
            Replay(vec![s1_acc(true)]),
            Spend(vec![Y3]),
            Replay(vec![s2_acc(true)]),
        ]),
        (4, 2) => plain(vec![
            Elicit { accept: true, shard: 0 },
            run(vec![]),
            Replay(vec![decision(false, From::Client, false, &[0, 1])]),
        ]),
        (4, 3) => plain(vec![Run { inject: vec![], withdraw: true }]),
        (4, 4) => forked(vec![
            Run { inject: vec![], withdraw: true },
            Replay(vec![decision(true, From::Client, true, &[0, 1, 2])]),
        ]),
        _ => unreachable!("row checked by caller"),
    }
}

fn kind(protocol: Protocol, phase: Phase) -> MessageKind {
    use MessageKind as K;
    match (protocol, phase) {
        (Protocol::Sbac, Phase::PreAccept) => K::SbacPreAccept,
        (Protocol::Sbac, Phase::PreAbort) => K::SbacPreAbort,
        (Protocol::Sbac, Phase::Accept) => K::SbacAccept,
        (Protocol::Sbac, _) => K::SbacAbort,
        (Protocol::Atomix, Phase::PreAccept) => K::AtomixPreAccept,
        (Protocol::Atomix, Phase::PreAbort) => K::AtomixPreAbort,
        (Protocol::Atomix, Phase::Accept) => K::AtomixAccept,
        (Protocol::Atomix, _) => K::AtomixAbort,
        (Protocol::Byzcuit, Phase::PreAccept) => K::ByzPreAccept,
        (Protocol::Byzcuit, Phase::PreAbort) => K::ByzPreAbort,
        (Protocol::Byzcuit, Phase::Accept) => K::ByzAccept,
        (Protocol::Byzcuit, _) => K::ByzAbort,
    }
}

fn render_replay(r: &Replay, protocol: Protocol) -> Injection {
    let is_vote = matches!(r.phase, Phase::PreAccept | Phase::PreAbort);
    let origin = match (r.from, protocol) {
        (From::Shard(s), _) if is_vote => ActorId::shard(s),
        (_, Protocol::Byzcuit) => ActorId::Tm(0),
        (From::Shard(s), _) => ActorId::shard(s),
        (From::Client, _) => ActorId::Client(0),
    };
    let to: Vec<ActorId> = if is_vote {
        let From::Shard(s) = r.from else { unreachable!("votes come from shards") };
        match protocol {
            Protocol::Sbac => vec![ActorId::shard(1 - s)],
            Protocol::Atomix => vec![ActorId::Client(0)],
            Protocol::Byzcuit => vec![ActorId::Tm(0)],
        }
    } else {
        r.to.iter().map(|&s| ActorId::shard(s)).collect()
    };
    Injection {
        log: if r.prior { LogSource::Prior } else { LogSource::Run },
        origin: origin.to_string(),
        kind: kind(protocol, r.phase),
        txn: T,
        target: None,
        occurrence: 0,
        to: to.iter().map(|a| a.to_string()).collect(),
        at: 1,
    }
}

fn render_steps(steps: &[Step], protocol: Protocol, next_aux: &mut TxnId) -> Vec<Stage> {
    steps
        .iter()
        .map(|st| match st {
            Step::Elicit { accept, shard } => {
                let aux_txn = *next_aux;
                *next_aux += 1;
                // The auxiliary object sits opposite the object being held:
                // x_other for a pre-accept, the target's own input otherwise.
                let aux_object = if *accept { AUX[*shard as usize] } else { AUX[1 - *shard as usize] };
                let phase = if *accept { Phase::PreAccept } else { Phase::PreAbort };
                Stage::Elicit { vote: kind(protocol, phase), shard: *shard, txn: T, aux_txn, aux_object }
            }
            Step::Spend(objs) => Stage::Spend { objects: objs.clone() },
            Step::Run { inject, withdraw } => Stage::run(
                vec![SubmitSpec { withdraw: *withdraw && protocol == Protocol::Atomix, ..SubmitSpec::now(T) }],
                inject.iter().map(|r| render_replay(r, protocol)).collect(),
            ),
            Step::Replay(rs) => Stage::Replay { inject: rs.iter().map(|r| render_replay(r, protocol)).collect() },
        })
        .collect()
}

/// Transcribed end state of a row: what each actor sent and did for T.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpectedOutcome {
    pub traces: BTreeMap<ActorId, ActorTrace>,
    pub classification: ClassLabel,
}

fn tr(sent: &[Phase], actions: &[(Action, u64)]) -> ActorTrace {
    let acts: Vec<_> = actions.iter().map(|&(a, o)| (a, ObjectId::real(o))).collect();
    ActorTrace::new(sent, &acts)
}

fn expected(table: u8, row: u8) -> ExpectedOutcome {
    use Action::*;
    use ClassLabel::*;
    use Phase::{Abort as Ab, Accept as Acc, PreAbort as PAb, PreAccept as PAc};
    let s = ActorId::shard;
    let c = ActorId::Client(0);
    let xs = [X1, X2];
    let ys = [Y1, Y2];
    // SBAC building blocks, per input shard i.
    let sb_commit = |i: usize| tr(&[PAc, Acc], &[(Lock, xs[i]), (Inactivate, xs[i]), (Create, ys[i])]);
    let sb_release = |i: usize| tr(&[PAc, Ab], &[(Lock, xs[i]), (Unlock, xs[i])]);
    let sb_refuse = || tr(&[PAb, Ab], &[]);
    let y3 = |n: usize| tr(&[], &vec![(Create, Y3); n]);
    // Atomix building blocks.
    let ax_commit = |i: usize| tr(&[PAc], &[(Inactivate, xs[i]), (Create, ys[i])]);
    let ax_release = |i: usize| tr(&[PAc], &[(Inactivate, xs[i]), (Reactivate, xs[i])]);
    let ax_refuse = || tr(&[PAb], &[]);
    let ax_refuse_create = |i: usize| tr(&[PAb], &[(Create, ys[i])]);
    let ax_both = |i: usize| tr(&[PAc], &[(Inactivate, xs[i]), (Reactivate, xs[i]), (Create, ys[i])]);
    let client = |p: Phase| tr(&[p], &[]);

    let (pairs, class): (Vec<(ActorId, ActorTrace)>, ClassLabel) = match (table, row) {
        (1 | 2, 1) => (vec![(s(0), sb_commit(0)), (s(1), sb_commit(1)), (s(2), y3(1))], ConsistentCommit),
        (1, 2) => (vec![(s(0), sb_commit(0)), (s(1), sb_release(1)), (s(2), y3(1))], Inconsistent),
        (1, 3) => (vec![(s(0), sb_release(0)), (s(1), sb_commit(1)), (s(2), y3(1))], Inconsistent),
        (1, 4) => (vec![(s(0), sb_release(0)), (s(1), sb_release(1))], AvailabilityLoss),
        (1 | 2, 5) => (vec![(s(0), sb_refuse()), (s(1), sb_release(1))], ConsistentAbort),
        (1, 6) => (vec![(s(0), sb_refuse()), (s(1), sb_commit(1)), (s(2), y3(1))], Inconsistent),
        (1, 7) => (vec![(s(0), sb_release(0)), (s(1), sb_refuse())], ConsistentAbort),
        (1, 8) => (vec![(s(0), sb_commit(0)), (s(1), sb_refuse()), (s(2), y3(1))], Inconsistent),
        (1, 9) => (vec![(s(0), sb_refuse()), (s(1), sb_refuse())], ConsistentAbort),
        (2, 2 | 3) => (vec![(s(0), sb_commit(0)), (s(1), sb_commit(1)), (s(2), y3(2))], Inconsistent),
        (2, 4) => (vec![(s(0), sb_commit(0)), (s(1), sb_commit(1)), (s(2), y3(3))], Inconsistent),
        (2, 6 | 7) => (vec![(s(0), sb_refuse()), (s(1), sb_release(1)), (s(2), y3(1))], Inconsistent),
        (2, 8) => (vec![(s(0), sb_refuse()), (s(1), sb_release(1)), (s(2), y3(2))], Inconsistent),
        (3 | 4, 1) => (
            vec![(s(0), ax_commit(0)), (s(1), ax_commit(1)), (s(2), y3(1)), (c, client(Acc))],
            ConsistentCommit,
        ),
        (3, 2..=4) => (vec![(s(0), ax_release(0)), (s(1), ax_release(1)), (c, client(Ab))], AvailabilityLoss),
        (3, 5) => (vec![(s(0), ax_refuse()), (s(1), ax_release(1)), (c, client(Ab))], ConsistentAbort),
        (3, 6) => (
            vec![(s(0), ax_refuse_create(0)), (s(1), ax_commit(1)), (s(2), y3(1)), (c, client(Acc))],
            Inconsistent,
        ),
        (3, 7) => (vec![(s(0), ax_release(0)), (s(1), ax_refuse()), (c, client(Ab))], ConsistentAbort),
        (3, 8) => (
            vec![(s(0), ax_commit(0)), (s(1), ax_refuse_create(1)), (s(2), y3(1)), (c, client(Acc))],
            Inconsistent,
        ),
        (3, 9) => (vec![(s(0), ax_refuse()), (s(1), ax_refuse()), (c, client(Ab))], ConsistentAbort),
        (3, 10) => (
            vec![(s(0), ax_refuse_create(0)), (s(1), ax_refuse_create(1)), (s(2), y3(1)), (c, client(Acc))],
            Inconsistent,
        ),
        (4, 2) => (vec![(s(0), ax_both(0)), (s(1), ax_both(1)), (s(2), y3(1)), (c, client(Acc))], Inconsistent),
        (4, 3) => (vec![(s(0), ax_release(0)), (s(1), ax_release(1)), (c, client(Ab))], ConsistentAbort),
        (4, 4) => (vec![(s(0), ax_both(0)), (s(1), ax_both(1)), (s(2), y3(1)), (c, client(Ab))], Inconsistent),
        _ => unreachable!("row checked by caller"),
    };
    ExpectedOutcome { traces: pairs.into_iter().collect(), classification: class }
}

/// A table row bound to a protocol, ready to run.
#[derive(Clone, Debug)]
pub struct AttackRow {
    pub table: u8,
    pub row: u8,
    pub protocol: Protocol,
    pub highlighted: bool,
    /// Transcribed outcome; `None` for Byzcuit, which must instead match
    /// the injection-free run.
    pub expected: Option<ExpectedOutcome>,
    pub scenario: Scenario,
}

pub fn canonical_scenario(name: &str, protocol: Protocol) -> Scenario {
    let mut scn = Scenario::new(name, protocol, NUM_SHARDS);
    let obj = |id, state| ObjectSpec { id, shard: None, state, seq: 0 };
    scn.objects = vec![
        obj(X1, SeedState::Active),
        obj(X2, SeedState::Active),
        obj(AUX[0], SeedState::Absent),
        obj(AUX[1], SeedState::Absent),
    ];
    scn.transactions = vec![TxnSpec { id: T, client: 0, inputs: vec![X1, X2], outputs: vec![Y1, Y2, Y3] }];
    scn
}

pub fn attack_row(table: u8, row: u8, protocol: Protocol) -> Result<AttackRow> {
    let rows = row_count(table).ok_or(Error::UnknownRow { table, row })?;
    if row == 0 || row > rows {
        return Err(Error::UnknownRow { table, row });
    }
    let native = table_protocol(table).expect("table checked");
    if protocol != native && protocol != Protocol::Byzcuit {
        return Err(Error::ProtocolMismatch { table, protocol: protocol.to_string() });
    }
    let sc = script(table, row);
    let mut scn = canonical_scenario(&format!("table{table}-row{row}-{protocol}"), protocol);
    let mut next_aux = 2;
    scn.prior = render_steps(&sc.prior, protocol, &mut next_aux);
    scn.stages = render_steps(&sc.steps, protocol, &mut next_aux);
    let expected = (protocol == native).then(|| expected(table, row));
    scn.assertions = match &expected {
        Some(e) => vec![
            Assertion::Traces {
                txn: T,
                actors: e.traces.iter().map(|(a, t)| TraceSpec::from_trace(*a, t)).collect(),
            },
            Assertion::Classification { txn: T, is: e.classification },
        ],
        None => vec![Assertion::MatchesCounterfactual { txn: T }, Assertion::NotInconsistent],
    };
    Ok(AttackRow { table, row, protocol, highlighted: highlighted(table, row), expected, scenario: scn })
}

/// Every (table, row) pair.
pub fn all_rows() -> impl Iterator<Item = (u8, u8)> {
    (1..=4u8).flat_map(|t| (1..=row_count(t).unwrap()).map(move |r| (t, r)))
}
