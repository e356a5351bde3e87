use std::collections::BTreeSet;

use xshard::adversary::{elicit, for_each_interleaving};
use xshard::ledger::{clone_id, ObjectId, ObjectState, ShardId, Transaction};
use xshard::message::{ActorId, Body, MessageKind, ProtocolMessage};
use xshard::node::Protocol;
use xshard::oracle::{self, Classification};
use xshard::system::{oid, System, SystemConfig};

const N: u16 = 3;

fn world(cfg: impl Fn(&mut SystemConfig)) -> (System, Transaction) {
    let mut c = SystemConfig::new(Protocol::Byzcuit, N);
    cfg(&mut c);
    let mut sys = System::new(c);
    let (x1, x2) = (oid(1, 0, N), oid(1, 1, N));
    sys.add_object(x1, ObjectState::Active, 0);
    sys.add_object(x2, ObjectState::Active, 0);
    let outs: Vec<_> = (0..N).map(|s| oid(2, s, N)).collect();
    let t = sys.transaction(1, 0, &[x1, x2], &outs).unwrap();
    (sys, t)
}

fn shard_nodes(sys: &System) -> Vec<String> {
    (0..N).map(|s| format!("{:?}", sys.world.actor(ActorId::shard(s)).unwrap())).collect()
}

#[test]
fn replayed_decisions_after_completion_change_nothing() {
    let (mut sys, t) = world(|_| {});
    sys.submit(&t).unwrap();
    sys.run();
    let before = shard_nodes(&sys);
    let decisions: Vec<ProtocolMessage> = sys
        .world
        .log()
        .entries
        .iter()
        .filter(|e| e.msg.kind().is_decision())
        .map(|e| e.msg.clone())
        .collect();
    assert!(!decisions.is_empty());
    let now = sys.world.now();
    for m in decisions {
        for s in 0..N {
            sys.inject(m.clone(), ActorId::shard(s), now + 1).unwrap();
        }
    }
    sys.run();
    assert_eq!(shard_nodes(&sys), before);
}

#[test]
fn accept_built_from_too_few_votes_is_ignored() {
    let (mut sys, t) = world(|_| {});
    // The TM never runs, so every shard keeps (T, s_T) cached and locked.
    sys.crash(ActorId::Tm(0), 0);
    let prepared = sys.submit(&t).unwrap();
    sys.run();
    let votes: Vec<ProtocolMessage> = sys
        .world
        .log()
        .entries
        .iter()
        .filter(|e| e.msg.kind() == MessageKind::ByzPreAccept)
        .map(|e| e.msg.clone())
        .collect();
    assert_eq!(votes.len(), N as usize);
    let missing = votes[N as usize - 1].clone();

    // n-1 genuine votes, then n-1 genuine votes plus a forged one.
    let partial = votes[..N as usize - 1].to_vec();
    let forged_vote = ProtocolMessage::forged(missing.sender_shard().unwrap(), 1, missing.body.clone());
    let mut padded = partial.clone();
    padded.push(forged_vote);
    for votes in [partial, padded] {
        let accept = ProtocolMessage::unsigned(ActorId::Tm(7), Body::ByzAccept { txn: prepared.clone(), votes });
        let now = sys.world.now();
        for s in 0..N {
            sys.inject(accept.clone(), ActorId::shard(s), now + 1).unwrap();
        }
        sys.run();
        for r in &t.inputs {
            assert!(
                matches!(sys.object(r.id).unwrap().state, ObjectState::Locked { .. }),
                "{} left its lock",
                r.id
            );
        }
        for r in &t.outputs {
            assert!(sys.object(r.id).is_none(), "{} was created", r.id);
        }
    }
}

#[test]
fn elicited_vote_is_recorded_but_its_replay_is_ignored() {
    let (mut sys, t) = world(|_| {});
    let rec = elicit(&mut sys, MessageKind::ByzPreAccept, ShardId(0), &t, 2, oid(3, 0, N)).unwrap();
    assert_eq!(rec.msg.kind(), MessageKind::ByzPreAccept);
    for r in &t.inputs {
        assert_eq!(sys.object(r.id).unwrap().state, ObjectState::Active);
    }

    let mut clean = sys.clone();
    clean.submit(&t).unwrap();
    clean.run();

    let mut attacked = sys.clone();
    let now = attacked.world.now();
    attacked.submit(&t).unwrap();
    attacked.inject(rec.msg.clone(), ActorId::Tm(0), now + 1).unwrap();
    attacked.run();
    assert_eq!(attacked.snapshot().object_tables(), clean.snapshot().object_tables());
    assert_eq!(attacked.classify(1, true).unwrap(), Classification::ConsistentCommit);
}

#[test]
fn racing_takeover_actors_reach_one_final_world() {
    let n = 2;
    let mut c = SystemConfig::new(Protocol::Byzcuit, n);
    c.takeover = vec![8, 9];
    c.max_stuck_notices = 1;
    let mut sys = System::new(c);
    let x = oid(1, 0, n);
    sys.add_object(x, ObjectState::Active, 0);
    let t = sys.transaction(1, 0, &[x], &[oid(2, 1, n)]).unwrap();
    sys.crash(ActorId::Tm(0), 0);
    sys.submit(&t).unwrap();
    let mut finals = BTreeSet::new();
    let states = for_each_interleaving(&sys, |w| {
        let snap = w.snapshot();
        assert!(oracle::check_liveness(&snap));
        finals.insert(format!("{:?}", snap.object_tables()));
        Ok(())
    })
    .unwrap();
    assert!(states > 1);
    assert_eq!(finals.len(), 1, "takeovers disagreed");
}

#[test]
fn high_session_number_from_a_malicious_client_forces_a_clone() {
    let (mut sys, _) = world(|c| c.overflow_threshold = 16);
    let x1 = oid(1, 0, N);
    let t = sys.transaction(5, 0, &[x1, oid(40, 1, N)], &[oid(41, 0, N)]).unwrap();
    let prepared = sys.prepare(&t).unwrap().with_seq(15);
    sys.submit_prepared(&prepared, 0, None, false).unwrap();
    sys.run();
    assert_eq!(sys.object(x1).unwrap().state, ObjectState::Inactive);
    let copy = clone_id(x1, N);
    assert_eq!(sys.object(copy).unwrap().seq, 0);
    let spend = sys.spend(copy, 6, 0).unwrap();
    assert_eq!(sys.classify(spend.id, true).unwrap(), Classification::ConsistentCommit);
}

#[test]
fn repeated_overflow_aborts_keep_objects_spendable() {
    let (mut sys, _) = world(|c| c.overflow_threshold = 16);
    let mut current = oid(1, 0, N);
    for k in 0..3u64 {
        let t = sys.transaction(10 + k, 0, &[current, oid(40 + k, 1, N)], &[oid(50 + k, 0, N)]).unwrap();
        let prepared = sys.prepare(&t).unwrap().with_seq(15);
        sys.submit_prepared(&prepared, sys.world.now(), None, false).unwrap();
        sys.run();
        let next = clone_id(current, N);
        assert_eq!(sys.object(current).unwrap().state, ObjectState::Inactive);
        assert_eq!(sys.object(next).map(|r| (r.state, r.seq)), Some((ObjectState::Active, 0)));
        current = next;
    }
    let spend = sys.spend(current, 99, 0).unwrap();
    assert_eq!(sys.classify(spend.id, true).unwrap(), Classification::ConsistentCommit);
}

fn dummy_count(sys: &System, s: u16) -> usize {
    let snap = sys.snapshot();
    snap.shards[&ShardId(s)].objects.values().filter(|r| r.id.dummy && r.state.is_active()).count()
}

#[test]
fn commit_consumes_and_replaces_the_dummy() {
    let (mut sys, t) = world(|_| {});
    let pool = sys.config.dummy_pool as usize;
    let prepared = sys.submit(&t).unwrap();
    sys.run();
    let dummies: Vec<ObjectId> = prepared.inputs.iter().filter(|r| r.id.dummy).map(|r| r.id).collect();
    assert_eq!(dummies.len(), 1);
    for d in &dummies {
        assert_eq!(sys.object(*d).unwrap().state, ObjectState::Inactive);
        let replacement = d.next_dummy().unwrap();
        assert_eq!(sys.object(replacement).map(|r| r.state), Some(ObjectState::Active));
    }
    for s in 0..N {
        assert_eq!(dummy_count(&sys, s), pool, "shard {s}");
    }
}

#[test]
fn abort_reactivates_inputs_and_dummies_at_s_plus_one() {
    let (mut sys, t) = world(|_| {});
    let ghost = oid(9, 1, N);
    let outs: Vec<ObjectId> = t.outputs.iter().map(|r| r.id).collect();
    let bad = sys.transaction(1, 0, &[t.inputs[0].id, ghost], &outs).unwrap();
    let prepared = sys.submit(&bad).unwrap();
    sys.run();
    let s = prepared.seq.unwrap();
    for r in prepared.inputs.iter().filter(|r| r.id != ghost) {
        let rec = sys.object(r.id).unwrap();
        assert_eq!((rec.state, rec.seq), (ObjectState::Active, s + 1), "{}", r.id);
    }
    for r in &prepared.outputs {
        assert!(sys.object(r.id).is_none());
    }
}
