use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use xshard::byzcuit::attach_dummies;
use xshard::ledger::{shard_of, tx_sequence_number, FaultConfig, ObjectId, ObjectState, ShardId, Transaction};
use xshard::message::{validate_cert, ActorId, Body, ProtocolMessage};
use xshard::node::Protocol;
use xshard::oracle::{self, classify_shape, Classification, InputStatus, Shape};
use xshard::system::{oid, System, SystemConfig};

fn arb_txn(n: u16) -> impl Strategy<Value = Transaction> {
    (
        proptest::collection::btree_set(0u64..60, 1..4),
        proptest::collection::btree_set(60u64..120, 0..4),
    )
        .prop_map(move |(ins, outs)| {
            let ins: Vec<_> = ins.into_iter().map(ObjectId::real).collect();
            let outs: Vec<_> = outs.into_iter().map(ObjectId::real).collect();
            Transaction::new(7, 0, &ins, &outs, n).unwrap()
        })
}

fn arb_status() -> impl Strategy<Value = InputStatus> {
    prop_oneof![
        Just(InputStatus::Available),
        Just(InputStatus::Stuck),
        Just(InputStatus::Consumed),
        Just(InputStatus::Unavailable),
    ]
}

fn arb_shape() -> impl Strategy<Value = Shape> {
    (
        proptest::collection::vec(arb_status(), 1..4),
        proptest::collection::vec(0u32..3, 0..4),
    )
        .prop_map(|(ins, outs)| Shape {
            inputs: ins.into_iter().enumerate().map(|(i, s)| (ObjectId::real(i as u64), s)).collect(),
            outputs: outs.into_iter().enumerate().map(|(i, c)| (ObjectId::real(100 + i as u64), c)).collect(),
        })
}

proptest! {
    #[test]
    fn sequence_number_bounds_every_input(seqs in proptest::collection::vec(any::<u64>(), 1..8)) {
        let s = tx_sequence_number(&seqs).unwrap();
        prop_assert!(seqs.iter().all(|&x| s >= x));
        prop_assert!(seqs.contains(&s));
    }

    #[test]
    fn only_honest_quorums_validate(txn in arb_txn(3), shard in 0u16..3, f in 1u16..4, flip in any::<u64>()) {
        let faults = FaultConfig::uniform(3, f);
        let body = Body::ByzPreAccept { txn: txn.clone(), observed: vec![] };
        let s = ShardId(shard);
        prop_assert!(validate_cert(&ProtocolMessage::signed(s, f, body.clone()), &faults));
        prop_assert!(!validate_cert(&ProtocolMessage::forged(s, f, body.clone()), &faults));
        prop_assert!(!validate_cert(&ProtocolMessage::unsigned(ActorId::shard(shard), body.clone()), &faults));

        // A certificate does not carry over to another payload or sender.
        let mut tampered = ProtocolMessage::signed(s, f, body.clone());
        tampered.body = Body::ByzPreAccept { txn: txn.clone().with_seq(flip), observed: vec![] };
        prop_assert!(!validate_cert(&tampered, &faults));
        let mut moved = ProtocolMessage::signed(s, f, body);
        moved.sender = ActorId::shard((shard + 1) % 3);
        prop_assert!(!validate_cert(&moved, &faults));
    }

    #[test]
    fn every_output_only_shard_gets_exactly_one_dummy(txn in arb_txn(4)) {
        let pools: BTreeMap<ShardId, Vec<ObjectId>> =
            (0..4).map(|s| (ShardId(s), vec![ObjectId::dummy(ShardId(s), 0, 0), ObjectId::dummy(ShardId(s), 1, 0)])).collect();
        let with = attach_dummies(&txn, &pools).unwrap();
        prop_assert!(with.dummies_well_formed());
        let needs = txn.output_only_shards();
        let dummies: Vec<ShardId> = with.inputs.iter().filter(|r| r.id.dummy).map(|r| r.shard).collect();
        prop_assert_eq!(dummies.iter().copied().collect::<BTreeSet<_>>(), needs.clone());
        prop_assert_eq!(dummies.len(), needs.len());
        for r in with.inputs.iter().filter(|r| r.id.dummy) {
            prop_assert_eq!(shard_of(r.id, 4), r.shard);
            let next = r.id.next_dummy().unwrap();
            prop_assert!(with.outputs.iter().any(|o| o.id == next && o.shard == r.shard));
        }
        // Attaching twice changes nothing.
        prop_assert_eq!(attach_dummies(&with, &pools).unwrap(), with);
    }

    #[test]
    fn classification_is_a_pure_function_of_the_shape(shape in arb_shape(), should_commit in any::<bool>()) {
        let c = classify_shape(&shape, should_commit);
        prop_assert_eq!(&c, &classify_shape(&shape, should_commit));

        let committed = shape.inputs.iter().all(|(_, s)| *s == InputStatus::Consumed)
            && shape.outputs.iter().all(|(_, n)| *n == 1);
        let nothing_created = shape.outputs.iter().all(|(_, n)| *n == 0);
        match &c {
            Classification::ConsistentCommit => prop_assert!(committed),
            Classification::Inconsistent(_) => prop_assert!(!committed && !nothing_created),
            Classification::ConsistentAbort => {
                prop_assert!(!should_commit && nothing_created);
                prop_assert!(shape.inputs.iter().all(|(_, s)| matches!(s, InputStatus::Available | InputStatus::Unavailable)));
            }
            Classification::AvailabilityLoss => prop_assert!(nothing_created && !committed),
        }
        if committed {
            prop_assert_eq!(c, Classification::ConsistentCommit);
        }
    }
}

#[derive(Clone, Debug)]
struct Load {
    n: u16,
    seed: u64,
    txns: Vec<(Vec<u64>, Vec<u16>, u64)>,
}

/// Up to six overlapping transactions over six objects, submitted at
/// random ticks under random latency.
fn arb_load() -> impl Strategy<Value = Load> {
    (2u16..=3, any::<u64>()).prop_flat_map(|(n, seed)| {
        let txn = (
            proptest::collection::btree_set(0u64..6, 1..3),
            proptest::collection::vec(0..n, 0..3),
            0u64..6,
        )
            .prop_map(|(ins, outs, at)| (ins.into_iter().collect(), outs, at));
        proptest::collection::vec(txn, 1..6).prop_map(move |txns| Load { n, seed, txns })
    })
}

fn seqs(sys: &System) -> BTreeMap<ObjectId, u64> {
    sys.snapshot().object_tables().into_values().flatten().map(|r| (r.id, r.seq)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn byzcuit_is_atomic_and_sequence_numbers_never_fall(load in arb_load()) {
        let n = load.n;
        let mut cfg = SystemConfig::new(Protocol::Byzcuit, n);
        cfg.net.seed = load.seed;
        cfg.net.jitter = 3;
        let mut sys = System::new(cfg);
        for k in 0..6 {
            sys.add_object(oid(k, (k % n as u64) as u16, n), ObjectState::Active, 0);
        }
        sys.reserve_dummies();
        let mut ids = Vec::new();
        for (i, (ins, outs, at)) in load.txns.iter().enumerate() {
            let id = 10 + i as u64;
            let ins: Vec<_> = ins.iter().map(|&k| oid(k, (k % n as u64) as u16, n)).collect();
            let outs: Vec<_> = outs.iter().enumerate().map(|(j, &s)| oid(1000 + 10 * id + j as u64, s, n)).collect();
            let t = sys.transaction(id, i as u16, &ins, &outs).unwrap();
            sys.submit_at(&t, *at, None, false).unwrap();
            ids.push(id);
        }
        sys.release_dummies();

        let mut last = seqs(&sys);
        while sys.world.step().is_some() {
            let now = seqs(&sys);
            for (id, s) in &last {
                if let Some(t) = now.get(id) {
                    prop_assert!(t >= s, "{id} went from {s} to {t}");
                }
            }
            last = now;
        }

        let snap = sys.snapshot();
        prop_assert!(oracle::check_liveness(&snap));
        let mut history = Vec::new();
        for id in ids {
            let rec = sys.record(&snap, id).unwrap();
            prop_assert!(!rec.classification.is_inconsistent(), "t{id}: {}", rec.classification);
            prop_assert!(
                matches!(rec.classification, Classification::ConsistentCommit | Classification::ConsistentAbort),
                "t{id}: {}", rec.classification
            );
            history.push(rec);
        }
        prop_assert!(oracle::check_conflict_exclusivity(&history));
        prop_assert!(oracle::check_validity(&history));
    }
}
