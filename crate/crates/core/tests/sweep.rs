use xshard::adversary::{exhaustive_replay_sweep, SweepBounds};
use xshard::node::Protocol;
use xshard::Error;

fn sweep(p: Protocol, shards: u16, injections: u8) -> xshard::adversary::SweepReport {
    exhaustive_replay_sweep(p, SweepBounds::new(shards, injections)).unwrap()
}

#[test]
fn without_injections_no_protocol_is_inconsistent() {
    for p in Protocol::ALL {
        for n in [2, 3] {
            let r = sweep(p, n, 0);
            assert!(r.schedules() > 0, "{p} n={n}");
            assert_eq!(r.inconsistent_count(), 0, "{p} n={n}: {:?}", r.inconsistent.first());
            assert_eq!(r.deviations, 0, "{p} n={n}");
        }
    }
}

#[test]
fn byzcuit_two_shards_two_replays_stays_consistent() {
    let r = sweep(Protocol::Byzcuit, 2, 2);
    assert_eq!(r.inconsistent_count(), 0);
    assert_eq!(r.deviations, 0);
    assert_eq!(r.fresh_leftovers, 0);
}

#[test]
fn byzcuit_three_shards_one_replay_stays_consistent() {
    let r = sweep(Protocol::Byzcuit, 3, 1);
    assert_eq!(r.inconsistent_count(), 0);
    assert_eq!(r.deviations, 0);
    assert_eq!(r.fresh_leftovers, 0);
}

#[test]
fn one_replay_already_breaks_sbac_and_atomix() {
    for p in [Protocol::Sbac, Protocol::Atomix] {
        let r = sweep(p, 3, 1);
        assert!(r.inconsistent_count() > 0, "{p}");
        assert!(r.deviations > 0, "{p}");
        for e in &r.inconsistent {
            assert!(e.classification.is_inconsistent());
            assert!(!e.schedule.is_empty(), "{p}: inconsistent world without injected schedule");
        }
    }
}

#[test]
fn sweep_is_deterministic() {
    let a = sweep(Protocol::Sbac, 2, 1);
    let b = sweep(Protocol::Sbac, 2, 1);
    assert_eq!(a.by_class, b.by_class);
    assert_eq!(a.states, b.states);
    let shapes = |r: &xshard::adversary::SweepReport| r.inconsistent.iter().map(|e| e.shape.clone()).collect::<Vec<_>>();
    assert_eq!(shapes(&a), shapes(&b));
}

#[test]
fn oversized_sweeps_are_refused_with_an_estimate() {
    for (n, j) in [(4, 1), (3, 3), (1, 1)] {
        match exhaustive_replay_sweep(Protocol::Byzcuit, SweepBounds::new(n, j)) {
            Err(Error::SizeGuard(msg)) => assert!(msg.contains("estimated"), "{msg}"),
            other => panic!("n={n} j={j}: {other:?}"),
        }
    }
}
