mod common;

use collective_clock::sim::{Action, Outcome, ProgressPolicy, RequestAt};
use collective_clock::workload::{generate_random_workload, parse_workload, GenParams};
use common::*;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = GenParams> {
    (any::<u64>(), 2u32..=6, 0usize..=20, 0usize..=6, 0.0f64..=0.6).prop_map(|(seed, n, c, p, f)| {
        GenParams::new(seed, n, c).p2p(p).nonblocking(f)
    })
}

fn policy() -> impl Strategy<Value = ProgressPolicy> {
    prop_oneof![
        Just(ProgressPolicy::Eager),
        Just(ProgressPolicy::Lazy),
        Just(ProgressPolicy::Randomized)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_workloads_round_trip(p in params()) {
        let w = generate_random_workload(&p).unwrap();
        prop_assert_eq!(parse_workload(&w.serialize()).unwrap(), w);
    }

    #[test]
    fn generated_workloads_complete_natively(p in params(), seed in any::<u64>(), pol in policy()) {
        let w = generate_random_workload(&p).unwrap();
        let r = run_native(&w, seed, pol).unwrap();
        prop_assert_eq!(r.outcome, Outcome::Completed);
    }

    #[test]
    fn blocking_collectives_synchronize(p in params(), seed in any::<u64>(), pol in policy()) {
        let w = generate_random_workload(&p).unwrap();
        let r = run_native(&w, seed, pol).unwrap();
        let mut spans: std::collections::BTreeMap<(String, u64), (u64, u64)> = Default::default();
        for e in &r.events {
            let key = match (&e.comm, e.ordinal) {
                (Some(c), Some(o)) => (c.clone(), o),
                _ => continue,
            };
            let span = spans.entry(key).or_insert((0, u64::MAX));
            match e.action {
                Action::EnterCollective => span.0 = span.0.max(e.step),
                Action::ExitCollective => span.1 = span.1.min(e.step),
                _ => {}
            }
        }
        for (k, (last_enter, first_exit)) in spans {
            prop_assert!(first_exit == u64::MAX || last_enter < first_exit, "{:?}", k);
        }
    }

    #[test]
    fn cc_without_request_matches_native(p in params(), seed in any::<u64>(), pol in policy()) {
        let w = generate_random_workload(&p).unwrap();
        let native = run_native(&w, seed, pol).unwrap();
        let cc = run_cc(&w, seed, pol, None).unwrap();
        prop_assert_eq!(native.events, cc.events);
        prop_assert_eq!(cc.metrics.protocol_messages_before_request, 0);
    }

    #[test]
    fn cc_snapshots_are_safe(p in params(), seed in any::<u64>(), pol in policy(), frac in 0.0f64..1.0) {
        let w = generate_random_workload(&p).unwrap();
        let native = run_native(&w, seed, pol).unwrap();
        let at = (native.metrics.steps as f64 * frac) as u64;
        let r = run_cc(&w, seed, pol, Some(RequestAt::Step(at))).unwrap();
        if native.metrics.steps > 0 {
            prop_assert_eq!(r.outcome, Outcome::Snapshot);
        }
        prop_assert!(r.outcome != Outcome::Snapshot || r.is_safe(), "{:?}", unsafe_reason(&r));
    }

    #[test]
    fn targets_never_decrease(p in params(), seed in any::<u64>(), frac in 0.0f64..1.0) {
        let w = generate_random_workload(&p).unwrap();
        let native = run_native(&w, seed, ProgressPolicy::Eager).unwrap();
        let at = (native.metrics.steps as f64 * frac) as u64;
        let r = run_cc(&w, seed, ProgressPolicy::Eager, Some(RequestAt::Step(at))).unwrap();
        let initial = r.initial_targets.clone().unwrap_or_default();
        for s in &r.ranks {
            for (g, t) in &initial {
                if g.contains(s.rank) {
                    prop_assert!(s.target.get(&g.to_string()).copied().unwrap_or(0) >= *t);
                }
            }
        }
    }

    #[test]
    fn two_phase_commit_is_safe_on_blocking_workloads(
        seed in any::<u64>(), n in 2u32..=5, c in 0usize..=15, pc in 0usize..=4, frac in 0.0f64..1.0
    ) {
        let w = generate_random_workload(&GenParams::new(seed, n, c).p2p(pc)).unwrap();
        let native = run_native(&w, seed, ProgressPolicy::Eager).unwrap();
        let at = (native.metrics.steps as f64 * frac) as u64;
        let r = run_2pc(&w, seed, Some(RequestAt::Step(at))).unwrap();
        prop_assert!(r.outcome != Outcome::Snapshot || r.is_safe(), "{:?}", unsafe_reason(&r));
        prop_assert!(r.metrics.extra_sync_events >= w.blocking_collective_calls() as u64 || r.outcome == Outcome::Snapshot);
    }
}
