use std::collections::{HashMap, HashSet};

use lakecache::bandit::{argmax, BinningScheme, EpsilonSchedule, DiscreteState, QTable};
use lakecache::baselines::{order_for_eviction, EvictionOrdering, WriteEverything};
use lakecache::cache::{NodeConfig, Outcome, Simulator};
use lakecache::policy::{Admission, Policy};
use lakecache::scdl::{Scdl, ScdlParams, ScdlReward};
use lakecache::scdl2::{categories, EvictionTrigger, PrevOutcome, Scdl2, Scdl2Params, TriggerMode};
use lakecache::trace::{generate_trace, Request, SizeDistribution, TraceSpec};
use lakecache::units::ByteSize;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn trace_from(ops: &[(u8, u8)], sizes: &[u64]) -> Vec<Request> {
    ops.iter()
        .enumerate()
        .map(|(t, &(f, gap))| Request {
            tick: t as u64,
            day: (t / 40) as u32 + gap as u32 / 200,
            file_id: format!("f{f}"),
            size: sizes[f as usize % sizes.len()],
            data_type: if f % 3 == 0 { "mc".into() } else { "data".into() },
            user_id: "u".into(),
            site_id: "s".into(),
        })
        .scan(0u32, |max_day, mut r| {
            *max_day = (*max_day).max(r.day);
            r.day = *max_day;
            Some(r)
        })
        .collect()
}

fn arb_trace() -> impl Strategy<Value = (Vec<Request>, u64)> {
    (
        prop::collection::vec(1u64..=20, 1..=30),
        prop::collection::vec((0u8..30, 0u8..=255), 1..=300),
        1u64..=50,
    )
        .prop_map(|(sizes, ops, cap)| (trace_from(&ops, &sizes), cap))
}

fn outcomes(policy: Box<dyn Policy>, trace: &[Request], cap: u64) -> Vec<Outcome> {
    let mut sim = Simulator::new(&NodeConfig::new(cap), policy).unwrap().record_outcomes();
    sim.run(trace).unwrap();
    sim.outcomes().unwrap().to_vec()
}

/// Direct LRU list with the W_high/W_low sweep.
fn naive_lru(trace: &[Request], cap: u64) -> Vec<bool> {
    let (high, low) = (0.95 * cap as f64, 0.75 * cap as f64);
    let mut list: Vec<(&str, u64)> = Vec::new();
    let mut occ = 0;
    let mut out = Vec::new();
    for r in trace {
        if let Some(i) = list.iter().position(|e| e.0 == r.file_id) {
            let e = list.remove(i);
            list.push(e);
            out.push(true);
            continue;
        }
        out.push(false);
        if r.size > cap {
            continue;
        }
        let sweep = |list: &mut Vec<(&str, u64)>, occ: &mut u64, needed: u64| {
            if *occ as f64 >= high || *occ + needed > cap {
                while *occ as f64 > low || *occ + needed > cap {
                    *occ -= list.remove(0).1;
                }
            }
        };
        sweep(&mut list, &mut occ, r.size);
        list.push((&r.file_id, r.size));
        occ += r.size;
        sweep(&mut list, &mut occ, 0);
    }
    out
}

fn bins() -> BinningScheme {
    BinningScheme {
        size_edges: vec![4, 8, 12, 16],
        ..BinningScheme::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_requests_are_well_formed(seed in 0u64..1000, days in 1u32..4, per_day in 1u32..300, files in 1u32..200) {
        let spec = TraceSpec { num_days: days, requests_per_day: per_day, num_distinct_files: files, ..TraceSpec::small(seed) };
        let trace: Vec<Request> = generate_trace(&spec).unwrap().collect();
        prop_assert_eq!(trace.len() as u64, spec.total_requests());
        let mut sizes: HashMap<&str, u64> = HashMap::new();
        for w in trace.windows(2) {
            prop_assert!(w[0].tick < w[1].tick);
            prop_assert!(w[0].day <= w[1].day);
        }
        for r in &trace {
            prop_assert!(r.size > 0);
            prop_assert!(r.day < days);
            prop_assert!(spec.data_types.contains(&r.data_type));
            prop_assert_eq!(*sizes.entry(&r.file_id).or_insert(r.size), r.size);
        }
    }

    #[test]
    fn lru_matches_naive_list((trace, cap) in arb_trace()) {
        let got: Vec<bool> = outcomes(Box::new(WriteEverything::new(EvictionOrdering::Lru)), &trace, cap)
            .iter().map(|o| o.is_hit()).collect();
        prop_assert_eq!(got, naive_lru(&trace, cap));
    }

    #[test]
    fn forced_store_learners_reduce_to_lru((trace, cap) in arb_trace(), seed in 0u64..100) {
        let lru = outcomes(Box::new(WriteEverything::new(EvictionOrdering::Lru)), &trace, cap);
        let scdl = Scdl::new(ScdlParams {
            bins: bins(),
            alpha: 0.5,
            gamma: 0.5,
            schedule: EpsilonSchedule::constant(1.0),
            reward: ScdlReward::HitBelowHigh,
            forced_action: Some(Admission::Store),
            seed,
        }).unwrap();
        prop_assert_eq!(&outcomes(Box::new(scdl), &trace, cap), &lru);
        let scdl2 = Scdl2::new(Scdl2Params {
            bins: bins(),
            alpha: 0.5,
            gamma: 0.5,
            addition_schedule: EpsilonSchedule::constant(1.0),
            eviction_schedule: EpsilonSchedule::constant(1.0),
            trigger: EvictionTrigger { mode: TriggerMode::NoEviction, k: 8192 },
            prev_outcome: PrevOutcome::PerFile,
            forced_addition: Some(Admission::Store),
            forced_eviction: None,
            seed,
        }).unwrap();
        prop_assert_eq!(&outcomes(Box::new(scdl2), &trace, cap), &lru);
    }

    #[test]
    fn orderings_are_permutations_of_the_cache((trace, cap) in arb_trace()) {
        let mut sim = Simulator::new(&NodeConfig::new(cap), Box::new(WriteEverything::new(EvictionOrdering::Lru))).unwrap();
        for r in &trace {
            sim.process(r).unwrap();
            let cache = &sim.node().cache;
            let mut keys = cache.keys();
            keys.sort();
            for kind in [EvictionOrdering::Lru, EvictionOrdering::Lfu, EvictionOrdering::SizeBig, EvictionOrdering::SizeSmall] {
                let mut order = order_for_eviction(cache, kind);
                order.sort();
                prop_assert_eq!(&order, &keys);
            }
        }
    }

    #[test]
    fn categories_partition_the_cache((trace, cap) in arb_trace()) {
        let mut sim = Simulator::new(&NodeConfig::new(cap), Box::new(WriteEverything::new(EvictionOrdering::Lfu))).unwrap();
        for r in &trace {
            sim.process(r).unwrap();
            let node = sim.node();
            let cats = categories(node, &bins());
            let mut seen = HashSet::new();
            let mut total = 0;
            for c in &cats {
                let sum: u64 = c.members.iter().map(|k| node.cache.get(*k).unwrap().size).sum();
                prop_assert_eq!(sum, c.occupied);
                total += c.occupied;
                for k in &c.members {
                    prop_assert!(seen.insert(*k));
                }
            }
            prop_assert_eq!(total, node.cache.occupancy());
            prop_assert_eq!(seen.len(), node.cache.len());
            prop_assert!(cats.windows(2).all(|w| w[0].occupied > w[1].occupied
                || (w[0].occupied == w[1].occupied && w[0].key < w[1].key)));
        }
    }

    #[test]
    fn argmax_ignores_positive_scaling(values in prop::collection::vec(-100i32..100, 1..6), k in 0.001f64..1000.0) {
        // Integer-valued entries keep ties exact after scaling.
        let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
        prop_assert_eq!(argmax(&v), argmax(&scaled));
        let mut t = QTable::new(&["x"], &["a", "b", "c", "d", "e", "f"][..v.len()]);
        let s = DiscreteState(vec![0]);
        for (a, x) in scaled.iter().enumerate() {
            t.set(&s, a, *x);
        }
        prop_assert_eq!(t.greedy(&s), argmax(&v));
    }
}

#[test]
fn zero_skew_is_uniform() {
    let files = 50;
    let spec = TraceSpec {
        num_days: 10,
        requests_per_day: 12_000,
        num_distinct_files: files,
        popularity_skew: 0.0,
        size_distribution: SizeDistribution::Fixed { size: ByteSize(1) },
        drift_days: None,
        ..TraceSpec::small(42)
    };
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut n = 0u64;
    for r in generate_trace(&spec).unwrap() {
        *counts.entry(r.file_id).or_default() += 1;
        n += 1;
    }
    assert!(n >= 100_000);
    assert_eq!(counts.len(), files as usize);
    let expected = n as f64 / files as f64;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new(files as f64 - 1.0).unwrap().inverse_cdf(0.999);
    assert!(chi2 < critical, "chi-square {chi2:.1} >= {critical:.1}");
}
