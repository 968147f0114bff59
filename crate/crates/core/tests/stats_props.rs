use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use semsum::stats::{self, ResponseRecord, Rescale, System};

fn record() -> impl Strategy<Value = ResponseRecord> {
    (0u8..8, 1u32..300, 0usize..3, 1u8..=4, 1u8..=4, 1u8..=4).prop_map(|(w, t, s, c, r, v)| ResponseRecord {
        worker: format!("w{w}"),
        team: format!("t{}", w % 2),
        time_sec: f64::from(t),
        system: [System::Reference, System::Baseline, System::Ours][s],
        creativity: c,
        readability: r,
        relevance: v,
    })
}

fn records() -> impl Strategy<Value = Vec<ResponseRecord>> {
    prop::collection::vec(record(), 1..40)
}

fn close(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() < 1e-9
}

fn same_report(a: &stats::AggregateReport, b: &stats::AggregateReport) -> bool {
    a.systems.len() == b.systems.len()
        && a.systems.iter().all(|(k, x)| {
            let y = &b.systems[k];
            close(x.creativity, y.creativity) && close(x.readability, y.readability) && close(x.relevance, y.relevance) && close(x.total, y.total)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rescaling_preserves_order(a in 1u8..=4, b in 1u8..=4) {
        for map in [Rescale::Linear, Rescale::Proportional] {
            let (x, y) = (stats::rescale_with(a, map).unwrap(), stats::rescale_with(b, map).unwrap());
            prop_assert_eq!(a.cmp(&b), x.partial_cmp(&y).unwrap());
            prop_assert!((0.0..=100.0).contains(&x));
        }
    }

    #[test]
    fn truncation_keeps_or_drops_whole_workers(recs in records(), p in 0.0f64..100.0) {
        let kept = stats::truncate_by_time(&recs, p).unwrap();
        let mut per_worker: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for r in &recs {
            per_worker.entry(&r.worker).or_default().0 += 1;
        }
        for r in &kept {
            per_worker.get_mut(r.worker.as_str()).unwrap().1 += 1;
        }
        prop_assert!(per_worker.values().all(|&(all, k)| k == 0 || k == all));
        // Everyone kept is at least as slow as everyone dropped.
        let times = stats::worker_times(&recs);
        let kept_w: BTreeSet<&str> = kept.iter().map(|r| r.worker.as_str()).collect();
        let slowest_dropped = times.iter().filter(|(w, _)| !kept_w.contains(*w)).map(|(_, t)| *t).fold(f64::NEG_INFINITY, f64::max);
        let fastest_kept = times.iter().filter(|(w, _)| kept_w.contains(*w)).map(|(_, t)| *t).fold(f64::INFINITY, f64::min);
        prop_assert!(slowest_dropped < fastest_kept);
        prop_assert!(!kept.is_empty());
    }

    #[test]
    fn zero_percent_is_identity(recs in records()) {
        prop_assert_eq!(stats::truncate_by_time(&recs, 0.0).unwrap(), recs);
    }

    #[test]
    fn aggregate_ignores_order_and_duplication(recs in records(), seed in any::<u64>(), p in 0.0f64..40.0) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let base = stats::aggregate(&stats::truncate_by_time(&recs, p).unwrap()).unwrap();

        let mut shuffled = recs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let perm = stats::aggregate(&stats::truncate_by_time(&shuffled, p).unwrap()).unwrap();
        prop_assert!(same_report(&base, &perm));

        // Doubling every record doubles every worker time, so the same workers survive.
        let doubled: Vec<ResponseRecord> = recs.iter().chain(recs.iter()).cloned().collect();
        let dup = stats::aggregate(&stats::truncate_by_time(&doubled, p).unwrap()).unwrap();
        prop_assert!(same_report(&base, &dup));
        prop_assert_eq!(dup.retained, 2 * base.retained);
        prop_assert_eq!(dup.workers, base.workers);
    }

    #[test]
    fn welch_is_antisymmetric(a in prop::collection::vec(-10.0f64..10.0, 2..12), b in prop::collection::vec(-10.0f64..10.0, 2..12)) {
        let (Ok(ab), Ok(ba)) = (stats::one_tailed_t_test(&a, &b), stats::one_tailed_t_test(&b, &a)) else {
            return Ok(());
        };
        prop_assert!((ab.t + ba.t).abs() < 1e-12);
        prop_assert!((ab.df - ba.df).abs() < 1e-9);
        prop_assert!((ab.p_value + ba.p_value - 1.0).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn sweep_retained_counts_never_grow(recs in records()) {
        let rows = stats::truncation_sweep(&recs, &stats::default_sweep(), Rescale::Linear, &[]).unwrap();
        prop_assert_eq!(rows.len(), 9);
        prop_assert!(rows.windows(2).all(|w| w[1].report.retained <= w[0].report.retained));
        prop_assert_eq!(rows[0].report.retained, recs.len());
    }
}

#[test]
fn out_of_range_inputs_are_rejected() {
    assert!(stats::rescale(0).is_err());
    assert!(stats::rescale(5).is_err());
    assert!(stats::percentile_threshold(&[], 101.0).is_err());
    assert!(stats::aggregate(&[]).is_err());
    assert!(stats::one_tailed_t_test(&[1.0], &[1.0, 2.0]).is_err());
    assert!(stats::one_tailed_t_test(&[1.0, 1.0], &[2.0, 2.0]).is_err());
}
