use pathcas::checker::linearizability_check_from;
use pathcas::scenarios::{
    self, Ds, HistoryConfig, CROSS_LOCK_WINDOW, DCSS_PROGRAM, DCSS_PROGRAM_FLIP,
};
use pathcas::sched::Strategy;
use pathcas::TreeOptions;

#[test]
fn dcss_every_schedule_is_atomic() {
    let r = scenarios::dcss_model_check(DCSS_PROGRAM, usize::MAX);
    assert!(
        r.mismatches.is_empty(),
        "{:#?}",
        &r.mismatches[..r.mismatches.len().min(5)]
    );
    assert!(r.schedules > 100, "only {} schedules", r.schedules);
}

#[test]
fn dcss_with_control_flip_is_atomic() {
    let r = scenarios::dcss_model_check(DCSS_PROGRAM_FLIP, 200_000);
    assert!(
        r.mismatches.is_empty(),
        "{:#?}",
        &r.mismatches[..r.mismatches.len().min(5)]
    );
}

#[test]
fn validated_contains_sees_moved_key() {
    assert!(scenarios::moved_key_contains(true));
}

#[test]
fn unvalidated_contains_misses_moved_key() {
    assert!(!scenarios::moved_key_contains(false));
}

#[test]
fn delete_of_moved_key_is_not_lost() {
    assert_eq!(scenarios::moved_key_delete(), (true, vec![20, 60]));
}

#[test]
fn cross_lock_makes_progress() {
    let r = scenarios::cross_lock(500, Strategy::RoundRobin);
    assert!(!r.aborted);
    assert_eq!(r.successes, [500, 500]);
    assert!(r.max_failure_window <= CROSS_LOCK_WINDOW, "{r:?}");
    assert!(r.slow_path_entries >= 1, "{r:?}");
}

#[test]
fn cross_lock_random_schedules() {
    for seed in 0..4 {
        let r = scenarios::cross_lock(200, Strategy::Random(seed));
        assert_eq!(r.successes, [200, 200]);
        assert!(r.max_failure_window <= CROSS_LOCK_WINDOW, "{r:?}");
    }
}

fn histories(ds: Ds, opts: TreeOptions, n: u64) {
    for seed in 0..n {
        let cfg = HistoryConfig {
            ds,
            opts,
            threads: 3,
            ops_per_thread: 4,
            keyrange: 8,
            seed,
            preempt_percent: if seed % 2 == 0 { None } else { Some(10) },
        };
        let (init, h) = scenarios::scheduled_history(&cfg);
        assert_eq!(
            linearizability_check_from(&h, &init),
            Ok(true),
            "seed {seed}:\n{}",
            pathcas::checker::dump_history(&h)
        );
    }
}

#[test]
fn bst_histories_linearizable() {
    histories(Ds::Bst, TreeOptions::default(), 300);
    histories(Ds::Bst, TreeOptions::unoptimized(), 100);
}

#[test]
fn avl_histories_linearizable() {
    histories(Ds::Avl, TreeOptions::default(), 200);
}
