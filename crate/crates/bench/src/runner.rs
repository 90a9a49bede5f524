use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use pathcas::checker::{keysum_check, structural_validate};
use pathcas::{Avl, Bst, Domain, Mode, PathCasStats, SearchTree, TreeOptions};

use crate::config::{domain_config, ConfigError, DsKind, ExperimentConfig};
use crate::report::{ExperimentReport, OpCounts, Structure, TrialReport};

/// Height bound of an AVL tree with `n` keys.
pub fn avl_height_bound(n: u64) -> f64 {
    1.4405 * ((n + 2) as f64).log2()
}

pub fn make_tree(cfg: &ExperimentConfig) -> Arc<dyn SearchTree> {
    let opts = if cfg.no_opt {
        TreeOptions::unoptimized()
    } else {
        TreeOptions::default()
    };
    match cfg.ds {
        DsKind::Bst => Arc::new(Bst::with_options(opts)),
        DsKind::Avl => Arc::new(Avl::with_options(opts)),
    }
}

/// Inserts distinct uniform keys from `[0, keyrange)` until half the range
/// (rounded up) is present. Returns the sum of the inserted keys.
pub fn prefill(tree: &dyn SearchTree, domain: &Arc<Domain>, keyrange: i64, seed: u64) -> i128 {
    let mut ctx = domain.register();
    let mut rng = SmallRng::seed_from_u64(seed ^ 0x5eed_f111);
    let target = (keyrange as u64).div_ceil(2);
    let (mut n, mut sum) = (0, 0i128);
    while n < target {
        let k = rng.gen_range(0..keyrange);
        if tree.insert(&mut ctx, k, k as u64) {
            n += 1;
            sum += k as i128;
        }
    }
    sum
}

#[derive(Default)]
struct WorkerResult {
    counts: OpCounts,
    keysum_delta: i128,
    stats: PathCasStats,
}

fn pin_to_core(i: usize) {
    // SAFETY: plain libc calls on a zeroed cpu_set_t owned by this frame.
    unsafe {
        let n = libc::sysconf(libc::_SC_NPROCESSORS_ONLN).max(1) as usize;
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(i % n, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set);
    }
}

fn worker(
    tree: &dyn SearchTree,
    domain: &Arc<Domain>,
    cfg: &ExperimentConfig,
    seed: u64,
    start: &Barrier,
    stop: &AtomicBool,
) -> WorkerResult {
    let mut ctx = domain.register();
    let mut rng = SmallRng::seed_from_u64(seed);
    let mut r = WorkerResult::default();
    let budget = cfg.ops.unwrap_or(u64::MAX);
    start.wait();
    let mut done = 0;
    while done < budget && !(cfg.ops.is_none() && stop.load(Ordering::Relaxed)) {
        let k = rng.gen_range(0..cfg.keyrange);
        let roll = rng.gen_range(0.0..100.0);
        if roll < cfg.ins {
            r.counts.inserts += 1;
            if tree.insert(&mut ctx, k, done) {
                r.counts.inserts_ok += 1;
                r.keysum_delta += k as i128;
            }
        } else if roll < cfg.ins + cfg.del {
            r.counts.deletes += 1;
            if tree.delete(&mut ctx, k) {
                r.counts.deletes_ok += 1;
                r.keysum_delta -= k as i128;
            }
        } else {
            r.counts.contains += 1;
            if tree.contains(&mut ctx, k) {
                r.counts.contains_ok += 1;
            }
        }
        done += 1;
    }
    r.stats = ctx.stats();
    r
}

/// Runs one trial on a fresh tree: prefill, timed workload, validation.
pub fn run_trial(cfg: &ExperimentConfig, trial: u32) -> Result<TrialReport, ConfigError> {
    let domain = Domain::with_config(domain_config()?);
    let tree = make_tree(cfg);
    let seed = cfg.seed.wrapping_add(trial as u64);
    let prefill_sum = prefill(&*tree, &domain, cfg.keyrange, seed);

    let start = Barrier::new(cfg.threads + 1);
    let stop = AtomicBool::new(false);
    let (results, elapsed) = thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.threads)
            .map(|t| {
                let (tree, domain, start, stop) = (&*tree, &domain, &start, &stop);
                let wseed = seed
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add(t as u64 + 1);
                s.spawn(move || {
                    if cfg.pin {
                        pin_to_core(t);
                    }
                    worker(tree, domain, cfg, wseed, start, stop)
                })
            })
            .collect();
        if cfg.ops.is_none() && cfg.millis == 0 {
            stop.store(true, Ordering::Relaxed);
        }
        start.wait();
        let t0 = Instant::now();
        if cfg.ops.is_none() {
            thread::sleep(Duration::from_millis(cfg.millis));
            stop.store(true, Ordering::Relaxed);
        }
        let results: Vec<WorkerResult> = handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect();
        (results, t0.elapsed())
    });

    let reclaim_pending_at_exit = domain.reclaim_stats().pending();
    let mut counts = OpCounts::default();
    let mut stats = PathCasStats::default();
    let mut deltas = vec![prefill_sum];
    for r in &results {
        counts.merge(&r.counts);
        stats.merge(&r.stats);
        deltas.push(r.keysum_delta);
    }
    let mode = match cfg.ds {
        DsKind::Bst => Mode::Bst,
        DsKind::Avl => Mode::Avl,
    };
    let keysum_ok = keysum_check(&*tree, &deltas);
    let rep = structural_validate(&*tree, mode);
    let height_ok = mode == Mode::Bst || rep.max_depth as f64 <= avl_height_bound(rep.count);
    let mut breaches = rep.breaches.clone();
    if !keysum_ok {
        breaches.push("keysum mismatch".into());
    }
    if !height_ok {
        breaches.push(format!(
            "height {} exceeds AVL bound for {} keys",
            rep.max_depth, rep.count
        ));
    }
    let secs = elapsed.as_secs_f64();
    let total = counts.total();
    Ok(TrialReport {
        trial,
        elapsed_secs: secs,
        throughput: if secs > 0.0 { total as f64 / secs } else { 0.0 },
        counts,
        valid: breaches.is_empty(),
        breaches,
        structure: Structure {
            keys: rep.count,
            max_depth: rep.max_depth,
            avg_key_depth: rep.avg_key_depth,
            violations: rep.violations,
        },
        stats: stats.into(),
        reclaim_pending_at_exit,
        reclaim_pending: {
            drop(tree);
            domain.flush_quiescent()
        },
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, ConfigError> {
    cfg.validate()?;
    let trials = (0..cfg.trials)
        .map(|t| run_trial(cfg, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExperimentReport::new(cfg.clone(), trials))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    fn cfg(args: &[&str]) -> ExperimentConfig {
        ExperimentConfig::parse_from(std::iter::once("bench").chain(args.iter().copied()))
    }

    #[test]
    fn prefill_fills_half_the_range() {
        for (k, want) in [(8, 4), (9, 5), (1000, 500)] {
            let d = Domain::new();
            let t = make_tree(&cfg(&[]));
            prefill(&*t, &d, k, 3);
            assert_eq!(t.keys_quiescent().len(), want);
        }
    }

    #[test]
    fn prefill_is_reproducible() {
        let d = Domain::new();
        let (a, b, c) = (
            make_tree(&cfg(&[])),
            make_tree(&cfg(&["--ds", "avl"])),
            make_tree(&cfg(&[])),
        );
        prefill(&*a, &d, 500, 42);
        prefill(&*b, &d, 500, 42);
        prefill(&*c, &d, 500, 43);
        assert_eq!(a.keys_quiescent(), b.keys_quiescent());
        assert_ne!(a.keys_quiescent(), c.keys_quiescent());
    }

    #[test]
    fn large_prefill_is_clean() {
        let d = Domain::new();
        let t = make_tree(&cfg(&["--ds", "avl"]));
        prefill(&*t, &d, 200_000, 1);
        let r = structural_validate(&*t, Mode::Avl);
        assert!(r.is_clean());
        assert_eq!(r.count, 100_000);
        assert!((r.max_depth as f64) <= avl_height_bound(r.count));
    }

    #[test]
    fn zero_duration_run() {
        let r = run_experiment(&cfg(&["--millis", "0", "--keyrange", "64"])).unwrap();
        assert!(r.ok);
        assert_eq!(r.trials[0].counts.total(), 0);
    }

    #[test]
    fn zero_op_budget() {
        let r = run_experiment(&cfg(&["--ops", "0", "--threads", "2"])).unwrap();
        assert!(r.ok);
        assert_eq!(r.trials[0].counts.total(), 0);
        assert_eq!(r.trials[0].structure.keys, 1 << 15);
    }

    #[test]
    fn single_thread_op_budget_is_deterministic() {
        let c = cfg(&[
            "--ops",
            "20000",
            "--keyrange",
            "512",
            "--ins",
            "30",
            "--del",
            "30",
            "--ds",
            "avl",
        ]);
        let (a, b) = (run_experiment(&c).unwrap(), run_experiment(&c).unwrap());
        assert_eq!(a.trials[0].counts, b.trials[0].counts);
        assert_eq!(a.trials[0].structure.keys, b.trials[0].structure.keys);
        assert_eq!(a.trials[0].counts.total(), 20_000);
        assert!(a.ok);
    }

    #[test]
    fn multi_thread_trials_validate() {
        for ds in ["bst", "avl"] {
            let c = cfg(&[
                "--ds",
                ds,
                "--threads",
                "3",
                "--millis",
                "100",
                "--keyrange",
                "256",
                "--ins",
                "50",
                "--del",
                "50",
                "--trials",
                "2",
            ]);
            let r = run_experiment(&c).unwrap();
            assert!(
                r.ok,
                "{:?}",
                r.trials.iter().map(|t| &t.breaches).collect::<Vec<_>>()
            );
            assert_eq!(r.trials.len(), 2);
            assert!(r.trials.iter().all(|t| t.reclaim_pending == 0));
        }
    }
}
