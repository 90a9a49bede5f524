//! Scripted concurrent scenarios driven by the deterministic scheduler.
//! Shared by the integration tests and the acceptance suite; `sched` builds
//! only.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use crate::checker::{Clock, HistoryEvent, OpKind, SearchTree};
use crate::sched::{self, Job, Outcome, Strategy};
use crate::{Avl, Bst, CasWord, Domain, ThreadContext, TreeOptions, RETRY_LIMIT};

// ---------------------------------------------------------------------------
// DCSS model check

/// `(addr1, exp1, new1, addr2, exp2)` over cell indices.
pub type DcssOp = (usize, u64, u64, usize, u64);

#[derive(Clone, Copy, Debug)]
pub enum Step {
    Dcss(DcssOp),
    /// Plain write, used to flip a control cell.
    Store(usize, u64),
}

/// Two threads with two operations each over three cells starting at zero.
/// Cell 2 is the control cell; as in PathCAS, it is never a DCSS target.
/// Both threads race on cell 0 and cell 1; the last operation can only
/// succeed when ordered after the other thread's write to cell 0.
pub const DCSS_PROGRAM: &[&[Step]] = &[
    &[Step::Dcss((0, 0, 1, 2, 0)), Step::Dcss((1, 0, 1, 2, 0))],
    &[Step::Dcss((1, 0, 2, 2, 0)), Step::Dcss((0, 1, 2, 2, 0))],
];

/// As [`DCSS_PROGRAM`] with a third thread flipping the control cell, so that
/// the control check can fail between install and completion.
pub const DCSS_PROGRAM_FLIP: &[&[Step]] = &[
    &[Step::Dcss((0, 0, 1, 2, 0)), Step::Dcss((1, 0, 1, 2, 1))],
    &[Step::Dcss((1, 0, 2, 2, 0)), Step::Dcss((0, 1, 2, 2, 1))],
    &[Step::Store(2, 1)],
];

/// Results of each thread's DCSS steps, then the final cells.
pub type DcssOutcome = (Vec<Vec<u64>>, [u64; 3]);

fn apply_atomic(cells: &mut [u64; 3], step: Step) -> Option<u64> {
    match step {
        Step::Dcss((a1, e1, n1, a2, e2)) => {
            let seen = cells[a1];
            if seen == e1 && cells[a2] == e2 {
                cells[a1] = n1;
            }
            Some(seen)
        }
        Step::Store(a, v) => {
            cells[a] = v;
            None
        }
    }
}

/// Every outcome allowed by some sequential order of the program that
/// respects per-thread order.
pub fn dcss_allowed_outcomes(prog: &[&[Step]]) -> BTreeSet<DcssOutcome> {
    fn go(
        prog: &[&[Step]],
        next: &mut Vec<usize>,
        cells: [u64; 3],
        res: &mut Vec<Vec<u64>>,
        out: &mut BTreeSet<DcssOutcome>,
    ) {
        let mut any = false;
        for t in 0..prog.len() {
            if next[t] == prog[t].len() {
                continue;
            }
            any = true;
            let mut c = cells;
            let r = apply_atomic(&mut c, prog[t][next[t]]);
            next[t] += 1;
            if let Some(r) = r {
                res[t].push(r);
            }
            go(prog, next, c, res, out);
            if r.is_some() {
                res[t].pop();
            }
            next[t] -= 1;
        }
        if !any {
            out.insert((res.clone(), cells));
        }
    }
    let mut out = BTreeSet::new();
    go(
        prog,
        &mut vec![0; prog.len()],
        [0; 3],
        &mut vec![Vec::new(); prog.len()],
        &mut out,
    );
    out
}

#[derive(Debug)]
pub struct DcssModelReport {
    pub schedules: usize,
    pub mismatches: Vec<String>,
}

/// Runs the program under every schedule (up to `limit`) and compares each
/// outcome with the allowed sequential outcomes.
pub fn dcss_model_check(prog: &'static [&'static [Step]], limit: usize) -> DcssModelReport {
    let allowed = dcss_allowed_outcomes(prog);
    let domain = Domain::new();
    let cells: Arc<[CasWord; 3]> = Arc::new([CasWord::new(0), CasWord::new(0), CasWord::new(0)]);
    let results = Arc::new(Mutex::new(vec![Vec::new(); prog.len()]));
    let mut mismatches = Vec::new();
    let schedules = sched::explore(
        || {
            for c in cells.iter() {
                c.store_quiescent(0);
            }
            results.lock().unwrap().iter_mut().for_each(Vec::clear);
            (0..prog.len())
                .map(|t| {
                    let (domain, cells, results) = (
                        Arc::clone(&domain),
                        Arc::clone(&cells),
                        Arc::clone(&results),
                    );
                    Box::new(move || {
                        let ctx = domain.register();
                        for &step in prog[t] {
                            match step {
                                Step::Dcss((a1, e1, n1, a2, e2)) => {
                                    let r = ctx.dcss(&cells[a1], e1, n1, &cells[a2], e2);
                                    results.lock().unwrap()[t].push(r);
                                }
                                Step::Store(a, v) => {
                                    sched::yield_point();
                                    cells[a].store_quiescent(v);
                                }
                            }
                        }
                    }) as Job
                })
                .collect()
        },
        |out: &Outcome| {
            let got = (
                results.lock().unwrap().clone(),
                [0, 1, 2].map(|i| cells[i].load_quiescent()),
            );
            if out.aborted || !allowed.contains(&got) {
                mismatches.push(format!("schedule {:?} produced {got:?}", out.trace));
            }
        },
        10_000,
        limit,
    );
    DcssModelReport {
        schedules,
        mismatches,
    }
}

// ---------------------------------------------------------------------------
// Cross-lock contention

struct Cell {
    ver: CasWord,
    val: CasWord,
}

#[derive(Clone, Debug, Default)]
pub struct CrossLockReport {
    /// Successful operations per thread.
    pub successes: [u64; 2],
    /// vexec calls that returned false.
    pub failures: u64,
    /// Largest number of vexec attempts (including internal retries)
    /// between two consecutive successes anywhere in the system.
    pub max_failure_window: u64,
    pub spurious_retries: u64,
    pub slow_path_entries: u64,
    pub aborted: bool,
}

/// Bound on [`CrossLockReport::max_failure_window`]: each thread can spend
/// at most `RETRY_LIMIT` retries plus one strong attempt before it succeeds,
/// and a plain failure is only reported after the other thread succeeded.
pub const CROSS_LOCK_WINDOW: u64 = 2 * (RETRY_LIMIT as u64 + 2);

/// Each thread visits the cell the other one modifies and then updates its
/// own cell with `vexec`, so both can lock their entries and abort each
/// other's validation. Each thread retries until it has `pairs` successes.
pub fn cross_lock(pairs: u64, strategy: Strategy) -> CrossLockReport {
    let domain = Domain::new();
    let cells = Arc::new([
        Cell {
            ver: CasWord::new(0),
            val: CasWord::new(0),
        },
        Cell {
            ver: CasWord::new(0),
            val: CasWord::new(0),
        },
    ]);
    // (ok, attempts) per vexec call, in global order.
    let log = Arc::new(Mutex::new(Vec::new()));
    let report = Arc::new(Mutex::new(CrossLockReport::default()));
    let jobs: Vec<Job> = (0..2)
        .map(|t| {
            let (domain, cells, log, report) = (
                Arc::clone(&domain),
                Arc::clone(&cells),
                Arc::clone(&log),
                Arc::clone(&report),
            );
            Box::new(move || {
                let mut ctx = domain.register();
                let (mine, theirs) = (&cells[t], &cells[1 - t]);
                let mut done = 0;
                while done < pairs {
                    let before = ctx.stats().spurious_retries;
                    ctx.start();
                    ctx.visit(&theirs.ver);
                    let v = ctx.visit(&mine.ver);
                    let x = ctx.read(&mine.val);
                    ctx.add(&mine.val, x, x + 1);
                    ctx.add(&mine.ver, v, v + 2);
                    let ok = ctx.vexec();
                    let attempts = 1 + ctx.stats().spurious_retries - before;
                    log.lock().unwrap().push((ok, attempts));
                    if ok {
                        done += 1;
                    }
                }
                let s = ctx.stats();
                let mut r = report.lock().unwrap();
                r.successes[t] = done;
                r.failures += s.vexec_calls - s.vexec_successes;
                r.spurious_retries += s.spurious_retries;
                r.slow_path_entries += s.slow_path_entries;
            }) as Job
        })
        .collect();
    let out = sched::run(strategy, u64::MAX, jobs);
    let mut r = report.lock().unwrap().clone();
    r.aborted = out.aborted;
    let mut window = 0;
    for &(ok, attempts) in log.lock().unwrap().iter() {
        window += attempts;
        if ok {
            r.max_failure_window = r.max_failure_window.max(window);
            window = 0;
        }
    }
    r.max_failure_window = r.max_failure_window.max(window);
    // Sanity: the counters are exactly the successes.
    for (t, c) in cells.iter().enumerate() {
        assert_eq!(c.val.load_quiescent(), r.successes[t]);
    }
    r
}

// ---------------------------------------------------------------------------
// Search/unlink anomaly

/// Builds the tree 40, 20, 60, 50 and runs `contains(50)`. When the search
/// has visited node 60 (fourth visit, after both sentinels and 40), another
/// thread runs `delete(40)`, which moves 50 into 40's node and unlinks the
/// old 50. Returns the answer of `contains(50)`; 50 is in the set throughout.
pub fn moved_key_contains(validate_absent: bool) -> bool {
    let opts = TreeOptions {
        unvalidated_contains: !validate_absent,
        ..TreeOptions::default()
    };
    let (found, keys) = with_moved_key(opts, |t, ctx| t.contains(ctx, 50));
    assert_eq!(keys, vec![20, 50, 60]);
    found
}

/// As [`moved_key_contains`] but the interrupted operation is `delete(50)`, with
/// the validation-reducing optimizations on. Returns its answer; the final
/// key set is `[20, 60]` exactly when it is true.
pub fn moved_key_delete() -> (bool, Vec<i64>) {
    with_moved_key(TreeOptions::default(), |t, ctx| t.delete(ctx, 50))
}

fn with_moved_key<R>(
    opts: TreeOptions,
    op: impl FnOnce(&Bst, &mut ThreadContext) -> R,
) -> (R, Vec<i64>) {
    let domain = Domain::new();
    let tree = Arc::new(Bst::with_options(opts));
    let mut ctx = domain.register();
    for k in [40, 20, 60, 50] {
        assert!(tree.insert(&mut ctx, k, k as u64));
    }
    let fired = Arc::new(AtomicBool::new(false));
    {
        let (domain, tree, fired) = (Arc::clone(&domain), Arc::clone(&tree), Arc::clone(&fired));
        ctx.set_visit_hook(move |idx, _| {
            if idx == 4 && !fired.swap(true, Ordering::SeqCst) {
                let mut other = domain.register();
                assert!(tree.delete(&mut other, 40));
            }
        });
    }
    let r = op(&tree, &mut ctx);
    ctx.clear_visit_hook();
    assert!(fired.load(Ordering::SeqCst), "interference never ran");
    (r, tree.keys_quiescent())
}

// ---------------------------------------------------------------------------
// Recorded histories

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ds {
    Bst,
    Avl,
}

#[derive(Clone, Debug)]
pub struct HistoryConfig {
    pub ds: Ds,
    pub opts: TreeOptions,
    pub threads: usize,
    pub ops_per_thread: usize,
    pub keyrange: i64,
    pub seed: u64,
    /// Switch probability for [`Strategy::Preempt`]; `None` switches
    /// uniformly at random at every step.
    pub preempt_percent: Option<u32>,
}

/// Prefills a tree from `seed`, then runs a random schedule of random
/// operations and returns the initial key set and the recorded history.
pub fn scheduled_history(cfg: &HistoryConfig) -> (BTreeSet<i64>, Vec<HistoryEvent>) {
    let domain = Domain::new();
    let tree: Arc<dyn SearchTree> = match cfg.ds {
        Ds::Bst => Arc::new(Bst::with_options(cfg.opts)),
        Ds::Avl => Arc::new(Avl::with_options(cfg.opts)),
    };
    let mut rng = SmallRng::seed_from_u64(cfg.seed);
    let mut initial = BTreeSet::new();
    {
        let mut ctx = domain.register();
        for k in 0..cfg.keyrange {
            if rng.gen_bool(0.5) {
                tree.insert(&mut ctx, k, 0);
                initial.insert(k);
            }
        }
    }
    let clock = Arc::new(Clock::new());
    let events = Arc::new(Mutex::new(Vec::new()));
    let jobs: Vec<Job> = (0..cfg.threads)
        .map(|t| {
            let (domain, tree, clock, events) = (
                Arc::clone(&domain),
                Arc::clone(&tree),
                Arc::clone(&clock),
                Arc::clone(&events),
            );
            let mut rng = SmallRng::seed_from_u64(rng.gen());
            let (n, range) = (cfg.ops_per_thread, cfg.keyrange);
            Box::new(move || {
                let mut ctx: ThreadContext = domain.register();
                let mut mine = Vec::with_capacity(n);
                for _ in 0..n {
                    let op =
                        [OpKind::Contains, OpKind::Insert, OpKind::Delete][rng.gen_range(0..3)];
                    let key = rng.gen_range(0..range);
                    mine.push(clock.record(&*tree, &mut ctx, t, op, key));
                }
                events.lock().unwrap().extend(mine);
            }) as Job
        })
        .collect();
    let strategy = match cfg.preempt_percent {
        Some(percent) => Strategy::Preempt {
            seed: cfg.seed,
            percent,
        },
        None => Strategy::Random(cfg.seed),
    };
    let out = sched::run(strategy, u64::MAX, jobs);
    assert!(!out.aborted);
    let mut h = std::mem::take(&mut *events.lock().unwrap());
    h.sort_by_key(|e| e.invoke);
    (initial, h)
}
