//! Deterministic scheduling for tests.
//!
//! Every shared-memory step in this crate calls [`yield_point`]. In normal
//! builds that is an empty inline function. With the `sched` feature, threads
//! started through [`run`] pass a single baton: exactly one of them runs at a
//! time and at each yield point the [`Strategy`] picks who runs next. Threads
//! not started through [`run`] are unaffected.

#[cfg(not(feature = "sched"))]
#[inline(always)]
pub fn yield_point() {}

#[cfg(not(feature = "sched"))]
#[inline(always)]
pub fn is_scheduled() -> bool {
    false
}

#[cfg(feature = "sched")]
pub use imp::*;

#[cfg(feature = "sched")]
mod imp {
    use std::cell::RefCell;
    use std::panic::{self, AssertUnwindSafe};
    use std::sync::{Arc, Condvar, Mutex, MutexGuard};
    use std::thread;

    use rand::rngs::SmallRng;
    use rand::{Rng, SeedableRng};

    pub type Job = Box<dyn FnOnce() + Send>;

    const ABORT_MSG: &str = "schedule step budget exhausted";

    #[derive(Clone, Debug)]
    pub enum Strategy {
        /// Switch to the next live thread at every step.
        RoundRobin,
        /// Uniformly random choice at every step.
        Random(u64),
        /// Follow the given choice indices, then always pick the first option.
        Replay(Vec<usize>),
        /// Keep the running thread, switching to a uniformly chosen other
        /// one with probability `percent`%. Far fewer context switches than
        /// `Random` for long runs.
        Preempt { seed: u64, percent: u32 },
    }

    /// One scheduling decision: index picked among `options` runnable threads
    /// (ordered by thread id).
    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub struct Choice {
        pub picked: usize,
        pub options: usize,
    }

    #[derive(Debug, Default)]
    pub struct Outcome {
        pub trace: Vec<Choice>,
        pub steps: u64,
        /// The step budget ran out; every thread was unwound.
        pub aborted: bool,
    }

    struct State {
        current: Option<usize>,
        alive: Vec<bool>,
        steps: u64,
        max_steps: u64,
        aborted: bool,
        strategy: Strategy,
        rng: SmallRng,
        trace: Vec<Choice>,
    }

    impl State {
        fn pick(&mut self, from: Option<usize>) -> Option<usize> {
            let live: Vec<usize> = (0..self.alive.len()).filter(|&i| self.alive[i]).collect();
            if live.is_empty() {
                return None;
            }
            let n = live.len();
            let idx = match &self.strategy {
                Strategy::RoundRobin => match from {
                    Some(f) => live.iter().position(|&i| i > f).unwrap_or(0),
                    None => 0,
                },
                Strategy::Random(_) => self.rng.gen_range(0..n),
                Strategy::Preempt { percent, .. } => {
                    let cur = from.and_then(|f| live.iter().position(|&i| i == f));
                    match cur {
                        Some(c) if n == 1 || self.rng.gen_range(0..100) >= *percent => c,
                        Some(c) => (c + 1 + self.rng.gen_range(0..n - 1)) % n,
                        None => self.rng.gen_range(0..n),
                    }
                }
                Strategy::Replay(prefix) => match prefix.get(self.trace.len()) {
                    Some(&p) => {
                        assert!(p < n, "replayed choice {p} out of {n} options");
                        p
                    }
                    None => 0,
                },
            };
            self.trace.push(Choice {
                picked: idx,
                options: n,
            });
            Some(live[idx])
        }
    }

    struct Shared {
        state: Mutex<State>,
        cv: Condvar,
    }

    impl Shared {
        fn lock(&self) -> MutexGuard<'_, State> {
            self.state.lock().unwrap_or_else(|e| e.into_inner())
        }

        fn wait_turn(&self, id: usize, mut st: MutexGuard<'_, State>) {
            while st.current != Some(id) {
                st = self.cv.wait(st).unwrap_or_else(|e| e.into_inner());
            }
        }

        fn switch(&self, id: usize) {
            let mut st = self.lock();
            st.steps += 1;
            if st.steps > st.max_steps {
                st.aborted = true;
            }
            if st.aborted {
                drop(st);
                panic!("{ABORT_MSG}");
            }
            st.current = st.pick(Some(id));
            self.cv.notify_all();
            self.wait_turn(id, st);
        }

        fn finish(&self, id: usize) {
            let mut st = self.lock();
            st.alive[id] = false;
            st.current = st.pick(Some(id));
            self.cv.notify_all();
        }
    }

    thread_local! {
        static CURRENT: RefCell<Option<(Arc<Shared>, usize)>> = const { RefCell::new(None) };
    }

    /// Hands the baton to whichever thread the strategy picks.
    pub fn yield_point() {
        if thread::panicking() {
            return;
        }
        let cur = CURRENT.with(|c| c.borrow().clone());
        if let Some((shared, id)) = cur {
            shared.switch(id);
        }
    }

    pub fn is_scheduled() -> bool {
        CURRENT.with(|c| c.borrow().is_some())
    }

    /// Runs `jobs` to completion under `strategy`. Panics from jobs (other
    /// than budget exhaustion) are propagated after all threads finish.
    pub fn run(strategy: Strategy, max_steps: u64, jobs: Vec<Job>) -> Outcome {
        let seed = match strategy {
            Strategy::Random(s) | Strategy::Preempt { seed: s, .. } => s,
            _ => 0,
        };
        let shared = Arc::new(Shared {
            state: Mutex::new(State {
                current: None,
                alive: vec![true; jobs.len()],
                steps: 0,
                max_steps,
                aborted: false,
                strategy,
                rng: SmallRng::seed_from_u64(seed),
                trace: Vec::new(),
            }),
            cv: Condvar::new(),
        });
        let handles: Vec<_> = jobs
            .into_iter()
            .enumerate()
            .map(|(id, job)| {
                let shared = Arc::clone(&shared);
                thread::spawn(move || {
                    CURRENT.with(|c| *c.borrow_mut() = Some((Arc::clone(&shared), id)));
                    shared.wait_turn(id, shared.lock());
                    let r = panic::catch_unwind(AssertUnwindSafe(job));
                    CURRENT.with(|c| *c.borrow_mut() = None);
                    shared.finish(id);
                    r
                })
            })
            .collect();
        {
            let mut st = shared.lock();
            st.current = st.pick(None);
            shared.cv.notify_all();
        }
        let mut failure = None;
        for h in handles {
            if let Err(e) | Ok(Err(e)) = h.join() {
                let is_abort = e.downcast_ref::<String>().is_some_and(|s| s == ABORT_MSG);
                if !is_abort && failure.is_none() {
                    failure = Some(e);
                }
            }
        }
        if let Some(e) = failure {
            panic::resume_unwind(e);
        }
        let st = shared.lock();
        Outcome {
            trace: st.trace.clone(),
            steps: st.steps,
            aborted: st.aborted,
        }
    }

    /// Depth-first enumeration of every schedule of the jobs built by
    /// `setup`. `check` sees each outcome after its jobs finish. Returns the
    /// number of schedules explored; stops early at `limit`.
    pub fn explore(
        mut setup: impl FnMut() -> Vec<Job>,
        mut check: impl FnMut(&Outcome),
        max_steps: u64,
        limit: usize,
    ) -> usize {
        let mut prefix = Vec::new();
        let mut count = 0;
        loop {
            let out = run(Strategy::Replay(prefix), max_steps, setup());
            check(&out);
            count += 1;
            if count >= limit {
                return count;
            }
            match out.trace.iter().rposition(|c| c.picked + 1 < c.options) {
                Some(i) => {
                    prefix = out.trace[..i].iter().map(|c| c.picked).collect();
                    prefix.push(out.trace[i].picked + 1);
                }
                None => return count,
            }
        }
    }

    #[cfg(test)]
    mod tests {
        use super::*;
        use std::sync::atomic::{AtomicU64, Ordering};

        fn counter_jobs(log: &Arc<Mutex<Vec<usize>>>, per: usize) -> Vec<Job> {
            (0..2)
                .map(|id| {
                    let log = Arc::clone(log);
                    Box::new(move || {
                        for _ in 0..per {
                            yield_point();
                            log.lock().unwrap().push(id);
                        }
                    }) as Job
                })
                .collect()
        }

        #[test]
        fn round_robin_alternates() {
            let log = Arc::new(Mutex::new(Vec::new()));
            run(Strategy::RoundRobin, 1000, counter_jobs(&log, 3));
            assert_eq!(*log.lock().unwrap(), vec![0, 1, 0, 1, 0, 1]);
        }

        #[test]
        fn dfs_enumerates_all_interleavings() {
            // Two threads with two steps each: C(4,2) = 6 orders of the pushes.
            let seen = Arc::new(Mutex::new(std::collections::BTreeSet::new()));
            let log = Arc::new(Mutex::new(Vec::new()));
            let n = explore(
                || {
                    log.lock().unwrap().clear();
                    counter_jobs(&log, 2)
                },
                |_| {
                    seen.lock().unwrap().insert(log.lock().unwrap().clone());
                },
                1000,
                usize::MAX,
            );
            assert_eq!(seen.lock().unwrap().len(), 6);
            assert!(n >= 6);
        }

        #[test]
        fn budget_aborts_spinning_threads() {
            let flag = Arc::new(AtomicU64::new(0));
            let jobs: Vec<Job> = (0..2)
                .map(|_| {
                    let flag = Arc::clone(&flag);
                    Box::new(move || loop {
                        yield_point();
                        if flag.load(Ordering::SeqCst) == 1 {
                            break;
                        }
                    }) as Job
                })
                .collect();
            let out = run(Strategy::Random(7), 50, jobs);
            assert!(out.aborted);
        }

        #[test]
        fn preempt_zero_never_switches() {
            let log = Arc::new(Mutex::new(Vec::new()));
            run(
                Strategy::Preempt {
                    seed: 1,
                    percent: 0,
                },
                1000,
                counter_jobs(&log, 3),
            );
            let l = log.lock().unwrap().clone();
            assert!(l == [0, 0, 0, 1, 1, 1] || l == [1, 1, 1, 0, 0, 0], "{l:?}");
        }

        #[test]
        fn unscheduled_threads_ignore_yield_points() {
            assert!(!is_scheduled());
            yield_point();
        }
    }
}
