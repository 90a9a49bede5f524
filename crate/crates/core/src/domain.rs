//! The shared state behind a set of cooperating threads: descriptor slots
//! (one DCSS and one PathCAS descriptor per registered thread), the epoch
//! clock used for reclamation, and aggregate statistics.

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use crate::atomicword::{DcssSlot, MAX_THREADS};
use crate::pathcas::{PathCasSlot, PathCasStats, ThreadContext, MAX_ENTRIES, MAX_PATH};
use crate::reclaim::{EpochGlobal, EpochRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DomainConfig {
    /// Registration limit; at most [`MAX_THREADS`].
    pub max_threads: usize,
    /// Capacity of the visited-node path of every descriptor.
    pub max_path: usize,
}

impl Default for DomainConfig {
    fn default() -> Self {
        DomainConfig {
            max_threads: MAX_THREADS,
            max_path: MAX_PATH,
        }
    }
}

pub(crate) struct Slot {
    in_use: AtomicBool,
    pub(crate) dcss: DcssSlot,
    pub(crate) pathcas: PathCasSlot,
    pub(crate) epoch: EpochRecord,
}

#[derive(Default)]
struct StatTotals {
    vexec_calls: AtomicU64,
    vexec_successes: AtomicU64,
    exec_calls: AtomicU64,
    exec_successes: AtomicU64,
    validate_calls: AtomicU64,
    validation_failures: AtomicU64,
    helps: AtomicU64,
    spurious_retries: AtomicU64,
    slow_path_entries: AtomicU64,
}

pub struct Domain {
    config: DomainConfig,
    slots: Box<[OnceLock<Box<Slot>>]>,
    high_water: AtomicUsize,
    totals: StatTotals,
    pub(crate) epoch: EpochGlobal,
}

impl Domain {
    pub fn new() -> Arc<Domain> {
        Self::with_config(DomainConfig::default())
    }

    pub fn with_config(config: DomainConfig) -> Arc<Domain> {
        assert!(
            (1..=MAX_THREADS).contains(&config.max_threads),
            "max_threads must be in 1..={MAX_THREADS}"
        );
        assert!(config.max_path > 0, "max_path must be positive");
        Arc::new(Domain {
            config,
            slots: (0..config.max_threads).map(|_| OnceLock::new()).collect(),
            high_water: AtomicUsize::new(0),
            totals: StatTotals::default(),
            epoch: EpochGlobal::new(),
        })
    }

    pub fn config(&self) -> DomainConfig {
        self.config
    }

    /// Claims a free thread slot. Panics when every slot is taken.
    pub fn register(self: &Arc<Self>) -> ThreadContext {
        for tid in 0..self.config.max_threads {
            let slot = self.slots[tid].get_or_init(|| {
                Box::new(Slot {
                    in_use: AtomicBool::new(false),
                    dcss: DcssSlot::default(),
                    pathcas: PathCasSlot::new(
                        MAX_ENTRIES + self.config.max_path,
                        self.config.max_path,
                    ),
                    epoch: EpochRecord::default(),
                })
            });
            if slot
                .in_use
                .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
                .is_ok()
            {
                self.high_water.fetch_max(tid + 1, Ordering::SeqCst);
                return ThreadContext::new(Arc::clone(self), tid);
            }
        }
        panic!(
            "all {} thread slots of this domain are registered",
            self.config.max_threads
        );
    }

    #[inline]
    pub(crate) fn slot(&self, tid: usize) -> &Slot {
        self.slots[tid]
            .get()
            .expect("handle refers to an unregistered slot")
    }

    pub(crate) fn release(&self, tid: usize) {
        self.slot(tid).in_use.store(false, Ordering::SeqCst);
    }

    /// Slots that have ever been registered (live or not).
    pub(crate) fn registered_slots(&self) -> impl Iterator<Item = &Slot> {
        let n = self.high_water.load(Ordering::SeqCst);
        self.slots[..n].iter().filter_map(|s| s.get().map(|b| &**b))
    }

    pub(crate) fn absorb_stats(&self, s: &PathCasStats) {
        let t = &self.totals;
        t.vexec_calls.fetch_add(s.vexec_calls, Ordering::Relaxed);
        t.vexec_successes
            .fetch_add(s.vexec_successes, Ordering::Relaxed);
        t.exec_calls.fetch_add(s.exec_calls, Ordering::Relaxed);
        t.exec_successes
            .fetch_add(s.exec_successes, Ordering::Relaxed);
        t.validate_calls
            .fetch_add(s.validate_calls, Ordering::Relaxed);
        t.validation_failures
            .fetch_add(s.validation_failures, Ordering::Relaxed);
        t.helps.fetch_add(s.helps, Ordering::Relaxed);
        t.spurious_retries
            .fetch_add(s.spurious_retries, Ordering::Relaxed);
        t.slow_path_entries
            .fetch_add(s.slow_path_entries, Ordering::Relaxed);
    }

    /// Counters accumulated from every context that has been dropped.
    pub fn stats(&self) -> PathCasStats {
        let t = &self.totals;
        PathCasStats {
            vexec_calls: t.vexec_calls.load(Ordering::Relaxed),
            vexec_successes: t.vexec_successes.load(Ordering::Relaxed),
            exec_calls: t.exec_calls.load(Ordering::Relaxed),
            exec_successes: t.exec_successes.load(Ordering::Relaxed),
            validate_calls: t.validate_calls.load(Ordering::Relaxed),
            validation_failures: t.validation_failures.load(Ordering::Relaxed),
            helps: t.helps.load(Ordering::Relaxed),
            spurious_retries: t.spurious_retries.load(Ordering::Relaxed),
            slow_path_entries: t.slow_path_entries.load(Ordering::Relaxed),
        }
    }
}
