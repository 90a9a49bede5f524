//! PathCAS: a multi-word CAS whose success can additionally be made
//! conditional on a set of visited version words being unchanged.
//!
//! Usage from one thread:
//!
//! ```
//! use pathcas::{CasWord, Domain};
//!
//! let d = Domain::new();
//! let mut ctx = d.register();
//! let (ver, x) = (CasWord::new(4), CasWord::new(1));
//! let mut g = ctx.guard();
//! g.start();
//! let v = g.visit(&ver);
//! g.add(&x, 1, 2);
//! g.add(&ver, v, v + 2);
//! assert!(g.vexec());
//! assert_eq!(g.read(&x), 2);
//! ```
//!
//! Each thread owns one reusable descriptor. Its status word packs the
//! descriptor sequence number with the state, so a stale helper can never
//! decide or unlock a later use of the same slot.

use std::cell::Cell;
use std::sync::atomic::{fence, AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use crate::atomicword::{
    self, is_dcss_handle, is_descriptor, is_pathcas_handle, CasWord, DescriptorHandle,
    DescriptorKind, SEQ_MASK,
};
use crate::domain::Domain;
use crate::reclaim::{LocalEpoch, Retired};
use crate::sched;

pub const MAX_ENTRIES: usize = 32;
pub const MAX_PATH: usize = 128;
/// Spurious vexec failures tolerated before the strong path is taken.
pub const RETRY_LIMIT: u32 = 10;

const BACKOFF_MIN_NS: u64 = 1_000;
const BACKOFF_MAX_NS: u64 = 128_000;

/// Descriptor state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Undecided = 0,
    Succeeded = 1,
    Failed = 2,
}

#[inline]
fn status_word(seq: u64, s: Status) -> u64 {
    seq << 2 | s as u64
}

#[inline]
fn status_seq(w: u64) -> u64 {
    w >> 2
}

#[inline]
fn status_state(w: u64) -> Status {
    match w & 3 {
        0 => Status::Undecided,
        1 => Status::Succeeded,
        _ => Status::Failed,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Entry {
    pub(crate) addr: usize,
    pub(crate) old: u64,
    pub(crate) new: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Visited {
    pub(crate) addr: usize,
    pub(crate) ver: u64,
}

#[derive(Default)]
struct EntryCell {
    addr: AtomicUsize,
    old: AtomicU64,
    new: AtomicU64,
}

#[derive(Default)]
struct VisitedCell {
    addr: AtomicUsize,
    ver: AtomicU64,
}

/// The published, helpable copy of a thread's descriptor.
pub(crate) struct PathCasSlot {
    pub(crate) status: CasWord,
    validate: AtomicBool,
    n_entries: AtomicUsize,
    n_path: AtomicUsize,
    entries: Box<[EntryCell]>,
    path: Box<[VisitedCell]>,
}

/// A helper's private copy of someone else's descriptor.
struct View {
    seq: u64,
    validate: bool,
    entries: Vec<Entry>,
    path: Vec<Visited>,
}

impl PathCasSlot {
    pub(crate) fn new(entry_cap: usize, path_cap: usize) -> Self {
        PathCasSlot {
            status: CasWord::new(status_word(0, Status::Failed)),
            validate: AtomicBool::new(false),
            n_entries: AtomicUsize::new(0),
            n_path: AtomicUsize::new(0),
            entries: (0..entry_cap).map(|_| EntryCell::default()).collect(),
            path: (0..path_cap).map(|_| VisitedCell::default()).collect(),
        }
    }

    fn publish(&self, seq: u64, validate: bool, entries: &[Entry], path: &[Visited]) {
        self.status
            .store_quiescent(status_word(seq, Status::Undecided));
        fence(Ordering::Release);
        self.validate.store(validate, Ordering::Relaxed);
        self.n_entries.store(entries.len(), Ordering::Relaxed);
        for (c, e) in self.entries.iter().zip(entries) {
            c.addr.store(e.addr, Ordering::Relaxed);
            c.old.store(e.old, Ordering::Relaxed);
            c.new.store(e.new, Ordering::Relaxed);
        }
        let path = if validate { path } else { &[] };
        self.n_path.store(path.len(), Ordering::Relaxed);
        for (c, p) in self.path.iter().zip(path) {
            c.addr.store(p.addr, Ordering::Relaxed);
            c.ver.store(p.ver, Ordering::Relaxed);
        }
    }

    fn snapshot(&self, seq: u64) -> Option<View> {
        if status_seq(self.status.load()) != seq {
            return None;
        }
        let validate = self.validate.load(Ordering::Relaxed);
        let ne = self
            .n_entries
            .load(Ordering::Relaxed)
            .min(self.entries.len());
        let np = self.n_path.load(Ordering::Relaxed).min(self.path.len());
        let entries = self.entries[..ne]
            .iter()
            .map(|c| Entry {
                addr: c.addr.load(Ordering::Relaxed),
                old: c.old.load(Ordering::Relaxed),
                new: c.new.load(Ordering::Relaxed),
            })
            .collect();
        let path = self.path[..np]
            .iter()
            .map(|c| Visited {
                addr: c.addr.load(Ordering::Relaxed),
                ver: c.ver.load(Ordering::Relaxed),
            })
            .collect();
        fence(Ordering::Acquire);
        (status_seq(self.status.load()) == seq).then_some(View {
            seq,
            validate,
            entries,
            path,
        })
    }
}

/// Operation counters. Per-context until the context is dropped, then folded
/// into [`Domain::stats`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PathCasStats {
    pub vexec_calls: u64,
    pub vexec_successes: u64,
    pub exec_calls: u64,
    pub exec_successes: u64,
    pub validate_calls: u64,
    pub validation_failures: u64,
    /// Foreign descriptors helped.
    pub helps: u64,
    /// vexec attempts that failed although every input still looked intact.
    pub spurious_retries: u64,
    pub slow_path_entries: u64,
}

impl PathCasStats {
    pub fn merge(&mut self, o: &PathCasStats) {
        self.vexec_calls += o.vexec_calls;
        self.vexec_successes += o.vexec_successes;
        self.exec_calls += o.exec_calls;
        self.exec_successes += o.exec_successes;
        self.validate_calls += o.validate_calls;
        self.validation_failures += o.validation_failures;
        self.helps += o.helps;
        self.spurious_retries += o.spurious_retries;
        self.slow_path_entries += o.slow_path_entries;
    }
}

#[derive(Default)]
struct StatCells {
    vexec_calls: Cell<u64>,
    vexec_successes: Cell<u64>,
    exec_calls: Cell<u64>,
    exec_successes: Cell<u64>,
    validate_calls: Cell<u64>,
    validation_failures: Cell<u64>,
    helps: Cell<u64>,
    spurious_retries: Cell<u64>,
    slow_path_entries: Cell<u64>,
}

#[inline]
fn bump(c: &Cell<u64>) {
    c.set(c.get() + 1);
}

impl StatCells {
    fn snapshot(&self) -> PathCasStats {
        PathCasStats {
            vexec_calls: self.vexec_calls.get(),
            vexec_successes: self.vexec_successes.get(),
            exec_calls: self.exec_calls.get(),
            exec_successes: self.exec_successes.get(),
            validate_calls: self.validate_calls.get(),
            validation_failures: self.validation_failures.get(),
            helps: self.helps.get(),
            spurious_retries: self.spurious_retries.get(),
            slow_path_entries: self.slow_path_entries.get(),
        }
    }
}

#[cfg(feature = "sched")]
type VisitHook = Box<dyn FnMut(usize, u64) + Send>;

/// A registered thread: its descriptor, retry state and reclamation state.
/// Obtained from [`Domain::register`]; one per thread.
pub struct ThreadContext {
    domain: Arc<Domain>,
    tid: usize,
    seq: u64,
    entries: Vec<Entry>,
    path: Vec<Visited>,
    strong: Vec<Entry>,
    pending_retire: Vec<Retired>,
    contention: u32,
    rng: SmallRng,
    stats: StatCells,
    local: LocalEpoch,
    #[cfg(feature = "sched")]
    visit_hook: Option<VisitHook>,
}

impl ThreadContext {
    pub(crate) fn new(domain: Arc<Domain>, tid: usize) -> Self {
        let max_path = domain.config().max_path;
        let seq = status_seq(domain.slot(tid).pathcas.status.load_quiescent());
        ThreadContext {
            domain,
            tid,
            seq,
            entries: Vec::with_capacity(MAX_ENTRIES),
            path: Vec::with_capacity(max_path),
            strong: Vec::with_capacity(MAX_ENTRIES + max_path),
            pending_retire: Vec::new(),
            contention: 0,
            rng: SmallRng::seed_from_u64(0x9e37_79b9_7f4a_7c15 ^ tid as u64),
            stats: StatCells::default(),
            local: LocalEpoch::new(),
            #[cfg(feature = "sched")]
            visit_hook: None,
        }
    }

    #[inline]
    pub fn tid(&self) -> usize {
        self.tid
    }

    #[inline]
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub(crate) fn domain_arc(&self) -> Arc<Domain> {
        Arc::clone(&self.domain)
    }

    pub(crate) fn local_epoch(&self) -> &LocalEpoch {
        &self.local
    }

    pub(crate) fn local_epoch_mut(&mut self) -> &mut LocalEpoch {
        &mut self.local
    }

    pub fn stats(&self) -> PathCasStats {
        self.stats.snapshot()
    }

    /// Escalation counter; persists across failed vexec calls until one
    /// succeeds or [`reset_contention`](Self::reset_contention) is called.
    pub fn contention(&self) -> u32 {
        self.contention
    }

    pub fn reset_contention(&mut self) {
        self.contention = 0;
    }

    /// Calls `hook(index, version)` after every visit. Test builds only.
    #[cfg(feature = "sched")]
    pub fn set_visit_hook(&mut self, hook: impl FnMut(usize, u64) + Send + 'static) {
        self.visit_hook = Some(Box::new(hook));
    }

    #[cfg(feature = "sched")]
    pub fn clear_visit_hook(&mut self) {
        self.visit_hook = None;
    }

    /// Begins a new operation, discarding any accumulated entries and path.
    pub fn start(&mut self) {
        self.entries.clear();
        self.path.clear();
        self.pending_retire.clear();
    }

    /// Reads a PathCAS-managed word, helping any operation that has it locked.
    pub fn read(&self, addr: &CasWord) -> u64 {
        loop {
            let v = atomicword::dcss_read(&self.domain, addr);
            if is_pathcas_handle(v) {
                self.help_foreign(v);
                continue;
            }
            return v;
        }
    }

    /// Schedules `addr: old -> new` for the next exec/vexec.
    pub fn add(&mut self, addr: &CasWord, old: u64, new: u64) {
        assert!(
            self.entries.len() < MAX_ENTRIES,
            "PathCAS entry capacity ({MAX_ENTRIES}) exceeded"
        );
        debug_assert!(
            !is_descriptor(old) && !is_descriptor(new),
            "descriptor-tagged value passed to add"
        );
        debug_assert!(
            self.entries.iter().all(|e| e.addr != addr.addr()),
            "address added twice to one PathCAS"
        );
        self.entries.push(Entry {
            addr: addr.addr(),
            old,
            new,
        });
    }

    /// Reads a version word and records it in the path.
    pub fn visit(&mut self, ver: &CasWord) -> u64 {
        let cap = self.domain.config().max_path;
        assert!(
            self.path.len() < cap,
            "PathCAS path capacity ({cap}) exceeded"
        );
        let v = self.read(ver);
        self.path.push(Visited {
            addr: ver.addr(),
            ver: v,
        });
        #[cfg(feature = "sched")]
        if let Some(hook) = self.visit_hook.as_mut() {
            hook(self.path.len(), v);
        }
        v
    }

    pub fn entries_len(&self) -> usize {
        self.entries.len()
    }

    pub fn path_len(&self) -> usize {
        self.path.len()
    }

    /// True iff every visited version is still current and unmarked.
    /// Does not help: a locked version word fails immediately.
    pub fn validate(&self) -> bool {
        bump(&self.stats.validate_calls);
        let ok = self.validate_desc(&self.path, None);
        if !ok {
            bump(&self.stats.validation_failures);
        }
        ok
    }

    /// Defers retirement of `ptr` until the next successful exec/vexec of
    /// this operation; dropped silently by `start`.
    ///
    /// # Safety
    /// As for [`retire`](Self::retire), once the PathCAS succeeds.
    pub unsafe fn defer_retire<T>(&mut self, ptr: *mut T) {
        self.pending_retire.push(Retired::new(ptr));
    }

    /// Multi-word CAS over the added entries; the path is ignored.
    pub fn exec(&mut self) -> bool {
        bump(&self.stats.exec_calls);
        self.entries.sort_unstable_by_key(|e| e.addr);
        let entries = std::mem::take(&mut self.entries);
        let ok = self.run(false, &entries);
        self.entries = entries;
        if ok {
            bump(&self.stats.exec_successes);
            self.retire_pending();
        }
        ok
    }

    /// Multi-word CAS that also requires every visited version to be
    /// unchanged and unmarked at a single instant while the entries are locked.
    pub fn vexec(&mut self) -> bool {
        bump(&self.stats.vexec_calls);
        self.check_marks();
        self.entries.sort_unstable_by_key(|e| e.addr);
        let entries = std::mem::take(&mut self.entries);
        let ok = loop {
            if self.contention >= RETRY_LIMIT {
                break self.strong_vexec(&entries);
            }
            if self.run(true, &entries) {
                break true;
            }
            if !self.still_plausible(&entries) {
                break false;
            }
            self.contention += 1;
            bump(&self.stats.spurious_retries);
            self.backoff();
        };
        self.entries = entries;
        if ok {
            bump(&self.stats.vexec_successes);
            self.contention = 0;
            self.retire_pending();
        } else {
            bump(&self.stats.validation_failures);
        }
        ok
    }

    /// Plain DCSS on two managed words, exposed for testing and for callers
    /// that build their own protocols on top.
    pub fn dcss(&self, addr1: &CasWord, exp1: u64, new1: u64, addr2: &CasWord, exp2: u64) -> u64 {
        atomicword::dcss(&self.domain, self.tid, addr1, exp1, new1, addr2, exp2)
    }

    /// Load that completes any DCSS it meets (PathCAS handles are returned).
    pub fn dcss_read(&self, addr: &CasWord) -> u64 {
        atomicword::dcss_read(&self.domain, addr)
    }

    fn retire_pending(&mut self) {
        let pending = std::mem::take(&mut self.pending_retire);
        for r in pending {
            self.retire_raw(r);
        }
    }

    /// Debug guard: no entry may target a version word that was visited
    /// marked.
    fn check_marks(&self) {
        if cfg!(debug_assertions) {
            for e in &self.entries {
                if let Some(p) = self.path.iter().find(|p| p.addr == e.addr) {
                    assert!(p.ver & 1 == 0, "PathCAS entry targets a marked node");
                }
            }
        }
    }

    /// Publishes the descriptor and helps it to completion.
    fn run(&mut self, validate: bool, entries: &[Entry]) -> bool {
        self.seq = (self.seq + 1) & SEQ_MASK;
        let slot = &self.domain.slot(self.tid).pathcas;
        let path = if validate { &self.path[..] } else { &[] };
        slot.publish(self.seq, validate, entries, path);
        let handle = DescriptorHandle::new(DescriptorKind::PathCas, self.tid, self.seq).encode();
        self.help(handle, self.seq, &slot.status, validate, entries, path)
    }

    /// After a failed vexec: true if every entry still holds its old value and
    /// every visited version is unchanged, i.e. the failure was caused only by
    /// interference with another in-flight descriptor.
    fn still_plausible(&self, entries: &[Entry]) -> bool {
        entries.iter().all(|e| {
            // SAFETY: entry addresses were supplied by the caller under its guard.
            self.read(unsafe { CasWord::from_addr(e.addr) }) == e.old
        }) && self
            .path
            .iter()
            .all(|p| p.ver & 1 == 0 && self.read(unsafe { CasWord::from_addr(p.addr) }) == p.ver)
    }

    /// Converts visited versions into no-op entries and runs a plain exec, so
    /// version words are locked like any other entry and cannot be the cause
    /// of mutual aborts.
    fn strong_vexec(&mut self, entries: &[Entry]) -> bool {
        bump(&self.stats.slow_path_entries);
        let mut merged = std::mem::take(&mut self.strong);
        merged.clear();
        merged.extend_from_slice(entries);
        let mut ok = true;
        for p in &self.path {
            if p.ver & 1 == 1 {
                ok = false;
                break;
            }
            match merged.iter().find(|e| e.addr == p.addr) {
                Some(e) if e.old != p.ver => {
                    ok = false;
                    break;
                }
                Some(_) => {}
                None => merged.push(Entry {
                    addr: p.addr,
                    old: p.ver,
                    new: p.ver,
                }),
            }
        }
        if ok {
            merged.sort_unstable_by_key(|e| e.addr);
            ok = self.run(false, &merged);
        }
        self.strong = merged;
        self.contention = 0;
        ok
    }

    fn backoff(&mut self) {
        if sched::is_scheduled() {
            sched::yield_point();
            return;
        }
        let ceiling = (BACKOFF_MIN_NS << self.contention.min(7)).min(BACKOFF_MAX_NS);
        let ns = self.rng.gen_range(BACKOFF_MIN_NS / 2..=ceiling);
        let until = Instant::now() + Duration::from_nanos(ns);
        while Instant::now() < until {
            std::thread::yield_now();
        }
    }

    fn help_foreign(&self, handle: u64) {
        let h = DescriptorHandle::decode(handle).expect("not a handle");
        let slot = &self.domain.slot(h.tid as usize).pathcas;
        // A failed snapshot means the owner has already moved on, so the
        // handle is gone from every cell; the caller re-reads.
        if let Some(view) = slot.snapshot(h.seq) {
            bump(&self.stats.helps);
            self.help(
                handle,
                view.seq,
                &slot.status,
                view.validate,
                &view.entries,
                &view.path,
            );
        }
    }

    fn help(
        &self,
        handle: u64,
        seq: u64,
        status: &CasWord,
        validate: bool,
        entries: &[Entry],
        path: &[Visited],
    ) -> bool {
        let undecided = status_word(seq, Status::Undecided);
        if status.load() == undecided {
            let mut outcome = Status::Succeeded;
            'lock: for e in entries {
                // SAFETY: the descriptor is live (seq checked), so its owner
                // is still inside the guard that protects these words.
                let cell = unsafe { CasWord::from_addr(e.addr) };
                loop {
                    let seen = self.dcss(cell, e.old, handle, status, undecided);
                    if seen == handle {
                        break;
                    }
                    if is_pathcas_handle(seen) {
                        self.help_foreign(seen);
                        continue;
                    }
                    if seen != e.old {
                        outcome = Status::Failed;
                        break 'lock;
                    }
                    break;
                }
            }
            if outcome == Status::Succeeded && validate && !self.validate_desc(path, Some(handle)) {
                outcome = Status::Failed;
            }
            status.cas(undecided, status_word(seq, outcome));
        }
        let s = status.load();
        if status_seq(s) != seq {
            // The owner finished this use of the slot, including unlocking.
            return false;
        }
        let ok = status_state(s) == Status::Succeeded;
        for e in entries {
            let cell = unsafe { CasWord::from_addr(e.addr) };
            let target = if ok { e.new } else { e.old };
            loop {
                let seen = cell.cas(handle, target);
                // A late DCSS from a slow helper may sit where our handle
                // would be; resolve it so it cannot re-lock the word after we
                // pass.
                if is_dcss_handle(seen) {
                    atomicword::help_dcss(&self.domain, seen);
                    continue;
                }
                break;
            }
        }
        ok
    }

    fn validate_desc(&self, path: &[Visited], own: Option<u64>) -> bool {
        path.iter().all(|p| {
            let cur = unsafe { CasWord::from_addr(p.addr) }.load();
            Some(cur) == own || (!is_descriptor(cur) && cur == p.ver && p.ver & 1 == 0)
        })
    }
}

impl Drop for ThreadContext {
    fn drop(&mut self) {
        while self.local.is_guarded() {
            self.exit_guard();
        }
        self.orphan_bags();
        self.domain.absorb_stats(&self.stats.snapshot());
        self.domain.release(self.tid);
    }
}

impl std::fmt::Debug for ThreadContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ThreadContext")
            .field("tid", &self.tid)
            .field("entries", &self.entries.len())
            .field("path", &self.path.len())
            .finish()
    }
}
