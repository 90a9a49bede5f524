//! Epoch-based deferred reclamation.
//!
//! A thread announces the global epoch when it takes a [`Guard`] and goes
//! quiescent when the guard is dropped. The global epoch advances only when
//! every active thread has announced the current value. A node retired while
//! the global epoch was `e` is freed once the epoch reaches `e + RECLAIM_LAG`.
//!
//! The lag is three advances rather than the textbook two: a helper can reach
//! a node through another thread's descriptor instead of through the tree,
//! and its own announcement may then be one epoch newer than the retirement.

use std::collections::VecDeque;
use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

#[cfg(debug_assertions)]
use std::collections::HashSet;

use crate::domain::Domain;
use crate::pathcas::ThreadContext;

/// Epochs a retired node waits before it is freed.
pub const RECLAIM_LAG: u64 = 3;
/// Guarded operations between advance attempts.
pub const ADVANCE_INTERVAL: u64 = 256;

pub(crate) struct EpochGlobal {
    epoch: AtomicU64,
    orphans: Mutex<Vec<Bag>>,
    retired: AtomicU64,
    freed: AtomicU64,
    #[cfg(debug_assertions)]
    live_retired: Mutex<HashSet<usize>>,
}

#[derive(Default)]
pub(crate) struct EpochRecord {
    /// `(epoch << 1) | active`.
    announce: AtomicU64,
}

pub(crate) struct Retired {
    ptr: *mut (),
    drop_fn: unsafe fn(*mut ()),
}

impl Retired {
    /// # Safety
    /// `ptr` must have come from `Box::<T>::into_raw` and must not be freed
    /// by anyone else.
    pub(crate) unsafe fn new<T>(ptr: *mut T) -> Self {
        unsafe fn drop_box<T>(p: *mut ()) {
            drop(Box::from_raw(p as *mut T));
        }
        Retired {
            ptr: ptr as *mut (),
            drop_fn: drop_box::<T>,
        }
    }

    fn addr(&self) -> usize {
        self.ptr as usize
    }
}

pub(crate) struct Bag {
    epoch: u64,
    items: Vec<Retired>,
}

impl EpochGlobal {
    pub(crate) fn new() -> Self {
        EpochGlobal {
            epoch: AtomicU64::new(RECLAIM_LAG),
            orphans: Mutex::new(Vec::new()),
            retired: AtomicU64::new(0),
            freed: AtomicU64::new(0),
            #[cfg(debug_assertions)]
            live_retired: Mutex::new(HashSet::new()),
        }
    }

    pub(crate) fn current(&self) -> u64 {
        self.epoch.load(Ordering::SeqCst)
    }

    fn free_bag(&self, bag: Bag) {
        let n = bag.items.len() as u64;
        for r in bag.items {
            #[cfg(debug_assertions)]
            self.live_retired.lock().unwrap().remove(&r.addr());
            // SAFETY: retired exactly once (checked in debug builds) and the
            // epoch rule guarantees no thread still holds a reference.
            unsafe { (r.drop_fn)(r.ptr) };
        }
        self.freed.fetch_add(n, Ordering::Relaxed);
    }

    fn free_orphans(&self, now: u64) {
        let Ok(mut orphans) = self.orphans.try_lock() else {
            return;
        };
        if orphans.is_empty() {
            return;
        }
        let (ready, keep): (Vec<Bag>, Vec<Bag>) = orphans
            .drain(..)
            .partition(|b| b.epoch + RECLAIM_LAG <= now);
        *orphans = keep;
        drop(orphans);
        for bag in ready {
            self.free_bag(bag);
        }
    }
}

impl Drop for EpochGlobal {
    fn drop(&mut self) {
        let orphans = std::mem::take(self.orphans.get_mut().unwrap());
        for bag in orphans {
            self.free_bag(bag);
        }
    }
}

/// Counters describing retired memory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReclaimStats {
    pub epoch: u64,
    pub retired: u64,
    pub freed: u64,
}

impl ReclaimStats {
    /// Retired but not yet freed.
    pub fn pending(&self) -> u64 {
        self.retired - self.freed
    }
}

impl Domain {
    pub fn reclaim_stats(&self) -> ReclaimStats {
        ReclaimStats {
            epoch: self.epoch.current(),
            retired: self.epoch.retired.load(Ordering::SeqCst),
            freed: self.epoch.freed.load(Ordering::SeqCst),
        }
    }

    /// Advances the epoch iff every active thread has announced the current
    /// one; also frees orphaned bags that became safe.
    pub fn try_advance(&self) -> bool {
        let e = self.epoch.current();
        for slot in self.registered_slots() {
            let a = slot.epoch.announce.load(Ordering::SeqCst);
            if a & 1 == 1 && a >> 1 != e {
                return false;
            }
        }
        let advanced = self
            .epoch
            .epoch
            .compare_exchange(e, e + 1, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok();
        self.epoch.free_orphans(self.epoch.current());
        advanced
    }

    /// Drives enough advances to free every orphaned bag. Only useful when
    /// no thread is inside a guard; returns the number of nodes still pending.
    pub fn flush_quiescent(&self) -> u64 {
        for _ in 0..=RECLAIM_LAG {
            self.try_advance();
        }
        self.reclaim_stats().pending()
    }
}

/// Per-thread reclamation state, embedded in [`ThreadContext`].
pub(crate) struct LocalEpoch {
    depth: u32,
    epoch: u64,
    ops: u64,
    bags: VecDeque<Bag>,
}

impl LocalEpoch {
    pub(crate) fn new() -> Self {
        LocalEpoch {
            depth: 0,
            epoch: 0,
            ops: 0,
            bags: VecDeque::new(),
        }
    }

    pub(crate) fn is_guarded(&self) -> bool {
        self.depth > 0
    }

    pub(crate) fn unfreed(&self) -> usize {
        self.bags.iter().map(|b| b.items.len()).sum()
    }
}

/// Keeps the owning thread's epoch announced. Derefs to the context, so
/// PathCAS operations can be issued through it.
pub struct Guard<'a> {
    ctx: &'a mut ThreadContext,
}

impl Deref for Guard<'_> {
    type Target = ThreadContext;
    fn deref(&self) -> &ThreadContext {
        self.ctx
    }
}

impl DerefMut for Guard<'_> {
    fn deref_mut(&mut self) -> &mut ThreadContext {
        self.ctx
    }
}

impl Drop for Guard<'_> {
    fn drop(&mut self) {
        self.ctx.exit_guard();
    }
}

impl ThreadContext {
    /// Enters a guarded region. Nested guards panic in debug builds and are
    /// counted in release builds.
    pub fn guard(&mut self) -> Guard<'_> {
        self.enter_guard();
        Guard { ctx: self }
    }

    fn enter_guard(&mut self) {
        if self.local_epoch().depth > 0 {
            debug_assert!(false, "nested reclamation guard");
            self.local_epoch_mut().depth += 1;
            return;
        }
        let domain = self.domain_arc();
        let record = &domain.slot(self.tid()).epoch;
        let e = loop {
            let e = domain.epoch.current();
            record.announce.store(e << 1 | 1, Ordering::SeqCst);
            if domain.epoch.current() == e {
                break e;
            }
        };
        let local = self.local_epoch_mut();
        local.depth = 1;
        local.epoch = e;
        local.ops += 1;
        let advance = local.ops.is_multiple_of(ADVANCE_INTERVAL);
        let mut ready = Vec::new();
        while local
            .bags
            .front()
            .is_some_and(|b| b.epoch + RECLAIM_LAG <= e)
        {
            ready.push(local.bags.pop_front().unwrap());
        }
        for bag in ready {
            domain.epoch.free_bag(bag);
        }
        if advance {
            domain.try_advance();
        }
    }

    pub(crate) fn exit_guard(&mut self) {
        let local = self.local_epoch_mut();
        debug_assert!(local.depth > 0);
        local.depth -= 1;
        if local.depth == 0 {
            let e = local.epoch;
            let domain = self.domain_arc();
            domain
                .slot(self.tid())
                .epoch
                .announce
                .store(e << 1, Ordering::SeqCst);
        }
    }

    /// Attempts one epoch advance.
    pub fn try_advance(&self) -> bool {
        self.domain().try_advance()
    }

    /// Defers freeing of a node that has been unlinked (and marked) by a
    /// successful PathCAS.
    ///
    /// # Safety
    /// `ptr` must come from `Box::<T>::into_raw`, must be unreachable for
    /// threads that start after this call, and must be retired only once.
    pub unsafe fn retire<T>(&mut self, ptr: *mut T) {
        self.retire_raw(Retired::new(ptr));
    }

    pub(crate) fn retire_raw(&mut self, r: Retired) {
        debug_assert!(self.local_epoch().is_guarded(), "retire outside a guard");
        let domain = self.domain_arc();
        #[cfg(debug_assertions)]
        assert!(
            domain.epoch.live_retired.lock().unwrap().insert(r.addr()),
            "node {:#x} retired twice",
            r.addr()
        );
        domain.epoch.retired.fetch_add(1, Ordering::Relaxed);
        let e = domain.epoch.current();
        let local = self.local_epoch_mut();
        match local.bags.back_mut() {
            Some(b) if b.epoch == e => b.items.push(r),
            _ => local.bags.push_back(Bag {
                epoch: e,
                items: vec![r],
            }),
        }
    }

    /// Retired nodes this thread has not freed yet.
    pub fn unfreed_retired(&self) -> usize {
        self.local_epoch().unfreed()
    }

    pub(crate) fn orphan_bags(&mut self) {
        let bags: Vec<Bag> = self.local_epoch_mut().bags.drain(..).collect();
        if !bags.is_empty() {
            self.domain().epoch.orphans.lock().unwrap().extend(bags);
        }
    }
}

// The raw pointers inside are owned exclusively by the bag.
unsafe impl Send for Retired {}
