//! Tagged shared words and software double-compare single-swap.
//!
//! Every cell that PathCAS may modify is a [`CasWord`]: one 64-bit atomic
//! that holds either an application value (bit 63 clear) or a descriptor
//! handle (bit 63 set). See `docs/word-layout.md` for the exact layout.
//!
//! DCSS follows the classic construction: CAS the target from its expected
//! value to a DCSS handle, read the control cell, then CAS the target from the
//! handle to either the new value or back to the expected value. Any thread
//! that meets a DCSS handle completes the DCSS before proceeding.

use std::fmt;
use std::sync::atomic::{fence, AtomicU64, AtomicUsize, Ordering};

use crate::domain::Domain;
use crate::sched;

/// Bit 63: set iff the word is a descriptor handle.
pub const TAG_BIT: u64 = 1 << 63;
/// Bit 62 of a handle: 0 = DCSS descriptor, 1 = PathCAS descriptor.
pub const KIND_BIT: u64 = 1 << 62;
pub const TID_BITS: u32 = 12;
pub const SEQ_BITS: u32 = 50;
pub const TID_SHIFT: u32 = SEQ_BITS;
pub const SEQ_MASK: u64 = (1 << SEQ_BITS) - 1;
pub const TID_MASK: u64 = (1 << TID_BITS) - 1;

/// Number of distinct owner ids a handle can carry.
pub const MAX_THREADS: usize = 1 << TID_BITS;

/// Largest word an application may store in a [`CasWord`].
pub const MAX_APP_WORD: u64 = TAG_BIT - 1;

#[inline]
pub fn is_descriptor(w: u64) -> bool {
    w & TAG_BIT != 0
}

#[inline]
pub(crate) fn is_dcss_handle(w: u64) -> bool {
    w & (TAG_BIT | KIND_BIT) == TAG_BIT
}

#[inline]
pub(crate) fn is_pathcas_handle(w: u64) -> bool {
    w & (TAG_BIT | KIND_BIT) == TAG_BIT | KIND_BIT
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DescriptorKind {
    Dcss,
    PathCas,
}

/// Decoded form of a descriptor handle: who owns the descriptor slot and
/// which use (sequence number) of that slot the handle refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DescriptorHandle {
    pub kind: DescriptorKind,
    pub tid: u16,
    pub seq: u64,
}

impl DescriptorHandle {
    pub fn new(kind: DescriptorKind, tid: usize, seq: u64) -> Self {
        assert!(
            tid < MAX_THREADS,
            "thread id {tid} does not fit in a handle"
        );
        DescriptorHandle {
            kind,
            tid: tid as u16,
            seq: seq & SEQ_MASK,
        }
    }

    #[inline]
    pub fn encode(self) -> u64 {
        let kind = match self.kind {
            DescriptorKind::Dcss => 0,
            DescriptorKind::PathCas => KIND_BIT,
        };
        TAG_BIT | kind | ((self.tid as u64 & TID_MASK) << TID_SHIFT) | (self.seq & SEQ_MASK)
    }

    /// Returns `None` for words that are not handles.
    #[inline]
    pub fn decode(w: u64) -> Option<Self> {
        if !is_descriptor(w) {
            return None;
        }
        let kind = if w & KIND_BIT == 0 {
            DescriptorKind::Dcss
        } else {
            DescriptorKind::PathCas
        };
        Some(DescriptorHandle {
            kind,
            tid: ((w >> TID_SHIFT) & TID_MASK) as u16,
            seq: w & SEQ_MASK,
        })
    }
}

/// A shared word that may be the target of DCSS / PathCAS.
///
/// Reads that may race with PathCAS must go through
/// [`ThreadContext::read`](crate::ThreadContext::read); the raw accessors here
/// are for initialisation and quiescent inspection only.
#[repr(transparent)]
#[derive(Default)]
pub struct CasWord(AtomicU64);

impl CasWord {
    pub const fn new(v: u64) -> Self {
        assert!(v & TAG_BIT == 0, "application words must keep bit 63 clear");
        CasWord(AtomicU64::new(v))
    }

    /// Plain load with no descriptor handling. Only meaningful when no
    /// operation can be in flight on this word.
    pub fn load_quiescent(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    /// Plain store. Only for words that are not yet shared, or in quiescent
    /// test setups.
    pub fn store_quiescent(&self, v: u64) {
        self.0.store(v, Ordering::SeqCst)
    }

    #[inline]
    pub(crate) fn addr(&self) -> usize {
        self as *const CasWord as usize
    }

    /// # Safety
    /// `addr` must come from [`CasWord::addr`] of a word that is still alive.
    #[inline]
    pub(crate) unsafe fn from_addr<'a>(addr: usize) -> &'a CasWord {
        &*(addr as *const CasWord)
    }

    #[inline]
    pub(crate) fn load(&self) -> u64 {
        sched::yield_point();
        self.0.load(Ordering::SeqCst)
    }

    /// Returns the value observed; success iff it equals `old`.
    #[inline]
    pub(crate) fn cas(&self, old: u64, new: u64) -> u64 {
        sched::yield_point();
        match self
            .0
            .compare_exchange(old, new, Ordering::SeqCst, Ordering::SeqCst)
        {
            Ok(v) | Err(v) => v,
        }
    }
}

impl fmt::Debug for CasWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.0.load(Ordering::Relaxed);
        match DescriptorHandle::decode(w) {
            Some(h) => write!(f, "CasWord({h:?})"),
            None => write!(f, "CasWord({w})"),
        }
    }
}

/// Per-thread reusable DCSS descriptor.
///
/// `seq` is odd while the owner rewrites the fields and even once they are
/// stable; the handle carries the even value. Helpers copy the fields and then
/// re-check `seq`, abandoning the help if the slot has been reused.
#[derive(Default)]
pub(crate) struct DcssSlot {
    seq: AtomicU64,
    addr1: AtomicUsize,
    exp1: AtomicU64,
    new1: AtomicU64,
    addr2: AtomicUsize,
    exp2: AtomicU64,
}

#[derive(Clone, Copy)]
struct DcssArgs {
    addr1: usize,
    exp1: u64,
    new1: u64,
    addr2: usize,
    exp2: u64,
}

impl DcssSlot {
    fn publish(&self, tid: usize, args: DcssArgs) -> u64 {
        let s = self.seq.load(Ordering::Relaxed);
        self.seq.store((s + 1) & SEQ_MASK, Ordering::Relaxed);
        fence(Ordering::Release);
        self.addr1.store(args.addr1, Ordering::Relaxed);
        self.exp1.store(args.exp1, Ordering::Relaxed);
        self.new1.store(args.new1, Ordering::Relaxed);
        self.addr2.store(args.addr2, Ordering::Relaxed);
        self.exp2.store(args.exp2, Ordering::Relaxed);
        let seq = (s + 2) & SEQ_MASK;
        self.seq.store(seq, Ordering::Release);
        DescriptorHandle::new(DescriptorKind::Dcss, tid, seq).encode()
    }

    fn snapshot(&self, seq: u64) -> Option<DcssArgs> {
        let args = DcssArgs {
            addr1: self.addr1.load(Ordering::Relaxed),
            exp1: self.exp1.load(Ordering::Relaxed),
            new1: self.new1.load(Ordering::Relaxed),
            addr2: self.addr2.load(Ordering::Relaxed),
            exp2: self.exp2.load(Ordering::Relaxed),
        };
        fence(Ordering::Acquire);
        sched::yield_point();
        (self.seq.load(Ordering::Relaxed) == seq).then_some(args)
    }

    #[cfg(test)]
    pub(crate) fn seq(&self) -> u64 {
        self.seq.load(Ordering::SeqCst)
    }
}

/// Second half of a DCSS: decide from the control word and unlock `addr1`.
fn complete(handle: u64, args: &DcssArgs) {
    // SAFETY: the handle was found in (or installed at) `addr1`, and the
    // caller holds a reclamation guard covering that word; `addr2` is a
    // descriptor status word, which lives as long as the domain.
    let (a1, a2) = unsafe {
        (
            CasWord::from_addr(args.addr1),
            CasWord::from_addr(args.addr2),
        )
    };
    let ctl = a2.load();
    let v = if ctl == args.exp2 {
        args.new1
    } else {
        args.exp1
    };
    a1.cas(handle, v);
}

pub(crate) fn help_dcss(domain: &Domain, handle: u64) {
    let h = DescriptorHandle::decode(handle).expect("not a handle");
    debug_assert_eq!(h.kind, DescriptorKind::Dcss);
    let slot = &domain.slot(h.tid as usize).dcss;
    if let Some(args) = slot.snapshot(h.seq) {
        complete(handle, &args);
    }
}

/// Atomically: if `*addr1 == exp1 && *addr2 == exp2` then `*addr1 = new1`.
///
/// Returns the value seen at `addr1`. `exp1` is returned whenever `addr1`
/// matched, including the case where `addr2` did not and nothing was swapped.
/// Never returns a DCSS handle; may return a PathCAS handle.
pub(crate) fn dcss(
    domain: &Domain,
    tid: usize,
    addr1: &CasWord,
    exp1: u64,
    new1: u64,
    addr2: &CasWord,
    exp2: u64,
) -> u64 {
    debug_assert!(!is_descriptor(exp1));
    let args = DcssArgs {
        addr1: addr1.addr(),
        exp1,
        new1,
        addr2: addr2.addr(),
        exp2,
    };
    let slot = &domain.slot(tid).dcss;
    let handle = slot.publish(tid, args);
    loop {
        let seen = addr1.cas(exp1, handle);
        if seen == exp1 {
            complete(handle, &args);
            return exp1;
        }
        if is_dcss_handle(seen) {
            help_dcss(domain, seen);
            continue;
        }
        return seen;
    }
}

/// Load that never exposes a DCSS handle.
pub(crate) fn dcss_read(domain: &Domain, addr: &CasWord) -> u64 {
    loop {
        let v = addr.load();
        if is_dcss_handle(v) {
            help_dcss(domain, v);
            continue;
        }
        return v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_is_not_a_descriptor() {
        assert!(!is_descriptor(0));
        assert!(!is_descriptor(MAX_APP_WORD));
    }

    #[test]
    fn handle_roundtrip() {
        let h = DescriptorHandle::new(DescriptorKind::PathCas, 3, 10);
        assert!(is_descriptor(h.encode()));
        assert!(is_pathcas_handle(h.encode()));
        let d =
            DescriptorHandle::decode(DescriptorHandle::new(DescriptorKind::Dcss, 0, 2).encode());
        assert_eq!(
            d,
            Some(DescriptorHandle {
                kind: DescriptorKind::Dcss,
                tid: 0,
                seq: 2
            })
        );
        assert!(is_dcss_handle(d.unwrap().encode()));
    }

    #[test]
    fn exact_bit_positions() {
        let w = DescriptorHandle::new(DescriptorKind::PathCas, 0xABC, 0x3_FFFF_FFFF_FFFF).encode();
        assert_eq!(w >> 63, 1);
        assert_eq!((w >> 62) & 1, 1);
        assert_eq!((w >> 50) & 0xFFF, 0xABC);
        assert_eq!(w & SEQ_MASK, 0x3_FFFF_FFFF_FFFF);
    }

    #[test]
    #[should_panic]
    fn tagged_initial_value_rejected() {
        let _ = CasWord::new(TAG_BIT | 1);
    }

    #[test]
    fn dcss_examples() {
        let d = Domain::new();
        let ctx = d.register();
        let status = CasWord::new(0);
        let cell = CasWord::new(5);
        assert_eq!(ctx.dcss(&cell, 5, 9, &status, 0), 5);
        assert_eq!(cell.load_quiescent(), 9);

        let cell = CasWord::new(7);
        assert_eq!(ctx.dcss(&cell, 5, 9, &status, 0), 7);
        assert_eq!(cell.load_quiescent(), 7);

        // Control word already decided: rolled back, still reports a match.
        let decided = CasWord::new(2);
        let cell = CasWord::new(5);
        assert_eq!(ctx.dcss(&cell, 5, 9, &decided, 0), 5);
        assert_eq!(cell.load_quiescent(), 5);
        assert_eq!(d.slot(ctx.tid()).dcss.seq() % 2, 0);
    }

    #[test]
    fn dcss_read_completes_installed_descriptor() {
        let d = Domain::new();
        let ctx = d.register();
        let status = CasWord::new(0);
        let cell = CasWord::new(5);
        let args = DcssArgs {
            addr1: cell.addr(),
            exp1: 5,
            new1: 9,
            addr2: status.addr(),
            exp2: 0,
        };
        let h = d.slot(ctx.tid()).dcss.publish(ctx.tid(), args);
        assert_eq!(cell.cas(5, h), 5);
        assert_eq!(ctx.dcss_read(&cell), 9);

        let ph = DescriptorHandle::new(DescriptorKind::PathCas, 1, 4).encode();
        let locked = CasWord::new(0);
        locked.0.store(ph, Ordering::SeqCst);
        assert_eq!(ctx.dcss_read(&locked), ph);
    }

    #[test]
    fn concurrent_dcss_leaves_no_residue() {
        let d = Domain::new();
        let cells = std::sync::Arc::new([CasWord::new(0), CasWord::new(0)]);
        let status = std::sync::Arc::new(CasWord::new(0));
        let threads: Vec<_> = (0..4)
            .map(|t| {
                let (d, cells, status) = (d.clone(), cells.clone(), status.clone());
                std::thread::spawn(move || {
                    let ctx = d.register();
                    for i in 0..20_000u64 {
                        let c = &cells[(i as usize + t) % 2];
                        let v = ctx.dcss_read(c);
                        assert!(!is_dcss_handle(v));
                        ctx.dcss(c, v, v + 1, &status, i % 3);
                        if i % 1000 == 0 {
                            status.store_quiescent(i % 3);
                        }
                    }
                })
            })
            .collect();
        for t in threads {
            t.join().unwrap();
        }
        for c in cells.iter() {
            assert!(!is_descriptor(c.load_quiescent()));
        }
    }

    proptest::proptest! {
        #[test]
        fn handle_encoding_is_bijective(kind in proptest::bool::ANY, tid in 0usize..MAX_THREADS, seq in 0u64..=SEQ_MASK) {
            let kind = if kind { DescriptorKind::PathCas } else { DescriptorKind::Dcss };
            let h = DescriptorHandle::new(kind, tid, seq);
            let w = h.encode();
            proptest::prop_assert!(is_descriptor(w));
            proptest::prop_assert_eq!(DescriptorHandle::decode(w), Some(h));
            proptest::prop_assert_eq!(DescriptorHandle::decode(w).unwrap().encode(), w);
        }

        #[test]
        fn app_words_never_decode(w in 0u64..=MAX_APP_WORD) {
            proptest::prop_assert!(DescriptorHandle::decode(w).is_none());
        }
    }
}
