//! Tree node layout and key encoding shared by both trees.

use crate::atomicword::CasWord;

pub(crate) const NIL: u64 = 0;

/// Smallest and largest keys accepted by the public API.
pub const KEY_MIN: i64 = -(1 << 61) + 1;
pub const KEY_MAX: i64 = (1 << 61) - 2;
/// Largest storable value.
pub const VALUE_MAX: u64 = (1 << 62) - 1;

pub(crate) const NEG_INF: u64 = 0;
pub(crate) const POS_INF: u64 = (1 << 62) - 1;

#[inline]
pub(crate) fn encode_key(k: i64) -> u64 {
    assert!(
        (KEY_MIN..=KEY_MAX).contains(&k),
        "key {k} outside [{KEY_MIN}, {KEY_MAX}]"
    );
    (k + (1 << 61)) as u64
}

#[inline]
pub(crate) fn decode_key(w: u64) -> i64 {
    w as i64 - (1 << 61)
}

#[inline]
pub(crate) fn check_value(v: u64) -> u64 {
    assert!(v <= VALUE_MAX, "value {v} exceeds {VALUE_MAX}");
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Side {
    Left,
    Right,
}

impl Side {
    #[inline]
    pub(crate) fn flip(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// `parent` and `height` are only maintained by the AVL tree.
#[repr(C)]
pub(crate) struct Node {
    pub(crate) ver: CasWord,
    pub(crate) key: CasWord,
    pub(crate) value: CasWord,
    pub(crate) left: CasWord,
    pub(crate) right: CasWord,
    pub(crate) parent: CasWord,
    pub(crate) height: CasWord,
}

impl Node {
    pub(crate) fn alloc(key: u64, value: u64, parent: u64, height: u64) -> u64 {
        let n = Box::new(Node {
            ver: CasWord::new(0),
            key: CasWord::new(key),
            value: CasWord::new(value),
            left: CasWord::new(NIL),
            right: CasWord::new(NIL),
            parent: CasWord::new(parent),
            height: CasWord::new(height),
        });
        Box::into_raw(n) as u64
    }

    /// # Safety
    /// `p` must come from [`Node::alloc`] and never have been shared.
    pub(crate) unsafe fn free(p: u64) {
        drop(Box::from_raw(p as *mut Node));
    }

    #[inline]
    pub(crate) fn child(&self, s: Side) -> &CasWord {
        match s {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
}

/// Dereferences a node word.
///
/// Every caller runs either inside a reclamation guard (so nodes reached
/// from the tree stay allocated) or on a quiescent tree.
#[inline]
pub(crate) fn nd<'a>(p: u64) -> &'a Node {
    debug_assert!(p != NIL, "dereferenced a null child link");
    // SAFETY: see above.
    unsafe { &*(p as *const Node) }
}
