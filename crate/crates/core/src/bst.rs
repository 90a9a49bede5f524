//! Lock-free internal binary search tree.
//!
//! Every key lives in exactly one node; two sentinels (`+inf` at the root,
//! `-inf` as its left child) remove all edge cases at the top of the tree.
//! Searches visit each node they pass, updates are single PathCAS operations
//! that also bump the version of each modified node and mark each removed one.
//!
//! The same core serves the relaxed AVL tree; the `avl` flag adds parent and
//! height maintenance and a rebalancing pass after each update.

use crate::atomicword::CasWord;
use crate::node::{check_value, decode_key, encode_key, nd, Node, NEG_INF, NIL, POS_INF};
use crate::pathcas::ThreadContext;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeOptions {
    /// Skip validation where the result does not depend on it: a found key
    /// in `contains` and in `insert` returning false, and `exec` instead of
    /// `vexec` for leaf and one-child deletes. Absent keys are always
    /// validated.
    pub validation_opts: bool,
    /// Never validate a failed `contains`. Incorrect; exists to demonstrate
    /// why validation is needed.
    #[cfg(feature = "sched")]
    #[doc(hidden)]
    pub unvalidated_contains: bool,
}

impl Default for TreeOptions {
    fn default() -> Self {
        TreeOptions {
            validation_opts: true,
            #[cfg(feature = "sched")]
            unvalidated_contains: false,
        }
    }
}

impl TreeOptions {
    pub fn unoptimized() -> Self {
        TreeOptions {
            validation_opts: false,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct SearchResult {
    pub(crate) found: bool,
    /// The node holding the key, or the last node on the path.
    pub(crate) curr: u64,
    pub(crate) curr_ver: u64,
    pub(crate) parent: u64,
    pub(crate) parent_ver: u64,
}

pub(crate) struct Tree {
    pub(crate) max_root: u64,
    pub(crate) min_root: u64,
    pub(crate) opts: TreeOptions,
    pub(crate) avl: bool,
}

impl Tree {
    pub(crate) fn new(opts: TreeOptions, avl: bool) -> Self {
        let max_root = Node::alloc(POS_INF, 0, NIL, 2);
        let min_root = Node::alloc(NEG_INF, 0, max_root, 1);
        nd(max_root).left.store_quiescent(min_root);
        Tree {
            max_root,
            min_root,
            opts,
            avl,
        }
    }

    pub(crate) fn search(&self, g: &mut ThreadContext, key: u64) -> SearchResult {
        let mut parent = self.max_root;
        let mut parent_ver = g.visit(&nd(parent).ver);
        let mut curr = self.min_root;
        let mut curr_ver = g.visit(&nd(curr).ver);
        loop {
            let ck = g.read(&nd(curr).key);
            if key == ck {
                return SearchResult {
                    found: true,
                    curr,
                    curr_ver,
                    parent,
                    parent_ver,
                };
            }
            let next = if key > ck {
                g.read(&nd(curr).right)
            } else {
                g.read(&nd(curr).left)
            };
            if next == NIL {
                return SearchResult {
                    found: false,
                    curr,
                    curr_ver,
                    parent,
                    parent_ver,
                };
            }
            parent = curr;
            parent_ver = curr_ver;
            curr = next;
            curr_ver = g.visit(&nd(curr).ver);
        }
    }

    pub(crate) fn contains(&self, ctx: &mut ThreadContext, key: i64) -> bool {
        self.get(ctx, key).is_some()
    }

    pub(crate) fn get(&self, ctx: &mut ThreadContext, key: i64) -> Option<u64> {
        let k = encode_key(key);
        let mut g = ctx.guard();
        loop {
            g.start();
            let r = self.search(&mut g, k);
            if r.found {
                let v = g.read(&nd(r.curr).value);
                // The value is read after the key; a concurrent two-child
                // delete may have replaced both in between.
                if g.read(&nd(r.curr).key) == k && (self.opts.validation_opts || g.validate()) {
                    return Some(v);
                }
                continue;
            }
            #[cfg(feature = "sched")]
            if self.opts.unvalidated_contains {
                return None;
            }
            if g.validate() {
                return None;
            }
        }
    }

    pub(crate) fn insert(&self, ctx: &mut ThreadContext, key: i64, value: u64) -> bool {
        let k = encode_key(key);
        let value = check_value(value);
        let mut g = ctx.guard();
        let mut fresh = NIL;
        loop {
            g.start();
            let r = self.search(&mut g, k);
            if r.found {
                if self.opts.validation_opts || g.validate() {
                    if fresh != NIL {
                        // SAFETY: never linked; failed PathCAS attempts restore
                        // the old child words.
                        unsafe { Node::free(fresh) };
                    }
                    return false;
                }
                continue;
            }
            let (parent, pver) = (r.curr, r.curr_ver);
            if pver & 1 == 1 {
                continue;
            }
            if fresh == NIL {
                fresh = Node::alloc(k, value, parent, 1);
            } else {
                nd(fresh).parent.store_quiescent(parent);
            }
            let p = nd(parent);
            let link = if k < g.read(&p.key) {
                &p.left
            } else {
                &p.right
            };
            g.add(link, NIL, fresh);
            g.add(&p.ver, pver, pver + 2);
            if g.vexec() {
                if self.avl {
                    self.rebalance(&mut g, parent);
                }
                return true;
            }
        }
    }

    pub(crate) fn delete(&self, ctx: &mut ThreadContext, key: i64) -> bool {
        let k = encode_key(key);
        let mut g = ctx.guard();
        loop {
            g.start();
            let r = self.search(&mut g, k);
            if !r.found {
                // Absence always needs validation, as in `get`: the key may
                // have been moved above the search by a two-child delete.
                if g.validate() {
                    return false;
                }
                continue;
            }
            let SearchResult {
                curr,
                curr_ver,
                parent,
                parent_ver,
                ..
            } = r;
            if curr_ver & 1 == 1 || parent_ver & 1 == 1 {
                continue;
            }
            let (c, p) = (nd(curr), nd(parent));
            let left = g.read(&c.left);
            let right = g.read(&c.right);
            if left == NIL || right == NIL {
                let keep = if left == NIL { right } else { left };
                let link = self.link_to(&mut g, p, curr);
                g.add(link, curr, keep);
                g.add(&p.ver, parent_ver, parent_ver + 2);
                g.add(&c.ver, curr_ver, curr_ver + 1);
                if self.avl && keep != NIL {
                    g.add(&nd(keep).parent, curr, parent);
                }
                // SAFETY: unlinked and marked by the PathCAS below if it succeeds.
                unsafe { g.defer_retire(curr as *mut Node) };
                let ok = if self.opts.validation_opts {
                    g.exec()
                } else {
                    g.vexec()
                };
                if ok {
                    if self.avl {
                        self.rebalance(&mut g, parent);
                    }
                    return true;
                }
                continue;
            }

            let Some((succ, succ_ver, succ_p, succ_p_ver)) = self.successor(&mut g, curr, curr_ver)
            else {
                continue;
            };
            if succ_ver & 1 == 1 || succ_p_ver & 1 == 1 {
                continue;
            }
            let (s, sp) = (nd(succ), nd(succ_p));
            let succ_r = g.read(&s.right);
            if succ_r != NIL && g.visit(&nd(succ_r).ver) & 1 == 1 {
                continue;
            }
            let link = if g.read(&sp.right) == succ {
                &sp.right
            } else {
                &sp.left
            };
            g.add(link, succ, succ_r);
            let cur_val = g.read(&c.value);
            let succ_val = g.read(&s.value);
            let succ_key = g.read(&s.key);
            g.add(&c.value, cur_val, succ_val);
            g.add(&c.key, k, succ_key);
            g.add(&s.ver, succ_ver, succ_ver + 1);
            g.add(&sp.ver, succ_p_ver, succ_p_ver + 2);
            if succ_p != curr {
                g.add(&c.ver, curr_ver, curr_ver + 2);
            }
            if self.avl && succ_r != NIL {
                g.add(&nd(succ_r).parent, succ, succ_p);
            }
            // SAFETY: unlinked and marked by the PathCAS below if it succeeds.
            unsafe { g.defer_retire(succ as *mut Node) };
            if g.vexec() {
                if self.avl {
                    self.rebalance(&mut g, succ_p);
                }
                return true;
            }
        }
    }

    /// The child word of `p` that points at `child` (right if neither does;
    /// the PathCAS then fails on the old value).
    fn link_to<'a>(&self, g: &mut ThreadContext, p: &'a Node, child: u64) -> &'a CasWord {
        if g.read(&p.left) == child {
            &p.left
        } else {
            &p.right
        }
    }

    /// Leftmost node of `start`'s right subtree, with its parent. `None` if
    /// the right subtree has vanished.
    pub(crate) fn successor(
        &self,
        g: &mut ThreadContext,
        start: u64,
        start_ver: u64,
    ) -> Option<(u64, u64, u64, u64)> {
        let mut succ_p = start;
        let mut succ_p_ver = start_ver;
        let mut succ = g.read(&nd(start).right);
        if succ == NIL {
            return None;
        }
        let mut succ_ver = g.visit(&nd(succ).ver);
        loop {
            let next = g.read(&nd(succ).left);
            if next == NIL {
                return Some((succ, succ_ver, succ_p, succ_p_ver));
            }
            succ_p = succ;
            succ_p_ver = succ_ver;
            succ = next;
            succ_ver = g.visit(&nd(next).ver);
        }
    }

    /// In-order keys. Quiescent use only.
    pub(crate) fn keys(&self) -> Vec<i64> {
        let mut out = Vec::new();
        let mut stack = Vec::new();
        let mut cur = nd(self.min_root).right.load_quiescent();
        while cur != NIL || !stack.is_empty() {
            while cur != NIL {
                stack.push(cur);
                cur = nd(cur).left.load_quiescent();
            }
            let n = stack.pop().unwrap();
            out.push(decode_key(nd(n).key.load_quiescent()));
            cur = nd(n).right.load_quiescent();
        }
        out
    }
}

impl Drop for Tree {
    fn drop(&mut self) {
        let mut stack = vec![self.max_root];
        while let Some(n) = stack.pop() {
            let node = nd(n);
            for c in [node.left.load_quiescent(), node.right.load_quiescent()] {
                if c != NIL && !crate::atomicword::is_descriptor(c) {
                    stack.push(c);
                }
            }
            // SAFETY: reachable nodes are owned by the tree; retired ones are
            // unreachable and owned by the domain.
            unsafe { Node::free(n) };
        }
    }
}

/// Unbalanced lock-free internal BST mapping `i64` keys to `u64` values.
///
/// Operations take the calling thread's [`ThreadContext`]; the tree itself is
/// `Sync` and is typically shared through an `Arc`.
pub struct Bst {
    pub(crate) tree: Tree,
}

impl Bst {
    pub fn new() -> Self {
        Self::with_options(TreeOptions::default())
    }

    pub fn with_options(opts: TreeOptions) -> Self {
        Bst {
            tree: Tree::new(opts, false),
        }
    }

    pub fn options(&self) -> TreeOptions {
        self.tree.opts
    }

    pub fn contains(&self, ctx: &mut ThreadContext, key: i64) -> bool {
        self.tree.contains(ctx, key)
    }

    pub fn get(&self, ctx: &mut ThreadContext, key: i64) -> Option<u64> {
        self.tree.get(ctx, key)
    }

    /// Inserts if absent; returns false (leaving the old value) otherwise.
    pub fn insert(&self, ctx: &mut ThreadContext, key: i64, value: u64) -> bool {
        self.tree.insert(ctx, key, value)
    }

    pub fn delete(&self, ctx: &mut ThreadContext, key: i64) -> bool {
        self.tree.delete(ctx, key)
    }

    /// Sorted keys. Only meaningful while no operation is running.
    pub fn keys_quiescent(&self) -> Vec<i64> {
        self.tree.keys()
    }
}

impl Default for Bst {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for Bst {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bst")
            .field("opts", &self.tree.opts)
            .finish_non_exhaustive()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::node::decode_key;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeMap;

    fn key_of(n: u64) -> i64 {
        decode_key(nd(n).key.load_quiescent())
    }

    fn right_of(n: u64) -> u64 {
        nd(n).right.load_quiescent()
    }

    fn left_of(n: u64) -> u64 {
        nd(n).left.load_quiescent()
    }

    #[test]
    fn new_tree_is_empty() {
        let d = Domain::new();
        let mut ctx = d.register();
        let t = Bst::new();
        for k in [-5, 0, 7] {
            assert!(!t.contains(&mut ctx, k));
        }
        assert!(t.keys_quiescent().is_empty());
        assert_eq!(left_of(t.tree.max_root), t.tree.min_root);
        assert_eq!(right_of(t.tree.max_root), NIL);
    }

    #[test]
    fn search_in_empty_tree_stops_at_min_root() {
        let d = Domain::new();
        let mut ctx = d.register();
        let t = Bst::new();
        let mut g = ctx.guard();
        g.start();
        let r = t.tree.search(&mut g, encode_key(5));
        assert!(!r.found);
        assert_eq!(r.curr, t.tree.min_root);
        assert_eq!(r.parent, t.tree.max_root);
        assert_eq!(g.path_len(), 2);
    }

    #[test]
    fn search_returns_exact_tuple() {
        let d = Domain::new();
        let mut ctx = d.register();
        let t = Bst::new();
        for k in [40, 60, 50] {
            assert!(t.insert(&mut ctx, k, k as u64));
        }
        let n40 = right_of(t.tree.min_root);
        let n60 = right_of(n40);
        let n50 = left_of(n60);
        let mut g = ctx.guard();
        g.start();
        let r = t.tree.search(&mut g, encode_key(50));
        assert_eq!(
            r,
            SearchResult {
                found: true,
                curr: n50,
                curr_ver: 0,
                parent: n60,
                parent_ver: 2,
            }
        );
        assert_eq!(g.path_len(), 5);
    }

    #[test]
    #[should_panic(expected = "outside")]
    fn sentinel_key_faults() {
        let d = Domain::new();
        let mut ctx = d.register();
        Bst::new().contains(&mut ctx, crate::node::KEY_MAX + 1);
    }

    #[test]
    fn insert_and_duplicate() {
        let d = Domain::new();
        let mut ctx = d.register();
        let t = Bst::new();
        assert!(t.insert(&mut ctx, 5, 50));
        assert_eq!(key_of(right_of(t.tree.min_root)), 5);
        assert!(t.contains(&mut ctx, 5));
        assert!(!t.insert(&mut ctx, 5, 51));
        assert_eq!(t.get(&mut ctx, 5), Some(50));
        assert!(!t.contains(&mut ctx, 6));
    }

    #[test]
    fn delete_leaf_marks_node() {
        let d = Domain::new();
        let mut ctx = d.register();
        let t = Bst::new();
        t.insert(&mut ctx, 5, 0);
        let n5 = right_of(t.tree.min_root);
        // A pinned reader keeps the retired node allocated.
        let mut pin = d.register();
        let _pg = pin.guard();
        assert!(t.delete(&mut ctx, 5));
        assert_eq!(right_of(t.tree.min_root), NIL);
        assert_eq!(nd(n5).ver.load_quiescent() & 1, 1);
        assert!(!t.delete(&mut ctx, 5));
    }

    #[test]
    fn delete_one_child() {
        let d = Domain::new();
        let mut ctx = d.register();
        let t = Bst::new();
        t.insert(&mut ctx, 5, 0);
        t.insert(&mut ctx, 3, 0);
        assert!(t.delete(&mut ctx, 5));
        assert_eq!(key_of(right_of(t.tree.min_root)), 3);
        assert!(t.contains(&mut ctx, 3));
        assert_eq!(t.keys_quiescent(), vec![3]);
    }

    #[test]
    fn delete_two_children_promotes_successor() {
        let d = Domain::new();
        let mut ctx = d.register();
        let t = Bst::new();
        for k in [40, 20, 60, 50, 70] {
            t.insert(&mut ctx, k, k as u64 * 10);
        }
        let n40 = right_of(t.tree.min_root);
        let n60 = right_of(n40);
        let n50 = left_of(n60);
        let mut g = ctx.guard();
        g.start();
        let v40 = g.visit(&nd(n40).ver);
        assert_eq!(
            t.tree.successor(&mut g, n40, v40).map(|s| (s.0, s.2)),
            Some((n50, n60))
        );
        drop(g);
        let mut pin = d.register();
        let pg = pin.guard();
        assert!(t.delete(&mut ctx, 40));
        assert_eq!(key_of(n40), 50);
        assert_eq!(nd(n40).value.load_quiescent(), 500);
        assert_eq!(left_of(n60), NIL);
        assert_eq!(nd(n50).ver.load_quiescent() & 1, 1);
        drop(pg);
        assert_eq!(t.keys_quiescent(), vec![20, 50, 60, 70]);
    }

    #[test]
    fn successor_is_right_child_without_left() {
        let d = Domain::new();
        let mut ctx = d.register();
        let t = Bst::new();
        for k in [40, 20, 60] {
            t.insert(&mut ctx, k, 0);
        }
        let n40 = right_of(t.tree.min_root);
        let mut g = ctx.guard();
        g.start();
        let v = g.visit(&nd(n40).ver);
        let (succ, _, succ_p, _) = t.tree.successor(&mut g, n40, v).unwrap();
        assert_eq!((succ, succ_p), (right_of(n40), n40));
        drop(g);
        assert!(t.delete(&mut ctx, 40));
        assert_eq!(t.keys_quiescent(), vec![20, 60]);
    }

    pub(crate) fn oracle_run(opts: TreeOptions, avl: bool, ops: usize, range: i64, seed: u64) {
        let d = Domain::new();
        let mut ctx = d.register();
        let t = Tree::new(opts, avl);
        let mut oracle = BTreeMap::new();
        let mut rng = rand::rngs::SmallRng::seed_from_u64(seed);
        for i in 0..ops {
            let k = rng.gen_range(0..range);
            match rng.gen_range(0..3) {
                0 => {
                    let fresh = !oracle.contains_key(&k);
                    if fresh {
                        oracle.insert(k, i as u64);
                    }
                    assert_eq!(t.insert(&mut ctx, k, i as u64), fresh, "op {i}: insert {k}");
                }
                1 => assert_eq!(
                    t.delete(&mut ctx, k),
                    oracle.remove(&k).is_some(),
                    "op {i}: delete {k}"
                ),
                _ => assert_eq!(
                    t.get(&mut ctx, k),
                    oracle.get(&k).copied(),
                    "op {i}: get {k}"
                ),
            }
        }
        assert_eq!(t.keys(), oracle.keys().copied().collect::<Vec<_>>());
        let mode = if avl {
            crate::Mode::Avl
        } else {
            crate::Mode::Bst
        };
        let rep = crate::checker::validate_tree(&t, mode);
        assert!(rep.is_clean(), "{rep:?}");
        assert_eq!(rep.count as usize, oracle.len());
    }

    #[test]
    fn matches_ordered_map() {
        oracle_run(TreeOptions::default(), false, 20_000, 200, 1);
        oracle_run(TreeOptions::unoptimized(), false, 20_000, 200, 2);
    }

    #[test]
    fn random_inserts_sorted() {
        let d = Domain::new();
        let mut ctx = d.register();
        let t = Bst::new();
        let mut rng = rand::rngs::SmallRng::seed_from_u64(9);
        let mut set = std::collections::BTreeSet::new();
        for _ in 0..1000 {
            let k = rng.gen_range(-10_000..10_000);
            assert_eq!(t.insert(&mut ctx, k, 0), set.insert(k));
        }
        assert_eq!(t.keys_quiescent(), set.into_iter().collect::<Vec<_>>());
    }
}
