//! Correctness kit: a sequential reference map, a quiescent structural
//! validator, keysum accounting and an exhaustive linearizability checker
//! for small set histories.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::atomicword::is_descriptor;
use crate::bst::Tree;
use crate::node::{decode_key, nd, NEG_INF, NIL, POS_INF};
use crate::pathcas::ThreadContext;
use crate::{Avl, Bst};

/// Common interface of the two trees.
pub trait SearchTree: Send + Sync {
    fn contains(&self, ctx: &mut ThreadContext, key: i64) -> bool;
    fn get(&self, ctx: &mut ThreadContext, key: i64) -> Option<u64>;
    fn insert(&self, ctx: &mut ThreadContext, key: i64, value: u64) -> bool;
    fn delete(&self, ctx: &mut ThreadContext, key: i64) -> bool;
    fn keys_quiescent(&self) -> Vec<i64>;
    /// See [`structural_validate`].
    fn structural_report(&self, mode: Mode) -> StructuralReport;
}

macro_rules! impl_search_tree {
    ($t:ty) => {
        impl SearchTree for $t {
            fn contains(&self, ctx: &mut ThreadContext, key: i64) -> bool {
                <$t>::contains(self, ctx, key)
            }
            fn get(&self, ctx: &mut ThreadContext, key: i64) -> Option<u64> {
                <$t>::get(self, ctx, key)
            }
            fn insert(&self, ctx: &mut ThreadContext, key: i64, value: u64) -> bool {
                <$t>::insert(self, ctx, key, value)
            }
            fn delete(&self, ctx: &mut ThreadContext, key: i64) -> bool {
                <$t>::delete(self, ctx, key)
            }
            fn keys_quiescent(&self) -> Vec<i64> {
                <$t>::keys_quiescent(self)
            }
            fn structural_report(&self, mode: Mode) -> StructuralReport {
                validate_tree(&self.tree, mode)
            }
        }
    };
}

impl_search_tree!(Bst);
impl_search_tree!(Avl);

// ---------------------------------------------------------------------------
// Sequential reference

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Insert(i64, u64),
    Delete(i64),
    Contains(i64),
    Get(i64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Response {
    Bool(bool),
    Value(Option<u64>),
}

/// Ordered map with insert-if-absent semantics.
#[derive(Clone, Debug, Default)]
pub struct Oracle {
    map: BTreeMap<i64, u64>,
}

impl Oracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(&mut self, op: Op) -> Response {
        match op {
            Op::Insert(k, v) => Response::Bool(match self.map.entry(k) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(v);
                    true
                }
                std::collections::btree_map::Entry::Occupied(_) => false,
            }),
            Op::Delete(k) => Response::Bool(self.map.remove(&k).is_some()),
            Op::Contains(k) => Response::Bool(self.map.contains_key(&k)),
            Op::Get(k) => Response::Value(self.map.get(&k).copied()),
        }
    }

    pub fn keys(&self) -> Vec<i64> {
        self.map.keys().copied().collect()
    }

    pub fn key_sum(&self) -> i128 {
        self.map.keys().map(|&k| k as i128).sum()
    }
}

pub fn oracle_apply(ops: &[Op]) -> Vec<Response> {
    let mut o = Oracle::new();
    ops.iter().map(|&op| o.apply(op)).collect()
}

/// Runs `op` against a real tree.
pub fn apply<T: SearchTree + ?Sized>(tree: &T, ctx: &mut ThreadContext, op: Op) -> Response {
    match op {
        Op::Insert(k, v) => Response::Bool(tree.insert(ctx, k, v)),
        Op::Delete(k) => Response::Bool(tree.delete(ctx, k)),
        Op::Contains(k) => Response::Bool(tree.contains(ctx, k)),
        Op::Get(k) => Response::Value(tree.get(ctx, k)),
    }
}

// ---------------------------------------------------------------------------
// Structural validation

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Bst,
    Avl,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StructuralReport {
    pub count: u64,
    pub key_sum: i128,
    /// Height of the tree in nodes, sentinels excluded.
    pub max_depth: u64,
    /// Mean depth of the keys; the topmost key has depth 1.
    pub avg_key_depth: f64,
    /// AVL balance violations (height mismatch or child heights differing by
    /// two or more). Only counted in [`Mode::Avl`].
    pub violations: u64,
    pub breaches: Vec<String>,
}

impl StructuralReport {
    pub fn is_clean(&self) -> bool {
        self.breaches.is_empty()
    }
}

pub fn structural_validate<T: SearchTree + ?Sized>(tree: &T, mode: Mode) -> StructuralReport {
    tree.structural_report(mode)
}

/// Keysum check: the sum of keys successfully inserted minus the sum of keys
/// successfully deleted, over all threads, must equal the sum of keys in the
/// tree.
pub fn keysum_check<T: SearchTree + ?Sized>(tree: &T, deltas: &[i128]) -> bool {
    deltas.iter().sum::<i128>() == tree.structural_report(Mode::Bst).key_sum
}

const MAX_BREACHES: usize = 32;

pub(crate) fn validate_tree(t: &Tree, mode: Mode) -> StructuralReport {
    let mut rep = StructuralReport::default();
    let breach = |rep: &mut StructuralReport, msg: String| {
        if rep.breaches.len() < MAX_BREACHES {
            rep.breaches.push(msg);
        }
    };
    let avl = mode == Mode::Avl;

    let (maxr, minr) = (nd(t.max_root), nd(t.min_root));
    if maxr.key.load_quiescent() != POS_INF || maxr.right.load_quiescent() != NIL {
        breach(&mut rep, "max sentinel altered".into());
    }
    if maxr.left.load_quiescent() != t.min_root {
        breach(
            &mut rep,
            "min sentinel is not the left child of the max sentinel".into(),
        );
    }
    if minr.key.load_quiescent() != NEG_INF || minr.left.load_quiescent() != NIL {
        breach(&mut rep, "min sentinel altered".into());
    }
    for (name, s) in [("max", maxr), ("min", minr)] {
        let v = s.ver.load_quiescent();
        if is_descriptor(v) || v & 1 == 1 {
            breach(&mut rep, format!("{name} sentinel version {v:#x}"));
        }
    }
    if avl && minr.parent.load_quiescent() != t.max_root {
        breach(&mut rep, "min sentinel parent link broken".into());
    }

    struct Frame {
        n: u64,
        parent: u64,
        depth: u64,
        lo: u64,
        hi: u64,
        expanded: bool,
    }
    // Heights computed bottom-up, keyed by node.
    let mut heights: std::collections::HashMap<u64, u64> = std::collections::HashMap::new();
    let mut seen = HashSet::new();
    let mut depth_sum = 0u64;
    let root = minr.right.load_quiescent();
    if is_descriptor(root) {
        breach(&mut rep, "descriptor in min sentinel's right link".into());
        return rep;
    }
    let mut stack = Vec::new();
    if root != NIL {
        stack.push(Frame {
            n: root,
            parent: t.min_root,
            depth: 1,
            lo: NEG_INF,
            hi: POS_INF,
            expanded: false,
        });
    }
    while let Some(f) = stack.pop() {
        let node = nd(f.n);
        let (l, r) = (node.left.load_quiescent(), node.right.load_quiescent());
        if f.expanded {
            let lh = if l == NIL {
                0
            } else {
                heights.get(&l).copied().unwrap_or(0)
            };
            let rh = if r == NIL {
                0
            } else {
                heights.get(&r).copied().unwrap_or(0)
            };
            let h = 1 + lh.max(rh);
            heights.insert(f.n, h);
            if avl {
                let stored = node.height.load_quiescent();
                if stored != h || lh.abs_diff(rh) >= 2 {
                    rep.violations += 1;
                }
            }
            continue;
        }
        if !seen.insert(f.n) {
            breach(&mut rep, format!("node {:#x} reachable twice", f.n));
            continue;
        }
        let words = [
            ("ver", node.ver.load_quiescent()),
            ("key", node.key.load_quiescent()),
            ("value", node.value.load_quiescent()),
            ("left", l),
            ("right", r),
            ("parent", node.parent.load_quiescent()),
            ("height", node.height.load_quiescent()),
        ];
        let mut residue = false;
        for (name, w) in words {
            if is_descriptor(w) {
                breach(
                    &mut rep,
                    format!("descriptor left in {name} of node {:#x}", f.n),
                );
                residue = true;
            }
        }
        if residue {
            continue;
        }
        let key = node.key.load_quiescent();
        if node.ver.load_quiescent() & 1 == 1 {
            breach(
                &mut rep,
                format!("marked node with key {} is reachable", decode_key(key)),
            );
        }
        if !(f.lo < key && key < f.hi) {
            breach(
                &mut rep,
                format!("key {} violates search order", decode_key(key)),
            );
        }
        if avl && node.parent.load_quiescent() != f.parent {
            breach(
                &mut rep,
                format!("parent link of key {} is stale", decode_key(key)),
            );
        }
        rep.count += 1;
        rep.key_sum += decode_key(key) as i128;
        rep.max_depth = rep.max_depth.max(f.depth);
        depth_sum += f.depth;
        stack.push(Frame {
            expanded: true,
            ..f
        });
        if r != NIL {
            stack.push(Frame {
                n: r,
                parent: f.n,
                depth: f.depth + 1,
                lo: key,
                hi: f.hi,
                expanded: false,
            });
        }
        if l != NIL {
            stack.push(Frame {
                n: l,
                parent: f.n,
                depth: f.depth + 1,
                lo: f.lo,
                hi: key,
                expanded: false,
            });
        }
    }
    if rep.count > 0 {
        rep.avg_key_depth = depth_sum as f64 / rep.count as f64;
    }
    if avl && rep.violations > 0 {
        let msg = format!("{} balance violations", rep.violations);
        breach(&mut rep, msg);
    }
    rep
}

// ---------------------------------------------------------------------------
// Histories

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Contains,
    Insert,
    Delete,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::Contains => "contains",
            OpKind::Insert => "insert",
            OpKind::Delete => "delete",
        })
    }
}

impl FromStr for OpKind {
    type Err = HistoryError;
    fn from_str(s: &str) -> Result<Self, HistoryError> {
        match s {
            "contains" => Ok(OpKind::Contains),
            "insert" => Ok(OpKind::Insert),
            "delete" => Ok(OpKind::Delete),
            _ => Err(HistoryError::Parse(format!("unknown op {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HistoryEvent {
    pub tid: usize,
    pub op: OpKind,
    pub key: i64,
    pub result: bool,
    pub invoke: u64,
    pub ret: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HistoryError {
    TooLarge(usize),
    Malformed(String),
    Parse(String),
}

impl fmt::Display for HistoryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HistoryError::TooLarge(n) => {
                write!(
                    f,
                    "history of {n} ops exceeds the search budget of {MAX_HISTORY_OPS}"
                )
            }
            HistoryError::Malformed(m) => write!(f, "malformed history: {m}"),
            HistoryError::Parse(m) => write!(f, "cannot parse history: {m}"),
        }
    }
}

impl std::error::Error for HistoryError {}

/// Shared logical clock for invoke/return timestamps.
#[derive(Debug, Default)]
pub struct Clock(AtomicU64);

impl Clock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tick(&self) -> u64 {
        self.0.fetch_add(1, Ordering::SeqCst)
    }

    /// Runs `op` on `tree`, timestamping invocation and response.
    pub fn record<T: SearchTree + ?Sized>(
        &self,
        tree: &T,
        ctx: &mut ThreadContext,
        tid: usize,
        op: OpKind,
        key: i64,
    ) -> HistoryEvent {
        let invoke = self.tick();
        let result = match op {
            OpKind::Contains => tree.contains(ctx, key),
            OpKind::Insert => tree.insert(ctx, key, 0),
            OpKind::Delete => tree.delete(ctx, key),
        };
        let ret = self.tick();
        HistoryEvent {
            tid,
            op,
            key,
            result,
            invoke,
            ret,
        }
    }
}

/// One line per event: `tid op key result t_invoke t_return`, tab-separated.
pub fn dump_history(events: &[HistoryEvent]) -> String {
    let mut s = String::new();
    for e in events {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            e.tid, e.op, e.key, e.result, e.invoke, e.ret
        ));
    }
    s
}

pub fn parse_history(text: &str) -> Result<Vec<HistoryEvent>, HistoryError> {
    fn field<T: FromStr>(
        it: &mut std::str::Split<'_, char>,
        line: usize,
        name: &str,
    ) -> Result<T, HistoryError> {
        it.next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| HistoryError::Parse(format!("line {line}: bad {name}")))
    }
    let mut out = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let mut it = line.split('\t');
        let tid = field(&mut it, i + 1, "tid")?;
        let op = it
            .next()
            .ok_or_else(|| HistoryError::Parse(format!("line {}: missing op", i + 1)))?
            .parse()?;
        let key = field(&mut it, i + 1, "key")?;
        let result = field(&mut it, i + 1, "result")?;
        let invoke = field(&mut it, i + 1, "t_invoke")?;
        let ret = field(&mut it, i + 1, "t_return")?;
        if it.next().is_some() {
            return Err(HistoryError::Parse(format!("line {}: extra fields", i + 1)));
        }
        out.push(HistoryEvent {
            tid,
            op,
            key,
            result,
            invoke,
            ret,
        });
    }
    Ok(out)
}

pub const MAX_HISTORY_OPS: usize = 20;

/// Exhaustive search for a sequential order of `history` that respects
/// real-time precedence and reproduces every result, starting from `initial`.
pub fn linearizability_check_from(
    history: &[HistoryEvent],
    initial: &BTreeSet<i64>,
) -> Result<bool, HistoryError> {
    let n = history.len();
    if n > MAX_HISTORY_OPS {
        return Err(HistoryError::TooLarge(n));
    }
    for e in history {
        if e.invoke >= e.ret {
            return Err(HistoryError::Malformed(format!(
                "event {e:?} returns before it is invoked"
            )));
        }
    }
    let mut by_tid: BTreeMap<usize, Vec<&HistoryEvent>> = BTreeMap::new();
    for e in history {
        by_tid.entry(e.tid).or_default().push(e);
    }
    for evs in by_tid.values_mut() {
        evs.sort_by_key(|e| e.invoke);
        if evs.windows(2).any(|w| w[0].ret > w[1].invoke) {
            return Err(HistoryError::Malformed(
                "overlapping events on one thread".into(),
            ));
        }
    }

    // prec[i]: ops that returned before i was invoked.
    let prec: Vec<u32> = history
        .iter()
        .map(|a| {
            history
                .iter()
                .enumerate()
                .filter(|(_, b)| b.ret < a.invoke)
                .fold(0u32, |m, (j, _)| m | 1 << j)
        })
        .collect();
    let full = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let mut failed: HashSet<(u32, Vec<i64>)> = HashSet::new();
    let mut set: BTreeSet<i64> = initial.clone();
    Ok(search(history, &prec, full, 0, &mut set, &mut failed))
}

pub fn linearizability_check(history: &[HistoryEvent]) -> Result<bool, HistoryError> {
    linearizability_check_from(history, &BTreeSet::new())
}

fn search(
    h: &[HistoryEvent],
    prec: &[u32],
    full: u32,
    done: u32,
    set: &mut BTreeSet<i64>,
    failed: &mut HashSet<(u32, Vec<i64>)>,
) -> bool {
    if done == full {
        return true;
    }
    let state = (done, set.iter().copied().collect::<Vec<_>>());
    if failed.contains(&state) {
        return false;
    }
    for (i, e) in h.iter().enumerate() {
        let bit = 1u32 << i;
        if done & bit != 0 || prec[i] & !done != 0 {
            continue;
        }
        let present = set.contains(&e.key);
        let (result, changed) = match e.op {
            OpKind::Contains => (present, false),
            OpKind::Insert => (!present, !present),
            OpKind::Delete => (present, present),
        };
        if result != e.result {
            continue;
        }
        if changed {
            if present {
                set.remove(&e.key);
            } else {
                set.insert(e.key);
            }
        }
        let ok = search(h, prec, full, done | bit, set, failed);
        if changed {
            if present {
                set.insert(e.key);
            } else {
                set.remove(&e.key);
            }
        }
        if ok {
            return true;
        }
    }
    failed.insert(state);
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use rand::{Rng, SeedableRng};

    fn ev(tid: usize, op: OpKind, key: i64, result: bool, invoke: u64, ret: u64) -> HistoryEvent {
        HistoryEvent {
            tid,
            op,
            key,
            result,
            invoke,
            ret,
        }
    }

    #[test]
    fn oracle_basics() {
        assert!(oracle_apply(&[]).is_empty());
        assert_eq!(
            oracle_apply(&[Op::Insert(5, 0), Op::Insert(5, 1), Op::Get(5)]),
            vec![
                Response::Bool(true),
                Response::Bool(false),
                Response::Value(Some(0))
            ]
        );
    }

    /// Independent second reference: a sorted vector of pairs.
    fn vec_reference(ops: &[Op]) -> Vec<Response> {
        let mut v: Vec<(i64, u64)> = Vec::new();
        ops.iter()
            .map(|&op| match op {
                Op::Insert(k, x) => Response::Bool(match v.binary_search_by_key(&k, |p| p.0) {
                    Ok(_) => false,
                    Err(i) => {
                        v.insert(i, (k, x));
                        true
                    }
                }),
                Op::Delete(k) => Response::Bool(match v.binary_search_by_key(&k, |p| p.0) {
                    Ok(i) => {
                        v.remove(i);
                        true
                    }
                    Err(_) => false,
                }),
                Op::Contains(k) => Response::Bool(v.binary_search_by_key(&k, |p| p.0).is_ok()),
                Op::Get(k) => {
                    Response::Value(v.binary_search_by_key(&k, |p| p.0).ok().map(|i| v[i].1))
                }
            })
            .collect()
    }

    #[test]
    fn oracle_agrees_with_second_reference() {
        let mut rng = rand::rngs::SmallRng::seed_from_u64(3);
        let ops: Vec<Op> = (0..10_000)
            .map(|i| {
                let k = rng.gen_range(-50..50);
                match rng.gen_range(0..4) {
                    0 => Op::Insert(k, i),
                    1 => Op::Delete(k),
                    2 => Op::Contains(k),
                    _ => Op::Get(k),
                }
            })
            .collect();
        assert_eq!(oracle_apply(&ops), vec_reference(&ops));
    }

    #[test]
    fn fresh_tree_is_clean() {
        for mode in [Mode::Bst, Mode::Avl] {
            let r = structural_validate(&Avl::new(), mode);
            assert!(r.is_clean(), "{r:?}");
            assert_eq!((r.count, r.key_sum, r.max_depth), (0, 0, 0));
        }
        assert!(keysum_check(&Bst::new(), &[]));
    }

    #[test]
    fn report_metrics() {
        let d = Domain::new();
        let mut ctx = d.register();
        let t = Bst::new();
        for k in [40, 20, 60, 50] {
            t.insert(&mut ctx, k, 0);
        }
        let r = structural_validate(&t, Mode::Bst);
        assert!(r.is_clean(), "{r:?}");
        assert_eq!((r.count, r.key_sum, r.max_depth), (4, 170, 3));
        assert!((r.avg_key_depth - 8.0 / 4.0).abs() < 1e-12);
        assert!(keysum_check(&t, &[40 + 20, 60 + 50]));
        assert!(!keysum_check(&t, &[7]));
    }

    #[test]
    fn corrupted_order_is_reported() {
        let d = Domain::new();
        let mut ctx = d.register();
        let t = Bst::new();
        for k in [40, 20, 60] {
            t.insert(&mut ctx, k, 0);
        }
        let n40 = nd(t.tree.min_root).right.load_quiescent();
        let n20 = nd(n40).left.load_quiescent();
        nd(n20).key.store_quiescent(crate::node::encode_key(45));
        let r = structural_validate(&t, Mode::Bst);
        assert!(
            r.breaches.iter().any(|b| b.contains("search order")),
            "{r:?}"
        );
        nd(n20).key.store_quiescent(crate::node::encode_key(20));
    }

    #[test]
    fn bst_shape_fails_avl_mode() {
        let d = Domain::new();
        let mut ctx = d.register();
        let t = Bst::new();
        for k in 1..=5 {
            t.insert(&mut ctx, k, 0);
        }
        let r = structural_validate(&t, Mode::Avl);
        assert!(!r.is_clean());
        assert!(r.violations > 0);
    }

    #[test]
    fn sequential_history_is_linearizable() {
        let h = [
            ev(0, OpKind::Insert, 1, true, 0, 1),
            ev(0, OpKind::Contains, 1, true, 2, 3),
            ev(1, OpKind::Delete, 1, true, 4, 5),
            ev(1, OpKind::Contains, 1, false, 6, 7),
        ];
        assert_eq!(linearizability_check(&h), Ok(true));
    }

    #[test]
    fn stale_read_after_completed_insert_is_rejected() {
        let h = [
            ev(0, OpKind::Insert, 3, true, 0, 1),
            ev(1, OpKind::Contains, 3, false, 2, 3),
        ];
        assert_eq!(linearizability_check(&h), Ok(false));
    }

    #[test]
    fn overlapping_ops_may_reorder() {
        let h = [
            ev(0, OpKind::Insert, 3, true, 0, 3),
            ev(1, OpKind::Contains, 3, false, 1, 2),
        ];
        assert_eq!(linearizability_check(&h), Ok(true));
        let h = [
            ev(0, OpKind::Insert, 3, true, 0, 3),
            ev(1, OpKind::Insert, 3, true, 1, 2),
        ];
        assert_eq!(linearizability_check(&h), Ok(false));
    }

    #[test]
    fn initial_set_is_respected() {
        let h = [ev(0, OpKind::Delete, 9, true, 0, 1)];
        assert_eq!(linearizability_check(&h), Ok(false));
        assert_eq!(
            linearizability_check_from(&h, &BTreeSet::from([9])),
            Ok(true)
        );
    }

    #[test]
    fn oversized_history_errors() {
        let h: Vec<_> = (0..21)
            .map(|i| ev(0, OpKind::Contains, 0, false, 2 * i, 2 * i + 1))
            .collect();
        assert_eq!(linearizability_check(&h), Err(HistoryError::TooLarge(21)));
    }

    #[test]
    fn dump_parse_roundtrip() {
        let h = vec![
            ev(0, OpKind::Insert, -3, true, 0, 4),
            ev(2, OpKind::Delete, 7, false, 1, 2),
        ];
        let text = dump_history(&h);
        assert_eq!(text.lines().next(), Some("0\tinsert\t-3\ttrue\t0\t4"));
        assert_eq!(parse_history(&text), Ok(h));
        assert!(parse_history("0\tfrob\t1\ttrue\t0\t1").is_err());
    }

    /// Brute-force reference: try every permutation.
    fn brute_force(h: &[HistoryEvent]) -> bool {
        fn go(h: &[HistoryEvent], used: &mut Vec<bool>, order: &mut Vec<usize>) -> bool {
            if order.len() == h.len() {
                let mut set = BTreeSet::new();
                return order.iter().all(|&i| {
                    let e = &h[i];
                    let r = match e.op {
                        OpKind::Contains => set.contains(&e.key),
                        OpKind::Insert => set.insert(e.key),
                        OpKind::Delete => set.remove(&e.key),
                    };
                    r == e.result
                });
            }
            for i in 0..h.len() {
                if used[i] {
                    continue;
                }
                // Every op that returned before i's invocation must already be placed.
                if (0..h.len()).any(|j| !used[j] && j != i && h[j].ret < h[i].invoke) {
                    continue;
                }
                used[i] = true;
                order.push(i);
                if go(h, used, order) {
                    return true;
                }
                order.pop();
                used[i] = false;
            }
            false
        }
        go(h, &mut vec![false; h.len()], &mut Vec::new())
    }

    proptest::proptest! {
        #[test]
        fn checker_matches_brute_force(
            raw in proptest::collection::vec((0usize..3, 0u8..3, 0i64..3, proptest::bool::ANY, 1u64..4), 1..7)
        ) {
            // Build per-thread sequential events with overlapping timestamps.
            let mut t = [0u64; 3];
            let h: Vec<HistoryEvent> = raw.iter().map(|&(tid, op, key, result, len)| {
                let invoke = t[tid] + tid as u64;
                let ret = invoke + len;
                t[tid] = ret + 1;
                let op = [OpKind::Contains, OpKind::Insert, OpKind::Delete][op as usize];
                ev(tid, op, key, result, invoke, ret)
            }).collect();
            proptest::prop_assert_eq!(linearizability_check(&h).unwrap(), brute_force(&h));
        }
    }
}
