//! Relaxed AVL tree: the internal BST plus parent links, stored heights and
//! local rebalancing steps run by the updating thread.
//!
//! Heights may be transiently wrong under concurrency. Each successful update
//! calls [`Tree::rebalance`] on the node that gained or lost a child, which
//! walks towards the root fixing heights and rotating where the stored child
//! heights differ by two or more.

use crate::bst::{Tree, TreeOptions};
use crate::node::{nd, Side, NIL};
use crate::pathcas::ThreadContext;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum FixHeight {
    Success,
    Failure,
    Unnecessary,
}

/// A node pointer with the version observed when it was visited.
#[derive(Clone, Copy, Debug)]
struct Seen {
    n: u64,
    ver: u64,
}

impl Tree {
    fn height_of(&self, g: &ThreadContext, n: u64) -> u64 {
        if n == NIL {
            0
        } else {
            g.read(&nd(n).height)
        }
    }

    /// Visits `n` if non-null; `Err` if it is marked.
    fn visit_opt(&self, g: &mut ThreadContext, n: u64) -> Result<Seen, ()> {
        if n == NIL {
            return Ok(Seen { n, ver: 0 });
        }
        let ver = g.visit(&nd(n).ver);
        if ver & 1 == 1 {
            Err(())
        } else {
            Ok(Seen { n, ver })
        }
    }

    /// Under concurrent restructuring the unsynchronized reads can describe an
    /// impossible shape (e.g. a node as its own grandchild); such a step is
    /// abandoned, since its visited versions cannot all still be current.
    fn distinct(nodes: &[u64]) -> bool {
        nodes
            .iter()
            .enumerate()
            .all(|(i, &a)| a == NIL || !nodes[..i].contains(&a))
    }

    pub(crate) fn rebalance(&self, g: &mut ThreadContext, mut n: u64) {
        while n != self.min_root {
            g.start();
            let nv = g.visit(&nd(n).ver);
            if nv & 1 == 1 {
                return;
            }
            let p = g.read(&nd(n).parent);
            let pv = g.visit(&nd(p).ver);
            if pv & 1 == 1 {
                continue;
            }
            let Ok(l) = self.visit_opt(g, g.read(&nd(n).left)) else {
                continue;
            };
            let Ok(r) = self.visit_opt(g, g.read(&nd(n).right)) else {
                continue;
            };
            let lh = self.height_of(g, l.n);
            let rh = self.height_of(g, r.n);
            let p = Seen { n: p, ver: pv };
            let nn = Seen { n, ver: nv };
            let heavy = if lh >= rh + 2 {
                Some((Side::Left, l, r))
            } else if rh >= lh + 2 {
                Some((Side::Right, r, l))
            } else {
                None
            };
            match heavy {
                Some((s, c, o)) => {
                    // `c` is the taller child on side `s`, `o` its sibling.
                    let Ok(cs) = self.visit_opt(g, g.read(nd(c.n).child(s))) else {
                        continue;
                    };
                    let Ok(co) = self.visit_opt(g, g.read(nd(c.n).child(s.flip()))) else {
                        continue;
                    };
                    let csh = self.height_of(g, cs.n);
                    let coh = self.height_of(g, co.n);
                    if coh > csh {
                        if self.rotate_double(g, s, p, nn, c, o, co) {
                            self.rebalance(g, n);
                            self.rebalance(g, c.n);
                            self.rebalance(g, co.n);
                            n = p.n;
                        }
                    } else if self.rotate_single(g, s, p, nn, c, o) {
                        self.rebalance(g, n);
                        self.rebalance(g, c.n);
                        n = p.n;
                    }
                }
                None => match self.fix_height(g, n, nv, lh, rh) {
                    FixHeight::Failure => continue,
                    FixHeight::Success => n = p.n,
                    FixHeight::Unnecessary => return,
                },
            }
        }
    }

    /// Sets `n.height` from already-visited children heights `lh`, `rh`.
    pub(crate) fn fix_height(
        &self,
        g: &mut ThreadContext,
        n: u64,
        nv: u64,
        lh: u64,
        rh: u64,
    ) -> FixHeight {
        let node = nd(n);
        let old = g.read(&node.height);
        let new = 1 + lh.max(rh);
        if old == new {
            return if g.validate() {
                FixHeight::Unnecessary
            } else {
                FixHeight::Failure
            };
        }
        g.add(&node.height, old, new);
        g.add(&node.ver, nv, nv + 2);
        if g.vexec() {
            FixHeight::Success
        } else {
            FixHeight::Failure
        }
    }

    /// Adds the entry swinging `p`'s child link from `n` to `to`; false if
    /// `p` no longer points at `n`.
    fn swing(&self, g: &mut ThreadContext, p: u64, n: u64, to: u64) -> bool {
        let pn = nd(p);
        for s in [Side::Left, Side::Right] {
            if g.read(pn.child(s)) == n {
                g.add(pn.child(s), n, to);
                return true;
            }
        }
        false
    }

    /// Single rotation lifting `c` (child of `n` on side `s`) into `n`'s place.
    /// With `s == Left` this is a right rotation.
    fn rotate_single(
        &self,
        g: &mut ThreadContext,
        s: Side,
        p: Seen,
        n: Seen,
        c: Seen,
        o: Seen,
    ) -> bool {
        if !self.swing(g, p.n, n.n, c.n) {
            return false;
        }
        let (nn, cn) = (nd(n.n), nd(c.n));
        let Ok(inner) = self.visit_opt(g, g.read(cn.child(s.flip()))) else {
            return false;
        };
        let inner_h = self.height_of(g, inner.n);
        let Ok(outer) = self.visit_opt(g, g.read(cn.child(s))) else {
            return false;
        };
        if !Self::distinct(&[p.n, n.n, c.n, o.n, inner.n, outer.n]) {
            return false;
        }
        if inner.n != NIL {
            g.add(&nd(inner.n).parent, c.n, n.n);
        }
        let outer_h = self.height_of(g, outer.n);
        let oh = self.height_of(g, o.n);

        let old_nh = g.read(&nn.height);
        let old_ch = g.read(&cn.height);
        let new_nh = 1 + inner_h.max(oh);
        let new_ch = 1 + outer_h.max(new_nh);

        g.add(&cn.parent, n.n, p.n);
        g.add(nn.child(s), c.n, inner.n);
        g.add(cn.child(s.flip()), inner.n, n.n);
        g.add(&nn.parent, p.n, c.n);
        g.add(&nn.height, old_nh, new_nh);
        g.add(&cn.height, old_ch, new_ch);
        g.add(&nd(p.n).ver, p.ver, p.ver + 2);
        g.add(&nn.ver, n.ver, n.ver + 2);
        g.add(&cn.ver, c.ver, c.ver + 2);
        g.vexec()
    }

    /// Double rotation lifting `cc` (inner grandchild through `c`, the child of
    /// `n` on side `s`) into `n`'s place, as one PathCAS. With `s == Left`
    /// this is the left-right rotation.
    #[allow(clippy::too_many_arguments)]
    fn rotate_double(
        &self,
        g: &mut ThreadContext,
        s: Side,
        p: Seen,
        n: Seen,
        c: Seen,
        o: Seen,
        cc: Seen,
    ) -> bool {
        if cc.n == NIL || !self.swing(g, p.n, n.n, cc.n) {
            return false;
        }
        let (nn, cn, ccn) = (nd(n.n), nd(c.n), nd(cc.n));

        // cc's children are split: the `s` side goes under c, the other under n.
        let Ok(to_c) = self.visit_opt(g, g.read(ccn.child(s))) else {
            return false;
        };
        let Ok(to_n) = self.visit_opt(g, g.read(ccn.child(s.flip()))) else {
            return false;
        };
        let Ok(outer) = self.visit_opt(g, g.read(cn.child(s))) else {
            return false;
        };
        if !Self::distinct(&[p.n, n.n, c.n, o.n, cc.n, to_c.n, to_n.n, outer.n]) {
            return false;
        }
        let to_c_h = self.height_of(g, to_c.n);
        let to_n_h = self.height_of(g, to_n.n);
        let oh = self.height_of(g, o.n);
        let outer_h = self.height_of(g, outer.n);
        if to_c.n != NIL {
            g.add(&nd(to_c.n).parent, cc.n, c.n);
            g.add(&nd(to_c.n).ver, to_c.ver, to_c.ver + 2);
        }
        if to_n.n != NIL {
            g.add(&nd(to_n.n).parent, cc.n, n.n);
            g.add(&nd(to_n.n).ver, to_n.ver, to_n.ver + 2);
        }

        let old_nh = g.read(&nn.height);
        let old_ch = g.read(&cn.height);
        let old_cch = g.read(&ccn.height);
        let new_nh = 1 + to_n_h.max(oh);
        let new_ch = 1 + outer_h.max(to_c_h);
        let new_cch = 1 + new_nh.max(new_ch);

        g.add(&ccn.parent, c.n, p.n);
        g.add(ccn.child(s), to_c.n, c.n);
        g.add(&cn.parent, n.n, cc.n);
        g.add(ccn.child(s.flip()), to_n.n, n.n);
        g.add(&nn.parent, p.n, cc.n);
        g.add(cn.child(s.flip()), cc.n, to_c.n);
        g.add(nn.child(s), c.n, to_n.n);
        g.add(&nn.height, old_nh, new_nh);
        g.add(&cn.height, old_ch, new_ch);
        g.add(&ccn.height, old_cch, new_cch);
        g.add(&ccn.ver, cc.ver, cc.ver + 2);
        g.add(&nd(p.n).ver, p.ver, p.ver + 2);
        g.add(&nn.ver, n.ver, n.ver + 2);
        g.add(&cn.ver, c.ver, c.ver + 2);
        g.vexec()
    }
}

/// Relaxed AVL tree mapping `i64` keys to `u64` values.
///
/// Same interface and guarantees as [`Bst`](crate::Bst); additionally each
/// update leaves the tree balanced along the path it repaired, so once all
/// operations have returned no node has a balance violation.
pub struct Avl {
    pub(crate) tree: Tree,
}

impl Avl {
    pub fn new() -> Self {
        Self::with_options(TreeOptions::default())
    }

    pub fn with_options(opts: TreeOptions) -> Self {
        Avl {
            tree: Tree::new(opts, true),
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

    pub fn insert(&self, ctx: &mut ThreadContext, key: i64, value: u64) -> bool {
        self.tree.insert(ctx, key, value)
    }

    pub fn delete(&self, ctx: &mut ThreadContext, key: i64) -> bool {
        self.tree.delete(ctx, key)
    }

    pub fn keys_quiescent(&self) -> Vec<i64> {
        self.tree.keys()
    }
}

impl Default for Avl {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for Avl {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Avl")
            .field("opts", &self.tree.opts)
            .finish_non_exhaustive()
    }
}
