use std::sync::Arc;
use std::time::{Duration, Instant};

use pathcas::checker::{keysum_check, structural_validate};
use pathcas::{Avl, Bst, Domain, Mode, SearchTree, TreeOptions};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

fn hammer(
    tree: Arc<dyn SearchTree>,
    mode: Mode,
    threads: usize,
    keyrange: i64,
    update_pct: u32,
    millis: u64,
) {
    let domain = Domain::new();
    let deadline = Instant::now() + Duration::from_millis(millis);
    let handles: Vec<_> = (0..threads)
        .map(|t| {
            let (tree, domain) = (Arc::clone(&tree), Arc::clone(&domain));
            std::thread::spawn(move || {
                let mut ctx = domain.register();
                let mut rng = SmallRng::seed_from_u64(t as u64);
                let mut delta: i128 = 0;
                let mut i = 0u64;
                while !i.is_multiple_of(64) || Instant::now() < deadline {
                    i += 1;
                    let k = rng.gen_range(0..keyrange);
                    let roll = rng.gen_range(0..200);
                    if roll < update_pct {
                        if tree.insert(&mut ctx, k, i) {
                            delta += k as i128;
                        }
                    } else if roll < 2 * update_pct {
                        if tree.delete(&mut ctx, k) {
                            delta -= k as i128;
                        }
                    } else {
                        tree.contains(&mut ctx, k);
                    }
                }
                delta
            })
        })
        .collect();
    let deltas: Vec<i128> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert!(keysum_check(&*tree, &deltas));
    let r = structural_validate(&*tree, mode);
    assert!(r.is_clean(), "{r:?}");
    let keys = tree.keys_quiescent();
    assert!(keys.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(keys.len() as u64, r.count);
    domain.flush_quiescent();
    assert_eq!(domain.reclaim_stats().pending(), 0);
}

#[test]
fn bst_stress() {
    for (range, upd) in [(16, 100), (256, 10), (4096, 100)] {
        hammer(Arc::new(Bst::new()), Mode::Bst, 4, range, upd, 300);
    }
    hammer(
        Arc::new(Bst::with_options(TreeOptions::unoptimized())),
        Mode::Bst,
        4,
        64,
        100,
        300,
    );
}

#[test]
fn avl_stress() {
    for (range, upd) in [(16, 100), (256, 10), (4096, 100)] {
        hammer(Arc::new(Avl::new()), Mode::Avl, 4, range, upd, 300);
    }
    hammer(
        Arc::new(Avl::with_options(TreeOptions::unoptimized())),
        Mode::Avl,
        4,
        64,
        100,
        300,
    );
}
