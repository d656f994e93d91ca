mod common;

use std::collections::BTreeSet;

use common::oracles::max_matching;
use mpcd_core::metrics::{relaxed_match, MetricsConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sorted_unique(rng: &mut ChaCha8Rng, max: usize, span: usize) -> Vec<usize> {
    let n = rng.gen_range(0..=max);
    let set: BTreeSet<usize> = (0..n).map(|_| rng.gen_range(0..span)).collect();
    set.into_iter().collect()
}

#[test]
fn greedy_equals_maximum_matching() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let span = rng.gen_range(5..80);
        let d = sorted_unique(&mut rng, 12, span);
        let t = sorted_unique(&mut rng, 12, span);
        for n in [0, 2, 5] {
            let r = relaxed_match(&d, &t, &MetricsConfig { tolerance_n: n }).unwrap();
            assert_eq!(r.tp, max_matching(&d, &t, n), "d {d:?} t {t:?} n {n}");
        }
    }
}

fn lists() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (
        prop::collection::btree_set(0usize..200, 0..15),
        prop::collection::btree_set(0usize..200, 0..15),
    )
        .prop_map(|(a, b)| (a.into_iter().collect(), b.into_iter().collect()))
}

proptest! {
    #[test]
    fn report_invariants((d, t) in lists(), n in 0usize..8) {
        let r = relaxed_match(&d, &t, &MetricsConfig { tolerance_n: n }).unwrap();
        prop_assert_eq!(r.tp, r.pairs.len());
        prop_assert!(r.tp <= d.len().min(t.len()));
        prop_assert_eq!(r.tp + r.fp, d.len());
        prop_assert_eq!(r.tp + r.fn_, t.len());
        let truths: BTreeSet<_> = r.pairs.iter().map(|p| p.0).collect();
        let dets: BTreeSet<_> = r.pairs.iter().map(|p| p.1).collect();
        prop_assert_eq!(truths.len(), r.tp);
        prop_assert_eq!(dets.len(), r.tp);
        for &(a, b) in &r.pairs {
            prop_assert!(a.abs_diff(b) <= n);
        }
    }

    #[test]
    fn zero_tolerance_is_intersection((d, t) in lists()) {
        let r = relaxed_match(&d, &t, &MetricsConfig { tolerance_n: 0 }).unwrap();
        let inter = d.iter().filter(|x| t.contains(x)).count();
        prop_assert_eq!(r.tp, inter);
    }

    #[test]
    fn wider_window_never_loses_matches((d, t) in lists(), n in 0usize..8, extra in 0usize..8) {
        let a = relaxed_match(&d, &t, &MetricsConfig { tolerance_n: n }).unwrap();
        let b = relaxed_match(&d, &t, &MetricsConfig { tolerance_n: n + extra }).unwrap();
        prop_assert!(b.tp >= a.tp);
    }
}
