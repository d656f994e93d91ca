mod common;

use common::oracles::{canonical, dbscan_oracle};
use mpcd_core::detect::{dbscan, detect_in_errors, select_candidates, DetectionConfig, ErrorSeries};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.gen_range(0..=50);
    let span = rng.gen_range(10..=200);
    (0..n).map(|_| rng.gen_range(0..span) as f64).collect()
}

#[test]
fn dbscan_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let pts = random_points(&mut rng);
        for eps in [1.0, 2.0, 5.0] {
            for min_pts in [1, 2, 4] {
                let got = dbscan(&pts, eps, min_pts).unwrap();
                let want = dbscan_oracle(&pts, eps, min_pts);
                assert_eq!(canonical(&got.labels), canonical(&want), "points {pts:?} eps {eps} min_pts {min_pts}");
            }
        }
    }
}

#[test]
fn dbscan_matches_brute_force_on_real_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let n = rng.gen_range(0..=50);
        let pts: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..60.0)).collect();
        let eps = rng.gen_range(0.5..6.0);
        let min_pts = rng.gen_range(1..=5);
        let got = dbscan(&pts, eps, min_pts).unwrap();
        assert_eq!(canonical(&got.labels), canonical(&dbscan_oracle(&pts, eps, min_pts)));
    }
}

#[test]
fn dbscan_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let pts = random_points(&mut rng);
        let mut perm: Vec<usize> = (0..pts.len()).collect();
        perm.shuffle(&mut rng);
        let shuffled: Vec<f64> = perm.iter().map(|&i| pts[i]).collect();
        for (eps, min_pts) in [(1.0, 2), (2.0, 4), (5.0, 1)] {
            let a = dbscan(&pts, eps, min_pts).unwrap();
            let b = dbscan(&shuffled, eps, min_pts).unwrap();
            // Compare co-membership: a[i] == a[j] iff b at the permuted positions agree.
            let mut back = vec![None; pts.len()];
            for (pos, &orig) in perm.iter().enumerate() {
                back[orig] = b.labels[pos];
            }
            assert_eq!(canonical(&a.labels), canonical(&back));
        }
    }
}

fn errors_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (20usize..300).prop_flat_map(|n| {
        (
            prop::collection::vec(-0.3f64..0.3, n),
            prop::collection::vec(-110.0f64..-40.0, n),
        )
    })
}

proptest! {
    #[test]
    fn peaks_have_positive_error_and_spacing((errors, powers) in errors_strategy(), k in 0.0f64..3.0) {
        let cfg = DetectionConfig { threshold_k: k, ..DetectionConfig::default() };
        let det = detect_in_errors(&ErrorSeries::new(errors.clone()).unwrap(), &powers, &cfg).unwrap();
        for p in &det.peaks.peaks {
            prop_assert!(errors[p.index] > 0.0);
        }
        for w in det.peaks.indices().windows(2) {
            prop_assert!((w[1] - w[0]) as f64 > cfg.eps2);
        }
    }

    #[test]
    fn raising_k_shrinks_candidates((errors, _) in errors_strategy(), k in 0.0f64..3.0, dk in 0.0f64..2.0) {
        let s = ErrorSeries::new(errors).unwrap();
        let lo = DetectionConfig { threshold_k: k, ..DetectionConfig::default() };
        let hi = DetectionConfig { threshold_k: k + dk, ..DetectionConfig::default() };
        let a: Vec<usize> = select_candidates(&s, &lo).iter().map(|c| c.index).collect();
        let b: Vec<usize> = select_candidates(&s, &hi).iter().map(|c| c.index).collect();
        prop_assert!(b.iter().all(|i| a.contains(i)));
    }
}

/// Dropping a bridging candidate splits a chain into two clusters whose
/// representatives end up further apart than eps2, so a higher threshold can
/// report more peaks even though it has fewer candidates.
#[test]
fn higher_threshold_can_split_a_chain() {
    let mut errors = vec![0.0; 80];
    let powers = vec![-80.0; 80];
    for e in &mut errors[40..70] {
        *e = 0.01;
    }
    for i in [10, 13, 16, 22, 25, 28] {
        errors[i] = 1.0;
    }
    errors[19] = 0.6;
    let s = ErrorSeries::new(errors).unwrap();
    let count = |k: f64| {
        let cfg = DetectionConfig { threshold_k: k, ..DetectionConfig::default() };
        detect_in_errors(&s, &powers, &cfg).unwrap().peaks.len()
    };
    // Thresholds: 0.557 at k = 1 keeps index 19; 0.742 at k = 1.5 drops it.
    assert_eq!(count(1.0), 1);
    assert_eq!(count(1.5), 2);
}
