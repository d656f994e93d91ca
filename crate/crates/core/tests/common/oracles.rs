//! Brute-force reference implementations shared by the oracle tests.
#![allow(dead_code)]

use std::collections::HashMap;

/// O(n^2) density-connectivity clustering; a border point reachable from
/// several clusters joins the one whose leftmost core point is smallest.
pub fn dbscan_oracle(points: &[f64], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let near = |i: usize, j: usize| (points[i] - points[j]).abs() <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();

    let mut comp: Vec<Option<usize>> = vec![None; n];
    let mut n_comp = 0;
    for s in 0..n {
        if !core[s] || comp[s].is_some() {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = Some(n_comp);
        while let Some(p) = stack.pop() {
            for q in 0..n {
                if core[q] && comp[q].is_none() && near(p, q) {
                    comp[q] = Some(n_comp);
                    stack.push(q);
                }
            }
        }
        n_comp += 1;
    }
    let mut leftmost = vec![f64::INFINITY; n_comp];
    for i in 0..n {
        if let Some(c) = comp[i] {
            leftmost[c] = leftmost[c].min(points[i]);
        }
    }
    let mut labels = comp.clone();
    for i in 0..n {
        if core[i] {
            continue;
        }
        labels[i] = (0..n)
            .filter(|&j| core[j] && near(i, j))
            .map(|j| comp[j].unwrap())
            .min_by(|&a, &b| leftmost[a].total_cmp(&leftmost[b]));
    }
    labels
}

/// Relabels clusters by first appearance so partitions compare directly.
pub fn canonical(labels: &[Option<usize>]) -> Vec<Option<usize>> {
    let mut map = HashMap::new();
    labels
        .iter()
        .map(|l| {
            l.map(|c| {
                let next = map.len();
                *map.entry(c).or_insert(next)
            })
        })
        .collect()
}

/// Exact maximum one-to-one matching under `|t - d| <= n`, by memoized search
/// over (truth position, used-detection mask).
pub fn max_matching(detections: &[usize], truths: &[usize], n: usize) -> usize {
    fn go(i: usize, used: u32, d: &[usize], t: &[usize], n: usize, memo: &mut HashMap<(usize, u32), usize>) -> usize {
        if i == t.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, used)) {
            return v;
        }
        let mut best = go(i + 1, used, d, t, n, memo);
        for (j, &dj) in d.iter().enumerate() {
            if used & (1 << j) == 0 && dj.abs_diff(t[i]) <= n {
                best = best.max(1 + go(i + 1, used | (1 << j), d, t, n, memo));
            }
        }
        memo.insert((i, used), best);
        best
    }
    assert!(detections.len() <= 32);
    go(0, 0, detections, truths, n, &mut HashMap::new())
}
