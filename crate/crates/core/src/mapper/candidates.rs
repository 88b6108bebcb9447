//! Enumeration of N-amplitude candidate sets from the representative
//! ensemble.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::features::Representative;

/// Smallest N ≥ 1 whose 2^N configurations can host `n_levels` levels.
pub fn minimum_sources(n_levels: usize) -> usize {
    let mut n = 1;
    while (1usize << n) < n_levels {
        n += 1;
    }
    n
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    /// Each set is ascending.
    pub sets: Vec<Vec<f64>>,
    /// The ensemble was smaller than N, so members were repeated.
    pub repeated: bool,
    /// Number of combinations before applying the cap.
    pub total: u128,
}

/// Binomial coefficient, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// All size-`n` combinations of the ensemble, or the `cap` combinations with
/// the largest summed support when there are more. With fewer than `n`
/// members every member is used and the shortfall is filled by repeats.
pub fn candidate_solutions(ensemble: &[Representative], n: usize, cap: usize) -> CandidateSet {
    let e = ensemble.len();
    if e == 0 || n == 0 {
        return CandidateSet {
            sets: Vec::new(),
            repeated: false,
            total: 0,
        };
    }
    if e < n {
        return with_repeats(ensemble, n, cap);
    }
    let total = binomial(e, n);
    let index_sets = if total <= cap as u128 {
        all_combinations(e, n)
    } else {
        top_by_support(ensemble, n, cap)
    };
    let sets = index_sets
        .into_iter()
        .map(|idx| idx.into_iter().map(|i| ensemble[i].delta).collect())
        .collect();
    CandidateSet {
        sets,
        repeated: false,
        total,
    }
}

fn all_combinations(e: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        out.push(idx.clone());
        let mut pos = n;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            if idx[pos] < e - n + pos {
                break;
            }
        }
        idx[pos] += 1;
        for q in pos + 1..n {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

#[derive(PartialEq, Eq)]
struct Node {
    score: u64,
    /// Positions into the support-sorted order.
    idx: Vec<usize>,
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .cmp(&other.score)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Best-first enumeration of n-subsets by decreasing summed support.
///
/// Members are ranked by support (descending, ties by ensemble order). Every
/// subset except the first has a unique parent obtained by moving back the
/// first member that left its initial slot, so each subset is generated
/// once and children never outscore their parent.
fn top_by_support(ensemble: &[Representative], n: usize, cap: usize) -> Vec<Vec<usize>> {
    let e = ensemble.len();
    let mut order: Vec<usize> = (0..e).collect();
    order.sort_by(|&a, &b| {
        ensemble[b]
            .support
            .cmp(&ensemble[a].support)
            .then(a.cmp(&b))
    });
    let weight = |pos: usize| ensemble[order[pos]].support as u64;
    let score = |idx: &[usize]| idx.iter().map(|&p| weight(p)).sum::<u64>();

    let mut heap = BinaryHeap::new();
    let first: Vec<usize> = (0..n).collect();
    heap.push(Node {
        score: score(&first),
        idx: first,
    });
    let mut out = Vec::with_capacity(cap.min(1 << 16));
    while let Some(node) = heap.pop() {
        if out.len() == cap {
            break;
        }
        let idx = node.idx;
        let p0 = (0..n).find(|&p| idx[p] > p).unwrap_or(n - 1);
        for q in [p0.checked_sub(1), Some(p0)].into_iter().flatten() {
            if q >= n {
                continue;
            }
            if (0..q).any(|r| idx[r] != r) {
                continue;
            }
            let limit = if q + 1 < n { idx[q + 1] } else { e };
            if idx[q] + 1 < limit {
                let mut child = idx.clone();
                child[q] += 1;
                heap.push(Node {
                    score: score(&child),
                    idx: child,
                });
            }
        }
        let mut members: Vec<usize> = idx.iter().map(|&p| order[p]).collect();
        members.sort_unstable();
        out.push(members);
    }
    out
}

fn with_repeats(ensemble: &[Representative], n: usize, cap: usize) -> CandidateSet {
    let e = ensemble.len();
    let extra = n - e;
    // Multisets of `extra` members drawn with repetition, in lexicographic order.
    let mut sets = Vec::new();
    let mut pick = vec![0usize; extra];
    let mut total: u128 = 0;
    loop {
        total += 1;
        if sets.len() < cap {
            let mut values: Vec<f64> = ensemble.iter().map(|r| r.delta).collect();
            values.extend(pick.iter().map(|&i| ensemble[i].delta));
            values.sort_by(f64::total_cmp);
            sets.push(values);
        }
        let mut pos = extra;
        loop {
            if pos == 0 {
                return CandidateSet {
                    sets,
                    repeated: true,
                    total,
                };
            }
            pos -= 1;
            if pick[pos] + 1 < e {
                break;
            }
        }
        pick[pos] += 1;
        for q in pos + 1..extra {
            pick[q] = pick[pos];
        }
    }
}
