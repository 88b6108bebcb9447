//! Affinity propagation over 2-D points with negative squared Euclidean
//! similarity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RtnError};
use crate::model::sorted_quantile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApParams {
    pub damping: f64,
    pub max_iterations: usize,
    pub convergence_window: usize,
    /// Quantiles of the off-diagonal similarities used as preferences.
    pub preference_quantiles: Vec<f64>,
}

impl Default for ApParams {
    fn default() -> Self {
        Self {
            damping: 0.9,
            max_iterations: 1000,
            convergence_window: 50,
            preference_quantiles: vec![0.1, 0.25, 0.5, 0.75, 0.9],
        }
    }
}

impl ApParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| {
            Err(RtnError::InvalidParam {
                name,
                reason: reason.to_string(),
            })
        };
        if !(0.5..1.0).contains(&self.damping) {
            return bad("damping", "must lie in [0.5, 1)");
        }
        if self.max_iterations == 0 || self.convergence_window == 0 {
            return bad("max_iterations", "iteration limits must be positive");
        }
        if self.preference_quantiles.is_empty()
            || self
                .preference_quantiles
                .iter()
                .any(|q| !(*q > 0.0 && *q < 1.0))
        {
            return bad("preference_quantiles", "need at least one value in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Sorted point indices.
    pub exemplar_indices: Vec<usize>,
    /// Exemplar index of each point.
    pub assignment: Vec<usize>,
    pub converged: bool,
    pub preference: f64,
}

impl Clustering {
    pub fn n_clusters(&self) -> usize {
        self.exemplar_indices.len()
    }

    pub fn cluster_size(&self, exemplar: usize) -> usize {
        self.assignment.iter().filter(|&&a| a == exemplar).count()
    }
}

pub type Point = [f64; 2];

pub fn similarity(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    -(dx * dx + dy * dy)
}

/// Net similarity of an exemplar set: every non-exemplar's similarity to its
/// best exemplar plus the preference of each exemplar.
pub fn net_similarity(points: &[Point], exemplars: &[usize], preference: f64) -> f64 {
    let mut total = preference * exemplars.len() as f64;
    for (i, p) in points.iter().enumerate() {
        if exemplars.contains(&i) {
            continue;
        }
        total += exemplars
            .iter()
            .map(|&k| similarity(p, &points[k]))
            .fold(f64::NEG_INFINITY, f64::max);
    }
    total
}

/// Frey–Dueck message passing with damped responsibility and availability
/// updates.
///
/// Stops once the exemplar set has been unchanged for `convergence_window`
/// iterations, or after `max_iterations` (then `converged` is false). The
/// final exemplars are refined the way the reference implementation does:
/// points are assigned to their most similar exemplar and each cluster's
/// exemplar is moved to the member with the highest within-cluster
/// similarity, repeated until stable. Single-exemplar swaps are then
/// applied while they raise the net similarity.
pub fn affinity_propagation(
    points: &[Point],
    preference: f64,
    params: &ApParams,
) -> Result<Clustering> {
    let n = points.len();
    if n == 0 {
        return Err(RtnError::EmptyInput);
    }
    if n == 1 || all_identical(points) {
        return Ok(Clustering {
            exemplar_indices: vec![0],
            assignment: vec![0; n],
            converged: true,
            preference,
        });
    }

    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            s[i * n + k] = if i == k {
                preference
            } else {
                similarity(&points[i], &points[k])
            };
        }
    }
    let mut r = vec![0.0; n * n];
    let mut a = vec![0.0; n * n];
    let lambda = params.damping;

    let mut last: Vec<usize> = Vec::new();
    let mut stable = 0usize;
    let mut converged = false;
    for _ in 0..params.max_iterations {
        // Responsibilities.
        for i in 0..n {
            let row = i * n;
            let (mut first, mut first_k, mut second) = (f64::NEG_INFINITY, 0, f64::NEG_INFINITY);
            for k in 0..n {
                let v = a[row + k] + s[row + k];
                if v > first {
                    second = first;
                    first = v;
                    first_k = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competitor = if k == first_k { second } else { first };
                let fresh = s[row + k] - competitor;
                r[row + k] = lambda * r[row + k] + (1.0 - lambda) * fresh;
            }
        }
        // Availabilities.
        for k in 0..n {
            let mut positive_sum = 0.0;
            for i in 0..n {
                if i != k {
                    positive_sum += r[i * n + k].max(0.0);
                }
            }
            let self_r = r[k * n + k];
            for i in 0..n {
                let fresh = if i == k {
                    positive_sum
                } else {
                    (self_r + positive_sum - r[i * n + k].max(0.0)).min(0.0)
                };
                a[i * n + k] = lambda * a[i * n + k] + (1.0 - lambda) * fresh;
            }
        }

        let exemplars: Vec<usize> = (0..n)
            .filter(|&k| a[k * n + k] + r[k * n + k] > 0.0)
            .collect();
        if !exemplars.is_empty() && exemplars == last {
            stable += 1;
            if stable >= params.convergence_window {
                converged = true;
                break;
            }
        } else {
            stable = 1;
            last = exemplars;
        }
    }

    let mut exemplars = last;
    if exemplars.is_empty() {
        let best = (0..n)
            .max_by(|&x, &y| {
                (a[x * n + x] + r[x * n + x])
                    .total_cmp(&(a[y * n + y] + r[y * n + y]))
                    .then(y.cmp(&x))
            })
            .expect("n > 0");
        exemplars = vec![best];
    }
    let (exemplars, _) = refine(points, exemplars);
    let exemplar_indices = polish(points, exemplars, preference);
    let assignment = assign(points, &exemplar_indices);
    Ok(Clustering {
        exemplar_indices,
        assignment,
        converged,
        preference,
    })
}

fn all_identical(points: &[Point]) -> bool {
    points.iter().all(|p| p == &points[0])
}

fn assign(points: &[Point], exemplars: &[usize]) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if exemplars.contains(&i) {
                return i;
            }
            let mut best = exemplars[0];
            let mut best_s = f64::NEG_INFINITY;
            for &k in exemplars {
                let v = similarity(p, &points[k]);
                if v > best_s {
                    best_s = v;
                    best = k;
                }
            }
            best
        })
        .collect()
}

fn refine(points: &[Point], mut exemplars: Vec<usize>) -> (Vec<usize>, Vec<usize>) {
    exemplars.sort_unstable();
    for _ in 0..100 {
        let assignment = assign(points, &exemplars);
        let mut next: Vec<usize> = exemplars
            .iter()
            .map(|&k| {
                let members: Vec<usize> =
                    (0..points.len()).filter(|&i| assignment[i] == k).collect();
                let within: Vec<f64> = members
                    .iter()
                    .map(|&x| {
                        members
                            .iter()
                            .map(|&j| similarity(&points[x], &points[j]))
                            .sum()
                    })
                    .collect();
                let best = (0..members.len())
                    .max_by(|&x, &y| within[x].total_cmp(&within[y]).then(y.cmp(&x)))
                    .expect("exemplar is its own member");
                members[best]
            })
            .collect();
        next.sort_unstable();
        next.dedup();
        if next == exemplars {
            return (exemplars, assignment);
        }
        exemplars = next;
    }
    let assignment = assign(points, &exemplars);
    (exemplars, assignment)
}

/// Point counts up to which `polish` searches every exemplar set of the
/// same size instead of swapping.
const EXHAUSTIVE_LIMIT: usize = 12;

/// Swaps single exemplars for non-exemplars while that raises the net
/// similarity, taking the best swap each round. Small inputs are searched
/// exhaustively. Keeps the cluster count.
fn polish(points: &[Point], mut exemplars: Vec<usize>, preference: f64) -> Vec<usize> {
    let n = points.len();
    let key = |ex: &[usize]| {
        let mut k: Vec<Point> = ex.iter().map(|&i| points[i]).collect();
        k.sort_by(cmp_points);
        k
    };
    let smaller = |a: &[Point], b: &[Point]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| cmp_points(x, y))
            .find(|o| o.is_ne())
            .is_some_and(|o| o.is_lt())
    };
    if n <= EXHAUSTIVE_LIMIT {
        let k = exemplars.len();
        let mut best: Option<(f64, Vec<Point>, Vec<usize>)> = None;
        let mut combo: Vec<usize> = (0..k).collect();
        loop {
            let v = net_similarity(points, &combo, preference);
            let better = match &best {
                None => true,
                Some((b, bk, _)) => {
                    let tol = 1e-12 * b.abs().max(1.0);
                    v > *b + tol || (v >= *b - tol && smaller(&key(&combo), bk))
                }
            };
            if better {
                best = Some((v, key(&combo), combo.clone()));
            }
            // Next combination in lexicographic order.
            let Some(i) = (0..k).rev().find(|&i| combo[i] < n - k + i) else {
                break;
            };
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
        }
        return best.expect("at least one exemplar set").2;
    }
    for _ in 0..10_000 {
        let current = net_similarity(points, &exemplars, preference);
        let mut best = (current, key(&exemplars), None);
        for pos in 0..exemplars.len() {
            for cand in (0..n).filter(|c| !exemplars.contains(c)) {
                let mut trial = exemplars.clone();
                trial[pos] = cand;
                let v = net_similarity(points, &trial, preference);
                // Exact ties go to the set with the smaller coordinates so the
                // result does not depend on the input order.
                if v > best.0 + 1e-12 * best.0.abs().max(1.0) {
                    best = (v, key(&trial), Some(trial));
                } else if v == best.0 {
                    let k = key(&trial);
                    if smaller(&k, &best.1) {
                        best = (v, k, Some(trial));
                    }
                }
            }
        }
        match best.2 {
            Some(mut next) => {
                next.sort_unstable();
                exemplars = next;
            }
            None => break,
        }
    }
    exemplars
}

fn cmp_points(a: &Point, b: &Point) -> std::cmp::Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}

/// Quantile `q` of the off-diagonal similarities.
pub fn preference_for_quantile(points: &[Point], q: f64) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let mut sims = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for k in i + 1..n {
            sims.push(similarity(&points[i], &points[k]));
        }
    }
    sims.sort_by(f64::total_cmp);
    sorted_quantile(&sims, q)
}

/// One clustering per preference quantile, in the order given.
pub fn ap_sweep(points: &[Point], params: &ApParams) -> Result<Vec<Clustering>> {
    if points.is_empty() {
        return Err(RtnError::EmptyInput);
    }
    params
        .preference_quantiles
        .par_iter()
        .map(|&q| affinity_propagation(points, preference_for_quantile(points, q), params))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::derive_seed;
    use rand::Rng;

    fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
        fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == k {
                out.push(cur.clone());
                return;
            }
            for i in start..n {
                cur.push(i);
                rec(i + 1, n, k, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(0, n, k, &mut Vec::new(), &mut out);
        out
    }

    fn best_by_brute_force(points: &[Point], size: usize, pref: f64) -> f64 {
        combinations(points.len(), size)
            .iter()
            .map(|e| net_similarity(points, e, pref))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn triplets() -> Vec<Point> {
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let offsets = [[0.0, 0.0], [0.1, 0.0], [0.0, 0.08]];
        centers
            .iter()
            .flat_map(|c| offsets.iter().map(move |o| [c[0] + o[0], c[1] + o[1]]))
            .collect()
    }

    #[test]
    fn single_point_is_its_own_exemplar() {
        let c = affinity_propagation(&[[1.0, 2.0]], -1.0, &ApParams::default()).unwrap();
        assert_eq!(c.exemplar_indices, vec![0]);
        assert_eq!(c.assignment, vec![0]);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert_eq!(
            affinity_propagation(&[], -1.0, &ApParams::default()),
            Err(RtnError::EmptyInput)
        );
        assert_eq!(
            ap_sweep(&[], &ApParams::default()),
            Err(RtnError::EmptyInput)
        );
    }

    #[test]
    fn separated_triplets_form_three_clusters() {
        let pts = triplets();
        let pref = preference_for_quantile(&pts, 0.5);
        let c = affinity_propagation(&pts, pref, &ApParams::default()).unwrap();
        assert!(c.converged);
        assert_eq!(c.n_clusters(), 3);
        for (g, chunk) in [0..3, 3..6, 6..9].into_iter().enumerate() {
            let ex: Vec<_> = c
                .exemplar_indices
                .iter()
                .filter(|&&e| chunk.contains(&e))
                .collect();
            assert_eq!(ex.len(), 1, "group {g}");
        }
        // The brute-force optimum over all 3-exemplar sets.
        let best = best_by_brute_force(&pts, 3, pref);
        assert!(net_similarity(&pts, &c.exemplar_indices, pref) >= best - 1e-9);
    }

    #[test]
    fn sweep_on_triplets_is_stable() {
        let params = ApParams {
            preference_quantiles: vec![0.1, 0.25, 0.5],
            ..Default::default()
        };
        let sweep = ap_sweep(&triplets(), &params).unwrap();
        assert_eq!(sweep.len(), 3);
        assert!(sweep.iter().all(|c| c.n_clusters() == 3));
    }

    #[test]
    fn higher_preferences_never_merge_clusters() {
        let params = ApParams::default();
        let sweep = ap_sweep(&triplets(), &params).unwrap();
        assert_eq!(sweep.len(), params.preference_quantiles.len());
        let counts: Vec<usize> = sweep.iter().map(Clustering::n_clusters).collect();
        assert!(
            counts[0] == 3 && counts.windows(2).all(|w| w[0] <= w[1]),
            "{counts:?}"
        );
    }

    #[test]
    fn duplicated_points_collapse() {
        let pts = vec![[1.5, 2.5]; 6];
        let sweep = ap_sweep(&pts, &ApParams::default()).unwrap();
        assert!(sweep.iter().all(|c| c.n_clusters() == 1));
    }

    fn clustered_points(seed: u64) -> Vec<Point> {
        let mut rng = derive_seed(seed, 0);
        let groups = rng.random_range(2..=4);
        let mut pts = Vec::new();
        for g in 0..groups {
            let c = [
                g as f64 * 7.0 + rng.random_range(0.0..1.0),
                rng.random_range(0.0..5.0),
            ];
            for _ in 0..rng.random_range(1..=3) {
                if pts.len() < 10 {
                    pts.push([
                        c[0] + rng.random_range(-0.5..0.5),
                        c[1] + rng.random_range(-0.5..0.5),
                    ]);
                }
            }
        }
        pts
    }

    #[test]
    fn exemplars_self_assign_and_are_optimal_for_their_size() {
        for seed in 0..40 {
            let pts = clustered_points(seed);
            for c in ap_sweep(&pts, &ApParams::default()).unwrap() {
                for &e in &c.exemplar_indices {
                    assert_eq!(c.assignment[e], e);
                }
                for &a in &c.assignment {
                    assert!(c.exemplar_indices.contains(&a));
                }
                if c.converged {
                    let best = best_by_brute_force(&pts, c.n_clusters(), c.preference);
                    let got = net_similarity(&pts, &c.exemplar_indices, c.preference);
                    assert!(got >= best - 1e-9, "seed {seed}: {got} < {best}");
                }
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        for seed in 0..10 {
            let pts = clustered_points(100 + seed);
            let n = pts.len();
            let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            if sorted != (0..n).collect::<Vec<_>>() {
                continue;
            }
            let permuted: Vec<Point> = perm.iter().map(|&i| pts[i]).collect();
            let params = ApParams::default();
            let a = ap_sweep(&pts, &params).unwrap();
            let b = ap_sweep(&permuted, &params).unwrap();
            for (ca, cb) in a.iter().zip(&b) {
                let mut ea: Vec<Point> = ca.exemplar_indices.iter().map(|&i| pts[i]).collect();
                let mut eb: Vec<Point> = cb.exemplar_indices.iter().map(|&i| permuted[i]).collect();
                ea.sort_by(|x, y| x[0].total_cmp(&y[0]).then(x[1].total_cmp(&y[1])));
                eb.sort_by(|x, y| x[0].total_cmp(&y[0]).then(x[1].total_cmp(&y[1])));
                assert_eq!(ea, eb, "seed {seed}");
            }
        }
    }
}
