//! Markov transition statistics and the normalized P_T–Δ feature space.

use serde::{Deserialize, Serialize};

use crate::affinity::{ap_sweep, ApParams, Point};
use crate::error::{Result, RtnError};
use crate::model::{median, Level};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub probabilities: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn n_levels(&self) -> usize {
        self.counts.len()
    }

    pub fn outgoing(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// Off-diagonal `(from, to, count)` entries with a nonzero count.
    pub fn level_changes(&self) -> Vec<(usize, usize, u64)> {
        let mut out = Vec::new();
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if i != j && c > 0 {
                    out.push((i, j, c));
                }
            }
        }
        out
    }
}

/// First-order Markov estimate from consecutive pairs. Rows without any
/// outgoing transition become identity rows.
pub fn transition_matrix(quantized: &[usize], n_levels: usize) -> Result<TransitionMatrix> {
    if quantized.is_empty() {
        return Err(RtnError::EmptyInput);
    }
    if let Some(&bad) = quantized.iter().find(|&&q| q >= n_levels) {
        return Err(RtnError::InvalidParam {
            name: "quantized",
            reason: format!("level index {bad} out of range for {n_levels} levels"),
        });
    }
    let mut counts = vec![vec![0u64; n_levels]; n_levels];
    for w in quantized.windows(2) {
        counts[w[0]][w[1]] += 1;
    }
    let probabilities = counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                (0..n_levels)
                    .map(|j| if i == j { 1.0 } else { 0.0 })
                    .collect()
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    Ok(TransitionMatrix {
        counts,
        probabilities,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtDeltaPoint {
    pub delta: f64,
    pub pt: f64,
    pub level_pair: (usize, usize),
    pub delta_error: f64,
    pub pt_error: f64,
    /// (delta, pt) divided by the median error of each dimension.
    pub normalized: Point,
}

/// One point per unordered level pair: Δ = |μⱼ − μᵢ| and the symmetrized
/// transition probability, both scaled by the median of their error bars.
pub fn build_pt_delta_space(
    levels: &[Level],
    tmatrix: &TransitionMatrix,
) -> Result<Vec<PtDeltaPoint>> {
    if levels.len() < 2 {
        return Err(RtnError::NoPairs);
    }
    if tmatrix.n_levels() != levels.len() {
        return Err(RtnError::LengthMismatch {
            left: levels.len(),
            right: tmatrix.n_levels(),
        });
    }
    let p = &tmatrix.probabilities;
    let mut points = Vec::with_capacity(levels.len() * (levels.len() - 1) / 2);
    for i in 0..levels.len() {
        for j in i + 1..levels.len() {
            let pt = 0.5 * (p[i][j] + p[j][i]);
            let n_out = (tmatrix.outgoing(i) + tmatrix.outgoing(j)) as f64;
            let pt_error = if n_out > 0.0 {
                (pt * (1.0 - pt) / n_out).sqrt().max(1.0 / n_out)
            } else {
                1.0
            };
            points.push(PtDeltaPoint {
                delta: (levels[j].mu - levels[i].mu).abs(),
                pt,
                level_pair: (i, j),
                delta_error: levels[i].sigma.hypot(levels[j].sigma),
                pt_error,
                normalized: [0.0, 0.0],
            });
        }
    }
    let scale = |errs: Vec<f64>| match median(&errs) {
        Some(m) if m > 0.0 && m.is_finite() => m,
        _ => 1.0,
    };
    let delta_scale = scale(points.iter().map(|p| p.delta_error).collect());
    let pt_scale = scale(points.iter().map(|p| p.pt_error).collect());
    for point in &mut points {
        point.normalized = [point.delta / delta_scale, point.pt / pt_scale];
    }
    Ok(points)
}

/// A candidate source amplitude and how many P_T–Δ points its clusters held
/// across the preference sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Representative {
    pub delta: f64,
    pub support: usize,
}

/// Merges exemplar amplitudes from several clusterings. Sorted values that
/// fall within `tolerance` of a group's first member join that group; the
/// group keeps the amplitude of its best-supported member and the summed
/// support.
pub fn merge_representatives(mut raw: Vec<Representative>, tolerance: f64) -> Vec<Representative> {
    struct Group {
        anchor: f64,
        best: Representative,
        support: usize,
    }
    raw.sort_by(|a, b| a.delta.total_cmp(&b.delta).then(b.support.cmp(&a.support)));
    let mut groups: Vec<Group> = Vec::new();
    for r in raw {
        match groups.last_mut() {
            Some(g) if r.delta - g.anchor <= tolerance => {
                if r.support > g.best.support {
                    g.best = r;
                }
                g.support += r.support;
            }
            _ => groups.push(Group {
                anchor: r.delta,
                best: r,
                support: r.support,
            }),
        }
    }
    groups
        .into_iter()
        .map(|g| Representative {
            delta: g.best.delta,
            support: g.support,
        })
        .collect()
}

/// Runs the affinity-propagation sweep on the normalized space and returns
/// the merged, ascending ensemble of exemplar amplitudes (Δ only).
pub fn representative_amplitudes(
    points: &[PtDeltaPoint],
    levels: &[Level],
    params: &ApParams,
) -> Result<Vec<Representative>> {
    if points.is_empty() {
        return Err(RtnError::EmptyInput);
    }
    let coords: Vec<Point> = points.iter().map(|p| p.normalized).collect();
    let sweep = ap_sweep(&coords, params)?;
    let raw: Vec<Representative> = sweep
        .iter()
        .flat_map(|c| {
            c.exemplar_indices.iter().map(move |&e| Representative {
                delta: points[e].delta,
                support: c.cluster_size(e),
            })
        })
        .collect();
    let sigmas: Vec<f64> = levels.iter().map(|l| l.sigma).collect();
    let tolerance = median(&sigmas).unwrap_or(0.0);
    Ok(merge_representatives(raw, tolerance))
}
