//! Scoring of estimated sources against ground truth and batch aggregation.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RtnError};
use crate::model::{ActivityTrace, RtnSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellFit {
    pub mean_on: Option<f64>,
    pub mean_off: Option<f64>,
    pub n_on_segments: usize,
    pub n_off_segments: usize,
}

/// Exponential MLE of the on and off dwell means: the average duration of
/// the complete segments. The first and last runs are cut by the window and
/// are left out.
pub fn fit_dwell_means(trace: &ActivityTrace, sample_period: f64) -> DwellFit {
    let rl = trace.run_lengths();
    let mut on = (0usize, 0usize);
    let mut off = (0usize, 0usize);
    let interior = if rl.runs.len() > 2 {
        &rl.runs[1..rl.runs.len() - 1]
    } else {
        &[][..]
    };
    for (i, &len) in interior.iter().enumerate() {
        // Run k (0-based, in the full list) has state `start` when k is even.
        let state = rl.start ^ ((i + 1) % 2 == 1);
        let acc = if state { &mut on } else { &mut off };
        acc.0 += 1;
        acc.1 += len;
    }
    let mean =
        |(n, total): (usize, usize)| (n > 0).then(|| total as f64 * sample_period / n as f64);
    DwellFit {
        mean_on: mean(on),
        mean_off: mean(off),
        n_on_segments: on.0,
        n_off_segments: off.0,
    }
}

/// Percentage of samples on which the two traces agree.
pub fn activity_match(a: &ActivityTrace, b: &ActivityTrace) -> Result<f64> {
    if a.len() != b.len() {
        return Err(RtnError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(RtnError::EmptyInput);
    }
    let hamming = a
        .states
        .iter()
        .zip(&b.states)
        .filter(|(x, y)| x != y)
        .count();
    Ok(100.0 * (1.0 - hamming as f64 / a.len() as f64))
}

/// Inclusive test `truth/factor ≤ est ≤ truth·factor`.
pub fn within_factor(est: f64, truth: f64, factor: f64) -> bool {
    truth / factor <= est && est <= truth * factor
}

/// Minimum-cost assignment of each row to a distinct column
/// (rows ≤ columns). Returns the column of every row.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    debug_assert!(n <= m);
    // 1-based potentials; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudePair {
    pub true_index: usize,
    pub est_index: usize,
    /// est / true.
    pub amplitude_ratio: f64,
}

/// One-to-one matching of min(N, N′) pairs minimizing Σ |ln(est / true)|.
/// Pairs are returned in ascending `true_index`.
pub fn match_amplitudes(truth: &[f64], est: &[f64]) -> Vec<AmplitudePair> {
    let cost = |t: f64, e: f64| (e / t).ln().abs();
    let mut pairs: Vec<(usize, usize)> = if truth.len() <= est.len() {
        let m: Vec<Vec<f64>> = truth
            .iter()
            .map(|&t| est.iter().map(|&e| cost(t, e)).collect())
            .collect();
        hungarian(&m).into_iter().enumerate().collect()
    } else {
        let m: Vec<Vec<f64>> = est
            .iter()
            .map(|&e| truth.iter().map(|&t| cost(t, e)).collect())
            .collect();
        hungarian(&m)
            .into_iter()
            .enumerate()
            .map(|(e, t)| (t, e))
            .collect()
    };
    pairs.sort_unstable();
    pairs
        .into_iter()
        .map(|(t, e)| AmplitudePair {
            true_index: t,
            est_index: e,
            amplitude_ratio: est[e] / truth[t],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMatch {
    pub true_index: usize,
    pub est_index: usize,
    pub true_amplitude: f64,
    pub est_amplitude: f64,
    pub amplitude_ratio: f64,
    pub activity_match_pct: f64,
    pub true_dwell: DwellFit,
    pub est_dwell: DwellFit,
}

/// Ground truth of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub dataset_id: String,
    pub noise_level: f64,
    pub sample_period: f64,
    pub sources: Vec<RtnSource>,
    pub activities: Vec<ActivityTrace>,
}

/// What the pipeline reported for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub amplitudes: Vec<f64>,
    pub traces: Vec<ActivityTrace>,
}

/// Matches sources by amplitude, then scores activity and dwell times of
/// each matched pair.
pub fn match_sources(truth: &Truth, estimate: &Estimate) -> Result<Vec<SourceMatch>> {
    let true_amps: Vec<f64> = truth.sources.iter().map(|s| s.amplitude).collect();
    match_amplitudes(&true_amps, &estimate.amplitudes)
        .into_iter()
        .map(|p| {
            let t = &truth.activities[p.true_index];
            let e = &estimate.traces[p.est_index];
            Ok(SourceMatch {
                true_index: p.true_index,
                est_index: p.est_index,
                true_amplitude: true_amps[p.true_index],
                est_amplitude: estimate.amplitudes[p.est_index],
                amplitude_ratio: p.amplitude_ratio,
                activity_match_pct: activity_match(t, e)?,
                true_dwell: fit_dwell_means(t, truth.sample_period),
                est_dwell: fit_dwell_means(e, truth.sample_period),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEvaluation {
    pub dataset_id: String,
    pub noise_level: f64,
    pub true_n: usize,
    /// Absent when the pipeline gave no result.
    pub est_n: Option<usize>,
    pub matches: Vec<SourceMatch>,
    pub unmatched_true: Vec<usize>,
    pub unmatched_est: Vec<usize>,
}

pub fn evaluate_dataset(truth: &Truth, estimate: Option<&Estimate>) -> Result<DatasetEvaluation> {
    let true_n = truth.sources.len();
    let (est_n, matches) = match estimate {
        None => (None, Vec::new()),
        Some(e) => {
            if e.amplitudes.len() != e.traces.len() {
                return Err(RtnError::LengthMismatch {
                    left: e.amplitudes.len(),
                    right: e.traces.len(),
                });
            }
            (Some(e.amplitudes.len()), match_sources(truth, e)?)
        }
    };
    let unmatched_true = (0..true_n)
        .filter(|i| !matches.iter().any(|m| m.true_index == *i))
        .collect();
    let unmatched_est = (0..est_n.unwrap_or(0))
        .filter(|i| !matches.iter().any(|m| m.est_index == *i))
        .collect();
    Ok(DatasetEvaluation {
        dataset_id: truth.dataset_id.clone(),
        noise_level: truth.noise_level,
        true_n,
        est_n,
        matches,
        unmatched_true,
        unmatched_est,
    })
}

/// Evaluates a batch in parallel; output order follows the input.
pub fn evaluate_batch(items: &[(Truth, Option<Estimate>)]) -> Result<Vec<DatasetEvaluation>> {
    items
        .par_iter()
        .map(|(t, e)| evaluate_dataset(t, e.as_ref()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_counts: Vec<usize>,
    pub est_counts: Vec<usize>,
    /// `counts[r][c]`: datasets with true N = `true_counts[r]` and estimated
    /// N = `est_counts[c]`.
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTwo {
    pub amplitude: Option<f64>,
    pub mean_on: Option<f64>,
    pub mean_off: Option<f64>,
    pub n_amplitude: usize,
    pub n_mean_on: usize,
    pub n_mean_off: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseYield {
    pub noise_level: f64,
    pub datasets: usize,
    pub converged: usize,
    pub dataset_yield_pct: f64,
    pub true_sources: usize,
    pub detected_sources: usize,
    pub source_yield_pct: f64,
    pub within_factor_two: FactorTwo,
}

/// (x, probability) points of an empirical distribution.
pub type Series = Vec<(f64, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSeries {
    pub noise_level: f64,
    pub activity_match_cdf: Series,
    pub amplitude_ratio_ccdf: Series,
    pub mean_on_ratio_cdf: Series,
    pub mean_off_ratio_cdf: Series,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_datasets: usize,
    pub n_converged: usize,
    pub confusion: ConfusionMatrix,
    pub yields: Vec<NoiseYield>,
    pub series: Vec<NoiseSeries>,
    /// Sorted by dataset id.
    pub datasets: Vec<DatasetEvaluation>,
}

/// Sorted values with F(x) = (i + 1) / n.
pub fn empirical_cdf(mut values: Vec<f64>) -> Series {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values
        .iter()
        .enumerate()
        .map(|(i, &x)| (x, (i + 1) as f64 / n))
        .collect()
}

/// Sorted values with P(X ≥ x) = 1 − i / n.
pub fn empirical_ccdf(mut values: Vec<f64>) -> Series {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values
        .iter()
        .enumerate()
        .map(|(i, &x)| (x, 1.0 - i as f64 / n))
        .collect()
}

fn dwell_ratios(matches: &[&SourceMatch], pick: fn(&DwellFit) -> Option<f64>) -> Vec<f64> {
    matches
        .iter()
        .filter_map(|m| Some(pick(&m.est_dwell)? / pick(&m.true_dwell)?))
        .collect()
}

fn fraction(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let hits = values
        .iter()
        .filter(|&&r| within_factor(r, 1.0, 2.0))
        .count();
    Some(hits as f64 / values.len() as f64)
}

fn sorted_unique(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}

/// Deterministic fold over per-dataset evaluations. Dwell ratios compare the
/// estimated trace's fit with the fit of the true trace over the same window.
pub fn aggregate(mut datasets: Vec<DatasetEvaluation>) -> EvaluationReport {
    datasets.sort_by(|a, b| a.dataset_id.cmp(&b.dataset_id));
    let converged: Vec<&DatasetEvaluation> =
        datasets.iter().filter(|d| d.est_n.is_some()).collect();

    let true_counts = sorted_unique(converged.iter().map(|d| d.true_n).collect());
    let est_counts = sorted_unique(converged.iter().filter_map(|d| d.est_n).collect());
    let mut counts = vec![vec![0; est_counts.len()]; true_counts.len()];
    for d in &converged {
        let r = true_counts.binary_search(&d.true_n).unwrap();
        let c = est_counts.binary_search(&d.est_n.unwrap()).unwrap();
        counts[r][c] += 1;
    }

    let mut levels: Vec<f64> = datasets.iter().map(|d| d.noise_level).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();

    let mut yields = Vec::new();
    let mut series = Vec::new();
    for &level in &levels {
        let group: Vec<&DatasetEvaluation> = datasets
            .iter()
            .filter(|d| d.noise_level.total_cmp(&level) == Ordering::Equal)
            .collect();
        let n = group.len();
        let conv = group.iter().filter(|d| d.est_n.is_some()).count();
        let true_sources: usize = group.iter().map(|d| d.true_n).sum();
        let detected: usize = group.iter().map(|d| d.matches.len()).sum();
        let matches: Vec<&SourceMatch> = group.iter().flat_map(|d| &d.matches).collect();

        let amp: Vec<f64> = matches.iter().map(|m| m.amplitude_ratio).collect();
        let on = dwell_ratios(&matches, |f| f.mean_on);
        let off = dwell_ratios(&matches, |f| f.mean_off);
        let pct = |a: usize, b: usize| {
            if b == 0 {
                0.0
            } else {
                100.0 * a as f64 / b as f64
            }
        };
        yields.push(NoiseYield {
            noise_level: level,
            datasets: n,
            converged: conv,
            dataset_yield_pct: pct(conv, n),
            true_sources,
            detected_sources: detected,
            source_yield_pct: pct(detected, true_sources),
            within_factor_two: FactorTwo {
                amplitude: fraction(&amp),
                mean_on: fraction(&on),
                mean_off: fraction(&off),
                n_amplitude: amp.len(),
                n_mean_on: on.len(),
                n_mean_off: off.len(),
            },
        });
        series.push(NoiseSeries {
            noise_level: level,
            activity_match_cdf: empirical_cdf(
                matches.iter().map(|m| m.activity_match_pct).collect(),
            ),
            amplitude_ratio_ccdf: empirical_ccdf(amp),
            mean_on_ratio_cdf: empirical_cdf(on),
            mean_off_ratio_cdf: empirical_cdf(off),
        });
    }

    EvaluationReport {
        n_datasets: datasets.len(),
        n_converged: converged.len(),
        confusion: ConfusionMatrix {
            true_counts,
            est_counts,
            counts,
        },
        yields,
        series,
        datasets,
    }
}
