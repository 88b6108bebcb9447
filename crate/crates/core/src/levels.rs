//! Feature-model construction: online Bayesian level discovery, continuity
//! de-noising, and BIC selection over a grid of prior σ values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RtnError};
use crate::model::{median, percentile, proximity_unchecked, Level, Signal};

/// Median of |Z1 - Z2| for independent standard normals: √2·Φ⁻¹(3/4).
pub const MOVING_RANGE_MEDIAN: f64 = 0.9539;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorParams {
    pub p_threshold: f64,
    pub continuity: usize,
    pub sigma_grid_size: usize,
    pub sigma_upper_percentile: f64,
}

impl Default for ExtractorParams {
    fn default() -> Self {
        Self {
            p_threshold: 1e-15,
            continuity: 3,
            sigma_grid_size: 10,
            sigma_upper_percentile: 80.0,
        }
    }
}

impl ExtractorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| {
            Err(RtnError::InvalidParam {
                name,
                reason: reason.to_string(),
            })
        };
        if !(self.p_threshold > 0.0 && self.p_threshold < 1.0) {
            return bad("p_threshold", "must lie in (0, 1)");
        }
        if self.continuity == 0 {
            return bad("continuity", "must be at least 1");
        }
        if self.sigma_grid_size < 2 {
            return bad("sigma_grid_size", "must be at least 2");
        }
        if !(self.sigma_upper_percentile > 0.0 && self.sigma_upper_percentile <= 100.0) {
            return bad("sigma_upper_percentile", "must lie in (0, 100]");
        }
        Ok(())
    }
}

/// Levels plus the de-noised level sequence for one prior σ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureModel {
    /// Sorted by strictly increasing `mu`.
    pub levels: Vec<Level>,
    /// Level index per sample.
    pub quantized: Vec<usize>,
    pub sigma_init: f64,
    pub bic: f64,
}

impl FeatureModel {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Per-sample reconstructed value (the mean of the assigned level).
    pub fn reconstruction(&self) -> Vec<f64> {
        self.quantized.iter().map(|&q| self.levels[q].mu).collect()
    }

    /// Same model with every level mean and σ multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            levels: self
                .levels
                .iter()
                .map(|l| Level {
                    mu: l.mu * factor,
                    sigma: l.sigma * factor,
                    count: l.count,
                })
                .collect(),
            quantized: self.quantized.clone(),
            sigma_init: self.sigma_init * factor,
            bic: f64::NAN,
        }
    }
}

fn moving_ranges(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| (w[1] - w[0]).abs()).collect()
}

fn check_spread(signal: &Signal) -> Result<f64> {
    if signal.len() < 2 {
        return Err(RtnError::DegenerateSignal("fewer than two samples"));
    }
    let (lo, hi) = signal
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi <= lo {
        return Err(RtnError::DegenerateSignal("constant signal"));
    }
    Ok(hi - lo)
}

/// Smallest σ used anywhere, relative to the signal's range. Only matters
/// for noiseless inputs whose moving-range median is zero.
const SIGMA_FLOOR_REL: f64 = 1e-6;

/// Median-moving-range noise estimate.
pub fn estimate_sigma_mmr(signal: &Signal) -> Result<f64> {
    let range = check_spread(signal)?;
    let mr = moving_ranges(signal.values());
    let med = median(&mr).expect("at least one moving range");
    Ok((med / MOVING_RANGE_MEDIAN).max(SIGMA_FLOOR_REL * range))
}

/// Evenly spaced prior σ values from σ_MMR up to the scaled upper percentile
/// of the moving ranges.
pub fn sigma_grid(signal: &Signal, params: &ExtractorParams) -> Result<Vec<f64>> {
    let lower = estimate_sigma_mmr(signal)?;
    let mr = moving_ranges(signal.values());
    let upper =
        percentile(&mr, params.sigma_upper_percentile).expect("non-empty") / MOVING_RANGE_MEDIAN;
    if upper <= lower {
        return Ok(vec![lower]);
    }
    let steps = params.sigma_grid_size.max(2) - 1;
    Ok((0..=steps)
        .map(|i| {
            if i == steps {
                upper
            } else {
                lower + (upper - lower) * i as f64 / steps as f64
            }
        })
        .collect())
}

/// Streaming Gaussian level with σ floored at the prior σ.
#[derive(Debug, Clone)]
struct RunningLevel {
    mean: f64,
    m2: f64,
    count: usize,
    floor: f64,
}

impl RunningLevel {
    fn new(x: f64, floor: f64) -> Self {
        Self {
            mean: x,
            m2: 0.0,
            count: 1,
            floor,
        }
    }

    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn sigma(&self) -> f64 {
        if self.count < 2 {
            return self.floor;
        }
        (self.m2 / (self.count - 1) as f64).sqrt().max(self.floor)
    }

    fn level(&self) -> Level {
        Level {
            mu: self.mean,
            sigma: self.sigma(),
            count: self.count,
        }
    }
}

/// Index of the level nearest to `x` in σ-normalized distance, with that
/// distance. Ties go to the lower index.
fn nearest(levels: &[Level], x: f64) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, l) in levels.iter().enumerate() {
        let z = (x - l.mu).abs() / l.sigma;
        if z < best.1 {
            best = (i, z);
        }
    }
    best
}

/// σ-distance at which a sample is as likely under "a level not yet seen"
/// as under its nearest level.
pub const EVIDENCE_SIGMAS: f64 = 2.0;

/// Single online pass that grows a set of Gaussian levels.
///
/// The hypothesis "the current levels explain the data" starts with prior
/// 0.5. Each sample's likelihood is its proximity to the nearest level,
/// weighed against a constant alternative likelihood (the proximity at
/// [`EVIDENCE_SIGMAS`]); the normalized posterior becomes the next prior,
/// capped at 0.5. Well-explained samples refine their level's streaming mean
/// and σ. Poorly explained samples are held back; once the posterior drops
/// below `p_threshold` a new level is opened from the held samples near the
/// latest one, and the rest go to their nearest level. When the posterior
/// recovers to 0.5 the held samples are released to their nearest levels.
///
/// Levels are returned in creation order.
pub fn bayesian_levels(signal: &Signal, sigma_init: f64, p_threshold: f64) -> Result<Vec<Level>> {
    if !(sigma_init.is_finite() && sigma_init > 0.0) {
        return Err(RtnError::InvalidSigma(sigma_init));
    }
    if !(p_threshold > 0.0 && p_threshold < 1.0) {
        return Err(RtnError::InvalidParam {
            name: "p_threshold",
            reason: "must lie in (0, 1)".into(),
        });
    }
    let values = signal.values();
    let log_alt = proximity_unchecked(EVIDENCE_SIGMAS).ln();
    let log_threshold = (p_threshold / (1.0 - p_threshold)).ln();

    let mut running = vec![RunningLevel::new(values[0], sigma_init)];
    let mut snapshot = vec![running[0].level()];
    let mut log_odds = 0.0f64;
    let mut held: Vec<f64> = Vec::new();

    let assign = |x: f64, running: &mut Vec<RunningLevel>, snapshot: &mut Vec<Level>| {
        let (idx, _) = nearest(snapshot, x);
        running[idx].push(x);
        snapshot[idx] = running[idx].level();
    };

    for &x in &values[1..] {
        let (idx, z) = nearest(&snapshot, x);
        let log_l = proximity_unchecked(z).ln().max(-745.0);
        log_odds = (log_odds + log_l - log_alt).min(0.0);
        if z <= EVIDENCE_SIGMAS {
            running[idx].push(x);
            snapshot[idx] = running[idx].level();
        } else {
            held.push(x);
        }

        if log_odds < log_threshold {
            let (near, rest): (Vec<f64>, Vec<f64>) = held
                .drain(..)
                .partition(|&h| (h - x).abs() <= EVIDENCE_SIGMAS * sigma_init);
            let mut level = RunningLevel::new(near[0], sigma_init);
            for &h in &near[1..] {
                level.push(h);
            }
            snapshot.push(level.level());
            running.push(level);
            for h in rest {
                assign(h, &mut running, &mut snapshot);
            }
            log_odds = 0.0;
        } else if log_odds == 0.0 && !held.is_empty() {
            for h in std::mem::take(&mut held) {
                assign(h, &mut running, &mut snapshot);
            }
        }
    }
    for h in held {
        assign(h, &mut running, &mut snapshot);
    }
    Ok(snapshot)
}

/// Maps samples to levels with the continuity rule: a change of level is
/// accepted at `t` only if samples `t..t+c` are all nearest to the new level
/// (or, within the last `c` samples, all remaining samples are); otherwise
/// the sample stays on the current level.
pub fn denoise(signal: &Signal, levels: &[Level], continuity: usize) -> Result<Vec<usize>> {
    if levels.is_empty() {
        return Err(RtnError::EmptyInput);
    }
    let c = continuity.max(1);
    let near: Vec<usize> = signal
        .values()
        .iter()
        .map(|&x| nearest(levels, x).0)
        .collect();
    let n = near.len();
    let holds = |t: usize, level: usize| {
        let end = (t + c).min(n);
        near[t..end].iter().all(|&l| l == level)
    };

    // The opening level must itself satisfy continuity.
    let start = (0..n).find(|&t| holds(t, near[t])).unwrap_or(0);
    let mut current = near[start];
    let mut out = vec![current; n];
    for t in start + 1..n {
        let candidate = near[t];
        if candidate != current && holds(t, candidate) {
            current = candidate;
        }
        out[t] = current;
    }
    Ok(out)
}

/// Bayesian information criterion of a quantized reconstruction under a
/// single Gaussian noise σ, with one parameter per level.
pub fn bic(signal: &Signal, quantized: &[usize], levels: &[Level], sigma: f64) -> Result<f64> {
    if quantized.len() != signal.len() {
        return Err(RtnError::LengthMismatch {
            left: signal.len(),
            right: quantized.len(),
        });
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(RtnError::InvalidSigma(sigma));
    }
    let n = signal.len() as f64;
    let rss: f64 = signal
        .values()
        .iter()
        .zip(quantized)
        .map(|(y, &q)| (y - levels[q].mu).powi(2))
        .sum();
    let log_l = -0.5 * n * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * n * (sigma * sigma).ln()
        - rss / (2.0 * sigma * sigma);
    Ok(-2.0 * log_l + n.ln() * levels.len() as f64)
}

/// Builds the feature model for one prior σ: discover levels, de-noise,
/// drop empty levels, re-estimate each level from its samples and score.
pub fn build_model(
    signal: &Signal,
    sigma_init: f64,
    params: &ExtractorParams,
) -> Result<FeatureModel> {
    let raw = bayesian_levels(signal, sigma_init, params.p_threshold)?;
    let assigned = denoise(signal, &raw, params.continuity)?;
    let (levels, quantized) = refit_levels(signal.values(), &assigned, raw.len(), sigma_init);
    let bic = bic(signal, &quantized, &levels, sigma_init)?;
    Ok(FeatureModel {
        levels,
        quantized,
        sigma_init,
        bic,
    })
}

/// Recomputes μ and σ of every occupied level from its assigned samples,
/// sorts by μ (merging exact duplicates) and relabels the sequence.
fn refit_levels(
    values: &[f64],
    assigned: &[usize],
    n_raw: usize,
    sigma_floor: f64,
) -> (Vec<Level>, Vec<usize>) {
    let mut stats = vec![(0usize, 0.0f64, 0.0f64); n_raw];
    for (&x, &q) in values.iter().zip(assigned) {
        let s = &mut stats[q];
        s.0 += 1;
        let delta = x - s.1;
        s.1 += delta / s.0 as f64;
        s.2 += delta * (x - s.1);
    }
    let mut occupied: Vec<(usize, Level)> = stats
        .iter()
        .enumerate()
        .filter(|(_, s)| s.0 > 0)
        .map(|(i, &(count, mean, m2))| {
            let sd = if count > 1 {
                (m2 / (count - 1) as f64).sqrt()
            } else {
                0.0
            };
            (
                i,
                Level {
                    mu: mean,
                    sigma: sd.max(sigma_floor),
                    count,
                },
            )
        })
        .collect();
    occupied.sort_by(|a, b| a.1.mu.total_cmp(&b.1.mu).then(a.0.cmp(&b.0)));

    let mut relabel = vec![usize::MAX; n_raw];
    let mut levels: Vec<Level> = Vec::with_capacity(occupied.len());
    for (raw, level) in occupied {
        match levels.last_mut() {
            Some(last) if last.mu == level.mu => {
                // Pooled σ of two equal-mean groups.
                let n = (last.count + level.count) as f64;
                let ss = (last.count as f64 - 1.0) * last.sigma.powi(2)
                    + (level.count as f64 - 1.0) * level.sigma.powi(2);
                last.sigma = (ss / (n - 1.0).max(1.0)).sqrt().max(sigma_floor);
                last.count += level.count;
            }
            _ => levels.push(level),
        }
        relabel[raw] = levels.len() - 1;
    }
    let quantized = assigned.iter().map(|&q| relabel[q]).collect();
    (levels, quantized)
}

/// Sweeps the σ grid and returns the model with the lowest BIC; ties go to
/// fewer levels, then to the smaller σ.
pub fn extract(signal: &Signal, params: &ExtractorParams) -> Result<FeatureModel> {
    params.validate()?;
    let grid = sigma_grid(signal, params)?;
    let models = grid
        .par_iter()
        .map(|&s| build_model(signal, s, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(select_by_bic(models))
}

pub(crate) fn select_by_bic(models: Vec<FeatureModel>) -> FeatureModel {
    models
        .into_iter()
        .min_by(|a, b| {
            a.bic
                .total_cmp(&b.bic)
                .then(a.levels.len().cmp(&b.levels.len()))
                .then(a.sigma_init.total_cmp(&b.sigma_init))
        })
        .expect("sigma grid is never empty")
}
