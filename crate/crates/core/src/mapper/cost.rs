//! Baseline maximum-likelihood search and the two-metric candidate cost.

use serde::{Deserialize, Serialize};

use crate::model::{median, superpose, Level, StateConfiguration};

/// Relative floor applied to the level mixture density.
pub const DENSITY_FLOOR_REL: f64 = 1e-12;
/// Levels farther than this many of their σ contribute nothing.
const MIXTURE_CUTOFF_SIGMAS: f64 = 10.0;

/// Occupancy-weighted mixture of the level Gaussians.
#[derive(Debug, Clone)]
pub struct LevelMixture {
    /// (mu, sigma, weight / (sigma·√(2π))), sorted by mu.
    components: Vec<(f64, f64, f64)>,
    max_sigma: f64,
    floor: f64,
}

impl LevelMixture {
    pub fn new(levels: &[Level]) -> Self {
        let total: usize = levels.iter().map(|l| l.count).sum();
        let total = total.max(1) as f64;
        let norm = (2.0 * std::f64::consts::PI).sqrt();
        let mut components: Vec<(f64, f64, f64)> = levels
            .iter()
            .map(|l| (l.mu, l.sigma, l.count as f64 / total / (l.sigma * norm)))
            .collect();
        components.sort_by(|a, b| a.0.total_cmp(&b.0));
        let max_sigma = components.iter().map(|c| c.1).fold(0.0, f64::max);
        let mut mixture = Self {
            components,
            max_sigma,
            floor: 0.0,
        };
        let f_max = levels
            .iter()
            .map(|l| mixture.density(l.mu))
            .fold(0.0, f64::max);
        mixture.floor = DENSITY_FLOOR_REL * f_max;
        mixture
    }

    pub fn density(&self, x: f64) -> f64 {
        let reach = MIXTURE_CUTOFF_SIGMAS * self.max_sigma;
        let start = self.components.partition_point(|c| c.0 < x - reach);
        let mut f = 0.0;
        for &(mu, sigma, scale) in &self.components[start..] {
            if mu > x + reach {
                break;
            }
            let z = (x - mu) / sigma;
            if z.abs() <= MIXTURE_CUTOFF_SIGMAS {
                f += scale * (-0.5 * z * z).exp();
            }
        }
        f
    }

    pub fn floored_log_density(&self, x: f64) -> f64 {
        self.density(x).max(self.floor).ln()
    }

    fn support(&self) -> (f64, f64) {
        let reach = MIXTURE_CUTOFF_SIGMAS * self.max_sigma;
        (
            self.components.first().map_or(0.0, |c| c.0) - reach,
            self.components.last().map_or(0.0, |c| c.0) + reach,
        )
    }
}

/// Grid search over baselines b ∈ [min μ − ΣΔ, max μ] in steps of a quarter
/// of the median level σ. Each baseline is scored by the summed floored log
/// density of its 2^N configuration values; the first maximum wins.
pub fn optimal_baseline(amplitudes: &[f64], levels: &[Level]) -> (f64, f64) {
    optimal_baseline_with(amplitudes, levels, &LevelMixture::new(levels))
}

pub(crate) fn optimal_baseline_with(
    amplitudes: &[f64],
    levels: &[Level],
    mixture: &LevelMixture,
) -> (f64, f64) {
    let sigmas: Vec<f64> = levels.iter().map(|l| l.sigma).collect();
    let step = median(&sigmas).unwrap_or(1.0) / 4.0;
    let lo_mu = levels.iter().map(|l| l.mu).fold(f64::INFINITY, f64::min);
    let hi_mu = levels
        .iter()
        .map(|l| l.mu)
        .fold(f64::NEG_INFINITY, f64::max);
    let span: f64 = amplitudes.iter().sum();
    let lo = lo_mu - span;
    let n_steps = ((hi_mu - lo) / step).floor() as usize;

    let sums: Vec<f64> = (0..1u32 << amplitudes.len())
        .map(|m| superpose(m, 0.0, amplitudes))
        .collect();
    let floor_log = mixture.floor.ln();
    let (sup_lo, sup_hi) = mixture.support();

    let mut best = (lo, f64::NEG_INFINITY);
    for j in 0..=n_steps {
        let b = lo + j as f64 * step;
        let mut ll = 0.0;
        for &s in &sums {
            let x = b + s;
            ll += if x < sup_lo || x > sup_hi {
                floor_log
            } else {
                mixture.floored_log_density(x)
            };
        }
        if ll > best.1 {
            best = (b, ll);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostTolerances {
    /// Allowed violations as a fraction of all transitions.
    pub violation_fraction: f64,
    /// Allowed mean level-to-configuration mismatch, in level σ.
    pub mismatch_sigmas: f64,
}

impl Default for CostTolerances {
    fn default() -> Self {
        Self {
            violation_fraction: 0.02,
            mismatch_sigmas: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub cost: f64,
    pub mismatch_metric: f64,
    pub violation_metric: f64,
    pub violations: u64,
    pub transitions: u64,
    /// Configuration mask nearest to each level.
    pub level_to_config: Vec<u32>,
}

/// Index of the configuration whose value is closest to `x`; ties go to the
/// smaller mask.
pub fn nearest_configuration(configs: &[StateConfiguration], x: f64) -> u32 {
    let mut best = (0u32, f64::INFINITY);
    for c in configs {
        let d = (c.total_amplitude - x).abs();
        if d < best.1 {
            best = (c.on_mask, d);
        }
    }
    best.0
}

fn level_mapping(
    configs: &[StateConfiguration],
    levels: &[Level],
    tol: &CostTolerances,
) -> (Vec<u32>, f64) {
    let mut total = 0.0;
    let map: Vec<u32> = levels
        .iter()
        .map(|l| {
            let m = nearest_configuration(configs, l.mu);
            total += (l.mu - configs[m as usize].total_amplitude).abs() / l.sigma;
            m
        })
        .collect();
    let mean = if levels.is_empty() {
        0.0
    } else {
        total / levels.len() as f64
    };
    (map, (mean / tol.mismatch_sigmas).min(1.0))
}

fn violation_metric(violations: u64, transitions: u64, tol: &CostTolerances) -> f64 {
    if transitions == 0 {
        0.0
    } else {
        (violations as f64 / (tol.violation_fraction * transitions as f64)).min(1.0)
    }
}

/// Scores a candidate: (i) the mean σ-normalized distance of each level to
/// its nearest configuration, (ii) the share of configuration changes in the
/// reconstructed sequence that flip more than one source. Each metric is
/// divided by its tolerance and clamped to 1; the cost is their sum.
pub fn cost_function(
    configs: &[StateConfiguration],
    levels: &[Level],
    quantized: &[usize],
    tol: &CostTolerances,
) -> CostBreakdown {
    let (level_to_config, mismatch_metric) = level_mapping(configs, levels, tol);
    let mut violations = 0u64;
    let mut transitions = 0u64;
    for w in quantized.windows(2) {
        let (a, b) = (level_to_config[w[0]], level_to_config[w[1]]);
        if a != b {
            transitions += 1;
            if (a ^ b).count_ones() > 1 {
                violations += 1;
            }
        }
    }
    let violation_metric = violation_metric(violations, transitions, tol);
    CostBreakdown {
        cost: mismatch_metric + violation_metric,
        mismatch_metric,
        violation_metric,
        violations,
        transitions,
        level_to_config,
    }
}

/// Same result as [`cost_function`], computed from the level-change counts
/// instead of rescanning the sequence.
pub(crate) fn cost_from_counts(
    configs: &[StateConfiguration],
    levels: &[Level],
    changes: &[(usize, usize, u64)],
    tol: &CostTolerances,
) -> CostBreakdown {
    let (level_to_config, mismatch_metric) = level_mapping(configs, levels, tol);
    let mut violations = 0u64;
    let mut transitions = 0u64;
    for &(i, j, count) in changes {
        let (a, b) = (level_to_config[i], level_to_config[j]);
        if a != b {
            transitions += count;
            if (a ^ b).count_ones() > 1 {
                violations += count;
            }
        }
    }
    let violation_metric = violation_metric(violations, transitions, tol);
    CostBreakdown {
        cost: mismatch_metric + violation_metric,
        mismatch_metric,
        violation_metric,
        violations,
        transitions,
        level_to_config,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapper::features::transition_matrix;
    use proptest::prelude::*;

    fn level(mu: f64, sigma: f64, count: usize) -> Level {
        Level { mu, sigma, count }
    }

    #[test]
    fn baseline_for_one_source_sits_on_the_modes() {
        let levels = [level(0.0, 0.01, 500), level(1.0, 0.01, 500)];
        let (b, ll) = optimal_baseline(&[1.0], &levels);
        // Oracle: dense 1-D scan of the same objective.
        let mix = LevelMixture::new(&levels);
        let mut best = (f64::NAN, f64::NEG_INFINITY);
        let mut x = -1.0;
        while x <= 1.0 {
            let v = mix.floored_log_density(x) + mix.floored_log_density(x + 1.0);
            if v > best.1 {
                best = (x, v);
            }
            x += 0.0001;
        }
        assert!(best.0.abs() < 1e-3);
        assert!(b.abs() < 0.01 / 4.0, "baseline {b}");
        assert!(ll <= best.1 + 1e-9);
    }

    #[test]
    fn baseline_is_translation_equivariant() {
        let levels = [
            level(0.0, 0.05, 300),
            level(0.7, 0.05, 200),
            level(1.9, 0.04, 100),
            level(2.6, 0.05, 50),
        ];
        let shifted: Vec<Level> = levels
            .iter()
            .map(|l| level(l.mu + 5.0, l.sigma, l.count))
            .collect();
        let (b0, ll0) = optimal_baseline(&[0.7, 1.9], &levels);
        let (b1, ll1) = optimal_baseline(&[0.7, 1.9], &shifted);
        assert!((b1 - b0 - 5.0).abs() < 1e-9);
        assert!((ll1 - ll0).abs() < 1e-6 * ll0.abs());
    }

    #[test]
    fn unmatched_configurations_are_floored_not_fatal() {
        let levels = [level(0.0, 0.1, 10), level(1.0, 0.1, 10)];
        let (_, ll) = optimal_baseline(&[1.0, 7.0, 13.0], &levels);
        assert!(ll.is_finite());
    }

    #[test]
    fn ideal_candidate_costs_zero() {
        let amps = [1.0, 2.5];
        let configs = StateConfiguration::enumerate(0.0, &amps);
        let levels: Vec<Level> = configs
            .iter()
            .map(|c| level(c.total_amplitude, 0.1, 10))
            .collect();
        // Level index equals configuration mask; sequence 0→1→3→2→0 is single-flip.
        let quantized = [0, 0, 1, 1, 3, 3, 2, 2, 0];
        let c = cost_function(&configs, &levels, &quantized, &CostTolerances::default());
        assert_eq!(c.cost, 0.0);
        assert_eq!(c.violations, 0);
        assert_eq!(c.transitions, 4);
    }

    #[test]
    fn worst_candidate_is_clamped_to_two() {
        let amps = [1.0, 2.5];
        let configs = StateConfiguration::enumerate(0.0, &amps);
        // Levels sit 1.2 σ off their configurations; all moves are 0↔3.
        let levels = vec![level(0.12, 0.1, 10), level(3.62, 0.1, 10)];
        let quantized = [0, 1, 0, 1, 0, 1];
        let c = cost_function(&configs, &levels, &quantized, &CostTolerances::default());
        assert_eq!(c.level_to_config, vec![0, 3]);
        assert_eq!(c.mismatch_metric, 1.0);
        assert_eq!(c.violation_metric, 1.0);
        assert_eq!(c.cost, 2.0);
    }

    #[test]
    fn no_transitions_means_zero_violation_metric() {
        let configs = StateConfiguration::enumerate(0.0, &[1.0]);
        let levels = vec![level(0.0, 0.1, 5)];
        let c = cost_function(&configs, &levels, &[0, 0, 0], &CostTolerances::default());
        assert_eq!(c.violation_metric, 0.0);
        assert_eq!(c.transitions, 0);
    }

    proptest! {
        #[test]
        fn count_based_cost_matches_scan(
            amps in proptest::collection::vec(0.1f64..3.0, 1..4),
            mus in proptest::collection::vec(-1.0f64..6.0, 2..8),
            seq in proptest::collection::vec(0usize..8, 2..200),
            baseline in -1.0f64..1.0,
        ) {
            let levels: Vec<Level> = mus.iter().map(|&m| level(m, 0.2, 3)).collect();
            let quantized: Vec<usize> = seq.iter().map(|q| q % levels.len()).collect();
            let configs = StateConfiguration::enumerate(baseline, &amps);
            let tol = CostTolerances::default();
            let scan = cost_function(&configs, &levels, &quantized, &tol);
            let tm = transition_matrix(&quantized, levels.len()).unwrap();
            let fast = cost_from_counts(&configs, &levels, &tm.level_changes(), &tol);
            prop_assert_eq!(&scan, &fast);
            prop_assert!((0.0..=2.0).contains(&scan.cost));
            prop_assert!((0.0..=1.0).contains(&scan.mismatch_metric));
            prop_assert!((0.0..=1.0).contains(&scan.violation_metric));
        }
    }
}
