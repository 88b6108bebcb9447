//! Maps a feature model onto N independent two-state sources.

pub mod candidates;
pub mod cost;
pub mod features;

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::ApParams;
use crate::error::{Result, RtnError};
use crate::levels::FeatureModel;
use crate::model::{ActivityTrace, StateConfiguration};

pub use candidates::{candidate_solutions, minimum_sources, CandidateSet};
pub use cost::{cost_function, optimal_baseline, CostBreakdown, CostTolerances};
pub use features::{
    build_pt_delta_space, representative_amplitudes, transition_matrix, PtDeltaPoint,
    Representative, TransitionMatrix,
};

use cost::{cost_from_counts, optimal_baseline_with, LevelMixture};

/// Masks are u32 and all 2^N configurations are materialized.
pub const MAX_SOURCES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapperParams {
    pub ap: ApParams,
    pub tolerances: CostTolerances,
    pub candidate_cap: usize,
    /// Hypotheses tried beyond the minimum source count.
    pub max_extra_sources: usize,
}

impl Default for MapperParams {
    fn default() -> Self {
        Self {
            ap: ApParams::default(),
            tolerances: CostTolerances::default(),
            candidate_cap: 20_000,
            max_extra_sources: 3,
        }
    }
}

impl MapperParams {
    pub fn validate(&self) -> Result<()> {
        self.ap.validate()?;
        let bad = |name, reason: &str| {
            Err(RtnError::InvalidParam {
                name,
                reason: reason.to_string(),
            })
        };
        if !(self.tolerances.violation_fraction > 0.0
            && self.tolerances.violation_fraction.is_finite())
        {
            return bad("violation_tolerance", "must be positive");
        }
        if !(self.tolerances.mismatch_sigmas > 0.0 && self.tolerances.mismatch_sigmas.is_finite()) {
            return bad("mismatch_tolerance", "must be positive");
        }
        if self.candidate_cap == 0 {
            return bad("candidate_cap", "must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSolution {
    /// Ascending.
    pub amplitudes: Vec<f64>,
    pub baseline: f64,
    pub log_likelihood: f64,
    /// Indexed by on-mask.
    pub configurations: Vec<StateConfiguration>,
    pub level_to_config: Vec<u32>,
    pub cost: f64,
    pub mismatch_metric: f64,
    pub violation_metric: f64,
    pub violations: u64,
    pub transitions: u64,
}

impl CandidateSolution {
    pub fn n_sources(&self) -> usize {
        self.amplitudes.len()
    }

    fn distinct_amplitudes(&self) -> usize {
        1 + self.amplitudes.windows(2).filter(|w| w[0] != w[1]).count()
    }

    /// Lower cost, then fewer distinct amplitudes, then the lexicographically
    /// smaller amplitude tuple.
    fn preference(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.distinct_amplitudes().cmp(&other.distinct_amplitudes()))
            .then_with(|| {
                for (a, b) in self.amplitudes.iter().zip(&other.amplitudes) {
                    match a.total_cmp(b) {
                        Ordering::Equal => continue,
                        ord => return ord,
                    }
                }
                Ordering::Equal
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub candidate: CandidateSolution,
    /// One trace per amplitude, in the same order.
    pub source_traces: Vec<ActivityTrace>,
    /// Configuration mask per sample.
    pub quantized_reconstruction: Vec<u32>,
    pub n_transitions: u64,
    /// Source counts that were tried, in order.
    pub hypotheses: Vec<usize>,
}

impl Solution {
    pub fn n_sources(&self) -> usize {
        self.candidate.n_sources()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.candidate.amplitudes
    }

    pub fn baseline(&self) -> f64 {
        self.candidate.baseline
    }

    /// Per-sample signal value of the assigned configuration.
    pub fn reconstruction(&self) -> Vec<f64> {
        self.quantized_reconstruction
            .iter()
            .map(|&m| self.candidate.configurations[m as usize].total_amplitude)
            .collect()
    }
}

/// Everything derived from the model before the N loop.
#[derive(Debug, Clone)]
pub struct MapperFeatures {
    pub tmatrix: TransitionMatrix,
    pub points: Vec<PtDeltaPoint>,
    pub ensemble: Vec<Representative>,
}

pub fn mapper_features(model: &FeatureModel, params: &MapperParams) -> Result<MapperFeatures> {
    let tmatrix = transition_matrix(&model.quantized, model.n_levels())?;
    let points = build_pt_delta_space(&model.levels, &tmatrix)?;
    let ensemble = representative_amplitudes(&points, &model.levels, &params.ap)?;
    Ok(MapperFeatures {
        tmatrix,
        points,
        ensemble,
    })
}

/// Evaluates every candidate for one source count and returns the preferred one.
pub fn best_candidate(
    model: &FeatureModel,
    features: &MapperFeatures,
    n: usize,
    params: &MapperParams,
) -> Option<CandidateSolution> {
    let set = candidate_solutions(&features.ensemble, n, params.candidate_cap);
    let mixture = LevelMixture::new(&model.levels);
    let changes = features.tmatrix.level_changes();
    let evaluated: Vec<CandidateSolution> = set
        .sets
        .par_iter()
        .map(|amps| {
            let (baseline, log_likelihood) = optimal_baseline_with(amps, &model.levels, &mixture);
            let configurations = StateConfiguration::enumerate(baseline, amps);
            let c = cost_from_counts(&configurations, &model.levels, &changes, &params.tolerances);
            CandidateSolution {
                amplitudes: amps.clone(),
                baseline,
                log_likelihood,
                configurations,
                level_to_config: c.level_to_config,
                cost: c.cost,
                mismatch_metric: c.mismatch_metric,
                violation_metric: c.violation_metric,
                violations: c.violations,
                transitions: c.transitions,
            }
        })
        .collect();
    evaluated.into_iter().reduce(|best, c| {
        if c.preference(&best) == Ordering::Less {
            c
        } else {
            best
        }
    })
}

/// Tries N = N_min, N_min + 1, … and returns the first hypothesis whose best
/// candidate costs less than 2.
pub fn map_sources(model: &FeatureModel, params: &MapperParams) -> Result<Solution> {
    params.validate()?;
    let features = mapper_features(model, params)?;
    let n_min = minimum_sources(model.n_levels());
    let n_max = (n_min + params.max_extra_sources).min(MAX_SOURCES);
    let (best, hypotheses) = escalate(n_min, n_max, |n| {
        best_candidate(model, &features, n, params)
    })?;
    Ok(decode_solution(model, best, hypotheses))
}

fn escalate(
    n_min: usize,
    n_max: usize,
    mut evaluate: impl FnMut(usize) -> Option<CandidateSolution>,
) -> Result<(CandidateSolution, Vec<usize>)> {
    let mut hypotheses = Vec::new();
    for n in n_min..=n_max {
        hypotheses.push(n);
        if let Some(best) = evaluate(n) {
            if best.cost < 2.0 {
                return Ok((best, hypotheses));
            }
        }
    }
    Err(RtnError::NonConvergence { n_min, n_max })
}

fn decode_solution(
    model: &FeatureModel,
    candidate: CandidateSolution,
    hypotheses: Vec<usize>,
) -> Solution {
    let quantized_reconstruction: Vec<u32> = model
        .quantized
        .iter()
        .map(|&q| candidate.level_to_config[q])
        .collect();
    let source_traces = (0..candidate.n_sources())
        .map(|k| {
            ActivityTrace::new(
                quantized_reconstruction
                    .iter()
                    .map(|m| m & (1 << k) != 0)
                    .collect(),
            )
        })
        .collect();
    let n_transitions = quantized_reconstruction
        .windows(2)
        .filter(|w| w[0] != w[1])
        .count() as u64;
    Solution {
        candidate,
        source_traces,
        quantized_reconstruction,
        n_transitions,
        hypotheses,
    }
}
