//! JSON schemas of the files the CLI reads and writes.

use rtn_core::evaluation::{Estimate, Truth};
use rtn_core::levels::FeatureModel;
use rtn_core::mapper::Solution;
use rtn_core::{ActivityTrace, Analysis, Level, RtnError, RtnSource, RunLengths};
use serde::{Deserialize, Serialize};

use crate::config::Experiment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    /// A feature model was built but no source solution was accepted.
    NotConverged,
    /// The input could not be analyzed at all.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub levels: Vec<Level>,
    pub n_levels: usize,
    pub sigma_init: f64,
    pub bic: f64,
}

impl From<&FeatureModel> for ModelRecord {
    fn from(m: &FeatureModel) -> Self {
        Self {
            levels: m.levels.clone(),
            n_levels: m.n_levels(),
            sigma_init: m.sigma_init,
            bic: m.bic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub n_sources: usize,
    pub amplitudes: Vec<f64>,
    pub baseline: f64,
    pub cost: f64,
    pub mismatch_metric: f64,
    pub violation_metric: f64,
    pub violations: u64,
    pub transitions: u64,
    /// Hypotheses tried, in order.
    pub hypotheses: Vec<usize>,
    /// One run-length-encoded on/off trace per source.
    pub traces: Vec<RunLengths>,
}

impl From<&Solution> for SolutionRecord {
    fn from(s: &Solution) -> Self {
        Self {
            n_sources: s.n_sources(),
            amplitudes: s.amplitudes().to_vec(),
            baseline: s.baseline(),
            cost: s.candidate.cost,
            mismatch_metric: s.candidate.mismatch_metric,
            violation_metric: s.candidate.violation_metric,
            violations: s.candidate.violations,
            transitions: s.candidate.transitions,
            hypotheses: s.hypotheses.clone(),
            traces: s
                .source_traces
                .iter()
                .map(ActivityTrace::run_lengths)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_min: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
}

impl ErrorRecord {
    pub fn malformed(message: impl Into<String>) -> Self {
        Self {
            kind: "malformed_input".into(),
            message: message.into(),
            n_min: None,
            n_max: None,
        }
    }
}

impl From<&RtnError> for ErrorRecord {
    fn from(e: &RtnError) -> Self {
        let kind = match e {
            RtnError::InvalidSigma(_) => "invalid_sigma",
            RtnError::DegenerateSignal(_) => "degenerate_signal",
            RtnError::InvalidSignal(_) => "invalid_signal",
            RtnError::InvalidParam { .. } => "invalid_param",
            RtnError::EmptyInput => "empty_input",
            RtnError::NoPairs => "no_pairs",
            RtnError::NonConvergence { .. } => "non_convergence",
            RtnError::LengthMismatch { .. } => "length_mismatch",
        };
        let (n_min, n_max) = match *e {
            RtnError::NonConvergence { n_min, n_max } => (Some(n_min), Some(n_max)),
            _ => (None, None),
        };
        Self {
            kind: kind.into(),
            message: e.to_string(),
            n_min,
            n_max,
        }
    }
}

/// Per-signal analysis result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRecord {
    pub dataset_id: String,
    pub config_hash: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_period: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<SolutionRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorRecord>,
}

impl AnalysisRecord {
    pub fn failed(
        dataset_id: String,
        config_hash: String,
        input: Option<String>,
        error: ErrorRecord,
    ) -> Self {
        Self {
            dataset_id,
            config_hash,
            status: Status::Failed,
            input,
            n_samples: None,
            sample_period: None,
            model: None,
            solution: None,
            error: Some(error),
        }
    }

    pub fn from_analysis(
        dataset_id: String,
        config_hash: String,
        input: Option<String>,
        n_samples: usize,
        sample_period: f64,
        analysis: &Analysis,
    ) -> Self {
        let (status, solution, error) = match &analysis.solution {
            Ok(s) => (Status::Converged, Some(SolutionRecord::from(s)), None),
            Err(e) => (Status::NotConverged, None, Some(ErrorRecord::from(e))),
        };
        Self {
            dataset_id,
            config_hash,
            status,
            input,
            n_samples: Some(n_samples),
            sample_period: Some(sample_period),
            model: Some(ModelRecord::from(&analysis.model)),
            solution,
            error,
        }
    }

    pub fn estimate(&self) -> Option<Estimate> {
        let s = self.solution.as_ref()?;
        Some(Estimate {
            amplitudes: s.amplitudes.clone(),
            traces: s
                .traces
                .iter()
                .map(|r| ActivityTrace::new(r.decode()))
                .collect(),
        })
    }
}

/// One noisy rendering of a ground-truth realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderingRecord {
    pub dataset_id: String,
    pub noise_level: f64,
    /// Absolute noise standard deviation.
    pub noise_sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal: Option<String>,
}

/// Ground-truth sidecar shared by every noise rendering of one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub base_id: u64,
    pub sample_period: f64,
    pub n_samples: usize,
    pub baseline: f64,
    pub sources: Vec<RtnSource>,
    pub activities: Vec<RunLengths>,
    pub datasets: Vec<RenderingRecord>,
}

impl TruthRecord {
    pub fn truths(&self) -> Vec<Truth> {
        let activities: Vec<ActivityTrace> = self
            .activities
            .iter()
            .map(|r| ActivityTrace::new(r.decode()))
            .collect();
        self.datasets
            .iter()
            .map(|d| Truth {
                dataset_id: d.dataset_id.clone(),
                noise_level: d.noise_level,
                sample_period: self.sample_period,
                sources: self.sources.clone(),
                activities: activities.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dataset_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_sources: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<Status>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub config: Experiment,
    pub datasets: Vec<ManifestEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
}

pub fn dataset_name(id: u64) -> String {
    format!("{id:06}")
}
