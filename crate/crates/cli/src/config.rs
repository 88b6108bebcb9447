//! Run configuration: an optional TOML or JSON file overlaid with flags.

use std::path::{Path, PathBuf};

use clap::Args;
use rtn_core::affinity::ApParams;
use rtn_core::simulator::{BenchmarkSimConfig, SimConfig};
use rtn_core::PipelineParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::output::canonical_json;

pub const DEFAULT_OUT: &str = "rtn-out";

/// Keys accepted in a config file. Every key is optional; the flags of the
/// same name take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub sample_period: Option<f64>,
    pub p_threshold: Option<f64>,
    pub continuity: Option<usize>,
    pub sigma_grid: Option<usize>,
    pub sigma_upper_percentile: Option<f64>,
    pub violation_tolerance: Option<f64>,
    pub mismatch_tolerance: Option<f64>,
    pub candidate_cap: Option<usize>,
    pub max_extra_sources: Option<usize>,
    pub affinity: Option<ApParams>,
    pub simulation: Option<SimConfig>,
    /// Number of datasets drawn in physical simulation mode.
    pub physical_datasets: Option<usize>,
    /// Signal files or directories for `analyze`.
    pub inputs: Vec<PathBuf>,
    /// Ground-truth directory for `evaluate`.
    pub truth: Option<PathBuf>,
    /// Result directory for `evaluate`.
    pub results: Option<PathBuf>,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML or JSON config file (JSON when the extension is `.json`)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Sample period for single-column signal files
    #[arg(long, global = true, value_name = "F")]
    pub sample_period: Option<f64>,
    #[arg(long, global = true, value_name = "F")]
    pub p_threshold: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    pub continuity: Option<usize>,
    /// Number of prior σ values tried by the level extractor
    #[arg(long, global = true, value_name = "N")]
    pub sigma_grid: Option<usize>,
    /// Allowed fraction of multi-flip transitions
    #[arg(long, global = true, value_name = "F")]
    pub violation_tolerance: Option<f64>,
    /// Allowed mean level mismatch, in level σ
    #[arg(long, global = true, value_name = "F")]
    pub mismatch_tolerance: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    pub candidate_cap: Option<usize>,
}

/// Everything that determines the content of the outputs. Its hash tags
/// every result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub seed: u64,
    pub sample_period: Option<f64>,
    pub pipeline: PipelineParams,
    pub simulation: SimConfig,
    pub physical_datasets: usize,
}

impl Experiment {
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(canonical_json(self).as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub experiment: Experiment,
    pub config_hash: String,
    pub workers: usize,
    pub out: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub truth: Option<PathBuf>,
    pub results: Option<PathBuf>,
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let is_json = path
        .extension()
        .is_some_and(|ext| ext.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl RunConfig {
    /// Flags win over file values.
    pub fn overlay(mut self, o: &Overrides) -> Self {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if o.$field.is_some() { self.$field = o.$field.clone(); })*
            };
        }
        take!(
            seed,
            workers,
            out,
            sample_period,
            p_threshold,
            continuity,
            sigma_grid,
            violation_tolerance,
            mismatch_tolerance,
            candidate_cap
        );
        self
    }

    pub fn pipeline(&self) -> PipelineParams {
        let mut p = PipelineParams::default();
        let ex = &mut p.extractor;
        if let Some(v) = self.p_threshold {
            ex.p_threshold = v;
        }
        if let Some(v) = self.continuity {
            ex.continuity = v;
        }
        if let Some(v) = self.sigma_grid {
            ex.sigma_grid_size = v;
        }
        if let Some(v) = self.sigma_upper_percentile {
            ex.sigma_upper_percentile = v;
        }
        let mp = &mut p.mapper;
        if let Some(ap) = &self.affinity {
            mp.ap = ap.clone();
        }
        if let Some(v) = self.violation_tolerance {
            mp.tolerances.violation_fraction = v;
        }
        if let Some(v) = self.mismatch_tolerance {
            mp.tolerances.mismatch_sigmas = v;
        }
        if let Some(v) = self.candidate_cap {
            mp.candidate_cap = v;
        }
        if let Some(v) = self.max_extra_sources {
            mp.max_extra_sources = v;
        }
        p
    }

    pub fn resolve(self) -> Result<Resolved> {
        let pipeline = self.pipeline();
        pipeline
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let simulation = self
            .simulation
            .clone()
            .unwrap_or_else(|| SimConfig::Benchmark(BenchmarkSimConfig::default()));
        simulation
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(dt) = self.sample_period {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(CliError::Config(format!(
                    "sample_period must be positive, got {dt}"
                )));
            }
        }
        let physical_datasets = self.physical_datasets.unwrap_or(1);
        if physical_datasets == 0 {
            return Err(CliError::Config(
                "physical_datasets must be at least 1".into(),
            ));
        }
        let experiment = Experiment {
            seed: self.seed.unwrap_or(0),
            sample_period: self.sample_period,
            pipeline,
            simulation,
            physical_datasets,
        };
        Ok(Resolved {
            config_hash: experiment.hash(),
            experiment,
            workers: self.workers.unwrap_or(1),
            out: self.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            inputs: self.inputs,
            truth: self.truth,
            results: self.results,
        })
    }
}

impl Resolved {
    pub fn from_overrides(o: &Overrides) -> Result<Self> {
        let base = match &o.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        base.overlay(o).resolve()
    }

    /// Runs `f` on a pool of the configured size.
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| CliError::Config(format!("workers: {e}")))?;
        Ok(pool.install(f))
    }
}
