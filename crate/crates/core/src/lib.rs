//! Simulation and unsupervised deconvolution of random telegraph noise.
//!
//! [`pipeline::analyze`] turns a uniformly sampled [`Signal`] into a
//! [`levels::FeatureModel`] and then into a [`mapper::Solution`]: N source
//! amplitudes, a baseline and one on/off trace per source.
//! [`simulator`] produces labeled datasets and [`evaluation`] scores
//! solutions against them.

pub mod affinity;
pub mod error;
pub mod evaluation;
pub mod levels;
pub mod mapper;
pub mod model;
pub mod pipeline;
pub mod simulator;

pub use error::{Result, RtnError};
pub use model::{
    derive_seed, ActivityTrace, Level, RtnRng, RtnSource, RunLengths, Signal, StateConfiguration,
};
pub use pipeline::{analyze, Analysis, PipelineParams};
