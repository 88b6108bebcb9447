//! Signal in, sources out.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evaluation::Estimate;
use crate::levels::{extract, ExtractorParams, FeatureModel};
use crate::mapper::{map_sources, MapperParams, Solution};
use crate::model::Signal;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub extractor: ExtractorParams,
    pub mapper: MapperParams,
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        self.extractor.validate()?;
        self.mapper.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub model: FeatureModel,
    pub solution: Result<Solution>,
}

/// Feature extraction followed by source mapping. Extraction errors abort;
/// a mapping failure is returned alongside the model.
pub fn analyze(signal: &Signal, params: &PipelineParams) -> Result<Analysis> {
    params.validate()?;
    let model = extract(signal, &params.extractor)?;
    let solution = map_sources(&model, &params.mapper);
    Ok(Analysis { model, solution })
}

impl Solution {
    pub fn to_estimate(&self) -> Estimate {
        Estimate {
            amplitudes: self.amplitudes().to_vec(),
            traces: self.source_traces.clone(),
        }
    }
}
