//! Shared domain types and small numeric utilities used across the pipeline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RtnError};

/// Project-wide generator. ChaCha8 has a fixed, platform-independent output
/// stream and 2^64 independent streams per seed, which is what
/// [`derive_seed`] uses to split work across datasets.
pub type RtnRng = ChaCha8Rng;

/// Returns the generator for `stream_id` under `base_seed`.
///
/// The key is expanded from `base_seed` with `SeedableRng::seed_from_u64`
/// and the ChaCha stream counter is set to `stream_id`, so streams never
/// overlap and the same pair always reproduces the same bytes.
pub fn derive_seed(base_seed: u64, stream_id: u64) -> RtnRng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(stream_id);
    rng
}

/// A uniformly sampled observed trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    values: Vec<f64>,
    sample_period: f64,
}

impl Signal {
    pub fn new(values: Vec<f64>, sample_period: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(RtnError::EmptyInput);
        }
        if !(sample_period.is_finite() && sample_period > 0.0) {
            return Err(RtnError::InvalidSignal(format!(
                "sample period must be positive, got {sample_period}"
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(RtnError::InvalidSignal(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            values,
            sample_period,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same samples multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.values.iter().map(|v| v * factor).collect(),
            self.sample_period,
        )
    }
}

/// One hidden two-state fluctuator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtnSource {
    pub amplitude: f64,
    pub mean_on: f64,
    pub mean_off: f64,
}

impl RtnSource {
    pub fn new(amplitude: f64, mean_on: f64, mean_off: f64) -> Result<Self> {
        for (name, v) in [
            ("amplitude", amplitude),
            ("mean_on", mean_on),
            ("mean_off", mean_off),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(RtnError::InvalidParam {
                    name,
                    reason: format!("must be positive and finite, got {v}"),
                });
            }
        }
        Ok(Self {
            amplitude,
            mean_on,
            mean_off,
        })
    }

    /// Stationary probability of the on-state.
    pub fn on_probability(&self) -> f64 {
        self.mean_on / (self.mean_on + self.mean_off)
    }
}

/// Per-sample on/off state of one source.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActivityTrace {
    pub states: Vec<bool>,
}

impl ActivityTrace {
    pub fn new(states: Vec<bool>) -> Self {
        Self { states }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn complement(&self) -> Self {
        Self::new(self.states.iter().map(|s| !s).collect())
    }

    pub fn on_fraction(&self) -> f64 {
        if self.states.is_empty() {
            return 0.0;
        }
        self.states.iter().filter(|s| **s).count() as f64 / self.states.len() as f64
    }

    pub fn run_lengths(&self) -> RunLengths {
        RunLengths::encode(&self.states)
    }
}

/// Run-length encoding of a binary sequence: the first state, then the
/// lengths of the alternating runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLengths {
    pub start: bool,
    pub runs: Vec<usize>,
}

impl RunLengths {
    pub fn encode(states: &[bool]) -> Self {
        let mut runs = Vec::new();
        let start = states.first().copied().unwrap_or(false);
        let mut current = start;
        let mut len = 0usize;
        for &s in states {
            if s == current {
                len += 1;
            } else {
                runs.push(len);
                current = s;
                len = 1;
            }
        }
        if len > 0 {
            runs.push(len);
        }
        Self { start, runs }
    }

    pub fn decode(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.total_len());
        let mut state = self.start;
        for &len in &self.runs {
            out.extend(std::iter::repeat_n(state, len));
            state = !state;
        }
        out
    }

    pub fn total_len(&self) -> usize {
        self.runs.iter().sum()
    }
}

/// A Gaussian level of the feature model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub mu: f64,
    pub sigma: f64,
    pub count: usize,
}

/// Joint on/off assignment of N sources and the signal value it produces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateConfiguration {
    pub on_mask: u32,
    pub total_amplitude: f64,
}

impl StateConfiguration {
    /// Baseline plus the amplitudes of the sources set in `on_mask`, summed in
    /// source order. Every caller that needs the value recomputes it this way,
    /// which keeps reconstructions bit-identical.
    pub fn new(on_mask: u32, baseline: f64, amplitudes: &[f64]) -> Self {
        Self {
            on_mask,
            total_amplitude: superpose(on_mask, baseline, amplitudes),
        }
    }

    /// All 2^N configurations, indexed by their mask.
    pub fn enumerate(baseline: f64, amplitudes: &[f64]) -> Vec<Self> {
        assert!(amplitudes.len() < 32, "too many sources for a u32 mask");
        (0..1u32 << amplitudes.len())
            .map(|mask| Self::new(mask, baseline, amplitudes))
            .collect()
    }
}

pub(crate) fn superpose(on_mask: u32, baseline: f64, amplitudes: &[f64]) -> f64 {
    let mut total = baseline;
    for (k, a) in amplitudes.iter().enumerate() {
        if on_mask & (1 << k) != 0 {
            total += a;
        }
    }
    total
}

/// Standard normal CDF.
pub fn gaussian_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Two-sided tail mass of `d` under N(mu, sigma²): 1 at the mean, decaying
/// to 0 with distance.
///
/// Evaluated as `erfc(|d - mu| / (sigma·√2))`, which equals `2·(1 − Φ(z))`
/// without cancellation in the far tail where new levels are decided.
pub fn proximity(d: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(RtnError::InvalidSigma(sigma));
    }
    Ok(proximity_unchecked((d - mu).abs() / sigma))
}

#[inline]
pub(crate) fn proximity_unchecked(z_abs: f64) -> f64 {
    libm::erfc(z_abs / std::f64::consts::SQRT_2)
}

/// Median of a slice (mean of the two central values for even lengths).
pub(crate) fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Linear-interpolated percentile `q` in [0, 100] of unsorted data.
pub(crate) fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(sorted_quantile(&v, q / 100.0))
}

pub(crate) fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
