//! Monte Carlo generator of labeled RTN datasets.
//!
//! Two sampling modes share the same activity and rendering machinery:
//!
//! * **physical**: the number of sources is Poisson distributed, dwell means
//!   are log-normal and the noise σ is a fraction of the clean signal's
//!   dynamic range (the sum of all amplitudes);
//! * **benchmark**: the source count is fixed per batch, amplitudes follow a
//!   unit exponential, dwell means are log-uniform between ten samples and
//!   half the window, and each base realization is rendered once per
//!   absolute noise level.

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RtnError};
use crate::model::{derive_seed, superpose, ActivityTrace, RtnRng, RtnSource, Signal};

/// Stream ids at or above this flag are noise streams; below it they index
/// base realizations.
const NOISE_STREAM_FLAG: u64 = 1 << 63;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AmplitudeDistribution {
    Uniform { low: f64, high: f64 },
    LogUniform { low: f64, high: f64 },
    Exponential { mean: f64 },
}

impl AmplitudeDistribution {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Uniform { low, high } | Self::LogUniform { low, high } => {
                low > 0.0 && high > low && high.is_finite()
            }
            Self::Exponential { mean } => mean > 0.0 && mean.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("amplitude", format!("bad distribution {self:?}")))
        }
    }

    fn sample(&self, rng: &mut RtnRng) -> f64 {
        match *self {
            Self::Uniform { low, high } => loop {
                let a = rng.random_range(low..high);
                if a > 0.0 {
                    return a;
                }
            },
            Self::LogUniform { low, high } => log_uniform(rng, low, high),
            Self::Exponential { mean } => sample_positive_exp(rng, mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicalSimConfig {
    pub poisson_mean_sources: f64,
    /// Mean of ln(dwell mean), time units.
    pub dwell_log_mean: f64,
    /// Standard deviation of ln(dwell mean).
    pub dwell_log_sd: f64,
    /// Dwell means outside this range are redrawn.
    pub dwell_bounds: Option<(f64, f64)>,
    pub amplitude: AmplitudeDistribution,
    pub baseline: f64,
    pub duration: f64,
    pub sample_rate: f64,
    /// Noise σ as a fraction of the sum of source amplitudes.
    pub noise_fraction: f64,
}

impl Default for PhysicalSimConfig {
    fn default() -> Self {
        let (lo, hi) = (0.3f64, 500.0f64);
        Self {
            poisson_mean_sources: 4.0,
            dwell_log_mean: (lo * hi).sqrt().ln(),
            dwell_log_sd: (hi / lo).ln() / 4.0,
            dwell_bounds: Some((lo, hi)),
            amplitude: AmplitudeDistribution::Uniform {
                low: 0.4,
                high: 3.0,
            },
            baseline: 0.0,
            duration: 1e3,
            sample_rate: 50.0,
            noise_fraction: 0.02,
        }
    }
}

impl PhysicalSimConfig {
    pub fn validate(&self) -> Result<()> {
        validate_window(self.duration, self.sample_rate)?;
        positive("poisson_mean_sources", self.poisson_mean_sources)?;
        positive("dwell_log_sd", self.dwell_log_sd)?;
        if !self.dwell_log_mean.is_finite() {
            return Err(invalid("dwell_log_mean", "must be finite"));
        }
        if let Some((lo, hi)) = self.dwell_bounds {
            if !(lo > 0.0 && hi > lo) {
                return Err(invalid("dwell_bounds", format!("({lo}, {hi})")));
            }
        }
        if !(self.noise_fraction >= 0.0 && self.noise_fraction.is_finite()) {
            return Err(invalid("noise_fraction", "must be >= 0"));
        }
        self.amplitude.validate()
    }

    pub fn n_samples(&self) -> usize {
        n_samples(self.duration, self.sample_rate)
    }

    fn sample_dwell_mean(&self, rng: &mut RtnRng) -> f64 {
        let dist = LogNormal::new(self.dwell_log_mean, self.dwell_log_sd)
            .expect("validated log-normal parameters");
        match self.dwell_bounds {
            None => dist.sample(rng),
            Some((lo, hi)) => {
                for _ in 0..10_000 {
                    let v = dist.sample(rng);
                    if (lo..=hi).contains(&v) {
                        return v;
                    }
                }
                log_uniform(rng, lo, hi)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSimConfig {
    pub source_counts: Vec<usize>,
    pub datasets_per_count: usize,
    /// Absolute noise σ on the unit amplitude scale, e.g. 0.01 for 1%.
    pub noise_levels: Vec<f64>,
    pub amplitude_mean: f64,
    pub baseline: f64,
    pub duration: f64,
    pub sample_rate: f64,
}

impl Default for BenchmarkSimConfig {
    fn default() -> Self {
        Self {
            source_counts: (1..=7).collect(),
            datasets_per_count: 200,
            noise_levels: vec![0.01, 0.05, 0.10, 0.20, 0.30],
            amplitude_mean: 1.0,
            baseline: 0.0,
            duration: 1e3,
            sample_rate: 50.0,
        }
    }
}

impl BenchmarkSimConfig {
    pub fn validate(&self) -> Result<()> {
        validate_window(self.duration, self.sample_rate)?;
        if self.source_counts.is_empty() || self.source_counts.contains(&0) {
            return Err(invalid("source_counts", "must be non-empty and positive"));
        }
        if self.noise_levels.iter().any(|&s| !(s > 0.0 && s < 1.0)) {
            return Err(invalid("noise_levels", "each level must lie in (0, 1)"));
        }
        if self.noise_levels.is_empty() {
            return Err(invalid("noise_levels", "must be non-empty"));
        }
        positive("amplitude_mean", self.amplitude_mean)
    }

    pub fn n_samples(&self) -> usize {
        n_samples(self.duration, self.sample_rate)
    }

    pub fn n_base_datasets(&self) -> usize {
        self.source_counts.len() * self.datasets_per_count
    }

    pub fn n_datasets(&self) -> usize {
        self.n_base_datasets() * self.noise_levels.len()
    }

    /// Log-uniform span of dwell means: ten samples up to half the window.
    pub fn dwell_span(&self) -> (f64, f64) {
        (10.0 / self.sample_rate, self.duration / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SimConfig {
    Physical(PhysicalSimConfig),
    Benchmark(BenchmarkSimConfig),
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Physical(c) => c.validate(),
            Self::Benchmark(c) => c.validate(),
        }
    }
}

/// Labeled ground truth plus the observed signal.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub signal: Signal,
    /// Noise-free signal, `baseline + Σ amplitude·state` in source order.
    pub clean: Vec<f64>,
    pub sources: Vec<RtnSource>,
    pub activities: Vec<ActivityTrace>,
    pub baseline: f64,
    pub noise_sigma: f64,
    pub dataset_id: u64,
    /// Realization shared by every noise rendering of the same activities.
    pub base_id: u64,
    pub noise_index: usize,
}

/// Draws the source set. In benchmark mode `n_override` fixes N; without it N
/// is drawn uniformly from `source_counts`. In physical mode N is Poisson
/// (zero redrawn) unless overridden.
pub fn sample_sources(
    config: &SimConfig,
    n_override: Option<usize>,
    rng: &mut RtnRng,
) -> Vec<RtnSource> {
    match config {
        SimConfig::Physical(c) => {
            let n = n_override.unwrap_or_else(|| {
                let poisson = Poisson::new(c.poisson_mean_sources).expect("validated Poisson mean");
                loop {
                    let n: f64 = poisson.sample(rng);
                    if n >= 1.0 {
                        break n as usize;
                    }
                }
            });
            (0..n)
                .map(|_| {
                    let amplitude = c.amplitude.sample(rng);
                    let mean_on = c.sample_dwell_mean(rng);
                    let mean_off = c.sample_dwell_mean(rng);
                    RtnSource {
                        amplitude,
                        mean_on,
                        mean_off,
                    }
                })
                .collect()
        }
        SimConfig::Benchmark(c) => {
            let n = n_override
                .unwrap_or_else(|| c.source_counts[rng.random_range(0..c.source_counts.len())]);
            let (lo, hi) = c.dwell_span();
            (0..n)
                .map(|_| {
                    let amplitude = sample_positive_exp(rng, c.amplitude_mean);
                    let mean_on = log_uniform(rng, lo, hi);
                    let mean_off = log_uniform(rng, lo, hi);
                    RtnSource {
                        amplitude,
                        mean_on,
                        mean_off,
                    }
                })
                .collect()
        }
    }
}

/// Alternating exponential on/off segments on the sample grid. Each segment
/// covers `ceil(duration / sample_period)` samples, at least one. The first
/// state is on with the stationary probability.
pub fn simulate_activity(
    source: &RtnSource,
    n_samples: usize,
    sample_period: f64,
    rng: &mut RtnRng,
) -> ActivityTrace {
    let on_dist = Exp::new(1.0 / source.mean_on).expect("positive mean_on");
    let off_dist = Exp::new(1.0 / source.mean_off).expect("positive mean_off");
    let mut state = rng.random::<f64>() < source.on_probability();
    let mut states = Vec::with_capacity(n_samples);
    while states.len() < n_samples {
        let duration: f64 = if state {
            on_dist.sample(rng)
        } else {
            off_dist.sample(rng)
        };
        let remaining = n_samples - states.len();
        let span = (duration / sample_period).ceil();
        let len = if span >= remaining as f64 {
            remaining
        } else {
            (span as usize).max(1)
        };
        states.extend(std::iter::repeat_n(state, len));
        state = !state;
    }
    ActivityTrace::new(states)
}

/// Superposes the sources onto `baseline` and adds white Gaussian noise.
pub fn render_dataset(
    sources: &[RtnSource],
    activities: &[ActivityTrace],
    baseline: f64,
    noise_sigma: f64,
    sample_period: f64,
    rng: &mut RtnRng,
) -> Result<LabeledDataset> {
    let clean = clean_signal(sources, activities, baseline)?;
    let noisy = add_noise(&clean, noise_sigma, rng)?;
    Ok(LabeledDataset {
        signal: Signal::new(noisy, sample_period)?,
        clean,
        sources: sources.to_vec(),
        activities: activities.to_vec(),
        baseline,
        noise_sigma,
        dataset_id: 0,
        base_id: 0,
        noise_index: 0,
    })
}

/// `baseline + Σ amplitude·state` per sample, summed in source order.
pub fn clean_signal(
    sources: &[RtnSource],
    activities: &[ActivityTrace],
    baseline: f64,
) -> Result<Vec<f64>> {
    if sources.len() != activities.len() {
        return Err(RtnError::LengthMismatch {
            left: sources.len(),
            right: activities.len(),
        });
    }
    if sources.len() >= 32 {
        return Err(invalid("sources", "at most 31 sources are supported"));
    }
    let n = activities.first().map_or(0, ActivityTrace::len);
    if n == 0 {
        return Err(RtnError::EmptyInput);
    }
    if let Some(bad) = activities.iter().find(|a| a.len() != n) {
        return Err(RtnError::LengthMismatch {
            left: n,
            right: bad.len(),
        });
    }
    let amplitudes: Vec<f64> = sources.iter().map(|s| s.amplitude).collect();
    Ok((0..n)
        .map(|t| {
            let mask = activities
                .iter()
                .enumerate()
                .filter(|(_, a)| a.states[t])
                .fold(0u32, |m, (k, _)| m | (1 << k));
            superpose(mask, baseline, &amplitudes)
        })
        .collect())
}

fn add_noise(clean: &[f64], noise_sigma: f64, rng: &mut RtnRng) -> Result<Vec<f64>> {
    if noise_sigma == 0.0 {
        return Ok(clean.to_vec());
    }
    let normal = Normal::new(0.0, noise_sigma).map_err(|_| RtnError::InvalidSigma(noise_sigma))?;
    Ok(clean.iter().map(|c| c + normal.sample(rng)).collect())
}

/// One physical-mode dataset drawn from stream `stream_id`.
pub fn simulate_physical(
    config: &PhysicalSimConfig,
    base_seed: u64,
    stream_id: u64,
    n_override: Option<usize>,
) -> Result<LabeledDataset> {
    config.validate()?;
    let mut rng = derive_seed(base_seed, stream_id);
    let sim = SimConfig::Physical(config.clone());
    let sources = sample_sources(&sim, n_override, &mut rng);
    let n = config.n_samples();
    let dt = 1.0 / config.sample_rate;
    let activities: Vec<_> = sources
        .iter()
        .map(|s| simulate_activity(s, n, dt, &mut rng))
        .collect();
    let magnitude: f64 = sources.iter().map(|s| s.amplitude).sum();
    let mut ds = render_dataset(
        &sources,
        &activities,
        config.baseline,
        config.noise_fraction * magnitude,
        dt,
        &mut rng,
    )?;
    ds.dataset_id = stream_id;
    ds.base_id = stream_id;
    Ok(ds)
}

/// One entry of a benchmark batch before rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaseSpec {
    pub base_id: u64,
    pub n_sources: usize,
}

/// Base realizations in id order: all datasets of the first source count,
/// then the next.
pub fn benchmark_plan(config: &BenchmarkSimConfig) -> Vec<BaseSpec> {
    config
        .source_counts
        .iter()
        .flat_map(|&n| std::iter::repeat_n(n, config.datasets_per_count))
        .enumerate()
        .map(|(i, n_sources)| BaseSpec {
            base_id: i as u64,
            n_sources,
        })
        .collect()
}

/// Noise-free part of a benchmark dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseRealization {
    pub base_id: u64,
    pub sources: Vec<RtnSource>,
    pub activities: Vec<ActivityTrace>,
    pub clean: Vec<f64>,
}

pub fn realize_base(
    config: &BenchmarkSimConfig,
    base_seed: u64,
    spec: BaseSpec,
) -> Result<BaseRealization> {
    let mut rng = derive_seed(base_seed, spec.base_id);
    let sim = SimConfig::Benchmark(config.clone());
    let sources = sample_sources(&sim, Some(spec.n_sources), &mut rng);
    let n = config.n_samples();
    let dt = 1.0 / config.sample_rate;
    let activities: Vec<_> = sources
        .iter()
        .map(|s| simulate_activity(s, n, dt, &mut rng))
        .collect();
    let clean = clean_signal(&sources, &activities, config.baseline)?;
    Ok(BaseRealization {
        base_id: spec.base_id,
        sources,
        activities,
        clean,
    })
}

pub fn benchmark_dataset_id(config: &BenchmarkSimConfig, base_id: u64, noise_index: usize) -> u64 {
    base_id * config.noise_levels.len() as u64 + noise_index as u64
}

/// Renders `base` at noise level `noise_index`; the noise comes from its own
/// stream so every level shares identical activities.
pub fn render_noise_level(
    config: &BenchmarkSimConfig,
    base_seed: u64,
    base: &BaseRealization,
    noise_index: usize,
) -> Result<LabeledDataset> {
    let sigma = *config
        .noise_levels
        .get(noise_index)
        .ok_or_else(|| invalid("noise_index", format!("{noise_index} out of range")))?;
    let stream = NOISE_STREAM_FLAG | (base.base_id << 8) | noise_index as u64;
    let mut rng = derive_seed(base_seed, stream);
    let noisy = add_noise(&base.clean, sigma * config.amplitude_mean, &mut rng)?;
    Ok(LabeledDataset {
        signal: Signal::new(noisy, 1.0 / config.sample_rate)?,
        clean: base.clean.clone(),
        sources: base.sources.clone(),
        activities: base.activities.clone(),
        baseline: config.baseline,
        noise_sigma: sigma * config.amplitude_mean,
        dataset_id: benchmark_dataset_id(config, base.base_id, noise_index),
        base_id: base.base_id,
        noise_index,
    })
}

/// Lazily yields every benchmark dataset: for each base realization, one
/// rendering per noise level.
pub fn generate_benchmark_suite(
    config: &BenchmarkSimConfig,
    base_seed: u64,
) -> Result<impl Iterator<Item = Result<LabeledDataset>> + '_> {
    config.validate()?;
    Ok(benchmark_plan(config).into_iter().flat_map(move |spec| {
        let base = realize_base(config, base_seed, spec);
        let levels = config.noise_levels.len();
        let mut base = Some(base);
        (0..levels).map(move |k| match base.as_mut().expect("base realized") {
            Ok(b) => render_noise_level(config, base_seed, b, k),
            Err(e) => Err(e.clone()),
        })
    }))
}

fn n_samples(duration: f64, sample_rate: f64) -> usize {
    (duration * sample_rate).round() as usize
}

fn validate_window(duration: f64, sample_rate: f64) -> Result<()> {
    positive("duration", duration)?;
    positive("sample_rate", sample_rate)?;
    if duration * sample_rate < 2.0 {
        return Err(invalid("duration", "window must hold at least two samples"));
    }
    Ok(())
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive, got {v}")))
    }
}

fn invalid(name: &'static str, reason: impl Into<String>) -> RtnError {
    RtnError::InvalidParam {
        name,
        reason: reason.into(),
    }
}

fn log_uniform(rng: &mut RtnRng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn sample_positive_exp(rng: &mut RtnRng, mean: f64) -> f64 {
    let dist = Exp::new(1.0 / mean).expect("positive mean");
    loop {
        let a: f64 = dist.sample(rng);
        if a > 0.0 {
            return a;
        }
    }
}
