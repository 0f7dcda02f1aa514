//! Stochastic environment noise: firing latency and run-time inflation.
//!
//! Presets are calibrated against the measured bare-metal (BM) and AWS
//! (T3, T3-Unlimited, C5) machines. The run-time presets reproduce the
//! per-job offset over a programmed 900 µs busy loop and the per-container
//! standard deviation observed with ten containers; the firing-latency
//! presets only bound the measured peaks.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("invalid noise statistics: {0}")]
    InvalidStats(String),
    #[error("unknown system profile `{0}`")]
    UnknownProfile(String),
}

/// Distribution over signed integer microseconds.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseDist {
    Constant(i64),
    /// Normal rounded to whole microseconds and conditioned on `[min, max]`.
    TruncatedNormal { mean: f64, sd: f64, min: i64, max: i64 },
    /// Uniform resampling of a recorded log.
    Empirical(Vec<i64>),
}

impl NoiseDist {
    pub fn zero() -> Self {
        NoiseDist::Constant(0)
    }

    pub fn truncated_normal(mean: f64, sd: f64, min: i64, max: i64) -> Result<Self, NoiseError> {
        let d = NoiseDist::TruncatedNormal { mean, sd, min, max };
        d.check()?;
        Ok(d)
    }

    pub fn empirical(samples: Vec<i64>) -> Result<Self, NoiseError> {
        let d = NoiseDist::Empirical(samples);
        d.check()?;
        Ok(d)
    }

    fn check(&self) -> Result<(), NoiseError> {
        match self {
            NoiseDist::Constant(_) => Ok(()),
            NoiseDist::TruncatedNormal { mean, sd, min, max } => {
                if !mean.is_finite() || !sd.is_finite() {
                    return Err(NoiseError::InvalidStats("non-finite mean or sd".into()));
                }
                if *sd < 0.0 {
                    return Err(NoiseError::InvalidStats(format!("sd {sd} < 0")));
                }
                if (*max as f64) < *mean || (*min as f64) > *mean {
                    return Err(NoiseError::InvalidStats(format!(
                        "mean {mean} outside truncation [{min}, {max}]"
                    )));
                }
                Ok(())
            }
            NoiseDist::Empirical(samples) if samples.is_empty() => {
                Err(NoiseError::InvalidStats("empirical log is empty".into()))
            }
            NoiseDist::Empirical(_) => Ok(()),
        }
    }

    /// Smallest value the distribution can produce.
    pub fn lower_bound(&self) -> i64 {
        match self {
            NoiseDist::Constant(v) => *v,
            NoiseDist::TruncatedNormal { mean, sd, min, .. } if *sd == 0.0 => {
                (mean.round() as i64).max(*min)
            }
            NoiseDist::TruncatedNormal { min, .. } => *min,
            NoiseDist::Empirical(s) => s.iter().copied().min().unwrap_or(0),
        }
    }

    /// Largest value the distribution can produce.
    pub fn upper_bound(&self) -> i64 {
        match self {
            NoiseDist::Constant(v) => *v,
            NoiseDist::TruncatedNormal { mean, sd, max, .. } if *sd == 0.0 => {
                (mean.round() as i64).min(*max)
            }
            NoiseDist::TruncatedNormal { max, .. } => *max,
            NoiseDist::Empirical(s) => s.iter().copied().max().unwrap_or(0),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.lower_bound() == 0 && self.upper_bound() == 0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        match self {
            NoiseDist::Constant(v) => *v,
            NoiseDist::TruncatedNormal { mean, sd, min, max } => {
                if *sd == 0.0 {
                    return (mean.round() as i64).clamp(*min, *max);
                }
                for _ in 0..1024 {
                    let z: f64 = StandardNormal.sample(rng);
                    let v = (mean + sd * z).round();
                    if v >= *min as f64 && v <= *max as f64 {
                        return v as i64;
                    }
                }
                // Only reachable when the window holds a vanishing share of the mass.
                (mean.round() as i64).clamp(*min, *max)
            }
            NoiseDist::Empirical(samples) => samples[rng.random_range(0..samples.len())],
        }
    }

    /// Exact mean and standard deviation of the sampled integer values.
    pub fn moments(&self) -> (f64, f64) {
        match self {
            NoiseDist::Constant(v) => (*v as f64, 0.0),
            NoiseDist::TruncatedNormal { mean, sd, min, max } => {
                if *sd == 0.0 {
                    return ((mean.round() as i64).clamp(*min, *max) as f64, 0.0);
                }
                let lo = (*min as f64).max((mean - 40.0 * sd).floor()) as i64;
                let hi = (*max as f64).min((mean + 40.0 * sd).ceil()) as i64;
                let (mut mass, mut first, mut second) = (0.0, 0.0, 0.0);
                for k in lo..=hi {
                    let p = normal_mass(k as f64 - 0.5, k as f64 + 0.5, *mean, *sd);
                    let x = k as f64 - mean;
                    mass += p;
                    first += p * x;
                    second += p * x * x;
                }
                if mass <= 0.0 {
                    return ((mean.round() as i64).clamp(*min, *max) as f64, 0.0);
                }
                let shift = first / mass;
                let var = (second / mass - shift * shift).max(0.0);
                (mean + shift, var.sqrt())
            }
            NoiseDist::Empirical(samples) => {
                let n = samples.len() as f64;
                let m = samples.iter().map(|&v| v as f64).sum::<f64>() / n;
                let var = samples.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n;
                (m, var.sqrt())
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.moments().0
    }
}

/// `P(a < X < b)` for `X ~ N(mean, sd)`, accurate in both tails.
fn normal_mass(a: f64, b: f64, mean: f64, sd: f64) -> f64 {
    let s = sd * std::f64::consts::SQRT_2;
    let (za, zb) = ((a - mean) / s, (b - mean) / s);
    if za >= 0.0 {
        0.5 * (erfc(za) - erfc(zb))
    } else if zb <= 0.0 {
        0.5 * (erfc(-zb) - erfc(-za))
    } else {
        1.0 - 0.5 * (erfc(-za) + erfc(zb))
    }
}

/// Rare, large firing-latency outlier mixed into the firing distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spike {
    pub probability: f64,
    pub latency: u64,
}

/// Outlier observed on the T3 machine: 96 in 10 million wake-ups, 49 ms peak.
pub const T3_OUTLIER: Spike = Spike {
    probability: 96.0 / 10_000_000.0,
    latency: 49_000,
};

/// One job's noise draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSample {
    pub firing: u64,
    /// May be negative: measured run-times fall both above and below the
    /// programmed loop time.
    pub env_runtime: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub firing: NoiseDist,
    pub env_runtime: NoiseDist,
    pub spike: Option<Spike>,
}

impl NoiseModel {
    pub fn new(firing: NoiseDist, env_runtime: NoiseDist) -> Result<Self, NoiseError> {
        firing.check()?;
        env_runtime.check()?;
        if firing.lower_bound() < 0 {
            return Err(NoiseError::InvalidStats(
                "firing latency must not be negative".into(),
            ));
        }
        Ok(NoiseModel {
            firing,
            env_runtime,
            spike: None,
        })
    }

    /// No noise at all.
    pub fn zero() -> Self {
        NoiseModel {
            firing: NoiseDist::zero(),
            env_runtime: NoiseDist::zero(),
            spike: None,
        }
    }

    pub fn with_spike(mut self, spike: Spike) -> Result<Self, NoiseError> {
        if !(0.0..=1.0).contains(&spike.probability) {
            return Err(NoiseError::InvalidStats(format!(
                "spike probability {} outside [0, 1]",
                spike.probability
            )));
        }
        self.spike = Some(spike);
        Ok(self)
    }

    pub fn is_zero(&self) -> bool {
        self.firing.is_zero()
            && self.env_runtime.is_zero()
            && self.spike.is_none_or(|s| s.probability == 0.0 || s.latency == 0)
    }

    /// Draws `(firing, env_runtime)`. Consumes the stream in a fixed order so
    /// equal seeds give equal sequences.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseSample {
        let mut firing = self.firing.sample(rng).max(0) as u64;
        if let Some(spike) = self.spike {
            if rng.random::<f64>() < spike.probability {
                firing = spike.latency;
            }
        }
        let env_runtime = self.env_runtime.sample(rng);
        NoiseSample {
            firing,
            env_runtime,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProfileName {
    Bm,
    T3,
    T3u,
    C5,
    Custom(String),
}

impl ProfileName {
    pub const PRESETS: [ProfileName; 4] =
        [ProfileName::Bm, ProfileName::T3, ProfileName::T3u, ProfileName::C5];
}

impl fmt::Display for ProfileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProfileName::Bm => f.write_str("BM"),
            ProfileName::T3 => f.write_str("T3"),
            ProfileName::T3u => f.write_str("T3U"),
            ProfileName::C5 => f.write_str("C5"),
            ProfileName::Custom(name) => f.write_str(name),
        }
    }
}

impl FromStr for ProfileName {
    type Err = NoiseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "BM" => Ok(ProfileName::Bm),
            "T3" => Ok(ProfileName::T3),
            "T3U" => Ok(ProfileName::T3u),
            "C5" => Ok(ProfileName::C5),
            _ if s.is_empty() => Err(NoiseError::UnknownProfile(s.into())),
            _ => Ok(ProfileName::Custom(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiringStats {
    pub mean: f64,
    pub sd: f64,
    pub max: u64,
}

/// Run-time inflation relative to the programmed loop time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuntimeStats {
    pub mean_offset: f64,
    pub sd: f64,
    pub max: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemProfile {
    pub name: ProfileName,
    pub noise: NoiseModel,
}

/// Builds truncated-normal firing and run-time models.
///
/// Firing latency is truncated to `[0, max]`. Run-time inflation is
/// truncated symmetrically around its offset, to
/// `[2 * mean_offset - max, max]`.
pub fn calibrate_profile(
    name: ProfileName,
    firing: FiringStats,
    runtime: RuntimeStats,
) -> Result<SystemProfile, NoiseError> {
    if firing.mean < 0.0 {
        return Err(NoiseError::InvalidStats(format!(
            "firing mean {} < 0",
            firing.mean
        )));
    }
    let firing_dist = NoiseDist::truncated_normal(firing.mean, firing.sd, 0, firing.max as i64)?;
    let lower = (2.0 * runtime.mean_offset - runtime.max as f64).floor() as i64;
    let runtime_dist =
        NoiseDist::truncated_normal(runtime.mean_offset, runtime.sd, lower, runtime.max)?;
    Ok(SystemProfile {
        name,
        noise: NoiseModel::new(firing_dist, runtime_dist)?,
    })
}

impl SystemProfile {
    pub fn zero() -> Self {
        SystemProfile {
            name: ProfileName::Custom("zero".into()),
            noise: NoiseModel::zero(),
        }
    }

    /// Calibration inputs for a named preset.
    pub fn preset_stats(name: &ProfileName) -> Option<(FiringStats, RuntimeStats)> {
        // Run-time offsets are the ten-container averages minus the 900 µs
        // programmed loop; spreads are the matching per-container deviations.
        // Truncation is four deviations either side.
        let runtime = |offset: f64, sd: f64| RuntimeStats {
            mean_offset: offset,
            sd,
            max: (offset + 4.0 * sd).ceil() as i64,
        };
        let stats = match name {
            ProfileName::Bm => (
                FiringStats { mean: 6.0, sd: 4.0, max: 95 },
                runtime(33.0, 11.66),
            ),
            ProfileName::T3 => (
                FiringStats { mean: 10.0, sd: 3.0, max: 114 },
                runtime(4.0, 14.81),
            ),
            ProfileName::T3u => (
                FiringStats { mean: 8.0, sd: 3.0, max: 90 },
                runtime(4.0, 14.81),
            ),
            ProfileName::C5 => (
                FiringStats { mean: 8.0, sd: 3.0, max: 60 },
                runtime(14.0, 5.5),
            ),
            ProfileName::Custom(_) => return None,
        };
        Some(stats)
    }

    pub fn preset(name: &ProfileName) -> Option<Self> {
        let (firing, runtime) = Self::preset_stats(name)?;
        Some(calibrate_profile(name.clone(), firing, runtime).expect("preset statistics are valid"))
    }

    pub fn by_name(name: &str) -> Result<Self, NoiseError> {
        let parsed: ProfileName = name.parse()?;
        Self::preset(&parsed).ok_or_else(|| NoiseError::UnknownProfile(name.to_string()))
    }
}
