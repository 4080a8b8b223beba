//! Energy consumption per training image (ECTI) and thermal lifespan
//! estimates.
//!
//! ECTI is `(ET / n) * e` in kWh, with `ET` the training time in hours, `n`
//! the number of training images and `e` the average power in kW. It is only
//! defined when the run reached the quality threshold.
//!
//! Lifespan reduction uses the linear rule "2x for every `interval` degrees
//! above baseline", i.e. `(delta_t / interval) * 2`, rather than an
//! exponential Arrhenius-style doubling.

use serde::{Deserialize, Serialize};

pub const MIN_PLAUSIBLE_CELSIUS: f64 = -20.0;
pub const MAX_PLAUSIBLE_CELSIUS: f64 = 150.0;

/// Degree steps that each halve device lifespan.
pub const DOUBLING_INTERVALS: [f64; 2] = [10.0, 15.0];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnergyError {
    #[error("trace needs at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("timestamps must be strictly increasing (sample {index}: {prev} then {next})")]
    NonMonotonic { index: usize, prev: f64, next: f64 },
    #[error("sample {index}: {what} {value} is invalid")]
    BadSample {
        index: usize,
        what: &'static str,
        value: f64,
    },
    #[error("invalid run metadata: {0}")]
    BadMeta(String),
    #[error("peak {peak} degC is below baseline {baseline} degC")]
    NegativeDeviation { peak: f64, baseline: f64 },
    #[error("doubling interval must be positive, got {0}")]
    BadInterval(f64),
    #[error("no candidates")]
    NoCandidates,
    #[error("no model reaches the quality threshold {q}")]
    NoQualifyingModel { q: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Kilowatts(pub f64);

impl Kilowatts {
    pub fn from_watts(w: f64) -> Self {
        Self(w / 1000.0)
    }

    pub fn watts(self) -> f64 {
        self.0 * 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KilowattHours(pub f64);

fn check_timestamps(ts: impl Iterator<Item = f64>) -> Result<(), EnergyError> {
    let mut prev: Option<f64> = None;
    for (index, t) in ts.enumerate() {
        if !t.is_finite() {
            return Err(EnergyError::BadSample {
                index,
                what: "timestamp",
                value: t,
            });
        }
        if let Some(p) = prev {
            if t <= p {
                return Err(EnergyError::NonMonotonic {
                    index,
                    prev: p,
                    next: t,
                });
            }
        }
        prev = Some(t);
    }
    Ok(())
}

/// `(timestamp_s, watts)` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTrace {
    samples: Vec<(f64, f64)>,
}

impl PowerTrace {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self, EnergyError> {
        check_timestamps(samples.iter().map(|s| s.0))?;
        for (index, &(_, w)) in samples.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(EnergyError::BadSample {
                    index,
                    what: "power",
                    value: w,
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn span_seconds(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.0 - a.0,
            _ => 0.0,
        }
    }

    /// Trapezoid-rule energy over the trace, in joules.
    pub fn energy_joules(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum()
    }
}

/// Time-weighted mean power over the trace span.
pub fn average_power(trace: &PowerTrace) -> Result<Kilowatts, EnergyError> {
    let got = trace.samples.len();
    if got < 2 {
        return Err(EnergyError::TooFewSamples { needed: 2, got });
    }
    Ok(Kilowatts::from_watts(trace.energy_joules() / trace.span_seconds()))
}

/// `(timestamp_s, celsius)` samples plus the idle baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalTrace {
    samples: Vec<(f64, f64)>,
    pub baseline_temp: f64,
}

impl ThermalTrace {
    pub fn new(samples: Vec<(f64, f64)>, baseline_temp: f64) -> Result<Self, EnergyError> {
        check_timestamps(samples.iter().map(|s| s.0))?;
        let plausible = |t: f64| (MIN_PLAUSIBLE_CELSIUS..=MAX_PLAUSIBLE_CELSIUS).contains(&t);
        for (index, &(_, c)) in samples.iter().enumerate() {
            if !plausible(c) {
                return Err(EnergyError::BadSample {
                    index,
                    what: "temperature",
                    value: c,
                });
            }
        }
        if !plausible(baseline_temp) {
            return Err(EnergyError::BadSample {
                index: 0,
                what: "baseline temperature",
                value: baseline_temp,
            });
        }
        Ok(Self { samples, baseline_temp })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn peak(&self) -> Option<f64> {
        self.samples.iter().map(|s| s.1).reduce(f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalSummary {
    pub peak: f64,
    pub mean: f64,
    pub deviation_from_baseline: f64,
}

pub fn thermal_summary(trace: &ThermalTrace) -> Result<ThermalSummary, EnergyError> {
    let n = trace.samples.len();
    let peak = trace.peak().ok_or(EnergyError::TooFewSamples { needed: 1, got: 0 })?;
    let mean = trace.samples.iter().map(|s| s.1).sum::<f64>() / n as f64;
    Ok(ThermalSummary {
        peak,
        mean,
        deviation_from_baseline: peak - trace.baseline_temp,
    })
}

/// Lifespan shrink factor: `(peak - baseline) / interval * 2`.
pub fn lifespan_reduction(peak_temp: f64, baseline_temp: f64, doubling_interval: f64) -> Result<f64, EnergyError> {
    if doubling_interval.is_nan() || doubling_interval <= 0.0 {
        return Err(EnergyError::BadInterval(doubling_interval));
    }
    let delta = peak_temp - baseline_temp;
    if delta.is_nan() || delta < 0.0 {
        return Err(EnergyError::NegativeDeviation {
            peak: peak_temp,
            baseline: baseline_temp,
        });
    }
    Ok(delta / doubling_interval * 2.0)
}

/// Duration, size and accuracy of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRunMeta {
    #[serde(rename = "model")]
    pub model_name: String,
    pub duration_s: f64,
    pub image_count: u64,
    pub accuracy: f64,
    #[serde(default = "default_q")]
    pub q: f64,
}

fn default_q() -> f64 {
    crate::bayes::DEFAULT_Q_THRESHOLD
}

impl TrainingRunMeta {
    pub fn duration_hours(&self) -> f64 {
        self.duration_s / 3600.0
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(EnergyError::BadMeta(format!("duration {} s", self.duration_s)));
        }
        if self.image_count < 1 {
            return Err(EnergyError::BadMeta("image_count must be at least 1".into()));
        }
        if !unit(self.accuracy) {
            return Err(EnergyError::BadMeta(format!("accuracy {}", self.accuracy)));
        }
        if !unit(self.q) {
            return Err(EnergyError::BadMeta(format!("q {}", self.q)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Ecti {
    Defined {
        kwh_per_image: KilowattHours,
    },
    /// Accuracy fell short of the threshold; carries the would-be figure.
    Undefined {
        raw_kwh_per_image: KilowattHours,
        accuracy: f64,
        q: f64,
    },
}

impl Ecti {
    pub fn value(&self) -> Option<KilowattHours> {
        match *self {
            Ecti::Defined { kwh_per_image } => Some(kwh_per_image),
            Ecti::Undefined { .. } => None,
        }
    }
}

pub fn compute_ecti(meta: &TrainingRunMeta, e: Kilowatts) -> Result<Ecti, EnergyError> {
    meta.validate()?;
    if !(e.0.is_finite() && e.0 >= 0.0) {
        return Err(EnergyError::BadMeta(format!("average power {} kW", e.0)));
    }
    let per_image = KilowattHours(meta.duration_hours() / meta.image_count as f64 * e.0);
    Ok(if meta.accuracy >= meta.q {
        Ecti::Defined {
            kwh_per_image: per_image,
        }
    } else {
        Ecti::Undefined {
            raw_kwh_per_image: per_image,
            accuracy: meta.accuracy,
            q: meta.q,
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCandidate {
    pub model_name: String,
    pub ecti: f64,
    pub accuracy: f64,
}

impl ModelCandidate {
    pub fn new(model_name: impl Into<String>, ecti: f64, accuracy: f64) -> Self {
        Self {
            model_name: model_name.into(),
            ecti,
            accuracy,
        }
    }
}

/// Cheapest-per-image model among those reaching `q`; ties go to the
/// lexicographically first name.
pub fn select_model(candidates: &[ModelCandidate], q: f64) -> Result<&str, EnergyError> {
    if candidates.is_empty() {
        return Err(EnergyError::NoCandidates);
    }
    candidates
        .iter()
        .filter(|c| c.accuracy >= q)
        .min_by(|a, b| a.ecti.total_cmp(&b.ecti).then_with(|| a.model_name.cmp(&b.model_name)))
        .map(|c| c.model_name.as_str())
        .ok_or(EnergyError::NoQualifyingModel { q })
}
