//! Recursive Bayesian update over per-frame category scores.
//!
//! Each category is updated independently with
//!
//! ```text
//! updated = prior * current / (prior * current + p_cnn)
//! ```
//!
//! where `prior` is the previous updated posterior for that category,
//! `current` is the classifier score for the frame being integrated and
//! `p_cnn` is the classifier's overall accuracy. The first frame of a window
//! passes through unchanged. Posteriors are never renormalized, so a chained
//! distribution generally sums to less than one.
//!
//! A literal product over pairwise terms of consecutive raw frames is a
//! different (unimplemented) reading of the windowed update; only the
//! recursive chain reproduces the reference traffic and pedestrian tables.
//!
//! Long chains collapse: whenever `p_cnn >= current` every update shrinks the
//! posterior, so after enough frames every category sinks below any fixed
//! epsilon. [`PosteriorState`] flags that condition instead of erroring so
//! callers can reset the window.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Posterior below which every category counts as collapsed.
pub const DEFAULT_DEGENERACY_EPSILON: f64 = 1e-4;

/// Default quality-of-experience threshold.
pub const DEFAULT_Q_THRESHOLD: f64 = 0.7;

/// Iteration cap for [`degeneracy_horizon`].
pub const DEFAULT_HORIZON_CAP: usize = 1000;

/// Frame windows longer than this are known to collapse to zero.
pub const DEFAULT_MAX_WINDOW: usize = 7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BayesError {
    #[error("{name} = {value} is outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("zero denominator: prior * current + p_cnn = 0")]
    ZeroDenominator,
    #[error("label set mismatch: expected {expected:?}, got {got:?}")]
    LabelMismatch { expected: Vec<String>, got: Vec<String> },
    #[error("distribution has no categories")]
    Empty,
    #[error("scores sum to {sum}, expected 1 within {tolerance}")]
    NotNormalized { sum: f64, tolerance: f64 },
}

fn check_unit(name: &'static str, value: f64) -> Result<(), BayesError> {
    if value.is_nan() || !(0.0..=1.0).contains(&value) {
        return Err(BayesError::Domain {
            name,
            value,
            domain: "[0, 1]",
        });
    }
    Ok(())
}

fn check_open_unit(name: &'static str, value: f64) -> Result<(), BayesError> {
    if value.is_nan() || value <= 0.0 || value > 1.0 {
        return Err(BayesError::Domain {
            name,
            value,
            domain: "(0, 1]",
        });
    }
    Ok(())
}

/// One frame's score vector over category labels.
///
/// Labels are kept sorted, which also fixes the argmax tie-break order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryDistribution {
    pub frame_id: u64,
    pub scores: BTreeMap<String, f64>,
}

impl CategoryDistribution {
    /// Builds a distribution, rejecting empty maps and scores outside `[0, 1]`.
    pub fn new(frame_id: u64, scores: BTreeMap<String, f64>) -> Result<Self, BayesError> {
        if scores.is_empty() {
            return Err(BayesError::Empty);
        }
        for &score in scores.values() {
            check_unit("score", score)?;
        }
        Ok(Self { frame_id, scores })
    }

    pub fn from_pairs<L: Into<String>>(
        frame_id: u64,
        pairs: impl IntoIterator<Item = (L, f64)>,
    ) -> Result<Self, BayesError> {
        Self::new(frame_id, pairs.into_iter().map(|(l, s)| (l.into(), s)).collect())
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.scores.keys().map(String::as_str)
    }

    pub fn sum(&self) -> f64 {
        self.scores.values().sum()
    }

    /// Checks the raw-classifier contract that scores sum to one.
    pub fn check_normalized(&self, tolerance: f64) -> Result<(), BayesError> {
        let sum = self.sum();
        if (sum - 1.0).abs() > tolerance {
            return Err(BayesError::NotNormalized { sum, tolerance });
        }
        Ok(())
    }

    pub fn argmax(&self) -> (&str, f64) {
        // non-empty by construction
        argmax_of(&self.scores).expect("distribution is never empty")
    }

    fn same_labels(&self, other: &BTreeMap<String, f64>) -> bool {
        self.scores.len() == other.len() && self.scores.keys().zip(other.keys()).all(|(a, b)| a == b)
    }
}

/// A classifier's identity, overall accuracy `p_cnn` and quality threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierProfile {
    pub model_name: String,
    pub p_cnn: f64,
    pub q_threshold: f64,
}

impl ClassifierProfile {
    pub fn new(model_name: impl Into<String>, p_cnn: f64, q_threshold: f64) -> Result<Self, BayesError> {
        check_open_unit("p_cnn", p_cnn)?;
        check_open_unit("q_threshold", q_threshold)?;
        Ok(Self {
            model_name: model_name.into(),
            p_cnn,
            q_threshold,
        })
    }

    /// Profile with the default quality threshold of 0.7.
    pub fn with_accuracy(model_name: impl Into<String>, p_cnn: f64) -> Result<Self, BayesError> {
        Self::new(model_name, p_cnn, DEFAULT_Q_THRESHOLD)
    }
}

/// Single-category update: `prior * current / (prior * current + p_cnn)`.
pub fn update_posterior(prior: f64, current: f64, p_cnn: f64) -> Result<f64, BayesError> {
    check_unit("prior", prior)?;
    check_unit("current", current)?;
    check_unit("p_cnn", p_cnn)?;
    let joint = prior * current;
    let denom = joint + p_cnn;
    if denom == 0.0 {
        return Err(BayesError::ZeroDenominator);
    }
    Ok(joint / denom)
}

/// Chained per-category posteriors for one frame window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    pub posteriors: BTreeMap<String, f64>,
    /// Frames folded into the chain since the window started. Zero means
    /// the state is empty and the next frame is taken verbatim.
    pub steps_applied: usize,
    pub degenerate: bool,
    pub epsilon: f64,
}

impl Default for PosteriorState {
    fn default() -> Self {
        Self::new(DEFAULT_DEGENERACY_EPSILON)
    }
}

impl PosteriorState {
    pub fn new(epsilon: f64) -> Self {
        Self {
            posteriors: BTreeMap::new(),
            steps_applied: 0,
            degenerate: false,
            epsilon,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.steps_applied == 0
    }

    /// Number of two-frame updates in the chain (frames minus one).
    pub fn updates_applied(&self) -> usize {
        self.steps_applied.saturating_sub(1)
    }

    /// Empty state carrying the same epsilon.
    pub fn cleared(&self) -> Self {
        Self::new(self.epsilon)
    }

    /// Folds one frame into the chain and returns the new state.
    pub fn chain_update(&self, frame: &CategoryDistribution, profile: &ClassifierProfile) -> Result<Self, BayesError> {
        let posteriors = if self.is_empty() {
            frame.scores.clone()
        } else {
            if !frame.same_labels(&self.posteriors) {
                return Err(BayesError::LabelMismatch {
                    expected: self.posteriors.keys().cloned().collect(),
                    got: frame.scores.keys().cloned().collect(),
                });
            }
            self.posteriors
                .iter()
                .zip(frame.scores.values())
                .map(|((label, &prior), &current)| {
                    update_posterior(prior, current, profile.p_cnn).map(|p| (label.clone(), p))
                })
                .collect::<Result<_, _>>()?
        };
        let degenerate = is_degenerate(&posteriors, self.epsilon);
        Ok(Self {
            posteriors,
            steps_applied: self.steps_applied + 1,
            degenerate,
            epsilon: self.epsilon,
        })
    }

    pub fn argmax_label(&self) -> Result<(&str, f64), BayesError> {
        argmax_of(&self.posteriors).ok_or(BayesError::Empty)
    }
}

fn is_degenerate(posteriors: &BTreeMap<String, f64>, epsilon: f64) -> bool {
    posteriors.values().all(|&p| p < epsilon)
}

/// Label with the largest score; ties go to the lexicographically first label.
pub fn argmax_of(scores: &BTreeMap<String, f64>) -> Option<(&str, f64)> {
    let mut best: Option<(&str, f64)> = None;
    for (label, &score) in scores {
        match best {
            Some((_, b)) if score <= b => {}
            _ => best = Some((label.as_str(), score)),
        }
    }
    best
}

/// Result of [`degeneracy_horizon`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// The posterior fell below epsilon after this many updates.
    Within(usize),
    /// Still at or above epsilon after `max_steps` updates.
    Beyond { max_steps: usize },
}

impl Horizon {
    pub fn steps(self) -> Option<usize> {
        match self {
            Horizon::Within(k) => Some(k),
            Horizon::Beyond { .. } => None,
        }
    }
}

/// Smallest number of updates after which a stream of frames all scoring
/// `score` (starting from a first frame with the same score) drops below
/// `epsilon`.
pub fn degeneracy_horizon(score: f64, p_cnn: f64, epsilon: f64, max_steps: usize) -> Result<Horizon, BayesError> {
    check_open_unit("representative_score", score)?;
    check_open_unit("p_cnn", p_cnn)?;
    if epsilon.is_nan() || epsilon <= 0.0 || epsilon >= 1.0 {
        return Err(BayesError::Domain {
            name: "epsilon",
            value: epsilon,
            domain: "(0, 1)",
        });
    }
    let mut posterior = score;
    for k in 1..=max_steps {
        posterior = update_posterior(posterior, score, p_cnn)?;
        if posterior < epsilon {
            return Ok(Horizon::Within(k));
        }
    }
    Ok(Horizon::Beyond { max_steps })
}
