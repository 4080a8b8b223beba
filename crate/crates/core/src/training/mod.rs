//! Hybrid offline/online training controller.
//!
//! A session trains the backend on the offline set, cross-validates it
//! against the live set, and collects every wrongly predicted item on the
//! reFeed stack. If mean accuracy stays below the quality threshold `Q` the
//! backend is retrained on the stack and measured again, up to
//! `max_retrain_rounds` times.
//!
//! ```text
//! Offline -> OnlineValidation -> (Retrain -> OnlineValidation)* -> Done
//!                             \-> Done              Retrain -> Done
//! ```

pub mod backend;
pub mod protocol;

use serde::{Deserialize, Serialize};

pub use backend::{
    BackendError, ClassifierBackend, ImageRef, LabeledImage, MemorizingBackend, ScriptedBackend, TrainAck,
};

use crate::bayes::DEFAULT_Q_THRESHOLD;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Offline,
    OnlineValidation,
    Retrain,
    Done,
}

impl Phase {
    fn may_follow(self, prev: Phase) -> bool {
        use Phase::*;
        matches!(
            (prev, self),
            (Offline, OnlineValidation)
                | (OnlineValidation, Retrain)
                | (OnlineValidation, Done)
                | (Retrain, OnlineValidation)
                | (Retrain, Done)
        )
    }
}

/// How a finished session ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    QualityMet { accuracy: f64 },
    QualityNotMet { best: f64, last: f64 },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainingError {
    #[error("{op} requires phase {expected:?}, session is in {actual:?}")]
    WrongPhase {
        op: &'static str,
        expected: Phase,
        actual: Phase,
    },
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("quality threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("backend failed during training: {0}")]
    Train(#[source] BackendError),
    #[error("backend failed after {evaluated} of {total} predictions ({wrong_so_far} wrong so far): {source}")]
    Predict {
        evaluated: usize,
        total: usize,
        wrong_so_far: usize,
        #[source]
        source: BackendError,
    },
}

/// Mean accuracy of argmax predictions over a labeled set.
pub fn evaluate_accuracy<B: ClassifierBackend + ?Sized>(
    backend: &mut B,
    labeled: &[LabeledImage],
) -> Result<f64, TrainingError> {
    let (accuracy, _) = score_set(backend, labeled)?;
    Ok(accuracy)
}

/// Accuracy plus the wrongly predicted items in encounter order.
fn score_set<B: ClassifierBackend + ?Sized>(
    backend: &mut B,
    labeled: &[LabeledImage],
) -> Result<(f64, Vec<LabeledImage>), TrainingError> {
    if labeled.is_empty() {
        return Err(TrainingError::EmptySet("evaluation"));
    }
    let mut wrong = Vec::new();
    for (i, item) in labeled.iter().enumerate() {
        let prediction = backend.predict(&item.image).map_err(|source| TrainingError::Predict {
            evaluated: i,
            total: labeled.len(),
            wrong_so_far: wrong.len(),
            source,
        })?;
        if prediction.argmax().0 != item.label {
            wrong.push(item.clone());
        }
    }
    let accuracy = (labeled.len() - wrong.len()) as f64 / labeled.len() as f64;
    Ok((accuracy, wrong))
}

/// State of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSession {
    offline_set: Vec<LabeledImage>,
    crossval_set: Vec<LabeledImage>,
    refeed_stack: Vec<LabeledImage>,
    q_threshold: f64,
    phase: Phase,
    phase_history: Vec<Phase>,
    accuracy_history: Vec<f64>,
    refeed_sizes: Vec<usize>,
    max_retrain_rounds: usize,
    retrain_rounds: usize,
    trained_items: usize,
    outcome: Option<Outcome>,
}

impl TrainingSession {
    pub fn new(offline_set: Vec<LabeledImage>, crossval_set: Vec<LabeledImage>) -> Self {
        Self {
            offline_set,
            crossval_set,
            refeed_stack: Vec::new(),
            q_threshold: DEFAULT_Q_THRESHOLD,
            phase: Phase::Offline,
            phase_history: vec![Phase::Offline],
            accuracy_history: Vec::new(),
            refeed_sizes: Vec::new(),
            max_retrain_rounds: 1,
            retrain_rounds: 0,
            trained_items: 0,
            outcome: None,
        }
    }

    pub fn with_q_threshold(mut self, q: f64) -> Result<Self, TrainingError> {
        if q.is_nan() || q <= 0.0 || q > 1.0 {
            return Err(TrainingError::BadThreshold(q));
        }
        self.q_threshold = q;
        Ok(self)
    }

    pub fn with_max_retrain_rounds(mut self, rounds: usize) -> Self {
        self.max_retrain_rounds = rounds;
        self
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn phase_history(&self) -> &[Phase] {
        &self.phase_history
    }

    pub fn accuracy_history(&self) -> &[f64] {
        &self.accuracy_history
    }

    pub fn q_threshold(&self) -> f64 {
        self.q_threshold
    }

    pub fn retrain_rounds(&self) -> usize {
        self.retrain_rounds
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    /// Stack contents, bottom first.
    pub fn refeed_stack(&self) -> &[LabeledImage] {
        &self.refeed_stack
    }

    /// Stack contents in pop order, top first.
    pub fn refeed_pop_order(&self) -> impl Iterator<Item = &LabeledImage> {
        self.refeed_stack.iter().rev()
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.accuracy_history.last().copied()
    }

    fn enter(&mut self, next: Phase) {
        debug_assert!(next.may_follow(self.phase), "{:?} -> {:?}", self.phase, next);
        self.phase = next;
        self.phase_history.push(next);
    }

    fn require(&self, op: &'static str, expected: Phase) -> Result<(), TrainingError> {
        if self.phase != expected {
            return Err(TrainingError::WrongPhase {
                op,
                expected,
                actual: self.phase,
            });
        }
        Ok(())
    }

    fn finish(&mut self, met: bool) {
        let last = self.final_accuracy().unwrap_or(0.0);
        self.outcome = Some(if met {
            Outcome::QualityMet { accuracy: last }
        } else {
            let best = self.accuracy_history.iter().copied().fold(0.0, f64::max);
            Outcome::QualityNotMet { best, last }
        });
        self.enter(Phase::Done);
    }

    pub fn run_offline<B: ClassifierBackend + ?Sized>(&mut self, backend: &mut B) -> Result<TrainAck, TrainingError> {
        self.require("run_offline", Phase::Offline)?;
        if self.offline_set.is_empty() {
            return Err(TrainingError::EmptySet("offline"));
        }
        let ack = backend.train(&self.offline_set).map_err(TrainingError::Train)?;
        self.trained_items += ack.trained;
        self.enter(Phase::OnlineValidation);
        Ok(ack)
    }

    pub fn run_online_validation<B: ClassifierBackend + ?Sized>(
        &mut self,
        backend: &mut B,
    ) -> Result<f64, TrainingError> {
        self.require("run_online_validation", Phase::OnlineValidation)?;
        if self.crossval_set.is_empty() {
            return Err(TrainingError::EmptySet("cross-validation"));
        }
        let (accuracy, wrong) = score_set(backend, &self.crossval_set)?;
        self.refeed_stack = wrong;
        self.refeed_sizes.push(self.refeed_stack.len());
        self.accuracy_history.push(accuracy);
        if accuracy >= self.q_threshold {
            self.finish(true);
        } else {
            self.enter(Phase::Retrain);
        }
        Ok(accuracy)
    }

    pub fn run_retrain<B: ClassifierBackend + ?Sized>(&mut self, backend: &mut B) -> Result<f64, TrainingError> {
        self.require("run_retrain", Phase::Retrain)?;
        if !self.refeed_stack.is_empty() {
            let batch: Vec<LabeledImage> = self.refeed_pop_order().cloned().collect();
            let ack = backend.train(&batch).map_err(TrainingError::Train)?;
            self.trained_items += ack.trained;
            let accuracy = evaluate_accuracy(backend, &self.crossval_set)?;
            self.accuracy_history.push(accuracy);
        }
        self.refeed_stack.clear();
        self.retrain_rounds += 1;
        let accuracy = self.final_accuracy().unwrap_or(0.0);
        if accuracy >= self.q_threshold {
            self.finish(true);
        } else if self.retrain_rounds >= self.max_retrain_rounds {
            self.finish(false);
        } else {
            self.enter(Phase::OnlineValidation);
        }
        Ok(accuracy)
    }

    /// Drives the session from its current phase to `Done`.
    pub fn run<B: ClassifierBackend + ?Sized>(&mut self, backend: &mut B) -> Result<TrainingReport, TrainingError> {
        loop {
            match self.phase {
                Phase::Offline => {
                    self.run_offline(backend)?;
                }
                Phase::OnlineValidation => {
                    self.run_online_validation(backend)?;
                }
                Phase::Retrain => {
                    self.run_retrain(backend)?;
                }
                Phase::Done => return Ok(self.report()),
            }
        }
    }

    pub fn report(&self) -> TrainingReport {
        TrainingReport {
            phases: self.phase_history.clone(),
            accuracy_history: self.accuracy_history.clone(),
            refeed_sizes: self.refeed_sizes.clone(),
            retrain_rounds: self.retrain_rounds,
            trained_items: self.trained_items,
            q_threshold: self.q_threshold,
            final_accuracy: self.final_accuracy(),
            outcome: self.outcome,
        }
    }
}

/// Serializable summary of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub phases: Vec<Phase>,
    pub accuracy_history: Vec<f64>,
    pub refeed_sizes: Vec<usize>,
    pub retrain_rounds: usize,
    pub trained_items: usize,
    pub q_threshold: f64,
    pub final_accuracy: Option<f64>,
    pub outcome: Option<Outcome>,
}

impl TrainingReport {
    pub fn quality_met(&self) -> bool {
        matches!(self.outcome, Some(Outcome::QualityMet { .. }))
    }
}
