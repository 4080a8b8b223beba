//! Classifier backends: the trait the training controller drives, plus
//! in-process synthetic implementations used for tests and dry runs.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::bayes::CategoryDistribution;

/// Opaque image reference: a path, URL or base64 payload.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ImageRef {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl std::fmt::Display for ImageRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledImage {
    pub image: ImageRef,
    pub label: String,
}

impl LabeledImage {
    pub fn new(image: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            image: ImageRef(image.into()),
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainAck {
    pub trained: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend I/O: {0}")]
    Io(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("backend reported: {0}")]
    Remote(String),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("invalid prediction: {0}")]
    InvalidPrediction(String),
}

/// A per-frame image classifier.
///
/// `predict` must be deterministic between `train` calls.
pub trait ClassifierBackend {
    fn train(&mut self, items: &[LabeledImage]) -> Result<TrainAck, BackendError>;
    fn predict(&mut self, image: &ImageRef) -> Result<CategoryDistribution, BackendError>;
}

impl<B: ClassifierBackend + ?Sized> ClassifierBackend for Box<B> {
    fn train(&mut self, items: &[LabeledImage]) -> Result<TrainAck, BackendError> {
        (**self).train(items)
    }

    fn predict(&mut self, image: &ImageRef) -> Result<CategoryDistribution, BackendError> {
        (**self).predict(image)
    }
}

fn one_hot(labels: &[String], hit: &str) -> CategoryDistribution {
    let scores: BTreeMap<String, f64> = labels
        .iter()
        .map(|l| (l.clone(), if l == hit { 1.0 } else { 0.0 }))
        .collect();
    CategoryDistribution { frame_id: 0, scores }
}

fn uniform(labels: &[String]) -> CategoryDistribution {
    let p = 1.0 / labels.len() as f64;
    CategoryDistribution {
        frame_id: 0,
        scores: labels.iter().map(|l| (l.clone(), p)).collect(),
    }
}

fn sorted_labels(labels: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut labels: Vec<String> = labels.into_iter().collect();
    labels.sort();
    labels.dedup();
    labels
}

/// Remembers every trained (image, label) pair; unseen images score uniformly.
#[derive(Debug, Clone, Default)]
pub struct MemorizingBackend {
    labels: Vec<String>,
    memory: HashMap<ImageRef, String>,
    trained_total: usize,
}

impl MemorizingBackend {
    pub fn new(labels: impl IntoIterator<Item = String>) -> Self {
        Self {
            labels: sorted_labels(labels),
            ..Self::default()
        }
    }

    pub fn trained_total(&self) -> usize {
        self.trained_total
    }
}

impl ClassifierBackend for MemorizingBackend {
    fn train(&mut self, items: &[LabeledImage]) -> Result<TrainAck, BackendError> {
        for item in items {
            if !self.labels.contains(&item.label) {
                self.labels.push(item.label.clone());
                self.labels.sort();
            }
            self.memory.insert(item.image.clone(), item.label.clone());
        }
        self.trained_total += items.len();
        Ok(TrainAck { trained: items.len() })
    }

    fn predict(&mut self, image: &ImageRef) -> Result<CategoryDistribution, BackendError> {
        if self.labels.is_empty() {
            return Err(BackendError::InvalidPrediction("no labels known".into()));
        }
        Ok(match self.memory.get(image) {
            Some(label) => one_hot(&self.labels, label),
            None => uniform(&self.labels),
        })
    }
}

/// Hits a scheduled accuracy on a known evaluation set.
///
/// Generation `g` (the number of `train` calls after the first) answers the
/// first `round(schedule[g] * m)` evaluation items correctly and the rest
/// wrongly; the last schedule entry repeats. Images outside the evaluation
/// set are always answered correctly when their label is known.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    labels: Vec<String>,
    eval: Vec<LabeledImage>,
    index: HashMap<ImageRef, usize>,
    truth: HashMap<ImageRef, String>,
    schedule: Vec<f64>,
    train_calls: usize,
    trained_total: usize,
}

impl ScriptedBackend {
    pub fn new(labels: impl IntoIterator<Item = String>, eval: &[LabeledImage], schedule: Vec<f64>) -> Self {
        assert!(!schedule.is_empty(), "accuracy schedule must be non-empty");
        let labels = sorted_labels(labels.into_iter().chain(eval.iter().map(|i| i.label.clone())));
        assert!(labels.len() >= 2, "a scripted backend needs two labels to be wrong");
        let index = eval
            .iter()
            .enumerate()
            .map(|(i, item)| (item.image.clone(), i))
            .collect();
        Self {
            labels,
            eval: eval.to_vec(),
            index,
            truth: HashMap::new(),
            schedule,
            train_calls: 0,
            trained_total: 0,
        }
    }

    /// Fixed accuracy regardless of training.
    pub fn stuck(labels: impl IntoIterator<Item = String>, eval: &[LabeledImage], accuracy: f64) -> Self {
        Self::new(labels, eval, vec![accuracy])
    }

    pub fn generation(&self) -> usize {
        self.train_calls.saturating_sub(1)
    }

    pub fn trained_total(&self) -> usize {
        self.trained_total
    }

    fn current_accuracy(&self) -> f64 {
        let g = self.generation().min(self.schedule.len() - 1);
        self.schedule[g]
    }

    fn wrong_label(&self, truth: &str) -> &str {
        let pos = self.labels.iter().position(|l| l == truth).unwrap_or(0);
        &self.labels[(pos + 1) % self.labels.len()]
    }
}

impl ClassifierBackend for ScriptedBackend {
    fn train(&mut self, items: &[LabeledImage]) -> Result<TrainAck, BackendError> {
        self.train_calls += 1;
        self.trained_total += items.len();
        for item in items {
            self.truth.insert(item.image.clone(), item.label.clone());
        }
        Ok(TrainAck { trained: items.len() })
    }

    fn predict(&mut self, image: &ImageRef) -> Result<CategoryDistribution, BackendError> {
        if let Some(&i) = self.index.get(image) {
            let correct = (self.current_accuracy() * self.eval.len() as f64).round() as usize;
            let truth = &self.eval[i].label;
            let answer = if i < correct {
                truth.as_str()
            } else {
                self.wrong_label(truth)
            };
            return Ok(one_hot(&self.labels, answer));
        }
        Ok(match self.truth.get(image) {
            Some(label) => one_hot(&self.labels, label),
            None => uniform(&self.labels),
        })
    }
}
