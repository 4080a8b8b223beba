//! Temporal motionless analysis of video.
//!
//! Per-frame classifier score distributions are folded into a window-level
//! verdict by a recursive Bayesian update ([`bayes`], [`pipeline`]). The
//! crate also carries the hybrid offline/online training controller
//! ([`training`]) and energy-per-training-image and thermal lifespan
//! metrics ([`energy`]). File and wire formats live in [`formats`].

pub mod bayes;
pub mod energy;
pub mod formats;
pub mod pipeline;
pub mod training;

pub use bayes::{
    argmax_of, degeneracy_horizon, update_posterior, BayesError, CategoryDistribution, ClassifierProfile, Horizon,
    PosteriorState,
};
pub use energy::{
    average_power, compute_ecti, lifespan_reduction, select_model, thermal_summary, Ecti, EnergyError, KilowattHours,
    Kilowatts, ModelCandidate, PowerTrace, ThermalSummary, ThermalTrace, TrainingRunMeta,
};
pub use pipeline::{process_stream, FrameWindowState, MultiStream, PipelineError, StreamConfig, StreamEvent};
pub use training::{
    evaluate_accuracy, BackendError, ClassifierBackend, ImageRef, LabeledImage, Outcome, Phase, TrainingError,
    TrainingReport, TrainingSession,
};
