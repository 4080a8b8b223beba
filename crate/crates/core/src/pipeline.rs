//! Frame-window pipeline: a FIFO of the last `N` frame distributions per
//! stream, feeding the recursive update and emitting both the per-frame and
//! the window-integrated verdict for every frame.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::bayes::{
    BayesError, CategoryDistribution, ClassifierProfile, PosteriorState, DEFAULT_DEGENERACY_EPSILON, DEFAULT_MAX_WINDOW,
};

pub const DEFAULT_WINDOW: usize = 3;

/// Raw classifier scores rounded to four decimals drift from one by up to
/// a few 1e-4, so ingest is looser than the backend contract.
pub const DEFAULT_SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("stream {stream_id}: frame {frame_id} is not after frame {last}")]
    OutOfOrder {
        stream_id: String,
        frame_id: u64,
        last: u64,
    },
    #[error("stream {stream_id}, frame {frame_id}: {source}")]
    Frame {
        stream_id: String,
        frame_id: u64,
        #[source]
        source: BayesError,
    },
}

/// Window contents and chained posterior for one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameWindowState {
    pub stream_id: String,
    pub capacity_n: usize,
    queue: VecDeque<CategoryDistribution>,
    posterior: PosteriorState,
    last_frame_id: Option<u64>,
}

/// Verdicts for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub stream_id: String,
    pub frame_id: u64,
    pub raw_label: String,
    pub raw_scores: std::collections::BTreeMap<String, f64>,
    pub tmav_label: String,
    pub tmav_scores: std::collections::BTreeMap<String, f64>,
    pub degenerate: bool,
    /// Frames in the chain after this one was folded in.
    pub window_frames: usize,
    /// Seconds since stream start, when the frame interval is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

impl FrameWindowState {
    pub fn new(stream_id: impl Into<String>, capacity_n: usize) -> Self {
        Self::with_epsilon(stream_id, capacity_n, DEFAULT_DEGENERACY_EPSILON)
    }

    pub fn with_epsilon(stream_id: impl Into<String>, capacity_n: usize, epsilon: f64) -> Self {
        let stream_id = stream_id.into();
        if capacity_n > DEFAULT_MAX_WINDOW {
            log::warn!(
                "stream {stream_id}: window of {capacity_n} frames exceeds {DEFAULT_MAX_WINDOW}; \
                 chained posteriors are likely to collapse"
            );
        }
        Self {
            stream_id,
            capacity_n,
            queue: VecDeque::with_capacity(capacity_n),
            posterior: PosteriorState::new(epsilon),
            last_frame_id: None,
        }
    }

    pub fn queue(&self) -> impl ExactSizeIterator<Item = &CategoryDistribution> {
        self.queue.iter()
    }

    pub fn posterior(&self) -> &PosteriorState {
        &self.posterior
    }

    pub fn last_frame_id(&self) -> Option<u64> {
        self.last_frame_id
    }

    /// Pushes a frame, evicting the oldest when full, and advances the chain.
    ///
    /// The state is left untouched on error.
    pub fn push_frame(
        &mut self,
        frame: CategoryDistribution,
        profile: &ClassifierProfile,
    ) -> Result<StreamEvent, PipelineError> {
        if let Some(last) = self.last_frame_id {
            if frame.frame_id <= last {
                return Err(PipelineError::OutOfOrder {
                    stream_id: self.stream_id.clone(),
                    frame_id: frame.frame_id,
                    last,
                });
            }
        }
        let frame_err = |source| PipelineError::Frame {
            stream_id: self.stream_id.clone(),
            frame_id: frame.frame_id,
            source,
        };
        // N = 0: no temporal integration, every frame stands alone
        let base = if self.capacity_n == 0 {
            self.posterior.cleared()
        } else {
            self.posterior.clone()
        };
        let next = base.chain_update(&frame, profile).map_err(frame_err)?;

        let (raw_label, _) = frame.argmax();
        let raw_label = raw_label.to_string();
        let (tmav_label, _) = next.argmax_label().map_err(frame_err)?;
        let event = StreamEvent {
            stream_id: self.stream_id.clone(),
            frame_id: frame.frame_id,
            raw_label,
            raw_scores: frame.scores.clone(),
            tmav_label: tmav_label.to_string(),
            tmav_scores: next.posteriors.clone(),
            degenerate: next.degenerate,
            window_frames: next.steps_applied,
            wall_time: None,
        };

        self.last_frame_id = Some(frame.frame_id);
        self.posterior = next;
        if self.capacity_n > 0 {
            if self.queue.len() == self.capacity_n {
                self.queue.pop_front();
            }
            self.queue.push_back(frame);
        }
        Ok(event)
    }

    /// Empties the queue and clears the chain and the ordering guard.
    pub fn reset_window(&mut self) {
        self.queue.clear();
        self.posterior = self.posterior.cleared();
        self.last_frame_id = None;
    }

    /// Starts a new chain but keeps rejecting frames at or before the last one.
    fn restart_chain(&mut self) {
        let last = self.last_frame_id;
        self.reset_window();
        self.last_frame_id = last;
    }
}

/// Window size, classifier and reset policy for [`process_stream`].
#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    pub capacity_n: usize,
    pub profile: ClassifierProfile,
    /// Tumbling windows of `capacity_n` frames plus a reset after any
    /// degenerate event. Off runs one unbounded chain.
    pub auto_reset: bool,
    pub epsilon: f64,
    pub frame_interval_seconds: Option<f64>,
}

impl StreamConfig {
    pub fn new(profile: ClassifierProfile) -> Self {
        Self {
            capacity_n: DEFAULT_WINDOW,
            profile,
            auto_reset: true,
            epsilon: DEFAULT_DEGENERACY_EPSILON,
            frame_interval_seconds: None,
        }
    }

    pub fn window(mut self, capacity_n: usize) -> Self {
        self.capacity_n = capacity_n;
        self
    }

    pub fn auto_reset(mut self, on: bool) -> Self {
        self.auto_reset = on;
        self
    }

    pub fn frame_interval(mut self, seconds: Option<f64>) -> Self {
        self.frame_interval_seconds = seconds;
        self
    }

    /// Video span covered by one full window, `interval * cap`.
    pub fn snippet_seconds(&self, cap: usize) -> Option<f64> {
        self.frame_interval_seconds.map(|t| t * cap as f64)
    }
}

/// Runs one stream's frames through a fresh window.
pub fn process_stream(
    stream_id: &str,
    frames: impl IntoIterator<Item = CategoryDistribution>,
    config: &StreamConfig,
) -> Result<Vec<StreamEvent>, PipelineError> {
    let mut runner = StreamRunner::new(stream_id, config);
    frames.into_iter().map(|f| runner.push(f)).collect()
}

/// Drives one window according to a [`StreamConfig`].
#[derive(Debug, Clone)]
pub struct StreamRunner<'a> {
    window: FrameWindowState,
    config: &'a StreamConfig,
    first_frame_id: Option<u64>,
}

impl<'a> StreamRunner<'a> {
    pub fn new(stream_id: &str, config: &'a StreamConfig) -> Self {
        Self {
            window: FrameWindowState::with_epsilon(stream_id, config.capacity_n, config.epsilon),
            config,
            first_frame_id: None,
        }
    }

    pub fn window(&self) -> &FrameWindowState {
        &self.window
    }

    pub fn push(&mut self, frame: CategoryDistribution) -> Result<StreamEvent, PipelineError> {
        let frame_id = frame.frame_id;
        let mut event = self.window.push_frame(frame, &self.config.profile)?;
        let first = *self.first_frame_id.get_or_insert(frame_id);
        event.wall_time = self
            .config
            .frame_interval_seconds
            .map(|t| (frame_id - first) as f64 * t);
        if self.config.auto_reset {
            let full = self.window.posterior().steps_applied >= self.config.capacity_n.max(1);
            if full || event.degenerate {
                self.window.restart_chain();
            }
        }
        Ok(event)
    }
}

/// Multiplexes records from several streams, one window per stream id.
/// Events come out in input order.
#[derive(Debug)]
pub struct MultiStream<'a> {
    config: &'a StreamConfig,
    runners: HashMap<String, StreamRunner<'a>>,
}

impl<'a> MultiStream<'a> {
    pub fn new(config: &'a StreamConfig) -> Self {
        Self {
            config,
            runners: HashMap::new(),
        }
    }

    pub fn push(&mut self, stream_id: &str, frame: CategoryDistribution) -> Result<StreamEvent, PipelineError> {
        let config = self.config;
        self.runners
            .entry(stream_id.to_string())
            .or_insert_with(|| StreamRunner::new(stream_id, config))
            .push(frame)
    }
}
