//! Sliding-window online recognition and debounced activity events.

mod runtime;
mod source;

pub use runtime::{percentile, run_stream, StreamSummary};
pub use source::{Decimator, FrameSource, ReplaySource, SocketSource, SourceError, VecSource};

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{classify_sequence, ModelError, ModelParams};
use crate::skeleton::{rasterize_frames, ActivityClass, ActivityLabel, SkeletonError, SkeletonFrame, BONE_EDGES};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("stream configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("classifier: {0}")]
    Classifier(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub window_frames: usize,
    pub hop_frames: usize,
    pub confidence_threshold: f64,
    pub consecutive_required: usize,
    pub cooldown_seconds: f64,
    /// Frames are decimated to this rate before windowing.
    pub model_fps: f64,
    /// Capacity of the producer to consumer frame queue.
    pub queue_capacity: usize,
    pub critical_classes: Vec<ActivityClass>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            window_frames: 20,
            hop_frames: 5,
            confidence_threshold: 0.7,
            consecutive_required: 2,
            cooldown_seconds: 30.0,
            model_fps: 10.0,
            queue_capacity: 64,
            critical_classes: ActivityClass::DEFAULT_CRITICAL.to_vec(),
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<(), StreamError> {
        let bad = |m: String| Err(StreamError::Config(m));
        if self.window_frames == 0 || self.hop_frames == 0 {
            return bad("window_frames and hop_frames must be positive".into());
        }
        if self.hop_frames > self.window_frames {
            return bad(format!("hop_frames {} exceeds window_frames {}", self.hop_frames, self.window_frames));
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold < 1.0) {
            return bad(format!("confidence_threshold must lie in (0, 1), got {}", self.confidence_threshold));
        }
        if self.consecutive_required == 0 {
            return bad("consecutive_required must be positive".into());
        }
        if !(self.cooldown_seconds.is_finite() && self.cooldown_seconds >= 0.0) {
            return bad(format!("cooldown_seconds must be non-negative, got {}", self.cooldown_seconds));
        }
        if !(self.model_fps.is_finite() && self.model_fps > 0.0) {
            return bad(format!("model_fps must be positive, got {}", self.model_fps));
        }
        if self.queue_capacity == 0 {
            return bad("queue_capacity must be positive".into());
        }
        Ok(())
    }

    pub fn label_for(&self, class: ActivityClass) -> ActivityLabel {
        ActivityLabel::new(class, self.critical_classes.contains(&class))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityEvent {
    pub id: u64,
    pub label: ActivityLabel,
    pub confidence: f64,
    /// Timestamps of the first and last frame of the deciding window, seconds.
    pub window_start: f64,
    pub window_end: f64,
}

/// One classification of a full window.
#[derive(Debug, Clone, PartialEq)]
pub struct Tick {
    pub index: usize,
    pub window_start: f64,
    pub window_end: f64,
    pub posterior: Tensor,
}

/// Maps a window of frames to a class posterior.
pub trait WindowClassifier {
    fn classify(&mut self, window: &[SkeletonFrame]) -> Result<Tensor, StreamError>;
}

/// Rasterizes the window with its own normalization box, then runs the model.
pub fn classify_window(params: &ModelParams, window: &[SkeletonFrame]) -> Result<Tensor, StreamError> {
    let frames = rasterize_frames(window, params.config().input_grid, &BONE_EDGES)?.frames;
    Ok(classify_sequence(&frames, params)?)
}

impl WindowClassifier for ModelParams {
    fn classify(&mut self, window: &[SkeletonFrame]) -> Result<Tensor, StreamError> {
        classify_window(self, window)
    }
}

impl WindowClassifier for &ModelParams {
    fn classify(&mut self, window: &[SkeletonFrame]) -> Result<Tensor, StreamError> {
        classify_window(self, window)
    }
}

impl<F: FnMut(&[SkeletonFrame]) -> Result<Tensor, StreamError>> WindowClassifier for F {
    fn classify(&mut self, window: &[SkeletonFrame]) -> Result<Tensor, StreamError> {
        self(window)
    }
}

/// Debounce and cooldown policy over successive tick posteriors.
#[derive(Debug, Clone)]
pub struct EventDecider {
    config: StreamConfig,
    streak: Option<(usize, usize)>,
    last_emitted: BTreeMap<usize, f64>,
    next_id: u64,
}

impl EventDecider {
    pub fn new(config: StreamConfig) -> Self {
        Self {
            config,
            streak: None,
            last_emitted: BTreeMap::new(),
            next_id: 1,
        }
    }

    /// An event fires when the same argmax class reaches the threshold on
    /// `consecutive_required` ticks in a row and its previous event ended at
    /// least `cooldown_seconds` earlier. Firing resets the streak.
    pub fn decide(&mut self, posterior: &Tensor, window_start: f64, window_end: f64) -> Option<ActivityEvent> {
        let class = posterior.argmax();
        let confidence = posterior.data()[class];
        if confidence < self.config.confidence_threshold {
            self.streak = None;
            return None;
        }
        let count = match self.streak {
            Some((c, n)) if c == class => n + 1,
            _ => 1,
        };
        self.streak = Some((class, count));
        if count < self.config.consecutive_required {
            return None;
        }
        if let Some(&last) = self.last_emitted.get(&class) {
            if window_end - last < self.config.cooldown_seconds {
                return None;
            }
        }
        let Some(activity) = ActivityClass::from_index(class) else {
            log::warn!("class index {class} has no activity mapping; event suppressed");
            return None;
        };
        self.streak = None;
        self.last_emitted.insert(class, window_end);
        let id = self.next_id;
        self.next_id += 1;
        Some(ActivityEvent {
            id,
            label: self.config.label_for(activity),
            confidence,
            window_start,
            window_end,
        })
    }
}

/// Free-function form of [`EventDecider::decide`].
pub fn decide_event(
    posterior: &Tensor,
    window_start: f64,
    window_end: f64,
    history: &mut EventDecider,
) -> Option<ActivityEvent> {
    history.decide(posterior, window_start, window_end)
}

/// Bounded frame buffer that classifies every `hop_frames` once full.
#[derive(Debug)]
pub struct StreamEngine<C> {
    config: StreamConfig,
    classifier: C,
    buffer: VecDeque<SkeletonFrame>,
    accepted: usize,
    last_tick_at: Option<usize>,
    ticks: usize,
    rejected: usize,
    decider: EventDecider,
}

impl<C: WindowClassifier> StreamEngine<C> {
    pub fn new(config: StreamConfig, classifier: C) -> Result<Self, StreamError> {
        config.validate()?;
        Ok(Self {
            buffer: VecDeque::with_capacity(config.window_frames),
            decider: EventDecider::new(config.clone()),
            config,
            classifier,
            accepted: 0,
            last_tick_at: None,
            ticks: 0,
            rejected: 0,
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn rejected(&self) -> usize {
        self.rejected
    }

    pub fn ticks(&self) -> usize {
        self.ticks
    }

    /// Adds a frame; returns a tick when the window is full and `hop_frames`
    /// frames have arrived since the previous tick. Frames whose timestamp
    /// does not exceed the newest buffered one are dropped and counted.
    pub fn push_frame(&mut self, frame: SkeletonFrame) -> Result<Option<Tick>, StreamError> {
        if let Some(last) = self.buffer.back() {
            if frame.timestamp <= last.timestamp || frame.validate().is_err() {
                self.rejected += 1;
                log::warn!(
                    "dropping out-of-order or invalid frame at t={} ({} dropped so far)",
                    frame.timestamp,
                    self.rejected
                );
                return Ok(None);
            }
        } else if frame.validate().is_err() {
            self.rejected += 1;
            return Ok(None);
        }
        if self.buffer.len() == self.config.window_frames {
            self.buffer.pop_front();
        }
        self.buffer.push_back(frame);
        self.accepted += 1;
        let due = match self.last_tick_at {
            None => true,
            Some(at) => self.accepted - at >= self.config.hop_frames,
        };
        if self.buffer.len() < self.config.window_frames || !due {
            return Ok(None);
        }
        self.last_tick_at = Some(self.accepted);
        let window = self.buffer.make_contiguous();
        let posterior = self.classifier.classify(window)?;
        let tick = Tick {
            index: self.ticks,
            window_start: window[0].timestamp,
            window_end: window[window.len() - 1].timestamp,
            posterior,
        };
        self.ticks += 1;
        Ok(Some(tick))
    }

    pub fn decide(&mut self, tick: &Tick) -> Option<ActivityEvent> {
        self.decider.decide(&tick.posterior, tick.window_start, tick.window_end)
    }

    /// `push_frame` followed by `decide` on any resulting tick.
    pub fn process(&mut self, frame: SkeletonFrame) -> Result<(Option<Tick>, Option<ActivityEvent>), StreamError> {
        let tick = self.push_frame(frame)?;
        let event = tick.as_ref().and_then(|t| self.decide(t));
        Ok((tick, event))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::JOINT_COUNT;

    fn frame(t: f64) -> SkeletonFrame {
        SkeletonFrame::new(t, [[t, 1.0, 0.0]; JOINT_COUNT])
    }

    fn uniform(_: &[SkeletonFrame]) -> Result<Tensor, StreamError> {
        Ok(Tensor::full(&[12], 1.0 / 12.0))
    }

    fn post(class: usize, p: f64) -> Tensor {
        let rest = (1.0 - p) / 11.0;
        Tensor::from_fn(&[12], |i| if i == class { p } else { rest })
    }

    #[test]
    fn ticks_every_hop_after_window_fills() {
        let mut e = StreamEngine::new(StreamConfig::default(), uniform).unwrap();
        let mut at = Vec::new();
        for k in 1..=40 {
            if e.push_frame(frame(k as f64 * 0.1)).unwrap().is_some() {
                at.push(k);
            }
            assert!(e.buffered() <= 20);
        }
        assert_eq!(at, [20, 25, 30, 35, 40]);
    }

    #[test]
    fn nineteen_frames_no_tick() {
        let mut e = StreamEngine::new(StreamConfig::default(), uniform).unwrap();
        for k in 0..19 {
            assert!(e.push_frame(frame(k as f64)).unwrap().is_none());
        }
        assert_eq!(e.ticks(), 0);
    }

    #[test]
    fn out_of_order_frames_are_counted_not_fatal() {
        let mut e = StreamEngine::new(StreamConfig::default(), uniform).unwrap();
        e.push_frame(frame(1.0)).unwrap();
        e.push_frame(frame(0.5)).unwrap();
        e.push_frame(frame(1.0)).unwrap();
        e.push_frame(frame(1.1)).unwrap();
        assert_eq!((e.rejected(), e.buffered()), (2, 2));
    }

    #[test]
    fn debounce_then_cooldown() {
        let mut d = EventDecider::new(StreamConfig::default());
        assert!(d.decide(&post(2, 0.9), 0.0, 2.0).is_none());
        let ev = d.decide(&post(2, 0.9), 0.5, 2.5).unwrap();
        assert_eq!((ev.id, ev.label.class, ev.label.critical), (1, ActivityClass::A43, true));
        assert_eq!(ev.confidence, 0.9);
        assert!(d.decide(&post(2, 0.9), 1.0, 3.0).is_none());
        assert!(d.decide(&post(2, 0.9), 1.5, 3.5).is_none());
    }

    #[test]
    fn alternating_classes_never_fire() {
        let mut d = EventDecider::new(StreamConfig::default());
        for (k, c) in [2, 9, 2, 9, 2].iter().enumerate() {
            assert!(d.decide(&post(*c, 0.9), k as f64, k as f64 + 2.0).is_none());
        }
        let mut d = EventDecider::new(StreamConfig::default());
        assert!(d.decide(&post(2, 0.9), 0.0, 1.0).is_none());
        assert!(d.decide(&post(2, 0.5), 0.0, 1.5).is_none());
        assert!(d.decide(&post(2, 0.9), 0.0, 2.0).is_none());
    }

    #[test]
    fn config_validation() {
        let bad = [
            StreamConfig { hop_frames: 21, ..Default::default() },
            StreamConfig { confidence_threshold: 1.0, ..Default::default() },
            StreamConfig { window_frames: 0, ..Default::default() },
            StreamConfig { consecutive_required: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
