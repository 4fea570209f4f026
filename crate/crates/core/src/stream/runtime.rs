use std::time::Instant;

use crossbeam_channel::bounded;
use serde::Serialize;

use super::source::{Decimator, FrameSource, SourceError};
use super::{ActivityEvent, StreamConfig, StreamEngine, StreamError, WindowClassifier};
use crate::skeleton::SkeletonFrame;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StreamSummary {
    pub frames_received: usize,
    /// Malformed records plus frames dropped for timestamp order.
    pub frames_rejected: usize,
    pub ticks: usize,
    pub events: usize,
    /// Frame arrival to posterior, 95th percentile (nearest rank).
    pub p95_latency_ms: Option<f64>,
    pub max_latency_ms: Option<f64>,
    /// Set when the source ended with an unrecoverable error.
    pub source_error: Option<String>,
}

/// Nearest-rank percentile of unsorted samples; `None` when empty.
pub fn percentile(samples: &[f64], pct: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((pct / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

enum Message {
    Frame(SkeletonFrame, Instant),
    Malformed,
    Fatal(String),
}

/// Runs one producer thread reading `source` into a bounded queue and
/// consumes it here: decimation to `model_fps`, windowing, classification and
/// event decisions. `sink` sees every event in emission order. A source
/// failure ends the run and is reported in the summary; a classifier failure
/// is returned as an error.
pub fn run_stream<S, C>(
    mut source: S,
    classifier: C,
    config: &StreamConfig,
    mut sink: impl FnMut(&ActivityEvent),
) -> Result<StreamSummary, StreamError>
where
    S: FrameSource,
    C: WindowClassifier,
{
    let mut engine = StreamEngine::new(config.clone(), classifier)?;
    let mut decimator = Decimator::new(config.model_fps);
    let (tx, rx) = bounded::<Message>(config.queue_capacity);
    let mut summary = StreamSummary::default();
    let mut latencies = Vec::new();

    std::thread::scope(|scope| -> Result<(), StreamError> {
        scope.spawn(move || {
            while let Some(item) = source.next_frame() {
                let msg = match item {
                    Ok(frame) => Message::Frame(frame, Instant::now()),
                    Err(SourceError::Malformed { line, message }) => {
                        log::warn!("skipping malformed frame record at line {line}: {message}");
                        Message::Malformed
                    }
                    Err(e) => Message::Fatal(e.to_string()),
                };
                let fatal = matches!(msg, Message::Fatal(_));
                if tx.send(msg).is_err() || fatal {
                    break;
                }
            }
        });

        for msg in rx.iter() {
            match msg {
                Message::Malformed => {
                    summary.frames_received += 1;
                    summary.frames_rejected += 1;
                }
                Message::Fatal(e) => {
                    log::error!("frame source stopped: {e}");
                    summary.source_error = Some(e);
                    break;
                }
                Message::Frame(frame, arrived) => {
                    summary.frames_received += 1;
                    for f in decimator.push(frame) {
                        let (tick, event) = engine.process(f)?;
                        if tick.is_some() {
                            latencies.push(arrived.elapsed().as_secs_f64() * 1e3);
                        }
                        if let Some(ev) = event {
                            summary.events += 1;
                            sink(&ev);
                        }
                    }
                }
            }
        }
        // unblock the producer if we stopped early
        drop(rx);
        Ok(())
    })?;

    summary.frames_rejected += decimator.dropped() + engine.rejected();
    summary.ticks = engine.ticks();
    summary.p95_latency_ms = percentile(&latencies, 95.0);
    summary.max_latency_ms = latencies.iter().copied().reduce(f64::max);
    Ok(summary)
}
