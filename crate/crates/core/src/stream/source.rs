//! Frame sources and online rate conversion.

use std::io::{BufRead, BufReader};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::skeleton::{parse_frame_record, parse_sequence_file, SkeletonError, SkeletonFrame};

#[derive(Debug, Error)]
pub enum SourceError {
    /// A record that could not be parsed; the source remains usable.
    #[error("malformed frame record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    /// The source cannot continue.
    #[error("source failed: {0}")]
    Fatal(String),
}

impl SourceError {
    pub fn is_fatal(&self) -> bool {
        matches!(self, Self::Fatal(_))
    }
}

/// Yields frames in arrival order; `None` at end of stream.
pub trait FrameSource: Send {
    fn next_frame(&mut self) -> Option<Result<SkeletonFrame, SourceError>>;
}

/// In-memory frames, mainly for tests.
#[derive(Debug, Clone)]
pub struct VecSource {
    frames: std::vec::IntoIter<SkeletonFrame>,
}

impl VecSource {
    pub fn new(frames: Vec<SkeletonFrame>) -> Self {
        Self { frames: frames.into_iter() }
    }
}

impl FrameSource for VecSource {
    fn next_frame(&mut self) -> Option<Result<SkeletonFrame, SourceError>> {
        self.frames.next().map(Ok)
    }
}

/// Replays a skeleton JSONL file, optionally sleeping so frames arrive at
/// their recorded spacing.
#[derive(Debug)]
pub struct ReplaySource {
    frames: std::vec::IntoIter<SkeletonFrame>,
    pace: bool,
    origin: Option<(Instant, f64)>,
}

impl ReplaySource {
    pub fn open(path: &Path, pace: bool) -> Result<Self, SkeletonError> {
        let seq = parse_sequence_file(path)?;
        Ok(Self::from_frames(seq.frames, pace))
    }

    pub fn from_frames(frames: Vec<SkeletonFrame>, pace: bool) -> Self {
        Self {
            frames: frames.into_iter(),
            pace,
            origin: None,
        }
    }
}

impl FrameSource for ReplaySource {
    fn next_frame(&mut self) -> Option<Result<SkeletonFrame, SourceError>> {
        let frame = self.frames.next()?;
        if self.pace {
            let (start, t0) = *self.origin.get_or_insert((Instant::now(), frame.timestamp));
            let due = start + Duration::from_secs_f64((frame.timestamp - t0).max(0.0));
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        Some(Ok(frame))
    }
}

/// Accepts one TCP connection and reads line-delimited frame records from it.
/// A header line (one carrying `fps`) is skipped.
#[derive(Debug)]
pub struct SocketSource {
    listener: TcpListener,
    reader: Option<BufReader<TcpStream>>,
    line_no: usize,
    done: bool,
}

impl SocketSource {
    pub fn bind(addr: &str) -> std::io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            reader: None,
            line_no: 0,
            done: false,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }
}

impl FrameSource for SocketSource {
    fn next_frame(&mut self) -> Option<Result<SkeletonFrame, SourceError>> {
        if self.done {
            return None;
        }
        if self.reader.is_none() {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    log::info!("frame source connected from {peer}");
                    self.reader = Some(BufReader::new(stream));
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(SourceError::Fatal(format!("accept: {e}"))));
                }
            }
        }
        let reader = self.reader.as_mut().expect("connected");
        let mut line = String::new();
        loop {
            line.clear();
            match reader.read_line(&mut line) {
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {
                    self.line_no += 1;
                    let text = line.trim();
                    if text.is_empty() || (self.line_no == 1 && text.contains("\"fps\"")) {
                        continue;
                    }
                    return Some(parse_frame_record(text).map_err(|message| SourceError::Malformed {
                        line: self.line_no,
                        message,
                    }));
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(SourceError::Fatal(format!("read: {e}"))));
                }
            }
        }
    }
}

/// Online nearest-timestamp decimation onto the grid `t0 + k / fps`.
///
/// Grid point `g` is resolved once a frame at or after `g` arrives, choosing
/// between that frame and its predecessor by distance (earlier on ties), and
/// the emitted frame takes timestamp `g`. On a completed recording this
/// selects the same frames as offline resampling.
#[derive(Debug, Clone)]
pub struct Decimator {
    fps: f64,
    t0: Option<f64>,
    k: u64,
    prev: Option<SkeletonFrame>,
    dropped: usize,
}

const TIE_EPS: f64 = 1e-9;

impl Decimator {
    pub fn new(fps: f64) -> Self {
        Self {
            fps,
            t0: None,
            k: 0,
            prev: None,
            dropped: 0,
        }
    }

    /// Frames ignored for arriving out of timestamp order.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn push(&mut self, frame: SkeletonFrame) -> Vec<SkeletonFrame> {
        let mut out = Vec::new();
        let Some(t0) = self.t0 else {
            self.t0 = Some(frame.timestamp);
            self.k = 1;
            out.push(frame.clone());
            self.prev = Some(frame);
            return out;
        };
        let prev = self.prev.as_ref().expect("set with t0");
        if frame.timestamp <= prev.timestamp {
            self.dropped += 1;
            return out;
        }
        loop {
            let g = t0 + self.k as f64 / self.fps;
            if g > frame.timestamp {
                break;
            }
            let pick = if g - prev.timestamp <= frame.timestamp - g + TIE_EPS { prev } else { &frame };
            let mut f = pick.clone();
            f.timestamp = g;
            out.push(f);
            self.k += 1;
        }
        self.prev = Some(frame);
        out
    }
}
