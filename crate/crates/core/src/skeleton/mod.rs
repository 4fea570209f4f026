//! Skeleton data: 25-joint frames, sequence files, frame-rate resampling,
//! rasterization to grayscale grids, subject/camera splits, and a synthetic
//! motion corpus.

mod jsonl;
mod raster;
mod resample;
mod split;
mod synth;

pub use jsonl::{parse_sequence, parse_sequence_file, parse_frame_record, serialize_sequence, write_sequence_file, FrameRecord};
pub use raster::{rasterize_frame, rasterize_frames, RasterBox, RasterOutput, BONE_EDGES};
pub use resample::{resample_fps, resample_indices};
pub use split::{split_dataset, Provenance, Split, SplitMode};
pub use synth::{generate_sequence, generate_synthetic_corpus, SynthOptions};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub const JOINT_COUNT: usize = 25;

/// Zero-based joint indices (the 1-based labels run from base of spine to right thumb).
pub mod joint {
    pub const SPINE_BASE: usize = 0;
    pub const SPINE_MID: usize = 1;
    pub const NECK: usize = 2;
    pub const HEAD: usize = 3;
    pub const SHOULDER_LEFT: usize = 4;
    pub const ELBOW_LEFT: usize = 5;
    pub const WRIST_LEFT: usize = 6;
    pub const HAND_LEFT: usize = 7;
    pub const SHOULDER_RIGHT: usize = 8;
    pub const ELBOW_RIGHT: usize = 9;
    pub const WRIST_RIGHT: usize = 10;
    pub const HAND_RIGHT: usize = 11;
    pub const HIP_LEFT: usize = 12;
    pub const KNEE_LEFT: usize = 13;
    pub const ANKLE_LEFT: usize = 14;
    pub const FOOT_LEFT: usize = 15;
    pub const HIP_RIGHT: usize = 16;
    pub const KNEE_RIGHT: usize = 17;
    pub const ANKLE_RIGHT: usize = 18;
    pub const FOOT_RIGHT: usize = 19;
    pub const SPINE_SHOULDER: usize = 20;
    pub const HAND_TIP_LEFT: usize = 21;
    pub const THUMB_LEFT: usize = 22;
    pub const HAND_TIP_RIGHT: usize = 23;
    pub const THUMB_RIGHT: usize = 24;
}

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("line {line}{}: {message}", frame.map(|f| format!(" (frame {f})")).unwrap_or_default())]
    Parse {
        line: usize,
        frame: Option<usize>,
        message: String,
    },
    #[error("invalid sequence: {0}")]
    Invalid(String),
    #[error("cannot resample from {source_fps} fps up to {target_fps} fps")]
    UpsamplingUnsupported { source_fps: f64, target_fps: f64 },
    #[error("split impossible: {0}")]
    SplitImpossible(String),
    #[error("rasterization: {0}")]
    Raster(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// The twelve medical-related activity classes, in class-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActivityClass {
    A41,
    A42,
    A43,
    A44,
    A45,
    A46,
    A47,
    A48,
    A49,
    A103,
    A104,
    A105,
}

impl ActivityClass {
    pub const ALL: [ActivityClass; 12] = [
        Self::A41,
        Self::A42,
        Self::A43,
        Self::A44,
        Self::A45,
        Self::A46,
        Self::A47,
        Self::A48,
        Self::A49,
        Self::A103,
        Self::A104,
        Self::A105,
    ];

    /// Classes that trigger alerts unless configured otherwise.
    pub const DEFAULT_CRITICAL: [ActivityClass; 4] = [Self::A42, Self::A43, Self::A45, Self::A48];

    pub fn code(self) -> &'static str {
        match self {
            Self::A41 => "A41",
            Self::A42 => "A42",
            Self::A43 => "A43",
            Self::A44 => "A44",
            Self::A45 => "A45",
            Self::A46 => "A46",
            Self::A47 => "A47",
            Self::A48 => "A48",
            Self::A49 => "A49",
            Self::A103 => "A103",
            Self::A104 => "A104",
            Self::A105 => "A105",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Self::A41 => "sneeze/cough",
            Self::A42 => "staggering",
            Self::A43 => "falling down",
            Self::A44 => "headache",
            Self::A45 => "chest pain",
            Self::A46 => "back pain",
            Self::A47 => "neck pain",
            Self::A48 => "vomiting",
            Self::A49 => "fan self",
            Self::A103 => "yawn",
            Self::A104 => "stretch oneself",
            Self::A105 => "blow nose",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).expect("listed")
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_default_critical(self) -> bool {
        Self::DEFAULT_CRITICAL.contains(&self)
    }
}

impl fmt::Display for ActivityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ActivityClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.code() == s)
            .ok_or_else(|| format!("unknown activity class '{s}'"))
    }
}

/// A class bound to an alerting policy decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityLabel {
    pub class: ActivityClass,
    pub critical: bool,
}

impl ActivityLabel {
    pub fn new(class: ActivityClass, critical: bool) -> Self {
        Self { class, critical }
    }

    /// Label with the default critical set applied.
    pub fn with_default_policy(class: ActivityClass) -> Self {
        Self::new(class, class.is_default_critical())
    }

    pub fn code(&self) -> &'static str {
        self.class.code()
    }

    pub fn display_name(&self) -> &'static str {
        self.class.display_name()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFrame {
    pub timestamp: f64,
    /// Camera-space coordinates in meters, y up.
    pub joints: [[f64; 3]; JOINT_COUNT],
    pub confidence: [f64; JOINT_COUNT],
}

impl SkeletonFrame {
    pub fn new(timestamp: f64, joints: [[f64; 3]; JOINT_COUNT]) -> Self {
        Self {
            timestamp,
            joints,
            confidence: [1.0; JOINT_COUNT],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.timestamp.is_finite() {
            return Err("timestamp is not finite".into());
        }
        if self.joints.iter().flatten().any(|v| !v.is_finite()) {
            return Err("joint coordinate is not finite".into());
        }
        if self.confidence.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err("confidence outside [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub frames: Vec<SkeletonFrame>,
    pub source_fps: f64,
    pub subject_id: u32,
    pub camera_id: u32,
    pub label: Option<ActivityClass>,
}

impl SkeletonSequence {
    pub fn validate(&self) -> Result<(), SkeletonError> {
        if self.frames.is_empty() {
            return Err(SkeletonError::Invalid("sequence has no frames".into()));
        }
        if !(self.source_fps.is_finite() && self.source_fps > 0.0) {
            return Err(SkeletonError::Invalid(format!("fps must be positive, got {}", self.source_fps)));
        }
        for (i, f) in self.frames.iter().enumerate() {
            f.validate().map_err(|m| SkeletonError::Invalid(format!("frame {}: {m}", i + 1)))?;
        }
        if let Some(i) = self.frames.windows(2).position(|w| w[1].timestamp <= w[0].timestamp) {
            return Err(SkeletonError::Invalid(format!(
                "timestamps not strictly increasing at frame {}",
                i + 2
            )));
        }
        Ok(())
    }

    /// Frame count over source rate.
    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.source_fps
    }
}

/// Preprocessed model input bound to a class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub frames: Vec<Tensor>,
    pub label: ActivityLabel,
    pub subject_id: u32,
    pub camera_id: u32,
    pub source: String,
}

pub const MODEL_FPS: f64 = 10.0;

/// Resamples to `target_fps` and rasterizes with one sequence-wide box.
pub fn prepare_frames(seq: &SkeletonSequence, grid: usize, target_fps: f64) -> Result<Vec<Tensor>, SkeletonError> {
    let resampled = resample_fps(seq, target_fps)?;
    Ok(rasterize_frames(&resampled.frames, grid, &BONE_EDGES)?.frames)
}

pub fn prepare_sample(
    seq: &SkeletonSequence,
    grid: usize,
    target_fps: f64,
    source: impl Into<String>,
) -> Result<LabeledSample, SkeletonError> {
    let class = seq
        .label
        .ok_or_else(|| SkeletonError::Invalid("sequence carries no label".into()))?;
    Ok(LabeledSample {
        frames: prepare_frames(seq, grid, target_fps)?,
        label: ActivityLabel::with_default_policy(class),
        subject_id: seq.subject_id,
        camera_id: seq.camera_id,
        source: source.into(),
    })
}
