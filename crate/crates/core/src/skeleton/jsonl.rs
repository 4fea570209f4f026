//! Line-delimited JSON skeleton files.
//!
//! ```text
//! {"fps": 24, "subject": 3, "camera": 1, "label": "A43"}      optional header
//! {"t": 0.0, "joints": [[x, y, z], ...25], "conf": [c, ...25]} one line per frame
//! ```
//!
//! A file without a header is read as 24 fps, subject 0, camera 0, unlabeled.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActivityClass, SkeletonError, SkeletonFrame, SkeletonSequence, JOINT_COUNT};

pub const DEFAULT_SOURCE_FPS: f64 = 24.0;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    fps: f64,
    subject: u32,
    camera: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

/// Wire form of one frame line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub t: f64,
    pub joints: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conf: Option<Vec<f64>>,
}

impl FrameRecord {
    pub fn from_frame(frame: &SkeletonFrame) -> Self {
        let conf = frame.confidence.iter().any(|&c| c != 1.0).then(|| frame.confidence.to_vec());
        Self {
            t: frame.timestamp,
            joints: frame.joints.to_vec(),
            conf,
        }
    }

    pub fn into_frame(self) -> Result<SkeletonFrame, String> {
        let joints: [[f64; 3]; JOINT_COUNT] = self
            .joints
            .try_into()
            .map_err(|j: Vec<[f64; 3]>| format!("expected {JOINT_COUNT} joints, found {}", j.len()))?;
        let confidence = match self.conf {
            None => [1.0; JOINT_COUNT],
            Some(c) => c
                .try_into()
                .map_err(|c: Vec<f64>| format!("expected {JOINT_COUNT} confidences, found {}", c.len()))?,
        };
        let frame = SkeletonFrame {
            timestamp: self.t,
            joints,
            confidence,
        };
        frame.validate()?;
        Ok(frame)
    }
}

/// Parses one frame line (no header handling).
pub fn parse_frame_record(line: &str) -> Result<SkeletonFrame, String> {
    let rec: FrameRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    rec.into_frame()
}

pub fn parse_sequence<R: Read>(input: R) -> Result<SkeletonSequence, SkeletonError> {
    let reader = BufReader::new(input);
    let mut seq = SkeletonSequence {
        frames: Vec::new(),
        source_fps: DEFAULT_SOURCE_FPS,
        subject_id: 0,
        camera_id: 0,
        label: None,
    };
    let mut seen_content = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let text = line.trim_end_matches('\r');
        if text.trim().is_empty() {
            continue;
        }
        let first = !seen_content;
        seen_content = true;
        let frame_no = seq.frames.len() + 1;
        let perr = |frame: Option<usize>, message: String| SkeletonError::Parse {
            line: line_no,
            frame,
            message,
        };
        if first && is_header(text) {
            let h: Header = serde_json::from_str(text).map_err(|e| perr(None, format!("header: {e}")))?;
            if !(h.fps.is_finite() && h.fps > 0.0) {
                return Err(perr(None, format!("fps must be positive, got {}", h.fps)));
            }
            seq.source_fps = h.fps;
            seq.subject_id = h.subject;
            seq.camera_id = h.camera;
            seq.label = h
                .label
                .map(|l| l.parse::<ActivityClass>())
                .transpose()
                .map_err(|e| perr(None, e))?;
            continue;
        }
        let frame = parse_frame_record(text).map_err(|m| perr(Some(frame_no), m))?;
        if let Some(prev) = seq.frames.last() {
            if frame.timestamp <= prev.timestamp {
                return Err(perr(
                    Some(frame_no),
                    format!("timestamp {} does not exceed previous {}", frame.timestamp, prev.timestamp),
                ));
            }
        }
        seq.frames.push(frame);
    }
    if seq.frames.is_empty() {
        return Err(SkeletonError::Invalid("file contains no frames".into()));
    }
    Ok(seq)
}

fn is_header(line: &str) -> bool {
    serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(line)
        .map(|m| m.contains_key("fps"))
        .unwrap_or(false)
}

pub fn parse_sequence_file(path: &Path) -> Result<SkeletonSequence, SkeletonError> {
    let file = std::fs::File::open(path)?;
    parse_sequence(file)
}

/// Header line followed by one line per frame, LF terminated.
pub fn serialize_sequence<W: Write>(seq: &SkeletonSequence, mut out: W) -> Result<(), SkeletonError> {
    let header = Header {
        fps: seq.source_fps,
        subject: seq.subject_id,
        camera: seq.camera_id,
        label: seq.label.map(|l| l.code().to_string()),
    };
    let json = |e: serde_json::Error| SkeletonError::Invalid(e.to_string());
    serde_json::to_writer(&mut out, &header).map_err(json)?;
    out.write_all(b"\n")?;
    for f in &seq.frames {
        serde_json::to_writer(&mut out, &FrameRecord::from_frame(f)).map_err(json)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_sequence_file(seq: &SkeletonSequence, path: &Path) -> Result<(), SkeletonError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    serialize_sequence(seq, &mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_line(t: f64, joints: usize) -> String {
        let j: Vec<[f64; 3]> = vec![[0.0; 3]; joints];
        serde_json::json!({"t": t, "joints": j}).to_string()
    }

    #[test]
    fn single_frame_at_origin() {
        let seq = parse_sequence(frame_line(0.0, 25).as_bytes()).unwrap();
        assert_eq!(seq.frames.len(), 1);
        assert_eq!(seq.frames[0].joints, [[0.0; 3]; 25]);
        assert_eq!(seq.frames[0].confidence, [1.0; 25]);
        assert_eq!(seq.source_fps, 24.0);
    }

    #[test]
    fn short_frame_names_line_one() {
        match parse_sequence(frame_line(0.0, 24).as_bytes()) {
            Err(SkeletonError::Parse { line, frame, message }) => {
                assert_eq!((line, frame), (1, Some(1)));
                assert!(message.contains("24"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_and_errors_carry_physical_lines() {
        let text = format!(
            "{{\"fps\":30,\"subject\":4,\"camera\":2,\"label\":\"A43\"}}\n{}\n{}\n",
            frame_line(0.0, 25),
            frame_line(0.0, 25)
        );
        match parse_sequence(text.as_bytes()) {
            Err(e @ SkeletonError::Parse { line: 3, frame: Some(2), .. }) => {
                assert!(e.to_string().starts_with("line 3 (frame 2)"), "{e}");
            }
            other => panic!("{other:?}"),
        }
        let ok = format!("{{\"fps\":30,\"subject\":4,\"camera\":2,\"label\":\"A43\"}}\n{}\n", frame_line(0.5, 25));
        let seq = parse_sequence(ok.as_bytes()).unwrap();
        assert_eq!((seq.source_fps, seq.subject_id, seq.camera_id), (30.0, 4, 2));
        assert_eq!(seq.label, Some(ActivityClass::A43));
    }

    #[test]
    fn malformed_inputs() {
        assert!(parse_sequence("{\"t\": 0.0, \"joints\": ".as_bytes()).is_err());
        assert!(parse_sequence("".as_bytes()).is_err());
        let bad_label = format!("{{\"fps\":24,\"subject\":1,\"camera\":1,\"label\":\"A7\"}}\n{}", frame_line(0.0, 25));
        assert!(matches!(parse_sequence(bad_label.as_bytes()), Err(SkeletonError::Parse { line: 1, .. })));
        let extra = "{\"t\":0,\"joints\":[],\"pose\":1}";
        assert!(parse_sequence(extra.as_bytes()).is_err());
    }
}
