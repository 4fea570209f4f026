use super::{SkeletonError, SkeletonSequence};

/// Timestamps closer than this are treated as equidistant.
const TIE_EPS: f64 = 1e-9;

/// Source indices kept when decimating to `target_fps`.
///
/// Output length is `ceil(n / source_fps * target_fps)`. Output frame `k`
/// takes the source frame whose timestamp is nearest to `t0 + k / target_fps`,
/// preferring the earlier frame on ties.
pub fn resample_indices(timestamps: &[f64], source_fps: f64, target_fps: f64) -> Result<Vec<usize>, SkeletonError> {
    if !(target_fps.is_finite() && target_fps > 0.0) {
        return Err(SkeletonError::Invalid(format!("target fps must be positive, got {target_fps}")));
    }
    if target_fps > source_fps {
        return Err(SkeletonError::UpsamplingUnsupported { source_fps, target_fps });
    }
    let Some(&t0) = timestamps.first() else {
        return Err(SkeletonError::Invalid("sequence has no frames".into()));
    };
    let duration = timestamps.len() as f64 / source_fps;
    let count = (duration * target_fps - TIE_EPS).ceil().max(1.0) as usize;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let target = t0 + k as f64 / target_fps;
        // first index at or after target; the nearest is it or its predecessor
        let after = timestamps.partition_point(|&t| t < target);
        let idx = match (after.checked_sub(1), timestamps.get(after)) {
            (Some(before), Some(&ta)) => {
                if target - timestamps[before] <= ta - target + TIE_EPS {
                    before
                } else {
                    after
                }
            }
            (Some(before), None) => before,
            (None, _) => 0,
        };
        out.push(idx);
    }
    Ok(out)
}

/// Decimates by nearest-index selection and rewrites timestamps onto the
/// target grid.
pub fn resample_fps(seq: &SkeletonSequence, target_fps: f64) -> Result<SkeletonSequence, SkeletonError> {
    let ts: Vec<f64> = seq.frames.iter().map(|f| f.timestamp).collect();
    let idx = resample_indices(&ts, seq.source_fps, target_fps)?;
    let t0 = ts[0];
    let frames = idx
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let mut f = seq.frames[i].clone();
            f.timestamp = t0 + k as f64 / target_fps;
            f
        })
        .collect();
    Ok(SkeletonSequence {
        frames,
        source_fps: target_fps,
        subject_id: seq.subject_id,
        camera_id: seq.camera_id,
        label: seq.label,
    })
}
