//! Corpus directories: `manifest.csv` plus one JSONL file per sequence.

use std::collections::BTreeSet;
use std::path::Path;

use mrha_core::skeleton::{
    parse_sequence_file, prepare_sample, write_sequence_file, ActivityClass, LabeledSample, SkeletonSequence, MODEL_FPS,
};
use serde::{Deserialize, Serialize};

use crate::error::{data, usage, Result};

pub const MANIFEST: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub file: String,
    pub label: ActivityClass,
    pub subject: u32,
    pub camera: u32,
}

pub fn sequence_file_name(class: ActivityClass, index: usize) -> String {
    format!("{}_{index:04}.jsonl", class.code())
}

/// Writes each sequence and the manifest, in the given order.
pub fn write_corpus(dir: &Path, sequences: &[(String, SkeletonSequence)]) -> Result<Vec<ManifestRow>> {
    std::fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
    let mut rows = Vec::with_capacity(sequences.len());
    for (name, seq) in sequences {
        let path = dir.join(name);
        write_sequence_file(seq, &path).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
        rows.push(ManifestRow {
            file: name.clone(),
            label: seq.label.ok_or_else(|| data(format!("{name}: sequence has no label")))?,
            subject: seq.subject_id,
            camera: seq.camera_id,
        });
    }
    let path = dir.join(MANIFEST);
    let mut w = csv::Writer::from_path(&path).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
    for row in &rows {
        w.serialize(row).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(rows)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = dir.join(MANIFEST);
    let mut r = csv::Reader::from_path(&path).map_err(|e| data(format!("cannot read {}: {e}", path.display())))?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<ManifestRow>, _>>()
        .map_err(|e| data(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(data(format!("{} lists no sequences", path.display())));
    }
    Ok(rows)
}

/// Parses every listed file, checks it against its manifest row and prepares
/// it as `grid`-sized rasters at the model frame rate.
pub fn load_corpus(dir: &Path, grid: usize) -> Result<Vec<LabeledSample>> {
    read_manifest(dir)?
        .iter()
        .map(|row| {
            let path = dir.join(&row.file);
            let mut seq = parse_sequence_file(&path).map_err(|e| data(format!("{}: {e}", path.display())))?;
            // a headerless file carries subject and camera 0: the manifest decides
            let known = |v: u32, m: u32| v == 0 || v == m;
            if seq.label.is_some_and(|l| l != row.label) || !known(seq.subject_id, row.subject) || !known(seq.camera_id, row.camera) {
                return Err(data(format!("{}: header disagrees with manifest row", path.display())));
            }
            seq.label = Some(row.label);
            seq.subject_id = row.subject;
            seq.camera_id = row.camera;
            prepare_sample(&seq, grid, MODEL_FPS, row.file.clone()).map_err(|e| data(format!("{}: {e}", path.display())))
        })
        .collect()
}

pub fn describe(samples: &[LabeledSample]) -> String {
    let subjects: BTreeSet<u32> = samples.iter().map(|s| s.subject_id).collect();
    let cameras: BTreeSet<u32> = samples.iter().map(|s| s.camera_id).collect();
    format!("{} samples, subjects {subjects:?}, cameras {cameras:?}", samples.len())
}
