//! Pose records stored as JSON lines, one sample per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::ViewpointClass;
use crate::skeleton::{Frame, Pose2D, Pose3D, SkeletonError, NUM_JOINTS};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("record {id}: {source}")]
    Invalid {
        id: String,
        #[source]
        source: SkeletonError,
    },
}

/// One sample: 3D joints in millimeters (camera frame), optional 2D
/// projections in pixels and orientation labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub id: String,
    pub subject: String,
    pub activity: String,
    pub joints3d: [[f64; 3]; NUM_JOINTS],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints2d: Option<[[f64; 2]; NUM_JOINTS]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viewpoint: Option<ViewpointClass>,
}

impl PoseRecord {
    pub fn pose3d(&self) -> Result<Pose3D, RecordError> {
        Pose3D::from_arrays(&self.joints3d, Frame::Camera).map_err(|source| self.invalid(source))
    }

    pub fn pose2d(&self) -> Option<Result<Pose2D, RecordError>> {
        self.joints2d
            .as_ref()
            .map(|j| Pose2D::from_arrays(j).map_err(|source| self.invalid(source)))
    }

    fn invalid(&self, source: SkeletonError) -> RecordError {
        RecordError::Invalid {
            id: self.id.clone(),
            source,
        }
    }
}

/// Reads records, skipping blank lines. Line numbers in errors are 1-based.
pub fn read_records_from(reader: impl BufRead) -> Result<Vec<PoseRecord>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| RecordError::Io {
            path: "<input>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoseRecord = serde_json::from_str(&line).map_err(|e| RecordError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let bad = |what: &str| RecordError::Parse {
            line: i + 1,
            message: format!("non-finite value in {what}"),
        };
        if rec.joints3d.iter().flatten().any(|v| !v.is_finite()) {
            return Err(bad("joints3d"));
        }
        if rec.joints2d.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(bad("joints2d"));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<PoseRecord>, RecordError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| RecordError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_records_from(BufReader::new(file))
}

pub fn write_records_to(mut writer: impl Write, records: &[PoseRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_records(path: impl AsRef<Path>, records: &[PoseRecord]) -> Result<(), RecordError> {
    let path = path.as_ref();
    let io_err = |source| RecordError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_records_to(BufWriter::new(file), records).map_err(io_err)
}
