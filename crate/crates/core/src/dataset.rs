//! Ordered collections of annotated recordings.
//!
//! A manifest is a JSON file listing WAV files and their annotation
//! sidecars. Order matters: optimizer trials evaluate recordings in manifest
//! order and stop at the first one where nothing is accepted.
//!
//! ```json
//! { "recordings": [
//!     { "wav": "01.wav", "annotation": "01.json", "weight": 1, "split": "train" },
//!     { "wav": "09.wav", "annotation": "09.json", "weight": 3, "split": "test" } ] }
//! ```
//!
//! Relative paths resolve against the manifest's directory. `split`
//! defaults to `train`; `weight` is informational, the sidecar's weight is
//! the one used.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{AnnotatedRecording, Annotation, AnnotationError};
use crate::wav::{self, WavError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Wav { path: PathBuf, source: WavError },
    #[error("{path}: {source}")]
    Annotation {
        path: PathBuf,
        source: AnnotationError,
    },
    #[error("manifest lists no recordings")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub wav: PathBuf,
    pub annotation: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<u32>,
    #[serde(default)]
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub recordings: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Recordings in evaluation order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub recordings: Vec<AnnotatedRecording>,
}

impl Dataset {
    pub fn new(recordings: Vec<AnnotatedRecording>) -> Result<Self, DatasetError> {
        if recordings.is_empty() {
            return Err(DatasetError::Empty);
        }
        Ok(Self { recordings })
    }

    /// Load the recordings of the manifest at `path`, all of them or only
    /// those of one split.
    pub fn load(path: impl AsRef<Path>, split: Option<Split>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let manifest = Manifest::read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let recordings = manifest
            .recordings
            .iter()
            .filter(|entry| split.is_none_or(|s| entry.split == s))
            .map(|entry| {
                let wav_path = base.join(&entry.wav);
                let ann_path = base.join(&entry.annotation);
                let audio = wav::read_stereo(&wav_path).map_err(|source| DatasetError::Wav {
                    path: wav_path.clone(),
                    source,
                })?;
                let annotation = Annotation::read(&ann_path).map_err(|source| DatasetError::Annotation {
                    path: ann_path.clone(),
                    source,
                })?;
                AnnotatedRecording::new(audio, annotation).map_err(|source| DatasetError::Annotation {
                    path: ann_path,
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(recordings)
    }

    pub fn weights(&self) -> Vec<u32> {
        self.recordings.iter().map(|r| r.weight()).collect()
    }

    pub fn len(&self) -> usize {
        self.recordings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recordings.is_empty()
    }
}
