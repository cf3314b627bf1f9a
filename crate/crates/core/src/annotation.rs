//! Ground truth attached to a recording: where speech is, where the talker
//! is, and how much the recording counts in weighted averages.
//!
//! On disk this is a JSON sidecar next to the WAV file:
//!
//! ```json
//! { "label": "row 1", "weight": 1,
//!   "speech_intervals": [[0.5, 2.1], [3.0, 4.2]],
//!   "angle_track": [[0.0, 0.52], [8.0, 0.52]] }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::StereoSignal;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("invalid annotation: {0}")]
    Invalid(String),
    #[error("annotation io: {0}")]
    Io(#[from] std::io::Error),
    #[error("annotation json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: String,
    pub weight: u32,
    /// Sorted, non-overlapping `[start, end]` pairs in seconds.
    pub speech_intervals: Vec<[f64; 2]>,
    /// `(time_s, azimuth_rad)` knots with increasing times, linearly interpolated.
    pub angle_track: Vec<[f64; 2]>,
}

impl Annotation {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        if self.weight < 1 {
            return Err(AnnotationError::Invalid("weight must be at least 1".into()));
        }
        for [s, e] in &self.speech_intervals {
            if !(s.is_finite() && e.is_finite() && s <= e) {
                return Err(AnnotationError::Invalid(format!("interval [{s}, {e}]")));
            }
        }
        if self
            .speech_intervals
            .windows(2)
            .any(|w| w[1][0] < w[0][1])
        {
            return Err(AnnotationError::Invalid(
                "speech intervals must be sorted and non-overlapping".into(),
            ));
        }
        if self.angle_track.iter().any(|k| !(k[0].is_finite() && k[1].is_finite())) {
            return Err(AnnotationError::Invalid("non-finite angle knot".into()));
        }
        if self.angle_track.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(AnnotationError::Invalid(
                "angle track times must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Talker azimuth at `t`, held constant beyond the first and last knots.
    pub fn angle_at(&self, t: f64) -> Option<f64> {
        interpolate_track(&self.angle_track, t)
    }

    /// Seconds of `[start, end)` covered by annotated speech.
    pub fn speech_overlap(&self, start: f64, end: f64) -> f64 {
        self.speech_intervals
            .iter()
            .map(|[s, e]| (e.min(end) - s.max(start)).max(0.0))
            .sum()
    }

    /// Times at which speech starts.
    pub fn onsets(&self) -> Vec<f64> {
        self.speech_intervals.iter().map(|i| i[0]).collect()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, AnnotationError> {
        let text = std::fs::read_to_string(path)?;
        let a: Annotation = serde_json::from_str(&text)?;
        a.validate()?;
        Ok(a)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), AnnotationError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

pub(crate) fn interpolate_track(track: &[[f64; 2]], t: f64) -> Option<f64> {
    let first = track.first()?;
    let last = track.last()?;
    if t <= first[0] {
        return Some(first[1]);
    }
    if t >= last[0] {
        return Some(last[1]);
    }
    let i = track.partition_point(|k| k[0] <= t);
    let (a, b) = (track[i - 1], track[i]);
    let w = (t - a[0]) / (b[0] - a[0]);
    Some(a[1] + w * (b[1] - a[1]))
}

/// Stereo audio with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedRecording {
    pub audio: StereoSignal,
    pub annotation: Annotation,
}

impl AnnotatedRecording {
    pub fn new(audio: StereoSignal, annotation: Annotation) -> Result<Self, AnnotationError> {
        annotation.validate()?;
        Ok(Self { audio, annotation })
    }

    pub fn weight(&self) -> u32 {
        self.annotation.weight
    }

    pub fn label(&self) -> &str {
        &self.annotation.label
    }
}
