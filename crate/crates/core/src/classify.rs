//! Per-frame speech classification.
//!
//! A frame is kept for localization when a scalar feature lies strictly
//! between two thresholds. Two features are available:
//!
//! * power onset: the mean over samples of `F_i[j]^2 / F_{i-1}[j]^2`, which is
//!   large when the frame carries more energy than its predecessor;
//! * SRMR, a speech-to-reverberation modulation ratio: energy of the Hilbert
//!   envelope in low modulation bands over energy in high modulation bands.
//!
//! The upper threshold rejects very loud events as well as silence-to-sound
//! transitions that are too abrupt for speech.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{self, MonoSignal, SignalError};

/// Floor applied to energy sums and per-sample power denominators.
pub const DEFAULT_FLOOR_EPS: f64 = 1e-10;

/// Centers (Hz) of the eight modulation bands.
pub const MODULATION_CENTERS_HZ: [f64; 8] = [4.0, 6.5, 10.7, 17.6, 28.9, 47.5, 78.1, 128.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("thresholds must satisfy 0 < low < high, got low={low} high={high}")]
    Thresholds { low: f64, high: f64 },
    #[error("frames differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("floor must be positive, got {0}")]
    Floor(f64),
    #[error("modulation band centers must be positive and strictly increasing")]
    BandCenters,
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    delta_low: f64,
    delta_high: f64,
}

impl Thresholds {
    pub fn new(delta_low: f64, delta_high: f64) -> Result<Self, ClassifyError> {
        if !(delta_low > 0.0 && delta_low < delta_high && delta_high.is_finite()) {
            return Err(ClassifyError::Thresholds {
                low: delta_low,
                high: delta_high,
            });
        }
        Ok(Self {
            delta_low,
            delta_high,
        })
    }

    pub fn low(&self) -> f64 {
        self.delta_low
    }

    pub fn high(&self) -> f64 {
        self.delta_high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassifierKind {
    #[serde(rename = "po", alias = "power_onset")]
    PowerOnset,
    #[serde(rename = "srmr")]
    Srmr,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 2] = [ClassifierKind::PowerOnset, ClassifierKind::Srmr];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::PowerOnset => "po",
            ClassifierKind::Srmr => "srmr",
        }
    }
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "po" | "power_onset" | "poweronset" => Ok(ClassifierKind::PowerOnset),
            "srmr" => Ok(ClassifierKind::Srmr),
            other => Err(format!("unknown classifier '{other}'")),
        }
    }
}

/// Modulation bands with edges at the geometric midpoints between centers.
/// The outer edges sit half a band-ratio beyond the first and last centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationFilterbank {
    band_centers_hz: Vec<f64>,
    band_edges_hz: Vec<f64>,
}

impl Default for ModulationFilterbank {
    fn default() -> Self {
        Self::new(&MODULATION_CENTERS_HZ).expect("standard centers are valid")
    }
}

impl ModulationFilterbank {
    pub fn new(centers: &[f64]) -> Result<Self, ClassifyError> {
        if centers.len() < 2
            || centers[0] <= 0.0
            || centers.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(ClassifyError::BandCenters);
        }
        let n = centers.len();
        let mut edges = Vec::with_capacity(n + 1);
        edges.push(centers[0] / (centers[1] / centers[0]).sqrt());
        edges.extend(centers.windows(2).map(|w| (w[0] * w[1]).sqrt()));
        edges.push(centers[n - 1] * (centers[n - 1] / centers[n - 2]).sqrt());
        Ok(Self {
            band_centers_hz: centers.to_vec(),
            band_edges_hz: edges,
        })
    }

    pub fn centers(&self) -> &[f64] {
        &self.band_centers_hz
    }

    pub fn edges(&self) -> &[f64] {
        &self.band_edges_hz
    }

    pub fn len(&self) -> usize {
        self.band_centers_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.band_centers_hz.is_empty()
    }

    /// Shortest frame holding one period of the lowest band.
    pub fn min_confident_duration_s(&self) -> f64 {
        1.0 / self.band_centers_hz[0]
    }
}

/// Which bands form the numerator and denominator of the SRMR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SrmrSplit {
    /// Bands 1-4 over bands 4-8; band 4 appears in both sums.
    #[default]
    #[serde(rename = "overlapping")]
    Overlapping,
    /// Bands 1-4 over bands 5-8.
    #[serde(rename = "disjoint")]
    Disjoint,
}

/// How successive frames are compared by the power-onset feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OnsetMode {
    /// Mean of per-sample power ratios.
    #[default]
    #[serde(rename = "per_sample")]
    PerSample,
    /// Ratio of whole-frame mean powers.
    #[serde(rename = "whole_frame")]
    WholeFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub floor_eps: f64,
    pub srmr_split: SrmrSplit,
    pub onset_mode: OnsetMode,
    pub filterbank: ModulationFilterbank,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            floor_eps: DEFAULT_FLOOR_EPS,
            srmr_split: SrmrSplit::default(),
            onset_mode: OnsetMode::default(),
            filterbank: ModulationFilterbank::default(),
        }
    }
}

/// `mean_j F_i[j]^2 / max(F_{i-1}[j]^2, floor_eps)`.
pub fn power_onset_ratio(
    frame: &MonoSignal,
    prev_frame: &MonoSignal,
    floor_eps: f64,
) -> Result<f64, ClassifyError> {
    onset_ratio(frame.samples(), prev_frame.samples(), floor_eps, OnsetMode::PerSample)
}

/// Onset ratio of two equal-length sample slices in either mode.
pub fn onset_ratio(
    frame: &[f64],
    prev: &[f64],
    floor_eps: f64,
    mode: OnsetMode,
) -> Result<f64, ClassifyError> {
    if frame.len() != prev.len() {
        return Err(ClassifyError::LengthMismatch(frame.len(), prev.len()));
    }
    if !(floor_eps > 0.0) {
        return Err(ClassifyError::Floor(floor_eps));
    }
    if frame.is_empty() {
        return Err(ClassifyError::Signal(SignalError::Empty));
    }
    Ok(match mode {
        OnsetMode::PerSample => {
            frame
                .iter()
                .zip(prev)
                .map(|(c, p)| c * c / (p * p).max(floor_eps))
                .sum::<f64>()
                / frame.len() as f64
        }
        OnsetMode::WholeFrame => {
            signal::mean_square(frame) / signal::mean_square(prev).max(floor_eps)
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrmrReport {
    pub ratio: f64,
    /// Raw (unnormalized) envelope spectral energy per band.
    pub band_energies: Vec<f64>,
    /// The frame is shorter than one period of the lowest modulation band.
    pub low_confidence: bool,
}

/// Speech-to-reverberation modulation ratio with the overlapping band split.
pub fn srmr(frame: &MonoSignal, bank: &ModulationFilterbank, floor_eps: f64) -> Result<f64, ClassifyError> {
    Ok(srmr_report(frame.samples(), frame.sample_rate(), bank, floor_eps, SrmrSplit::Overlapping)?.ratio)
}

pub fn srmr_with(
    frame: &MonoSignal,
    bank: &ModulationFilterbank,
    floor_eps: f64,
    split: SrmrSplit,
) -> Result<SrmrReport, ClassifyError> {
    srmr_report(frame.samples(), frame.sample_rate(), bank, floor_eps, split)
}

pub(crate) fn srmr_report(
    samples: &[f64],
    sample_rate: f64,
    bank: &ModulationFilterbank,
    floor_eps: f64,
    split: SrmrSplit,
) -> Result<SrmrReport, ClassifyError> {
    if !(floor_eps > 0.0) {
        return Err(ClassifyError::Floor(floor_eps));
    }
    let fft_len = signal::fast_fft_len(samples.len());
    let mut env = signal::envelope_padded(samples, fft_len)?;
    let n = env.len();
    let mean = env.iter().sum::<f64>() / n as f64;
    env.iter_mut().for_each(|e| *e -= mean);
    let spectrum = signal::real_fft(&env, fft_len);

    let edges = bank.edges();
    let mut energies = vec![0.0; bank.len()];
    let bin_hz = sample_rate / fft_len as f64;
    for (k, bin) in spectrum.iter().enumerate().take(fft_len / 2 + 1).skip(1) {
        let f = k as f64 * bin_hz;
        if f >= edges[edges.len() - 1] {
            break;
        }
        if let Some(band) = edges.windows(2).position(|w| f >= w[0] && f < w[1]) {
            energies[band] += bin.norm_sqr();
        }
    }

    let bands = energies.len();
    let low_end = bands / 2;
    let high_start = match split {
        SrmrSplit::Overlapping => low_end - 1,
        SrmrSplit::Disjoint => low_end,
    };
    let low: f64 = energies[..low_end].iter().sum();
    let high: f64 = energies[high_start..].iter().sum();
    Ok(SrmrReport {
        ratio: (low + floor_eps) / (high + floor_eps),
        band_energies: energies,
        low_confidence: (n as f64 / sample_rate) < bank.min_confident_duration_s(),
    })
}

/// Speech iff `low < value < high`.
pub fn classify(value: f64, thresholds: &Thresholds) -> bool {
    thresholds.delta_low < value && value < thresholds.delta_high
}
