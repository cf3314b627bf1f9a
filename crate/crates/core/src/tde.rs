//! Interaural time-delay estimation by generalized cross-correlation.
//!
//! Lag convention: a correlogram value at lag `l` is `sum_n x[n] * y[n + l]`
//! with `x` the left channel and `y` the right. A positive lag therefore
//! means the right channel is a delayed copy of the left, i.e. the sound
//! reached the left microphone first. [`crate::head`] maps positive lags to
//! positive (left-side) azimuths.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::head::HeadModel;
use crate::signal::{self, MonoSignal, SignalError, Spectrum};

/// Weighting applied to the cross-power spectrum before the inverse transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WeightingKind {
    /// No whitening: plain cross-correlation computed spectrally.
    #[serde(rename = "cc", alias = "plain_cc")]
    PlainCC,
    /// Phase transform, `1 / |G_xy|`.
    #[serde(rename = "phat")]
    Phat,
    /// Smoothed coherence transform, `1 / sqrt(G_xx G_yy)`.
    #[serde(rename = "scot")]
    Scot,
}

impl WeightingKind {
    pub const ALL: [WeightingKind; 3] = [WeightingKind::PlainCC, WeightingKind::Phat, WeightingKind::Scot];

    pub fn name(self) -> &'static str {
        match self {
            WeightingKind::PlainCC => "cc",
            WeightingKind::Phat => "phat",
            WeightingKind::Scot => "scot",
        }
    }
}

impl std::fmt::Display for WeightingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for WeightingKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cc" | "plain_cc" | "plaincc" | "cross-corr" => Ok(WeightingKind::PlainCC),
            "phat" | "gcc-phat" => Ok(WeightingKind::Phat),
            "scot" | "gcc-scot" => Ok(WeightingKind::Scot),
            other => Err(format!("unknown timing method '{other}'")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TdeError {
    #[error("spectra differ: {0}")]
    Mismatch(String),
    #[error("max lag {max_lag} must be at least 1 and below the frame length {len}")]
    InvalidMaxLag { max_lag: usize, len: usize },
    #[error("silent frame")]
    SilentFrame,
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Correlation values for integer lags `-max_lag..=max_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorrelogram {
    values: Vec<f64>,
    max_lag: usize,
    sample_rate: f64,
}

impl CrossCorrelogram {
    pub fn new(values: Vec<f64>, sample_rate: f64) -> Result<Self, TdeError> {
        if values.len() % 2 == 0 {
            return Err(TdeError::Mismatch(format!(
                "correlogram length {} is not odd",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TdeError::Signal(SignalError::NonFinite {
                index: values.iter().position(|v| !v.is_finite()).unwrap_or(0),
            }));
        }
        let max_lag = values.len() / 2;
        Ok(Self {
            values,
            max_lag,
            sample_rate,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn at(&self, lag: i64) -> f64 {
        self.values[(lag + self.max_lag as i64) as usize]
    }

    pub fn lag_of_index(&self, index: usize) -> i64 {
        index as i64 - self.max_lag as i64
    }

    /// Index of the global maximum. Ties go to the smallest |lag|, then to
    /// the positive lag.
    pub fn peak_index(&self) -> usize {
        let mut best = self.max_lag;
        for (i, &v) in self.values.iter().enumerate() {
            let b = self.values[best];
            let (li, lb) = (self.lag_of_index(i), self.lag_of_index(best));
            let better = v > b
                || (v == b && (li.abs() < lb.abs() || (li.abs() == lb.abs() && li > lb)));
            if better {
                best = i;
            }
        }
        best
    }
}

/// The estimated delay and the shape of the correlogram around it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdeResult {
    pub lag_samples: i64,
    pub lag_seconds: f64,
    pub peak_value: f64,
    /// Peak value over the strongest competing local maximum; `f64::INFINITY`
    /// when there is none.
    pub prominence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GccOptions {
    /// Division guard for PHAT/SCOT, relative to the largest denominator.
    pub epsilon_rel: f64,
    /// Zero-pad so that the correlation is linear rather than circular.
    /// Off, the frame length itself is the transform length.
    pub zero_pad: bool,
    /// Width in bins of the moving average applied to the auto-spectra used by SCOT.
    pub scot_smoothing_bins: usize,
    /// Taper applied to both frames before the transform.
    pub window: FrameWindow,
}

/// Analysis taper for GCC frames.
///
/// A rectangular cut leaks band-limited content into empty bins with a phase
/// that is nearly the same in both channels. PHAT and SCOT whiten those bins
/// to unit weight, which shows up as a false peak near lag zero. A Hann taper
/// pushes the leakage below the noise floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameWindow {
    #[default]
    Rectangular,
    Hann,
}

impl FrameWindow {
    fn apply(self, x: &[f64]) -> std::borrow::Cow<'_, [f64]> {
        match self {
            FrameWindow::Rectangular => std::borrow::Cow::Borrowed(x),
            FrameWindow::Hann => std::borrow::Cow::Owned(
                x.iter().zip(signal::hann_window(x.len())).map(|(v, w)| v * w).collect(),
            ),
        }
    }
}

impl Default for GccOptions {
    fn default() -> Self {
        Self {
            epsilon_rel: 1e-12,
            zero_pad: true,
            scot_smoothing_bins: 9,
            window: FrameWindow::Rectangular,
        }
    }
}

/// Largest lag a source in the frontal half-plane can produce for `model`.
pub fn default_max_lag(model: &HeadModel, sample_rate: f64) -> usize {
    (model.max_itd() * sample_rate).ceil().max(1.0) as usize
}

/// `X[f] * conj(Y[f])`.
pub fn cross_power_spectrum(x: &Spectrum, y: &Spectrum) -> Result<Vec<Complex64>, TdeError> {
    if x.bins.len() != y.bins.len() || x.length != y.length {
        return Err(TdeError::Mismatch(format!(
            "lengths {} and {}",
            x.bins.len(),
            y.bins.len()
        )));
    }
    if x.sample_rate != y.sample_rate {
        return Err(TdeError::Mismatch(format!(
            "sample rates {} and {}",
            x.sample_rate, y.sample_rate
        )));
    }
    Ok(x.bins.iter().zip(&y.bins).map(|(a, b)| a * b.conj()).collect())
}

/// Weight a cross-power spectrum. `epsilon` is an absolute floor on every
/// PHAT/SCOT denominator.
pub fn apply_weighting(
    g_xy: &[Complex64],
    g_xx: &[f64],
    g_yy: &[f64],
    kind: WeightingKind,
    epsilon: f64,
) -> Vec<Complex64> {
    match kind {
        WeightingKind::PlainCC => g_xy.to_vec(),
        WeightingKind::Phat => g_xy.iter().map(|g| g / g.norm_sqr().sqrt().max(epsilon)).collect(),
        WeightingKind::Scot => g_xy
            .iter()
            .zip(g_xx.iter().zip(g_yy))
            .map(|(g, (xx, yy))| g / (xx * yy).max(0.0).sqrt().max(epsilon))
            .collect(),
    }
}

/// Generalized cross-correlation with default options.
pub fn gcc(
    x: &MonoSignal,
    y: &MonoSignal,
    kind: WeightingKind,
    max_lag: usize,
) -> Result<(CrossCorrelogram, TdeResult), TdeError> {
    gcc_with(x, y, kind, max_lag, &GccOptions::default())
}

pub fn gcc_with(
    x: &MonoSignal,
    y: &MonoSignal,
    kind: WeightingKind,
    max_lag: usize,
    options: &GccOptions,
) -> Result<(CrossCorrelogram, TdeResult), TdeError> {
    if x.len() != y.len() || x.sample_rate() != y.sample_rate() {
        return Err(TdeError::Mismatch(format!(
            "frames of {} and {} samples",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if max_lag < 1 || max_lag >= n {
        return Err(TdeError::InvalidMaxLag { max_lag, len: n });
    }
    if x.samples().iter().all(|&s| s == 0.0) || y.samples().iter().all(|&s| s == 0.0) {
        return Err(TdeError::SilentFrame);
    }
    let fft_len = if options.zero_pad {
        signal::fast_fft_len(n + max_lag)
    } else {
        n
    };
    let (xw, yw) = (options.window.apply(x.samples()), options.window.apply(y.samples()));
    let (xs, ys) = signal::real_fft_pair(&xw, &yw, fft_len);
    let g_xy: Vec<Complex64> = xs.iter().zip(&ys).map(|(a, b)| a * b.conj()).collect();

    let mut weighted = match kind {
        WeightingKind::PlainCC => g_xy,
        WeightingKind::Phat => {
            let top = g_xy.iter().map(|g| g.norm_sqr()).fold(0.0, f64::max).sqrt();
            apply_weighting(&g_xy, &[], &[], kind, options.epsilon_rel * top)
        }
        WeightingKind::Scot => {
            let width = options.scot_smoothing_bins.max(1);
            let g_xx = smooth_circular(&xs.iter().map(|c| c.norm_sqr()).collect::<Vec<_>>(), width);
            let g_yy = smooth_circular(&ys.iter().map(|c| c.norm_sqr()).collect::<Vec<_>>(), width);
            let top = g_xx
                .iter()
                .zip(&g_yy)
                .map(|(a, b)| (a * b).sqrt())
                .fold(0.0, f64::max);
            apply_weighting(&g_xy, &g_xx, &g_yy, kind, options.epsilon_rel * top)
        }
    };
    signal::ifft_in_place(&mut weighted);

    // weighted[k] = sum_n x[n + k] y[n], so lag l reads index -l.
    let values: Vec<f64> = (-(max_lag as i64)..=max_lag as i64)
        .map(|lag| weighted[(-lag).rem_euclid(fft_len as i64) as usize].re)
        .collect();
    let correlogram = CrossCorrelogram::new(values, x.sample_rate())?;
    let result = summarize(&correlogram);
    Ok((correlogram, result))
}

/// Direct sliding dot product over the overlapping samples.
pub fn time_domain_xcorr(
    x: &MonoSignal,
    y: &MonoSignal,
    max_lag: usize,
) -> Result<CrossCorrelogram, TdeError> {
    if x.len() != y.len() {
        return Err(TdeError::Mismatch(format!(
            "frames of {} and {} samples",
            x.len(),
            y.len()
        )));
    }
    let (xs, ys) = (x.samples(), y.samples());
    let n = xs.len() as i64;
    let values = (-(max_lag as i64)..=max_lag as i64)
        .map(|lag| {
            let lo = 0.max(-lag);
            let hi = n.min(n - lag);
            (lo..hi)
                .map(|i| xs[i as usize] * ys[(i + lag) as usize])
                .sum()
        })
        .collect();
    CrossCorrelogram::new(values, x.sample_rate())
}

/// Global maximum over the largest other local maximum, ignoring the two
/// immediate neighbours of the peak. Interior points only count as local
/// maxima, and competitors must be positive.
pub fn peak_prominence(correlogram: &CrossCorrelogram) -> f64 {
    let v = correlogram.values();
    if v.len() < 3 {
        return f64::INFINITY;
    }
    let peak = correlogram.peak_index();
    let competitor = (1..v.len() - 1)
        .filter(|&i| i.abs_diff(peak) >= 2)
        .filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1])
        .map(|i| v[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if competitor > 0.0 {
        v[peak] / competitor
    } else {
        f64::INFINITY
    }
}

pub fn summarize(correlogram: &CrossCorrelogram) -> TdeResult {
    let peak = correlogram.peak_index();
    let lag_samples = correlogram.lag_of_index(peak);
    TdeResult {
        lag_samples,
        lag_seconds: lag_samples as f64 / correlogram.sample_rate(),
        peak_value: correlogram.values()[peak],
        prominence: peak_prominence(correlogram),
    }
}

fn smooth_circular(values: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 {
        return values.to_vec();
    }
    let n = values.len();
    let half = (width / 2) as i64;
    let count = (2 * half + 1) as f64;
    (0..n as i64)
        .map(|k| {
            (-half..=half)
                .map(|d| values[(k + d).rem_euclid(n as i64) as usize])
                .sum::<f64>()
                / count
        })
        .collect()
}
