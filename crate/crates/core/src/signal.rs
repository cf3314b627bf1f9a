//! Signal containers, framing, spectral transforms and envelope extraction.
//!
//! Everything downstream (time-delay estimation, frame classification, the
//! pipeline) works on [`MonoSignal`] frames cut by [`frame_stream`]. Frames
//! are not windowed before the transform unless a caller asks for it.

use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sample rate used for all synthesized material unless configured otherwise.
pub const DEFAULT_SAMPLE_RATE: f64 = 16_000.0;

/// Shortest frame accepted by [`analytic_envelope`].
pub const MIN_ENVELOPE_LEN: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("sample rate must be positive and finite, got {0}")]
    InvalidSampleRate(f64),
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("stereo channels differ: {0}")]
    ChannelMismatch(String),
    #[error("empty frame")]
    Empty,
    #[error("frame of {len} samples is shorter than the required {min}")]
    TooShort { len: usize, min: usize },
    #[error("invalid framing: {0}")]
    InvalidFraming(String),
}

/// A single channel of real samples at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MonoSignal {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl MonoSignal {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self, SignalError> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(SignalError::InvalidSampleRate(sample_rate));
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SignalError::NonFinite { index });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: f64) -> Result<Self, SignalError> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Copy of `len` samples starting at `start`.
    pub fn slice(&self, start: usize, len: usize) -> MonoSignal {
        MonoSignal {
            samples: self.samples[start..start + len].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, gain: f64) -> MonoSignal {
        MonoSignal {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Two synchronized channels. Left is the `x` input and right the `y` input
/// of every cross-correlation in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoSignal {
    left: MonoSignal,
    right: MonoSignal,
}

impl StereoSignal {
    pub fn new(left: MonoSignal, right: MonoSignal) -> Result<Self, SignalError> {
        if left.sample_rate != right.sample_rate {
            return Err(SignalError::ChannelMismatch(format!(
                "sample rates {} and {}",
                left.sample_rate, right.sample_rate
            )));
        }
        if left.len() != right.len() {
            return Err(SignalError::ChannelMismatch(format!(
                "lengths {} and {}",
                left.len(),
                right.len()
            )));
        }
        Ok(Self { left, right })
    }

    pub fn left(&self) -> &MonoSignal {
        &self.left
    }

    pub fn right(&self) -> &MonoSignal {
        &self.right
    }

    pub fn sample_rate(&self) -> f64 {
        self.left.sample_rate
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.left.duration_s()
    }

    /// The same recording with left and right exchanged.
    pub fn swapped(&self) -> StereoSignal {
        StereoSignal {
            left: self.right.clone(),
            right: self.left.clone(),
        }
    }

    /// Per-sample mean of the two channels.
    pub fn mono_mix(&self) -> MonoSignal {
        MonoSignal {
            samples: self
                .left
                .samples
                .iter()
                .zip(&self.right.samples)
                .map(|(l, r)| 0.5 * (l + r))
                .collect(),
            sample_rate: self.left.sample_rate,
        }
    }
}

/// Full complex DFT of a real frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    pub sample_rate: f64,
    /// Frame length the spectrum was computed from.
    pub length: usize,
}

impl Spectrum {
    /// Frequency in Hz of bin `k` (bins above Nyquist map to negative frequencies).
    pub fn bin_frequency(&self, k: usize) -> f64 {
        let n = self.length as f64;
        let k = if k > self.length / 2 {
            k as f64 - n
        } else {
            k as f64
        };
        k * self.sample_rate / n
    }
}

/// Frame length and hop, the latter given as a fraction of the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramingParams {
    pub frame_size_s: f64,
    pub step_fraction: f64,
}

impl FramingParams {
    pub fn new(frame_size_s: f64, step_fraction: f64) -> Result<Self, SignalError> {
        let params = Self {
            frame_size_s,
            step_fraction,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.frame_size_s.is_finite() && self.frame_size_s > 0.0) {
            return Err(SignalError::InvalidFraming(format!(
                "frame size {} s must be positive",
                self.frame_size_s
            )));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return Err(SignalError::InvalidFraming(format!(
                "step fraction {} must lie in (0, 1]",
                self.step_fraction
            )));
        }
        Ok(())
    }

    pub fn hop_s(&self) -> f64 {
        self.frame_size_s * self.step_fraction
    }

    pub fn frame_len(&self, sample_rate: f64) -> usize {
        (self.frame_size_s * sample_rate).round() as usize
    }

    pub fn hop_len(&self, sample_rate: f64) -> usize {
        ((self.hop_s() * sample_rate).round() as usize).max(1)
    }

    /// Sample positions of every complete frame in a signal of `signal_len` samples.
    pub fn layout(&self, signal_len: usize, sample_rate: f64) -> Result<FrameLayout, SignalError> {
        self.validate()?;
        let frame_len = self.frame_len(sample_rate);
        if frame_len < 2 {
            return Err(SignalError::InvalidFraming(format!(
                "frame of {frame_len} samples is shorter than 2"
            )));
        }
        let hop = self.hop_len(sample_rate);
        let count = if signal_len >= frame_len {
            (signal_len - frame_len) / hop + 1
        } else {
            0
        };
        Ok(FrameLayout {
            frame_len,
            hop,
            count,
            sample_rate,
        })
    }
}

/// Integer framing of one signal: frame `i` covers `[i*hop, i*hop + frame_len)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameLayout {
    pub frame_len: usize,
    pub hop: usize,
    pub count: usize,
    pub sample_rate: f64,
}

impl FrameLayout {
    pub fn start(&self, index: usize) -> usize {
        index * self.hop
    }

    pub fn start_s(&self, index: usize) -> f64 {
        self.start(index) as f64 / self.sample_rate
    }

    pub fn frame_duration_s(&self) -> f64 {
        self.frame_len as f64 / self.sample_rate
    }

}

/// Cut a signal into complete frames. Returns `(start_time_s, frame)` pairs;
/// a signal shorter than one frame yields no frames.
pub fn frame_stream(
    signal: &MonoSignal,
    params: &FramingParams,
) -> Result<Vec<(f64, MonoSignal)>, SignalError> {
    let layout = params.layout(signal.len(), signal.sample_rate)?;
    Ok((0..layout.count)
        .map(|i| {
            (
                layout.start_s(i),
                signal.slice(layout.start(i), layout.frame_len),
            )
        })
        .collect())
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    static SCRATCH: RefCell<Vec<Complex64>> = const { RefCell::new(Vec::new()) };
}

fn run_plan(plan: &dyn rustfft::Fft<f64>, buf: &mut [Complex64]) {
    SCRATCH.with(|s| {
        let mut scratch = s.borrow_mut();
        let need = plan.get_inplace_scratch_len();
        if scratch.len() < need {
            scratch.resize(need, Complex64::new(0.0, 0.0));
        }
        plan.process_with_scratch(buf, &mut scratch[..need]);
    });
}

/// In-place forward FFT (unnormalized).
pub(crate) fn fft_in_place(buf: &mut [Complex64]) {
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()));
    run_plan(plan.as_ref(), buf);
}

/// In-place inverse FFT, normalized by `1/N`.
pub(crate) fn ifft_in_place(buf: &mut [Complex64]) {
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()));
    run_plan(plan.as_ref(), buf);
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Smallest length `>= n` of the form `2^a 3^b 5^c`, for which FFTs are fast.
pub fn fast_fft_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Spectra of two real sequences from one complex FFT of `x + i y`.
pub(crate) fn real_fft_pair(x: &[f64], y: &[f64], len: usize) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut z: Vec<Complex64> = x.iter().zip(y).map(|(&a, &b)| Complex64::new(a, b)).collect();
    z.resize(len, Complex64::new(0.0, 0.0));
    fft_in_place(&mut z);
    let mut xs = Vec::with_capacity(len);
    let mut ys = Vec::with_capacity(len);
    for k in 0..len {
        let a = z[k];
        let b = z[(len - k) % len].conj();
        xs.push((a + b) * 0.5);
        ys.push(Complex64::new(0.0, -0.5) * (a - b));
    }
    (xs, ys)
}

pub(crate) fn real_fft(samples: &[f64], len: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = samples.iter().map(|&s| Complex64::new(s, 0.0)).collect();
    buf.resize(len, Complex64::new(0.0, 0.0));
    fft_in_place(&mut buf);
    buf
}

pub fn forward_transform(frame: &MonoSignal) -> Result<Spectrum, SignalError> {
    if frame.is_empty() {
        return Err(SignalError::Empty);
    }
    Ok(Spectrum {
        bins: real_fft(&frame.samples, frame.len()),
        sample_rate: frame.sample_rate,
        length: frame.len(),
    })
}

/// Inverse of [`forward_transform`]; the imaginary residue is discarded.
pub fn inverse_transform(spectrum: &Spectrum) -> Result<MonoSignal, SignalError> {
    if spectrum.bins.is_empty() {
        return Err(SignalError::Empty);
    }
    let mut buf = spectrum.bins.clone();
    ifft_in_place(&mut buf);
    MonoSignal::new(buf.iter().map(|c| c.re).collect(), spectrum.sample_rate)
}

/// Magnitude of the analytic signal (FFT-based Hilbert transform).
pub fn analytic_envelope(frame: &MonoSignal) -> Result<MonoSignal, SignalError> {
    let env = envelope_of(&frame.samples)?;
    Ok(MonoSignal {
        samples: env,
        sample_rate: frame.sample_rate,
    })
}

pub(crate) fn envelope_of(samples: &[f64]) -> Result<Vec<f64>, SignalError> {
    envelope_padded(samples, samples.len())
}

/// Hilbert envelope computed with an FFT of `fft_len >= samples.len()`
/// points; the zero-padded tail is dropped from the result.
pub(crate) fn envelope_padded(samples: &[f64], fft_len: usize) -> Result<Vec<f64>, SignalError> {
    let n = samples.len();
    if n < MIN_ENVELOPE_LEN {
        return Err(SignalError::TooShort {
            len: n,
            min: MIN_ENVELOPE_LEN,
        });
    }
    let m = fft_len.max(n);
    let mut buf = real_fft(samples, m);
    // Keep DC (and Nyquist for even m), double positive frequencies, drop negative.
    let half = m / 2;
    for (k, v) in buf.iter_mut().enumerate() {
        if k == 0 || (m % 2 == 0 && k == half) {
            continue;
        }
        if k < m.div_ceil(2) {
            *v *= 2.0;
        } else {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    ifft_in_place(&mut buf);
    Ok(buf[..n].iter().map(|c| c.norm_sqr().sqrt()).collect())
}

/// Mean of squared samples.
pub fn frame_power(frame: &MonoSignal) -> f64 {
    mean_square(&frame.samples)
}

pub(crate) fn mean_square(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

pub fn rms(samples: &[f64]) -> f64 {
    mean_square(samples).sqrt()
}

/// Periodic Hann window of length `n`, for callers that opt into tapering.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}
