//! Synthetic binaural scenes with known ground truth.
//!
//! A scene is a talker whose speech-like signal is delayed between the two
//! ears according to the spherical-head model (no level difference), plus
//! discrete echoes, diotic distractors, an optional robot-noise surrogate
//! and independent sensor noise on each channel. [`default_suite`] lays out
//! eight training and three test scenes that follow the scenario taxonomy of
//! the recorded dataset this toolkit was designed around.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{interpolate_track, AnnotatedRecording, Annotation, AnnotationError};
use crate::head::{itd_woodworth, AzimuthRad, HeadError, HeadModel};
use crate::signal::{self, MonoSignal, SignalError, StereoSignal, DEFAULT_SAMPLE_RATE};

/// RMS of the talker's direct sound inside speech intervals.
pub const SPEECH_RMS: f64 = 0.25;
/// RMS of the robot hum component.
pub const ROBOT_HUM_RMS: f64 = 0.06;
/// Peak amplitude of the robot servo chirps.
pub const ROBOT_CHIRP_AMP: f64 = 0.15;
/// Length of the blocks over which the interaural delay is held constant.
pub const BINAURAL_BLOCK_S: f64 = 0.05;

const GATE_RAMP_S: f64 = 0.01;
const DELAY_MARGIN: usize = 256;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Echo {
    pub extra_delay_s: f64,
    pub gain: f64,
    pub azimuth_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorKind {
    /// 2 ms decaying click.
    Click,
    /// 50 ms white-noise burst.
    Burst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub time_s: f64,
    pub kind: DistractorKind,
    /// Peak amplitude for clicks, RMS for bursts.
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default)]
    pub label: String,
    #[serde(default = "default_weight")]
    pub weight: u32,
    pub duration_s: f64,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    /// `(time_s, azimuth_rad)` knots.
    pub talker_track: Vec<[f64; 2]>,
    pub speech_intervals: Vec<[f64; 2]>,
    #[serde(default)]
    pub echoes: Vec<Echo>,
    #[serde(default)]
    pub noise_rms: f64,
    #[serde(default)]
    pub distractors: Vec<Distractor>,
    #[serde(default)]
    pub robot_noise: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_weight() -> u32 {
    1
}

fn default_rate() -> f64 {
    DEFAULT_SAMPLE_RATE
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Invalid(m));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration {}", self.duration_s));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return bad(format!("sample rate {}", self.sample_rate_hz));
        }
        if !(self.noise_rms.is_finite() && self.noise_rms >= 0.0) {
            return bad(format!("noise rms {}", self.noise_rms));
        }
        if self.weight < 1 {
            return bad("weight must be at least 1".into());
        }
        for e in &self.echoes {
            if !(0.0..1.0).contains(&e.gain) || !(e.extra_delay_s >= 0.0) {
                return bad(format!("echo {e:?}"));
            }
            AzimuthRad::new(e.azimuth_rad)?;
        }
        for [s, e] in &self.speech_intervals {
            if !(0.0 <= *s && s <= e && *e <= self.duration_s) {
                return bad(format!("speech interval [{s}, {e}] outside [0, {}]", self.duration_s));
            }
        }
        if self.speech_intervals.windows(2).any(|w| w[1][0] < w[0][1]) {
            return bad("speech intervals overlap or are unsorted".into());
        }
        validate_track(&self.talker_track, self.duration_s)?;
        for d in &self.distractors {
            if !(0.0..=self.duration_s).contains(&d.time_s) || !(d.level >= 0.0) {
                return bad(format!("distractor {d:?}"));
            }
        }
        Ok(())
    }

    pub fn annotation(&self) -> Annotation {
        Annotation {
            label: self.label.clone(),
            weight: self.weight,
            speech_intervals: self.speech_intervals.clone(),
            angle_track: self.talker_track.clone(),
        }
    }
}

fn validate_track(track: &[[f64; 2]], duration_s: f64) -> Result<(), SceneError> {
    if track.is_empty() {
        return Err(SceneError::Invalid("empty talker track".into()));
    }
    for [t, theta] in track {
        if !(0.0..=duration_s).contains(t) {
            return Err(SceneError::Invalid(format!(
                "track time {t} outside [0, {duration_s}]"
            )));
        }
        AzimuthRad::new(*theta)?;
    }
    if track.windows(2).any(|w| w[1][0] <= w[0][0]) {
        return Err(SceneError::Invalid("track times must increase".into()));
    }
    Ok(())
}

/// Ordered training scenes plus held-out test scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSuite {
    pub train: Vec<SceneSpec>,
    pub test: Vec<SceneSpec>,
}

impl SceneSuite {
    pub fn train_weights(&self) -> Vec<u32> {
        self.train.iter().map(|s| s.weight).collect()
    }

    pub fn all(&self) -> impl Iterator<Item = &SceneSpec> {
        self.train.iter().chain(&self.test)
    }
}

/// Shape of the speech-like source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeechLikeConfig {
    /// Sum of the sinusoidal modulation depths, in `[0, 1]`.
    pub depth: f64,
    pub components: usize,
    pub band_hz: (f64, f64),
    pub modulation_hz: (f64, f64),
}

impl Default for SpeechLikeConfig {
    fn default() -> Self {
        Self {
            depth: 1.0,
            components: 3,
            band_hz: (300.0, 3400.0),
            modulation_hz: (4.0, 16.0),
        }
    }
}

/// Band-limited noise amplitude-modulated at syllabic rates, RMS 1.
pub fn synth_speech_like(duration_s: f64, sample_rate: f64, seed: u64) -> Result<MonoSignal, SceneError> {
    synth_speech_like_with(duration_s, sample_rate, seed, &SpeechLikeConfig::default())
}

pub fn synth_speech_like_with(
    duration_s: f64,
    sample_rate: f64,
    seed: u64,
    config: &SpeechLikeConfig,
) -> Result<MonoSignal, SceneError> {
    if !(duration_s >= 0.5) {
        return Err(SceneError::Invalid(format!(
            "speech-like source needs at least 0.5 s, got {duration_s}"
        )));
    }
    if !(0.0..=1.0).contains(&config.depth) {
        return Err(SceneError::Invalid(format!("modulation depth {}", config.depth)));
    }
    let n = (duration_s * sample_rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let carrier = band_limited_noise(n, sample_rate, config.band_hz, &mut rng);

    let weights: Vec<f64> = (0..config.components).map(|_| rng.random_range(0.5..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mods: Vec<(f64, f64, f64)> = weights
        .iter()
        .map(|w| {
            // Log-uniform, so slow syllabic rates are as likely as fast ones.
            let (lo, hi) = (config.modulation_hz.0.ln(), config.modulation_hz.1.ln());
            let f = rng.random_range(lo..=hi).exp();
            let phase = rng.random_range(0.0..2.0 * PI);
            (config.depth * w / total.max(f64::MIN_POSITIVE), f, phase)
        })
        .collect();
    let mut out: Vec<f64> = carrier
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let t = i as f64 / sample_rate;
            let m: f64 = mods.iter().map(|(d, f, p)| d * (2.0 * PI * f * t + p).sin()).sum();
            c * (1.0 + m)
        })
        .collect();
    normalize_rms(&mut out, 1.0);
    Ok(MonoSignal::new(out, sample_rate)?)
}

/// Gaussian noise restricted to `band` by zeroing spectral bins.
fn band_limited_noise(n: usize, sample_rate: f64, band: (f64, f64), rng: &mut ChaCha8Rng) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let mut spec = signal::real_fft(&noise, n);
    for (k, bin) in spec.iter_mut().enumerate() {
        let kk = if k > n / 2 { n - k } else { k };
        let f = kk as f64 * sample_rate / n as f64;
        if f < band.0 || f > band.1 {
            *bin = Complex64::new(0.0, 0.0);
        }
    }
    signal::ifft_in_place(&mut spec);
    let mut out: Vec<f64> = spec.iter().map(|c| c.re).collect();
    normalize_rms(&mut out, 1.0);
    out
}

fn normalize_rms(x: &mut [f64], target: f64) {
    let r = signal::rms(x);
    if r > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / r);
    }
}

/// Render a mono source at the two ears of `model`, holding the azimuth of
/// `track` constant over 50 ms blocks. Each ear receives a fractional delay
/// of `-+tau/2` applied as a spectral phase ramp; there is no level cue.
pub fn binauralize(source: &MonoSignal, track: &[[f64; 2]], model: &HeadModel) -> Result<StereoSignal, SceneError> {
    validate_track(track, source.duration_s())?;
    let sr = source.sample_rate();
    let x = source.samples();
    let n = x.len();
    let block = ((BINAURAL_BLOCK_S * sr).round() as usize).max(1);
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let end = (start + block).min(n);
        let center = 0.5 * (start + end) as f64 / sr;
        let theta = interpolate_track(track, center).expect("validated non-empty track");
        let tau = itd_woodworth(AzimuthRad::new(theta)?, model);
        // Left leads for positive tau.
        let (l, r) = delayed_pair(x, start, end, -0.5 * tau * sr, 0.5 * tau * sr);
        left[start..end].copy_from_slice(&l);
        right[start..end].copy_from_slice(&r);
        start = end;
    }
    Ok(StereoSignal::new(MonoSignal::new(left, sr)?, MonoSignal::new(right, sr)?)?)
}

/// Samples `start..end` of `x` delayed by `d_left` and `d_right` samples.
fn delayed_pair(x: &[f64], start: usize, end: usize, d_left: f64, d_right: f64) -> (Vec<f64>, Vec<f64>) {
    let lo = start as i64 - DELAY_MARGIN as i64;
    let len = end - start + 2 * DELAY_MARGIN;
    let segment: Vec<f64> = (0..len as i64)
        .map(|i| {
            let idx = lo + i;
            if idx >= 0 && (idx as usize) < x.len() {
                x[idx as usize]
            } else {
                0.0
            }
        })
        .collect();
    let spec = signal::real_fft(&segment, len);
    let apply = |delay: f64| -> Vec<f64> {
        if delay == 0.0 {
            return segment[DELAY_MARGIN..DELAY_MARGIN + end - start].to_vec();
        }
        let mut s: Vec<Complex64> = spec
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let kk = if k > len / 2 { k as f64 - len as f64 } else { k as f64 };
                if len % 2 == 0 && k == len / 2 {
                    // Nyquist bin: keep it real.
                    return c * (PI * kk * delay * 2.0 / len as f64).cos();
                }
                c * Complex64::from_polar(1.0, -2.0 * PI * kk * delay / len as f64)
            })
            .collect();
        signal::ifft_in_place(&mut s);
        s[DELAY_MARGIN..DELAY_MARGIN + end - start].iter().map(|c| c.re).collect()
    };
    (apply(d_left), apply(d_right))
}

/// Synthesize the full scene and its annotation.
pub fn render(spec: &SceneSpec, model: &HeadModel) -> Result<AnnotatedRecording, SceneError> {
    spec.validate()?;
    let sr = spec.sample_rate_hz;
    let n = (spec.duration_s * sr).round() as usize;
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];

    if !spec.speech_intervals.is_empty() && spec.duration_s >= 0.5 {
        let raw = synth_speech_like(spec.duration_s, sr, sub_seed(spec.seed, 1))?;
        let mut speech: Vec<f64> = raw.samples()[..n].iter().map(|s| s * SPEECH_RMS).collect();
        apply_gate(&mut speech, &spec.speech_intervals, sr);
        let speech = MonoSignal::new(speech, sr)?;
        let direct = binauralize(&speech, &spec.talker_track, model)?;
        add_into(&mut left, direct.left().samples(), 1.0);
        add_into(&mut right, direct.right().samples(), 1.0);

        for echo in &spec.echoes {
            let shift = (echo.extra_delay_s * sr).round() as usize;
            let mut delayed = vec![0.0; n];
            if shift < n {
                delayed[shift..].copy_from_slice(&speech.samples()[..n - shift]);
            }
            let track = [[0.0, echo.azimuth_rad]];
            let rendered = binauralize(&MonoSignal::new(delayed, sr)?, &track, model)?;
            add_into(&mut left, rendered.left().samples(), echo.gain);
            add_into(&mut right, rendered.right().samples(), echo.gain);
        }
    }

    let mut diotic = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, 2));
    for d in &spec.distractors {
        let at = (d.time_s * sr).round() as usize;
        match d.kind {
            DistractorKind::Click => {
                let len = (0.002 * sr).round() as usize;
                let tc = 0.0005 * sr;
                for i in 0..len {
                    if at + i < n {
                        diotic[at + i] += d.level * (-(i as f64) / tc).exp();
                    }
                }
            }
            DistractorKind::Burst => {
                let len = (0.05 * sr).round() as usize;
                for i in 0..len {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    if at + i < n {
                        diotic[at + i] += d.level * v;
                    }
                }
            }
        }
    }
    if spec.robot_noise {
        let robot = robot_noise(n, sr, sub_seed(spec.seed, 3));
        add_into(&mut diotic, &robot, 1.0);
    }
    add_into(&mut left, &diotic, 1.0);
    add_into(&mut right, &diotic, 1.0);

    if spec.noise_rms > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, 4));
        for v in left.iter_mut().chain(right.iter_mut()) {
            let g: f64 = StandardNormal.sample(&mut rng);
            *v += spec.noise_rms * g;
        }
    }

    let audio = StereoSignal::new(MonoSignal::new(left, sr)?, MonoSignal::new(right, sr)?)?;
    Ok(AnnotatedRecording::new(audio, spec.annotation())?)
}

/// 50-500 Hz hum plus 0.2 s linear chirps every 2 s.
fn robot_noise(n: usize, sr: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = band_limited_noise(n, sr, (50.0, 500.0), &mut rng);
    out.iter_mut().for_each(|v| *v *= ROBOT_HUM_RMS);
    let chirp_len = (0.2 * sr).round() as usize;
    let (f0, f1) = (300.0, 3000.0);
    let mut start_s = 1.0;
    while ((start_s * sr) as usize) < n {
        let at = (start_s * sr).round() as usize;
        for i in 0..chirp_len.min(n - at) {
            let t = i as f64 / sr;
            let phase = 2.0 * PI * (f0 * t + 0.5 * (f1 - f0) / 0.2 * t * t);
            let taper = 0.5 - 0.5 * (2.0 * PI * i as f64 / chirp_len as f64).cos();
            out[at + i] += ROBOT_CHIRP_AMP * taper * phase.sin();
        }
        start_s += 2.0;
    }
    out
}

fn apply_gate(x: &mut [f64], intervals: &[[f64; 2]], sr: f64) {
    let ramp = GATE_RAMP_S * sr;
    let mut gate = vec![0.0; x.len()];
    for [s, e] in intervals {
        let (a, b) = ((s * sr).round() as usize, ((e * sr).round() as usize).min(x.len()));
        for (i, g) in gate.iter_mut().enumerate().take(b).skip(a) {
            let from_edge = ((i - a) as f64).min((b - 1 - i) as f64);
            let w = if from_edge < ramp {
                0.5 - 0.5 * (PI * from_edge / ramp).cos()
            } else {
                1.0
            };
            *g = f64::max(*g, w);
        }
    }
    x.iter_mut().zip(&gate).for_each(|(v, g)| *v *= g);
}

fn add_into(dst: &mut [f64], src: &[f64], gain: f64) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += gain * s);
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    // SplitMix64 finalizer, so nearby seeds give unrelated streams.
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Alternating speech and pause intervals covering `duration_s`.
pub fn speech_schedule(duration_s: f64, seed: u64, speech_s: (f64, f64), pause_s: (f64, f64)) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = rng.random_range(0.4..0.8);
    let mut out = Vec::new();
    loop {
        let len = rng.random_range(speech_s.0..=speech_s.1);
        if t + len > duration_s - 0.2 {
            break;
        }
        out.push([round_ms(t), round_ms(t + len)]);
        t += len + rng.random_range(pause_s.0..=pause_s.1);
    }
    out
}

fn round_ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

/// Which acoustic conditions a suite row exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scenario {
    pub mobile: bool,
    pub non_speech: NonSpeech,
    pub robot: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonSpeech {
    None,
    /// Distractors fall in the pauses between utterances.
    Separate,
    /// Distractors overlap the utterances.
    Simultaneous,
}

/// Scenario flags of the eight training rows followed by the three test rows.
pub const SUITE_SCENARIOS: [(&str, Scenario, u32); 11] = [
    ("stationary, only speech sounds", Scenario { mobile: false, non_speech: NonSpeech::None, robot: false }, 1),
    ("mobile, only speech sounds", Scenario { mobile: true, non_speech: NonSpeech::None, robot: false }, 1),
    ("stationary, speech + non-speech sounds", Scenario { mobile: false, non_speech: NonSpeech::Separate, robot: false }, 2),
    ("stationary, simultaneous speech + non-speech sounds", Scenario { mobile: false, non_speech: NonSpeech::Simultaneous, robot: false }, 2),
    ("stationary, simultaneous robot + speech sounds", Scenario { mobile: false, non_speech: NonSpeech::None, robot: true }, 3),
    ("mobile, speech + non-speech sounds", Scenario { mobile: true, non_speech: NonSpeech::Separate, robot: false }, 2),
    ("mobile, only speech sounds", Scenario { mobile: true, non_speech: NonSpeech::None, robot: false }, 1),
    ("stationary, speech + non-speech sounds", Scenario { mobile: false, non_speech: NonSpeech::Separate, robot: false }, 3),
    ("mobile, robot + speech sounds", Scenario { mobile: true, non_speech: NonSpeech::None, robot: true }, 3),
    ("stationary, robot + speech sounds", Scenario { mobile: false, non_speech: NonSpeech::None, robot: true }, 3),
    ("mobile, only speech sounds", Scenario { mobile: true, non_speech: NonSpeech::None, robot: false }, 1),
];

/// Azimuth (degrees) of the talker in the stationary rows.
const STATIC_AZIMUTH_DEG: [f64; 11] = [30.0, 0.0, -20.0, 45.0, -35.0, 0.0, 0.0, 10.0, 0.0, -50.0, 0.0];

/// Extra delay range (ms) and gain range of the three image sources every
/// suite row gets: floor, near wall, far wall.
const EARLY_REFLECTIONS: [((f64, f64), (f64, f64)); 3] = [
    ((2.0, 5.0), (0.5, 0.7)),
    ((5.0, 10.0), (0.4, 0.6)),
    ((8.0, 15.0), (0.3, 0.5)),
];

/// Duration of every suite recording.
pub const SUITE_DURATION_S: f64 = 8.0;

/// The eight training and three test scenes. Stationary talkers stand at a
/// fixed azimuth (row 1 at +30 degrees); mobile talkers sweep linearly
/// between -60 and +60 degrees. Every row has three early reflections
/// from random directions.
pub fn default_suite(seed: u64) -> SceneSuite {
    let specs: Vec<SceneSpec> = SUITE_SCENARIOS
        .iter()
        .enumerate()
        .map(|(row, (label, scenario, weight))| suite_row(seed, row, label, *scenario, *weight))
        .collect();
    let (train, test) = specs.split_at(8);
    SceneSuite {
        train: train.to_vec(),
        test: test.to_vec(),
    }
}

fn suite_row(seed: u64, row: usize, label: &str, scenario: Scenario, weight: u32) -> SceneSpec {
    let row_seed = sub_seed(seed, 100 + row as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(row_seed);
    let duration_s = SUITE_DURATION_S;
    let speech_intervals = speech_schedule(duration_s, sub_seed(row_seed, 1), (1.5, 2.8), (0.6, 1.1));

    let talker_track = if scenario.mobile {
        let (a, b) = if row % 2 == 0 { (60.0_f64, -60.0_f64) } else { (-60.0, 60.0) };
        vec![[0.0, a.to_radians()], [duration_s, b.to_radians()]]
    } else {
        vec![[0.0, STATIC_AZIMUTH_DEG[row].to_radians()]]
    };

    let echoes = EARLY_REFLECTIONS
        .iter()
        .map(|(delay_ms, gain)| Echo {
            extra_delay_s: rng.random_range(delay_ms.0..delay_ms.1) * 1e-3,
            gain: rng.random_range(gain.0..gain.1),
            azimuth_rad: rng.random_range(-80.0_f64..80.0).to_radians(),
        })
        .collect();

    let distractors = match scenario.non_speech {
        NonSpeech::None => Vec::new(),
        NonSpeech::Separate => pause_distractors(&speech_intervals, duration_s, &mut rng),
        NonSpeech::Simultaneous => speech_intervals
            .iter()
            .map(|[s, e]| Distractor {
                time_s: round_ms(rng.random_range(*s..*e - 0.05)),
                kind: if rng.random_bool(0.5) { DistractorKind::Click } else { DistractorKind::Burst },
                level: rng.random_range(0.4..0.8),
            })
            .collect(),
    };

    SceneSpec {
        label: format!("{:02} {label}", row + 1),
        weight,
        duration_s,
        sample_rate_hz: DEFAULT_SAMPLE_RATE,
        talker_track,
        speech_intervals,
        echoes,
        noise_rms: 0.005,
        distractors,
        robot_noise: scenario.robot,
        seed: row_seed,
    }
}

/// A single talker at a fixed azimuth with no echoes, distractors or robot
/// noise; only the low sensor noise of the suite.
pub fn clean_static_scene(azimuth_deg: f64, duration_s: f64, seed: u64) -> SceneSpec {
    SceneSpec {
        label: format!("clean static {azimuth_deg} deg"),
        weight: 1,
        duration_s,
        sample_rate_hz: DEFAULT_SAMPLE_RATE,
        talker_track: vec![[0.0, azimuth_deg.to_radians()]],
        speech_intervals: speech_schedule(duration_s, sub_seed(seed, 1), (1.5, 2.8), (0.6, 1.1)),
        echoes: Vec::new(),
        noise_rms: 0.005,
        distractors: Vec::new(),
        robot_noise: false,
        seed,
    }
}

/// A clean static scene with `n_onsets` utterances of 1.6 to 2.2 s separated
/// by 0.8 to 1.2 s pauses, for latency measurements.
pub fn latency_scene(n_onsets: usize, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 7));
    let mut t = 0.5;
    let mut speech_intervals = Vec::with_capacity(n_onsets);
    for _ in 0..n_onsets {
        let end = t + round_ms(rng.random_range(1.6..2.2));
        speech_intervals.push([t, end]);
        t = end + round_ms(rng.random_range(0.8..1.2));
    }
    SceneSpec {
        label: format!("latency {n_onsets} onsets"),
        speech_intervals,
        duration_s: t,
        ..clean_static_scene(20.0, t, seed)
    }
}

fn pause_distractors(intervals: &[[f64; 2]], duration_s: f64, rng: &mut ChaCha8Rng) -> Vec<Distractor> {
    let mut pauses = Vec::new();
    let mut prev_end = 0.0;
    for [s, e] in intervals {
        pauses.push((prev_end, *s));
        prev_end = *e;
    }
    pauses.push((prev_end, duration_s));
    pauses
        .into_iter()
        .filter(|(a, b)| b - a > 0.3)
        .map(|(a, b)| Distractor {
            time_s: round_ms(rng.random_range(a + 0.1..b - 0.15)),
            kind: if rng.random_bool(0.5) { DistractorKind::Click } else { DistractorKind::Burst },
            level: rng.random_range(0.4..0.8),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speech_like_is_deterministic_and_normalized() {
        let a = synth_speech_like(1.0, 16_000.0, 7).unwrap();
        let b = synth_speech_like(1.0, 16_000.0, 7).unwrap();
        assert_eq!(a, b);
        assert!((signal::rms(a.samples()) - 1.0).abs() < 1e-9);
        assert!(synth_speech_like(0.2, 16_000.0, 7).is_err());
    }

    #[test]
    fn zero_azimuth_gives_identical_channels() {
        let src = synth_speech_like(1.0, 16_000.0, 3).unwrap();
        let st = binauralize(&src, &[[0.0, 0.0]], &HeadModel::default()).unwrap();
        let diff: Vec<f64> = st.left().samples().iter().zip(st.right().samples()).map(|(a, b)| a - b).collect();
        assert!(signal::rms(&diff) < 1e-6);
    }

    #[test]
    fn mirrored_azimuth_swaps_channels() {
        let src = synth_speech_like(1.0, 16_000.0, 3).unwrap();
        let m = HeadModel::default();
        let pos = binauralize(&src, &[[0.0, 0.6]], &m).unwrap();
        let neg = binauralize(&src, &[[0.0, -0.6]], &m).unwrap();
        for (a, b) in pos.left().samples().iter().zip(neg.right().samples()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn track_outside_duration_is_rejected() {
        let src = synth_speech_like(1.0, 16_000.0, 3).unwrap();
        assert!(binauralize(&src, &[[0.0, 0.0], [2.0, 0.1]], &HeadModel::default()).is_err());
        assert!(binauralize(&src, &[[0.0, 2.0]], &HeadModel::default()).is_err());
    }

    #[test]
    fn suite_shape() {
        let suite = default_suite(0);
        assert_eq!(suite.train.len(), 8);
        assert_eq!(suite.test.len(), 3);
        assert_eq!(suite.train_weights(), vec![1, 1, 2, 2, 3, 2, 1, 3]);
        let row1 = &suite.train[0];
        assert_eq!(row1.talker_track.len(), 1);
        assert!(row1.distractors.is_empty() && !row1.robot_noise);
        let row5 = &suite.train[4];
        assert!(row5.robot_noise && !row5.speech_intervals.is_empty());
        assert!(suite.test[0].robot_noise && suite.test[0].talker_track.len() == 2);
        for s in suite.all() {
            s.validate().unwrap();
        }
    }

    #[test]
    fn silent_spec_renders_noise_only() {
        let spec = SceneSpec {
            label: "quiet".into(),
            weight: 1,
            duration_s: 1.0,
            sample_rate_hz: 16_000.0,
            talker_track: vec![[0.0, 0.0]],
            speech_intervals: vec![],
            echoes: vec![],
            noise_rms: 0.0,
            distractors: vec![],
            robot_noise: false,
            seed: 1,
        };
        let rec = render(&spec, &HeadModel::default()).unwrap();
        assert!(rec.audio.left().samples().iter().all(|&v| v == 0.0));
        assert!(rec.annotation.speech_intervals.is_empty());
    }
}
