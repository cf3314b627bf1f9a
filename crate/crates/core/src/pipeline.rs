//! The end-to-end localization pipeline and its scoring.
//!
//! Both channels are cut with the same framing. The classifier looks at the
//! mono mix of each frame; accepted frames get a time delay from the chosen
//! cross-correlation weighting, which the spherical-head model turns into an
//! azimuth. Scoring compares the accept/reject decisions against annotated
//! speech (F1) and the azimuths of correctly accepted frames against the
//! annotated talker track (mean squared error in radians squared).

use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::annotation::{AnnotatedRecording, Annotation};
use crate::classify::{self, ClassifierConfig, ClassifierKind, ClassifyError, Thresholds};
use crate::head::{angle_from_itd, AzimuthRad, HeadModel};
use crate::signal::{FrameLayout, FramingParams, MonoSignal, SignalError, StereoSignal};
use crate::tde::{self, FrameWindow, GccOptions, TdeResult, WeightingKind};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("estimates csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("estimates csv: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("latency experiment: {0}")]
    Latency(String),
}

/// The six tunable pipeline parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct PipelineParams {
    pub classifier: ClassifierKind,
    pub timing: WeightingKind,
    pub framing: FramingParams,
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawParams {
    classifier: ClassifierKind,
    timing: WeightingKind,
    frame_size_s: f64,
    step_fraction: f64,
    delta_low: f64,
    delta_high: f64,
}

impl TryFrom<RawParams> for PipelineParams {
    type Error = String;
    fn try_from(r: RawParams) -> Result<Self, String> {
        Ok(PipelineParams {
            classifier: r.classifier,
            timing: r.timing,
            framing: FramingParams::new(r.frame_size_s, r.step_fraction).map_err(|e| e.to_string())?,
            thresholds: Thresholds::new(r.delta_low, r.delta_high).map_err(|e| e.to_string())?,
        })
    }
}

impl From<PipelineParams> for RawParams {
    fn from(p: PipelineParams) -> Self {
        RawParams {
            classifier: p.classifier,
            timing: p.timing,
            frame_size_s: p.framing.frame_size_s,
            step_fraction: p.framing.step_fraction,
            delta_low: p.thresholds.low(),
            delta_high: p.thresholds.high(),
        }
    }
}

impl PipelineParams {
    /// SRMR, GCC-PHAT, 340 ms frames, 0.90 step, thresholds 1.5 and 7: the
    /// best overall parameters found on the robot recordings.
    pub fn best() -> Self {
        PipelineParams {
            classifier: ClassifierKind::Srmr,
            timing: WeightingKind::Phat,
            framing: FramingParams {
                frame_size_s: 0.34,
                step_fraction: 0.90,
            },
            thresholds: Thresholds::new(1.5, 7.0).expect("valid thresholds"),
        }
    }

    pub fn with_frame_size(mut self, frame_size_s: f64) -> Self {
        self.framing.frame_size_s = frame_size_s;
        self
    }
}

/// Settings that are not optimized. The default tapers GCC frames with a
/// Hann window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub classifier: ClassifierConfig,
    pub gcc: GccOptions,
    /// Overrides the lag search range derived from the head model.
    pub max_lag: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            classifier: ClassifierConfig::default(),
            gcc: GccOptions {
                window: FrameWindow::Hann,
                ..GccOptions::default()
            },
            max_lag: None,
        }
    }
}

impl PipelineConfig {
    pub fn max_lag(&self, model: &HeadModel, sample_rate: f64) -> usize {
        self.max_lag
            .unwrap_or_else(|| tde::default_max_lag(model, sample_rate))
    }
}

/// One frame's outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoaEstimate {
    pub frame_start_s: f64,
    pub frame_size_s: f64,
    pub accepted: bool,
    /// Absent for the first frame under power onset, which has no predecessor.
    pub classifier_value: Option<f64>,
    /// Present iff accepted.
    pub angle: Option<AzimuthRad>,
    pub lag_seconds: Option<f64>,
    pub prominence: Option<f64>,
    /// When the estimate leaves the pipeline; never before the frame's last sample.
    pub emit_time_s: f64,
}

impl DoaEstimate {
    pub fn frame_center_s(&self) -> f64 {
        self.frame_start_s + 0.5 * self.frame_size_s
    }
}

/// Classifier feature for every frame of `mono`.
pub fn classifier_values(
    mono: &MonoSignal,
    layout: &FrameLayout,
    kind: ClassifierKind,
    config: &ClassifierConfig,
) -> Result<Vec<Option<f64>>, PipelineError> {
    let x = mono.samples();
    let frame = |i: usize| &x[layout.start(i)..layout.start(i) + layout.frame_len];
    (0..layout.count)
        .map(|i| match kind {
            ClassifierKind::PowerOnset => {
                if i == 0 {
                    Ok(None)
                } else {
                    classify::onset_ratio(frame(i), frame(i - 1), config.floor_eps, config.onset_mode)
                        .map(Some)
                        .map_err(PipelineError::from)
                }
            }
            ClassifierKind::Srmr => classify::srmr_report(
                frame(i),
                mono.sample_rate(),
                &config.filterbank,
                config.floor_eps,
                config.srmr_split,
            )
            .map(|r| Some(r.ratio))
            .map_err(PipelineError::from),
        })
        .collect()
}

/// Delay estimate for frame `index`, or `None` for a silent frame.
pub fn frame_delay(
    audio: &StereoSignal,
    layout: &FrameLayout,
    index: usize,
    timing: WeightingKind,
    max_lag: usize,
    options: &GccOptions,
) -> Option<TdeResult> {
    let start = layout.start(index);
    let left = audio.left().slice(start, layout.frame_len);
    let right = audio.right().slice(start, layout.frame_len);
    tde::gcc_with(&left, &right, timing, max_lag, options)
        .ok()
        .map(|(_, r)| r)
}

/// Turn classifier values and delays into estimates. `delay` is only called
/// for accepted frames; emission time is the end of each frame.
pub fn assemble_estimates(
    layout: &FrameLayout,
    values: &[Option<f64>],
    thresholds: &Thresholds,
    model: &HeadModel,
    mut delay: impl FnMut(usize) -> Option<TdeResult>,
) -> Vec<DoaEstimate> {
    let size = layout.frame_duration_s();
    values
        .iter()
        .enumerate()
        .map(|(i, value)| {
            let start = layout.start_s(i);
            let mut est = DoaEstimate {
                frame_start_s: start,
                frame_size_s: size,
                accepted: false,
                classifier_value: *value,
                angle: None,
                lag_seconds: None,
                prominence: None,
                emit_time_s: start + size,
            };
            if value.is_some_and(|v| classify::classify(v, thresholds)) {
                if let Some(r) = delay(i) {
                    if let Ok(a) = angle_from_itd(r.lag_seconds, model) {
                        est.accepted = true;
                        est.angle = Some(a.azimuth);
                        est.lag_seconds = Some(r.lag_seconds);
                        est.prominence = Some(r.prominence);
                    }
                }
            }
            est
        })
        .collect()
}

/// Run the pipeline over a whole stereo signal.
pub fn run_on_audio(
    audio: &StereoSignal,
    params: &PipelineParams,
    model: &HeadModel,
    config: &PipelineConfig,
) -> Result<Vec<DoaEstimate>, PipelineError> {
    let layout = params.framing.layout(audio.len(), audio.sample_rate())?;
    if layout.count == 0 {
        return Ok(Vec::new());
    }
    let mono = audio.mono_mix();
    let values = classifier_values(&mono, &layout, params.classifier, &config.classifier)?;
    let max_lag = config.max_lag(model, audio.sample_rate());
    Ok(assemble_estimates(&layout, &values, &params.thresholds, model, |i| {
        frame_delay(audio, &layout, i, params.timing, max_lag, &config.gcc)
    }))
}

pub fn run_pipeline(
    recording: &AnnotatedRecording,
    params: &PipelineParams,
    model: &HeadModel,
) -> Result<Vec<DoaEstimate>, PipelineError> {
    run_on_audio(&recording.audio, params, model, &PipelineConfig::default())
}

/// True iff at least half of the frame overlaps annotated speech.
pub fn ground_truth_label(frame_start_s: f64, frame_size_s: f64, annotation: &Annotation) -> bool {
    let overlap = annotation.speech_overlap(frame_start_s, frame_start_s + frame_size_s);
    overlap >= 0.5 * frame_size_s - 1e-12
}

/// Per-recording scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Radians squared, over accepted frames whose ground truth is speech.
    pub mse: f64,
    pub n_accepted: usize,
    pub n_true_positive: usize,
    pub n_frames: usize,
    /// No frame was accepted at all.
    pub no_speech_windows: bool,
}

pub fn evaluate(estimates: &[DoaEstimate], annotation: &Annotation) -> Metrics {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    let mut sq_err = 0.0;
    for e in estimates {
        let truth = ground_truth_label(e.frame_start_s, e.frame_size_s, annotation);
        match (e.accepted, truth) {
            (true, true) => {
                tp += 1;
                if let (Some(a), Some(t)) = (e.angle, annotation.angle_at(e.frame_center_s())) {
                    sq_err += (a.value() - t).powi(2);
                }
            }
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let n_accepted = tp + fp;
    let precision = if n_accepted > 0 { tp as f64 / n_accepted as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if tp > 0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Metrics {
        f1,
        precision,
        recall,
        mse: if tp > 0 { sq_err / tp as f64 } else { 0.0 },
        n_accepted,
        n_true_positive: tp,
        n_frames: estimates.len(),
        no_speech_windows: n_accepted == 0,
    }
}

pub const ESTIMATES_HEADER: [&str; 6] = [
    "frame_start_s",
    "accepted",
    "classifier_value",
    "lag_s",
    "angle_rad",
    "emit_time_s",
];

/// Write estimates as CSV. With `degrees` the angle column is `angle_deg`.
pub fn write_estimates_csv(out: impl Write, estimates: &[DoaEstimate], degrees: bool) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = ESTIMATES_HEADER;
    if degrees {
        header[4] = "angle_deg";
    }
    w.write_record(header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in estimates {
        let angle = e.angle.map(|a| if degrees { a.degrees() } else { a.value() });
        w.write_record([
            e.frame_start_s.to_string(),
            e.accepted.to_string(),
            opt(e.classifier_value),
            opt(e.lag_seconds),
            opt(angle),
            e.emit_time_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read estimates written by [`write_estimates_csv`] in either angle unit.
/// The CSV does not carry the frame size, so the caller supplies it.
pub fn read_estimates_csv(input: impl Read, frame_size_s: f64) -> Result<Vec<DoaEstimate>, PipelineError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut degree_header = ESTIMATES_HEADER;
    degree_header[4] = "angle_deg";
    let degrees = header == degree_header;
    if !degrees && header != ESTIMATES_HEADER {
        return Err(PipelineError::Format(format!(
            "expected header {:?}, found {:?}",
            ESTIMATES_HEADER, header
        )));
    }
    let num = |s: &str, what: &str| -> Result<Option<f64>, PipelineError> {
        if s.is_empty() {
            return Ok(None);
        }
        s.parse::<f64>()
            .map(Some)
            .map_err(|_| PipelineError::Format(format!("bad {what} '{s}'")))
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let start = num(&rec[0], "frame_start_s")?
            .ok_or_else(|| PipelineError::Format("missing frame_start_s".into()))?;
        let accepted = match &rec[1] {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(PipelineError::Format(format!("bad accepted '{other}'"))),
        };
        let angle = num(&rec[4], header[4].as_str())?
            .map(|a| {
                let a = if degrees { AzimuthRad::from_degrees(a) } else { AzimuthRad::new(a) };
                a.map_err(|e| PipelineError::Format(e.to_string()))
            })
            .transpose()?;
        out.push(DoaEstimate {
            frame_start_s: start,
            frame_size_s,
            accepted: accepted && angle.is_some(),
            classifier_value: num(&rec[2], "classifier_value")?,
            angle,
            lag_seconds: num(&rec[3], "lag_s")?,
            prominence: None,
            emit_time_s: num(&rec[5], "emit_time_s")?.unwrap_or(start + frame_size_s),
        });
    }
    Ok(out)
}

/// Simulated real-time run: frames are processed in arrival order by a single
/// consumer, and each estimate is emitted at
/// `max(frame end, previous emission) + measured processing time`.
pub fn stream_estimates(
    audio: &StereoSignal,
    params: &PipelineParams,
    model: &HeadModel,
    config: &PipelineConfig,
) -> Result<Vec<DoaEstimate>, PipelineError> {
    let sr = audio.sample_rate();
    let layout = params.framing.layout(audio.len(), sr)?;
    let max_lag = config.max_lag(model, sr);
    let mono = audio.mono_mix();
    let mut out = Vec::with_capacity(layout.count);
    let mut busy_until = 0.0_f64;
    for i in 0..layout.count {
        let arrival = layout.start_s(i) + layout.frame_duration_s();
        let started = Instant::now();
        let frame_layout = FrameLayout {
            count: 1,
            ..layout
        };
        let value = match params.classifier {
            ClassifierKind::PowerOnset if i == 0 => None,
            ClassifierKind::PowerOnset => {
                let x = mono.samples();
                let cur = &x[layout.start(i)..layout.start(i) + layout.frame_len];
                let prev = &x[layout.start(i - 1)..layout.start(i - 1) + layout.frame_len];
                Some(classify::onset_ratio(cur, prev, config.classifier.floor_eps, config.classifier.onset_mode)?)
            }
            ClassifierKind::Srmr => {
                let x = mono.samples();
                let cur = &x[layout.start(i)..layout.start(i) + layout.frame_len];
                Some(
                    classify::srmr_report(cur, sr, &config.classifier.filterbank, config.classifier.floor_eps, config.classifier.srmr_split)?
                        .ratio,
                )
            }
        };
        let mut est = assemble_estimates(&frame_layout, &[value], &params.thresholds, model, |_| {
            frame_delay(audio, &layout, i, params.timing, max_lag, &config.gcc)
        })
        .remove(0);
        let elapsed = started.elapsed().as_secs_f64();
        est.frame_start_s = layout.start_s(i);
        busy_until = busy_until.max(arrival) + elapsed;
        est.emit_time_s = busy_until;
        out.push(est);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub frame_size_s: f64,
    pub mean_s: f64,
    pub std_s: f64,
    /// Per onset, averaged over repeats, in onset order.
    pub latencies_s: Vec<f64>,
    /// Onsets with no accepted estimate before the next onset.
    pub dropped: usize,
    pub repeats: usize,
}

/// Time from each speech onset to the emission of the first accepted
/// estimate whose frame starts at or after the onset, over `n_repeats`
/// streaming runs.
pub fn latency_experiment(
    recording: &AnnotatedRecording,
    params: &PipelineParams,
    model: &HeadModel,
    n_repeats: usize,
    config: &PipelineConfig,
) -> Result<LatencyStats, PipelineError> {
    latency_over(std::slice::from_ref(recording), params, model, n_repeats, config)
}

/// [`latency_experiment`] with events pooled across several recordings.
pub fn latency_over(
    recordings: &[AnnotatedRecording],
    params: &PipelineParams,
    model: &HeadModel,
    n_repeats: usize,
    config: &PipelineConfig,
) -> Result<LatencyStats, PipelineError> {
    if n_repeats == 0 {
        return Err(PipelineError::Latency("at least one repeat is required".into()));
    }
    let mut sums: Vec<(f64, usize)> = Vec::new();
    let mut dropped = 0;
    let mut total_onsets = 0;
    for rec in recordings {
        let onsets = rec.annotation.onsets();
        total_onsets += onsets.len();
        let mut per_event: Vec<(f64, usize)> = vec![(0.0, 0); onsets.len()];
        for _ in 0..n_repeats {
            let est = stream_estimates(&rec.audio, params, model, config)?;
            for (k, &onset) in onsets.iter().enumerate() {
                let next = onsets.get(k + 1).copied().unwrap_or(f64::INFINITY);
                let hit = est
                    .iter()
                    .find(|e| e.accepted && e.frame_start_s >= onset - 1e-9 && e.frame_start_s < next);
                if let Some(e) = hit {
                    per_event[k].0 += e.emit_time_s - onset;
                    per_event[k].1 += 1;
                }
            }
        }
        for ev in per_event {
            if ev.1 == 0 {
                dropped += 1;
            } else {
                sums.push(ev);
            }
        }
    }
    if total_onsets == 0 {
        return Err(PipelineError::Latency("recording has no speech onsets".into()));
    }
    let latencies: Vec<f64> = sums.iter().map(|(s, c)| s / *c as f64).collect();
    let (mean, std) = mean_std(&latencies);
    Ok(LatencyStats {
        frame_size_s: params.framing.frame_size_s,
        mean_s: mean,
        std_s: std,
        latencies_s: latencies,
        dropped,
        repeats: n_repeats,
    })
}

/// Mean and sample standard deviation (`n - 1` denominator).
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Two-sample Student t-test with pooled variance, two-tailed.
pub fn two_sample_t_test(a: &[f64], b: &[f64]) -> Option<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let pooled = ((na - 1.0) * sa * sa + (nb - 1.0) * sb * sb) / df;
    let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    if se == 0.0 {
        let p = if ma == mb { 1.0 } else { 0.0 };
        return Some(TTest { t: if ma == mb { 0.0 } else { f64::INFINITY }, df, p_value: p });
    }
    let t = (ma - mb) / se;
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some(TTest {
        t,
        df,
        p_value: 2.0 * (1.0 - dist.cdf(t.abs())),
    })
}
