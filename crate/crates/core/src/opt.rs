//! Parameter search over the six pipeline parameters.
//!
//! A trial runs the pipeline with one parameter vector over every recording
//! of a dataset and reduces the per-recording metrics to a single objective
//! with [`aggregate`]. Three strategies produce trials: exhaustive
//! [`grid_search`], [`random_search`] over the prior, and a Tree-structured
//! Parzen Estimator ([`tpe_optimize`]) that splits past trials into a good
//! and a bad set and proposes the candidate maximizing `l(x) / g(x)`.
//!
//! Trials whose parameters fail to produce an accepted frame on some
//! recording, or whose objective is undefined, score [`PENALTY`] instead of
//! NaN so they can still be ranked.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::classify::{ClassifierKind, Thresholds};
use crate::dataset::Dataset;
use crate::head::HeadModel;
use crate::pipeline::{self, Metrics, PipelineConfig, PipelineError, PipelineParams};
use crate::signal::{FramingParams, MonoSignal};
use crate::tde::{TdeResult, WeightingKind};

/// Objective assigned to trials that cannot be scored.
pub const PENALTY: f64 = 1e6;

/// Default regularization weight on frame size.
pub const DEFAULT_LAMBDA: f64 = 0.5;

/// Scenario weights of the eight training recordings.
pub const SCENARIO_WEIGHTS: [u32; 8] = [1, 1, 2, 2, 3, 2, 1, 3];

const MAX_RESAMPLE: usize = 100;

#[derive(Debug, Error)]
pub enum OptError {
    #[error("invalid parameter space: {0}")]
    Space(String),
    #[error("grid search needs a grid for {0}")]
    GridRequired(&'static str),
    #[error("TPE needs a distribution for {0}")]
    DistributionRequired(&'static str),
    #[error("grid has no feasible point")]
    EmptyGrid,
    #[error("could not draw thresholds with delta_low < delta_high")]
    Infeasible,
    #[error("{metrics} metrics but {weights} weights")]
    LengthMismatch { metrics: usize, weights: usize },
    #[error("weights must be positive")]
    Weight,
    #[error("lambda {0} must be finite and non-negative")]
    Lambda(f64),
    #[error("unknown parameter '{0}'")]
    UnknownParameter(String),
    #[error("parameter '{0}' is not numeric")]
    NonNumericAxis(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One numeric dimension, either a discrete grid or a sampling distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dim {
    Grid { min: f64, max: f64, step: f64 },
    Uniform { min: f64, max: f64 },
    Normal { mean: f64, std: f64 },
}

impl Dim {
    pub fn is_grid(&self) -> bool {
        matches!(self, Dim::Grid { .. })
    }

    /// Grid values from `min` to `max` inclusive, rounded to 1e-9.
    pub fn grid_points(&self) -> Option<Vec<f64>> {
        match *self {
            Dim::Grid { min, max, step } => {
                let n = ((max - min) / step + 1e-9).floor() as usize + 1;
                Some((0..n).map(|i| round9(min + i as f64 * step)).collect())
            }
            _ => None,
        }
    }

    fn validate(&self, param: Param) -> Result<(), OptError> {
        let bad = |m: String| Err(OptError::Space(format!("{}: {m}", param.name())));
        match *self {
            Dim::Grid { min, max, step } => {
                if !(min.is_finite() && max.is_finite() && step.is_finite() && step > 0.0 && min <= max) {
                    return bad(format!("grid ({min}, {max}) step {step}"));
                }
                if !(param.admits(min) && param.admits(max)) {
                    return bad(format!("grid ({min}, {max}) leaves the valid range"));
                }
            }
            Dim::Uniform { min, max } => {
                if !(min.is_finite() && max.is_finite() && min <= max) {
                    return bad(format!("uniform ({min}, {max})"));
                }
                if !(param.admits(min) && param.admits(max)) {
                    return bad(format!("uniform ({min}, {max}) leaves the valid range"));
                }
            }
            Dim::Normal { mean, std } => {
                if !(mean.is_finite() && std.is_finite() && std > 0.0) {
                    return bad(format!("normal ({mean}, {std})"));
                }
                let (lo, hi) = self.bounds(param);
                if !(lo < hi) {
                    return bad(format!("normal ({mean}, {std}) has no mass in the valid range"));
                }
            }
        }
        Ok(())
    }

    /// Support used for sampling and density estimates. Normal dimensions
    /// are cut at four standard deviations and at the parameter's own range.
    fn bounds(&self, param: Param) -> (f64, f64) {
        let (dlo, dhi) = param.domain();
        match *self {
            Dim::Grid { min, max, .. } | Dim::Uniform { min, max } => (min, max),
            Dim::Normal { mean, std } => ((mean - 4.0 * std).max(dlo), (mean + 4.0 * std).min(dhi)),
        }
    }

    fn sample(&self, param: Param, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Dim::Grid { .. } => {
                let pts = self.grid_points().expect("grid");
                pts[rng.random_range(0..pts.len())]
            }
            Dim::Uniform { min, max } => {
                if min == max {
                    min
                } else {
                    rng.random_range(min..=max)
                }
            }
            Dim::Normal { mean, std } => {
                let (lo, hi) = self.bounds(param);
                for _ in 0..MAX_RESAMPLE {
                    let z: f64 = StandardNormal.sample(rng);
                    let x = mean + std * z;
                    if x > lo && x <= hi && param.admits(x) {
                        return x;
                    }
                }
                mean.clamp(lo, hi)
            }
        }
    }
}

fn round9(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// The four numeric parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    FrameSize,
    StepFraction,
    DeltaLow,
    DeltaHigh,
}

impl Param {
    pub const ALL: [Param; 4] = [Param::FrameSize, Param::StepFraction, Param::DeltaLow, Param::DeltaHigh];

    pub fn name(self) -> &'static str {
        match self {
            Param::FrameSize => "frame_size_s",
            Param::StepFraction => "step_fraction",
            Param::DeltaLow => "delta_low",
            Param::DeltaHigh => "delta_high",
        }
    }

    pub fn parse(name: &str) -> Result<Param, OptError> {
        match name {
            "frame_size_s" | "frame_size" | "frame" => Ok(Param::FrameSize),
            "step_fraction" | "step" => Ok(Param::StepFraction),
            "delta_low" | "low" => Ok(Param::DeltaLow),
            "delta_high" | "high" => Ok(Param::DeltaHigh),
            "classifier" | "timing" => Err(OptError::NonNumericAxis(name.to_string())),
            other => Err(OptError::UnknownParameter(other.to_string())),
        }
    }

    pub fn of(self, p: &PipelineParams) -> f64 {
        match self {
            Param::FrameSize => p.framing.frame_size_s,
            Param::StepFraction => p.framing.step_fraction,
            Param::DeltaLow => p.thresholds.low(),
            Param::DeltaHigh => p.thresholds.high(),
        }
    }

    fn domain(self) -> (f64, f64) {
        match self {
            Param::StepFraction => (0.0, 1.0),
            _ => (0.0, f64::INFINITY),
        }
    }

    fn admits(self, x: f64) -> bool {
        let (lo, hi) = self.domain();
        x.is_finite() && x > lo && x <= hi
    }
}

/// The search space: two categorical choices and four numeric dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub classifier_choices: Vec<ClassifierKind>,
    pub timing_choices: Vec<WeightingKind>,
    pub frame_size: Dim,
    pub step_fraction: Dim,
    pub delta_low: Dim,
    pub delta_high: Dim,
}

impl ParamSpace {
    /// Full grid: frames and steps 0.1..1 by 0.05, thresholds 1..10 and
    /// 3..14 by 0.1 (about 2.3e7 points).
    pub fn full_grid() -> Self {
        Self {
            classifier_choices: ClassifierKind::ALL.to_vec(),
            timing_choices: WeightingKind::ALL.to_vec(),
            frame_size: Dim::Grid { min: 0.1, max: 1.0, step: 0.05 },
            step_fraction: Dim::Grid { min: 0.1, max: 1.0, step: 0.05 },
            delta_low: Dim::Grid { min: 1.0, max: 10.0, step: 0.1 },
            delta_high: Dim::Grid { min: 3.0, max: 14.0, step: 0.1 },
        }
    }

    /// Distribution form: U(0.1, 1) for frame and step, N(3, 3) and N(10, 3)
    /// for the thresholds.
    pub fn tpe_default() -> Self {
        Self {
            classifier_choices: ClassifierKind::ALL.to_vec(),
            timing_choices: WeightingKind::ALL.to_vec(),
            frame_size: Dim::Uniform { min: 0.1, max: 1.0 },
            step_fraction: Dim::Uniform { min: 0.1, max: 1.0 },
            delta_low: Dim::Normal { mean: 3.0, std: 3.0 },
            delta_high: Dim::Normal { mean: 10.0, std: 3.0 },
        }
    }

    pub fn dim(&self, p: Param) -> &Dim {
        match p {
            Param::FrameSize => &self.frame_size,
            Param::StepFraction => &self.step_fraction,
            Param::DeltaLow => &self.delta_low,
            Param::DeltaHigh => &self.delta_high,
        }
    }

    pub fn validate(&self) -> Result<(), OptError> {
        if self.classifier_choices.is_empty() || self.timing_choices.is_empty() {
            return Err(OptError::Space("empty categorical choice".into()));
        }
        for p in Param::ALL {
            self.dim(p).validate(p)?;
        }
        let (low_lo, _) = self.delta_low.bounds(Param::DeltaLow);
        let (_, high_hi) = self.delta_high.bounds(Param::DeltaHigh);
        if !(low_lo < high_hi) {
            return Err(OptError::Space("no threshold pair satisfies delta_low < delta_high".into()));
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, OptError> {
        let space: ParamSpace = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        space.validate()?;
        Ok(space)
    }

    /// Every feasible grid point, in lexicographic order of
    /// (classifier, timing, frame, step, low, high). Pairs with
    /// `delta_low >= delta_high` are skipped.
    pub fn grid_points(&self) -> Result<Vec<PipelineParams>, OptError> {
        self.validate()?;
        let pts = |p: Param| self.dim(p).grid_points().ok_or(OptError::GridRequired(p.name()));
        let frames = pts(Param::FrameSize)?;
        let steps = pts(Param::StepFraction)?;
        let lows = pts(Param::DeltaLow)?;
        let highs = pts(Param::DeltaHigh)?;
        let mut classifiers = self.classifier_choices.clone();
        classifiers.sort();
        classifiers.dedup();
        let mut timings = self.timing_choices.clone();
        timings.sort();
        timings.dedup();
        let mut out = Vec::new();
        for &classifier in &classifiers {
            for &timing in &timings {
                for &frame in &frames {
                    for &step in &steps {
                        for &low in &lows {
                            for &high in highs.iter().filter(|h| **h > low) {
                                out.push(PipelineParams {
                                    classifier,
                                    timing,
                                    framing: FramingParams { frame_size_s: frame, step_fraction: step },
                                    thresholds: Thresholds::new(low, high).expect("low < high"),
                                });
                            }
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(OptError::EmptyGrid);
        }
        Ok(out)
    }

    /// Draw from the prior. Threshold pairs are redrawn until
    /// `delta_low < delta_high`; after 100 failures the pair is swapped.
    pub fn sample_prior(&self, rng: &mut ChaCha8Rng) -> Result<PipelineParams, OptError> {
        let classifier = self.classifier_choices[rng.random_range(0..self.classifier_choices.len())];
        let timing = self.timing_choices[rng.random_range(0..self.timing_choices.len())];
        let frame = self.frame_size.sample(Param::FrameSize, rng);
        let step = self.step_fraction.sample(Param::StepFraction, rng);
        let mut pair = (0.0, 0.0);
        for _ in 0..MAX_RESAMPLE {
            pair = (
                self.delta_low.sample(Param::DeltaLow, rng),
                self.delta_high.sample(Param::DeltaHigh, rng),
            );
            if pair.0 < pair.1 {
                break;
            }
        }
        let thresholds = ordered_thresholds(pair.0, pair.1)?;
        Ok(PipelineParams {
            classifier,
            timing,
            framing: FramingParams::new(frame, step).map_err(PipelineError::from)?,
            thresholds,
        })
    }
}

fn ordered_thresholds(a: f64, b: f64) -> Result<Thresholds, OptError> {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    Thresholds::new(lo, hi).map_err(|_| OptError::Infeasible)
}

/// Which quantity a search minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// Negative weighted mean F1.
    Classification,
    /// Weighted mean angular MSE.
    Doa,
    /// Weighted mean of MSE / F1.
    Joint,
    /// Joint plus `lambda` times the frame size in seconds.
    JointReg { lambda: f64 },
}

impl ObjectiveKind {
    pub fn joint_reg() -> Self {
        ObjectiveKind::JointReg { lambda: DEFAULT_LAMBDA }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveKind::Classification => "classification",
            ObjectiveKind::Doa => "doa",
            ObjectiveKind::Joint => "joint",
            ObjectiveKind::JointReg { .. } => "jointreg",
        }
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = String;
    /// `classification`, `doa`, `joint`, `jointreg` or `jointreg=<lambda>`.
    fn from_str(s: &str) -> Result<Self, String> {
        let lower = s.to_ascii_lowercase();
        let (name, arg) = match lower.split_once('=') {
            Some((n, a)) => (n.to_string(), Some(a.to_string())),
            None => (lower, None),
        };
        let kind = match name.as_str() {
            "classification" | "class" => ObjectiveKind::Classification,
            "doa" => ObjectiveKind::Doa,
            "joint" => ObjectiveKind::Joint,
            "jointreg" | "joint_reg" | "joint-reg" => {
                let lambda = match &arg {
                    Some(a) => a.parse::<f64>().map_err(|_| format!("bad lambda '{a}'"))?,
                    None => DEFAULT_LAMBDA,
                };
                if !(lambda.is_finite() && lambda >= 0.0) {
                    return Err(format!("lambda {lambda} must be non-negative"));
                }
                return Ok(ObjectiveKind::JointReg { lambda });
            }
            other => return Err(format!("unknown objective '{other}'")),
        };
        if arg.is_some() {
            return Err(format!("objective '{name}' takes no argument"));
        }
        Ok(kind)
    }
}

/// Reduce per-recording metrics to one objective value.
///
/// Returns [`PENALTY`] when any recording accepted nothing, when a Doa
/// objective meets a recording without correctly accepted frames (its MSE
/// is undefined), or when a joint objective meets a recording with zero F1.
pub fn aggregate(per_recording: &[Metrics], weights: &[u32], kind: ObjectiveKind, frame_size_s: f64) -> Result<f64, OptError> {
    if per_recording.len() != weights.len() {
        return Err(OptError::LengthMismatch {
            metrics: per_recording.len(),
            weights: weights.len(),
        });
    }
    if weights.iter().any(|w| *w == 0) {
        return Err(OptError::Weight);
    }
    if let ObjectiveKind::JointReg { lambda } = kind {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(OptError::Lambda(lambda));
        }
    }
    if per_recording.is_empty() || per_recording.iter().any(|m| m.no_speech_windows) {
        return Ok(PENALTY);
    }
    let total: f64 = weights.iter().map(|w| *w as f64).sum();
    let weighted = |f: &dyn Fn(&Metrics) -> f64| -> f64 {
        per_recording.iter().zip(weights).map(|(m, w)| *w as f64 * f(m)).sum::<f64>() / total
    };
    let value = match kind {
        ObjectiveKind::Classification => -weighted(&|m| m.f1),
        ObjectiveKind::Doa => {
            if per_recording.iter().any(|m| m.n_true_positive == 0) {
                return Ok(PENALTY);
            }
            weighted(&|m| m.mse)
        }
        ObjectiveKind::Joint | ObjectiveKind::JointReg { .. } => {
            if per_recording.iter().any(|m| m.f1 == 0.0) {
                return Ok(PENALTY);
            }
            let joint = weighted(&|m| m.mse / m.f1);
            match kind {
                ObjectiveKind::JointReg { lambda } => joint + lambda * frame_size_s.abs(),
                _ => joint,
            }
        }
    };
    Ok(if value.is_finite() { value.min(PENALTY) } else { PENALTY })
}

/// The result of scoring one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Metrics of the recordings evaluated before any early stop.
    pub per_recording: Vec<Metrics>,
    pub objective: f64,
}

impl Evaluation {
    /// A bare objective value, for searches over analytic test functions.
    pub fn value(objective: f64) -> Self {
        Self {
            per_recording: Vec::new(),
            objective,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub params: PipelineParams,
    pub per_recording: Vec<Metrics>,
    pub objective: f64,
    pub valid: bool,
}

impl Trial {
    fn new(index: usize, params: PipelineParams, eval: Evaluation) -> Self {
        let objective = if eval.objective.is_finite() {
            eval.objective.min(PENALTY)
        } else {
            PENALTY
        };
        Trial {
            index,
            params,
            per_recording: eval.per_recording,
            objective,
            valid: objective < PENALTY,
        }
    }
}

/// Total order used to pick the best trial: objective, then smaller frame,
/// then classifier, timing, step, low and high threshold, then index.
pub fn compare_trials(a: &Trial, b: &Trial) -> Ordering {
    let key = |t: &Trial| {
        (
            t.params.classifier,
            t.params.timing,
        )
    };
    a.objective
        .total_cmp(&b.objective)
        .then(a.params.framing.frame_size_s.total_cmp(&b.params.framing.frame_size_s))
        .then(key(a).cmp(&key(b)))
        .then(a.params.framing.step_fraction.total_cmp(&b.params.framing.step_fraction))
        .then(a.params.thresholds.low().total_cmp(&b.params.thresholds.low()))
        .then(a.params.thresholds.high().total_cmp(&b.params.thresholds.high()))
        .then(a.index.cmp(&b.index))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchOutcome {
    /// `None` when no trial ran.
    pub best: Option<Trial>,
    pub trials: Vec<Trial>,
}

impl SearchOutcome {
    fn from_trials(trials: Vec<Trial>) -> Self {
        let best = trials.iter().min_by(|a, b| compare_trials(a, b)).cloned();
        Self { best, trials }
    }

    pub fn no_trials(&self) -> bool {
        self.trials.is_empty()
    }

    /// Best objective seen after each trial.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.trials
            .iter()
            .map(|t| {
                best = best.min(t.objective);
                best
            })
            .collect()
    }
}

pub fn write_trials_jsonl(mut out: impl Write, trials: &[Trial]) -> Result<(), OptError> {
    for t in trials {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trials_jsonl(input: impl BufRead) -> Result<Vec<Trial>, OptError> {
    let mut trials = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        trials.push(serde_json::from_str(&line)?);
    }
    Ok(trials)
}

type ValueKey = (usize, ClassifierKind, usize, usize);
type DelayKey = (usize, WeightingKind, usize, usize);
type DelayCache = Arc<Vec<OnceLock<Option<TdeResult>>>>;
type ParamKey = (ClassifierKind, WeightingKind, [u64; 4]);

fn param_key(p: &PipelineParams) -> ParamKey {
    (
        p.classifier,
        p.timing,
        Param::ALL.map(|q| q.of(p).to_bits()),
    )
}

/// Scores parameter vectors against a dataset.
///
/// Classifier features and per-frame delays depend only on the recording,
/// the framing and the method, so they are cached across trials that share
/// those and differ in thresholds. Whole evaluations are cached by exact
/// parameter vector.
pub struct DatasetEvaluator<'a> {
    dataset: &'a Dataset,
    model: HeadModel,
    kind: ObjectiveKind,
    config: PipelineConfig,
    weights: Vec<u32>,
    mono: Vec<MonoSignal>,
    values: Mutex<HashMap<ValueKey, Arc<Vec<Option<f64>>>>>,
    delays: Mutex<HashMap<DelayKey, DelayCache>>,
    evaluations: Mutex<HashMap<ParamKey, Evaluation>>,
}

impl<'a> DatasetEvaluator<'a> {
    pub fn new(dataset: &'a Dataset, model: HeadModel, kind: ObjectiveKind) -> Self {
        Self::with_config(dataset, model, kind, PipelineConfig::default())
    }

    pub fn with_config(dataset: &'a Dataset, model: HeadModel, kind: ObjectiveKind, config: PipelineConfig) -> Self {
        Self {
            dataset,
            model,
            kind,
            config,
            weights: dataset.weights(),
            mono: dataset.recordings.iter().map(|r| r.audio.mono_mix()).collect(),
            values: Mutex::new(HashMap::new()),
            delays: Mutex::new(HashMap::new()),
            evaluations: Mutex::new(HashMap::new()),
        }
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    /// Estimates for one recording, sharing the caches.
    pub fn estimates(&self, index: usize, params: &PipelineParams) -> Result<Vec<pipeline::DoaEstimate>, OptError> {
        let rec = &self.dataset.recordings[index];
        let sr = rec.audio.sample_rate();
        let layout = params.framing.layout(rec.audio.len(), sr).map_err(PipelineError::from)?;
        if layout.count == 0 {
            return Ok(Vec::new());
        }
        let vkey = (index, params.classifier, layout.frame_len, layout.hop);
        let cached = self.values.lock().expect("cache lock").get(&vkey).cloned();
        let values = match cached {
            Some(v) => v,
            None => {
                let v = Arc::new(pipeline::classifier_values(
                    &self.mono[index],
                    &layout,
                    params.classifier,
                    &self.config.classifier,
                )?);
                self.values.lock().expect("cache lock").insert(vkey, v.clone());
                v
            }
        };
        let dkey = (index, params.timing, layout.frame_len, layout.hop);
        let delays = self
            .delays
            .lock()
            .expect("cache lock")
            .entry(dkey)
            .or_insert_with(|| Arc::new((0..layout.count).map(|_| OnceLock::new()).collect()))
            .clone();
        let max_lag = self.config.max_lag(&self.model, sr);
        Ok(pipeline::assemble_estimates(&layout, &values, &params.thresholds, &self.model, |i| {
            *delays[i].get_or_init(|| {
                pipeline::frame_delay(&rec.audio, &layout, i, params.timing, max_lag, &self.config.gcc)
            })
        }))
    }

    /// Score `params`, stopping at the first recording that accepts nothing.
    pub fn evaluate(&self, params: &PipelineParams) -> Result<Evaluation, OptError> {
        let key = param_key(params);
        if let Some(e) = self.evaluations.lock().expect("cache lock").get(&key) {
            return Ok(e.clone());
        }
        let mut per_recording = Vec::with_capacity(self.dataset.len());
        let mut stopped = false;
        for (i, rec) in self.dataset.recordings.iter().enumerate() {
            let est = self.estimates(i, params)?;
            let m = pipeline::evaluate(&est, &rec.annotation);
            per_recording.push(m);
            if m.no_speech_windows {
                stopped = true;
                break;
            }
        }
        let objective = if stopped {
            PENALTY
        } else {
            aggregate(&per_recording, &self.weights, self.kind, params.framing.frame_size_s)?
        };
        let e = Evaluation {
            per_recording,
            objective,
        };
        self.evaluations.lock().expect("cache lock").insert(key, e.clone());
        Ok(e)
    }
}

/// Evaluate every grid point with `eval`, in parallel.
pub fn grid_search_with<F>(space: &ParamSpace, eval: F) -> Result<SearchOutcome, OptError>
where
    F: Fn(&PipelineParams) -> Result<Evaluation, OptError> + Sync,
{
    let points = space.grid_points()?;
    let trials = points
        .into_par_iter()
        .enumerate()
        .map(|(i, p)| eval(&p).map(|e| Trial::new(i, p, e)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SearchOutcome::from_trials(trials))
}

pub fn grid_search(space: &ParamSpace, kind: ObjectiveKind, dataset: &Dataset, model: &HeadModel) -> Result<SearchOutcome, OptError> {
    let evaluator = DatasetEvaluator::new(dataset, *model, kind);
    grid_search_with(space, |p| evaluator.evaluate(p))
}

/// Random stream for trial `index` of a run seeded with `seed`.
fn trial_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn random_search_with<F>(space: &ParamSpace, n_trials: usize, seed: u64, mut eval: F) -> Result<SearchOutcome, OptError>
where
    F: FnMut(&PipelineParams) -> Result<Evaluation, OptError>,
{
    space.validate()?;
    let mut trials = Vec::with_capacity(n_trials);
    for i in 0..n_trials {
        let p = space.sample_prior(&mut trial_rng(seed, i))?;
        let e = eval(&p)?;
        trials.push(Trial::new(i, p, e));
    }
    Ok(SearchOutcome::from_trials(trials))
}

pub fn random_search(
    space: &ParamSpace,
    kind: ObjectiveKind,
    dataset: &Dataset,
    model: &HeadModel,
    n_trials: usize,
    seed: u64,
) -> Result<SearchOutcome, OptError> {
    let evaluator = DatasetEvaluator::new(dataset, *model, kind);
    random_search_with(space, n_trials, seed, |p| evaluator.evaluate(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpeConfig {
    /// Trials drawn from the prior before the density model takes over.
    pub n_startup: usize,
    /// Fraction of trials forming the good set.
    pub gamma_quantile: f64,
    /// Candidates drawn from the good-set density per suggestion.
    pub n_candidates: usize,
    pub seed: u64,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            n_startup: 20,
            gamma_quantile: 0.25,
            n_candidates: 24,
            seed: 0,
        }
    }
}

impl TpeConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), OptError> {
        if self.n_startup < 1 || self.n_candidates < 1 || !(self.gamma_quantile > 0.0 && self.gamma_quantile < 1.0) {
            return Err(OptError::Space(format!("bad TPE config {self:?}")));
        }
        Ok(())
    }
}

/// Truncated Gaussian mixture over `[lo, hi]`, one kernel per observation.
/// With no observations it is uniform.
struct Parzen {
    centers: Vec<f64>,
    bandwidth: f64,
    lo: f64,
    hi: f64,
}

impl Parzen {
    fn fit(obs: &[f64], lo: f64, hi: f64) -> Self {
        let range = hi - lo;
        let bandwidth = if obs.is_empty() {
            range
        } else {
            (range / obs.len() as f64).max(0.01 * range)
        };
        Parzen {
            centers: obs.iter().map(|x| x.clamp(lo, hi)).collect(),
            bandwidth,
            lo,
            hi,
        }
    }

    fn log_pdf(&self, x: f64) -> f64 {
        if self.centers.is_empty() {
            return -(self.hi - self.lo).ln();
        }
        let h = self.bandwidth;
        let terms: Vec<f64> = self
            .centers
            .iter()
            .map(|&c| {
                let z = (x - c) / h;
                let mass = normal_cdf((self.hi - c) / h) - normal_cdf((self.lo - c) / h);
                -0.5 * z * z - (h * (2.0 * std::f64::consts::PI).sqrt()).ln() - mass.max(1e-300).ln()
            })
            .collect();
        log_sum_exp(&terms) - (self.centers.len() as f64).ln()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.centers.is_empty() {
            return rng.random_range(self.lo..=self.hi);
        }
        let c = self.centers[rng.random_range(0..self.centers.len())];
        for _ in 0..MAX_RESAMPLE {
            let z: f64 = StandardNormal.sample(rng);
            let x = c + self.bandwidth * z;
            if x >= self.lo && x <= self.hi {
                return x;
            }
        }
        c
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Additively smoothed category frequencies.
fn category_log_probs<T: PartialEq + Copy>(choices: &[T], obs: &[T]) -> Vec<f64> {
    let total = obs.len() as f64 + choices.len() as f64;
    choices
        .iter()
        .map(|c| ((obs.iter().filter(|o| *o == c).count() as f64 + 1.0) / total).ln())
        .collect()
}

fn sample_category<T: Copy>(choices: &[T], log_probs: &[f64], rng: &mut ChaCha8Rng) -> (usize, T) {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return (i, choices[i]);
        }
    }
    (choices.len() - 1, choices[choices.len() - 1])
}

struct Densities {
    classifier: Vec<f64>,
    timing: Vec<f64>,
    numeric: Vec<Parzen>,
}

impl Densities {
    fn fit(set: &[&Trial], space: &ParamSpace, bounds: &[(f64, f64); 4]) -> Self {
        let cls: Vec<_> = set.iter().map(|t| t.params.classifier).collect();
        let tim: Vec<_> = set.iter().map(|t| t.params.timing).collect();
        Densities {
            classifier: category_log_probs(&space.classifier_choices, &cls),
            timing: category_log_probs(&space.timing_choices, &tim),
            numeric: Param::ALL
                .iter()
                .zip(bounds)
                .map(|(p, (lo, hi))| {
                    let obs: Vec<f64> = set.iter().map(|t| p.of(&t.params)).collect();
                    Parzen::fit(&obs, *lo, *hi)
                })
                .collect(),
        }
    }

    fn log_pdf(&self, ci: usize, ti: usize, x: &[f64; 4]) -> f64 {
        self.classifier[ci] + self.timing[ti] + self.numeric.iter().zip(x).map(|(d, v)| d.log_pdf(*v)).sum::<f64>()
    }
}

/// Propose the next parameter vector given the trials so far.
///
/// The first `n_startup` suggestions are prior draws, identical to what
/// [`random_search`] draws with the same seed. After that, trials are split
/// at the `gamma_quantile` best objective into a good set `l` and the rest
/// `g`; `n_candidates` vectors are drawn from `l` and the one with the
/// largest `l(x) / g(x)` is returned.
pub fn tpe_suggest(history: &[Trial], space: &ParamSpace, config: &TpeConfig) -> Result<PipelineParams, OptError> {
    space.validate()?;
    config.validate()?;
    for p in Param::ALL {
        if space.dim(p).is_grid() {
            return Err(OptError::DistributionRequired(p.name()));
        }
    }
    let mut rng = trial_rng(config.seed, history.len());
    if history.len() < config.n_startup {
        return space.sample_prior(&mut rng);
    }

    let mut sorted: Vec<&Trial> = history.iter().collect();
    sorted.sort_by(|a, b| a.objective.total_cmp(&b.objective).then(a.index.cmp(&b.index)));
    let n_good = ((config.gamma_quantile * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let (good, bad) = sorted.split_at(n_good);
    let bounds = Param::ALL.map(|p| space.dim(p).bounds(p));
    let l = Densities::fit(good, space, &bounds);
    let g = Densities::fit(bad, space, &bounds);

    let mut best: Option<(f64, PipelineParams)> = None;
    for _ in 0..config.n_candidates {
        let (ci, classifier) = sample_category(&space.classifier_choices, &l.classifier, &mut rng);
        let (ti, timing) = sample_category(&space.timing_choices, &l.timing, &mut rng);
        let frame = l.numeric[0].sample(&mut rng);
        let step = l.numeric[1].sample(&mut rng);
        let mut pair = (0.0, 0.0);
        for _ in 0..MAX_RESAMPLE {
            pair = (l.numeric[2].sample(&mut rng), l.numeric[3].sample(&mut rng));
            if pair.0 < pair.1 {
                break;
            }
        }
        let Ok(thresholds) = ordered_thresholds(pair.0, pair.1) else {
            continue;
        };
        let Ok(framing) = FramingParams::new(frame, step) else {
            continue;
        };
        let x = [frame, step, thresholds.low(), thresholds.high()];
        let score = l.log_pdf(ci, ti, &x) - g.log_pdf(ci, ti, &x);
        let cand = PipelineParams {
            classifier,
            timing,
            framing,
            thresholds,
        };
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, cand));
        }
    }
    match best {
        Some((_, p)) => Ok(p),
        None => space.sample_prior(&mut rng),
    }
}

/// Sequential suggest, evaluate, record loop.
pub fn tpe_minimize<F>(space: &ParamSpace, n_trials: usize, config: &TpeConfig, mut eval: F) -> Result<SearchOutcome, OptError>
where
    F: FnMut(&PipelineParams) -> Result<Evaluation, OptError>,
{
    let mut trials: Vec<Trial> = Vec::with_capacity(n_trials);
    for i in 0..n_trials {
        let p = tpe_suggest(&trials, space, config)?;
        let e = eval(&p)?;
        trials.push(Trial::new(i, p, e));
    }
    Ok(SearchOutcome::from_trials(trials))
}

pub fn tpe_optimize(
    space: &ParamSpace,
    kind: ObjectiveKind,
    dataset: &Dataset,
    model: &HeadModel,
    n_trials: usize,
    config: &TpeConfig,
) -> Result<SearchOutcome, OptError> {
    let evaluator = DatasetEvaluator::new(dataset, *model, kind);
    tpe_minimize(space, n_trials, config, |p| evaluator.evaluate(p))
}

/// Frame size to the nearest 10 ms and step fraction to the nearest 0.05,
/// for reporting.
pub fn round_for_report(p: &PipelineParams) -> PipelineParams {
    let mut r = *p;
    r.framing.frame_size_s = ((p.framing.frame_size_s * 100.0).round() / 100.0).max(0.01);
    r.framing.step_fraction = ((p.framing.step_fraction * 20.0).round() / 20.0).clamp(0.05, 1.0);
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContourStat {
    Min,
    Mean,
}

impl std::str::FromStr for ContourStat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "min" => Ok(ContourStat::Min),
            "mean" => Ok(ContourStat::Mean),
            other => Err(format!("unknown statistic '{other}' (min or mean)")),
        }
    }
}

/// Trial objectives binned on two numeric parameters. `cells[j][i]` holds
/// the statistic for `y_levels[j]`, `x_levels[i]`, or `None` where no trial
/// landed.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourGrid {
    pub x_param: &'static str,
    pub y_param: &'static str,
    pub x_levels: Vec<f64>,
    pub y_levels: Vec<f64>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl ContourGrid {
    pub fn populated(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_some()).count()
    }

    /// First row: corner label then x levels; each following row: a y level
    /// then one cell per x level, empty where no trial landed.
    pub fn write_csv(&self, out: impl Write) -> Result<(), OptError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![format!("{}\\{}", self.y_param, self.x_param)];
        header.extend(self.x_levels.iter().map(|x| x.to_string()));
        w.write_record(&header).map_err(csv_err)?;
        for (y, row) in self.y_levels.iter().zip(&self.cells) {
            let mut rec = vec![y.to_string()];
            rec.extend(row.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> OptError {
    OptError::Io(std::io::Error::other(e))
}

pub const DEFAULT_CONTOUR_BINS: usize = 20;

pub fn contour_export(trials: &[Trial], x: &str, y: &str, stat: ContourStat) -> Result<ContourGrid, OptError> {
    contour_export_with_bins(trials, x, y, stat, DEFAULT_CONTOUR_BINS)
}

/// Axes with at most `bins` distinct values keep one level per value;
/// otherwise the axis range is cut into `bins` equal-width bins whose
/// centers become the levels.
pub fn contour_export_with_bins(
    trials: &[Trial],
    x: &str,
    y: &str,
    stat: ContourStat,
    bins: usize,
) -> Result<ContourGrid, OptError> {
    let (px, py) = (Param::parse(x)?, Param::parse(y)?);
    let bins = bins.max(1);
    let xs: Vec<f64> = trials.iter().map(|t| px.of(&t.params)).collect();
    let ys: Vec<f64> = trials.iter().map(|t| py.of(&t.params)).collect();
    let (x_levels, x_index) = axis(&xs, bins);
    let (y_levels, y_index) = axis(&ys, bins);
    let mut acc = vec![vec![(0usize, 0.0f64, f64::INFINITY); x_levels.len()]; y_levels.len()];
    for (k, t) in trials.iter().enumerate() {
        let cell = &mut acc[y_index[k]][x_index[k]];
        cell.0 += 1;
        cell.1 += t.objective;
        cell.2 = cell.2.min(t.objective);
    }
    let cells = acc
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|(n, sum, min)| {
                    (n > 0).then(|| match stat {
                        ContourStat::Min => min,
                        ContourStat::Mean => sum / n as f64,
                    })
                })
                .collect()
        })
        .collect();
    Ok(ContourGrid {
        x_param: px.name(),
        y_param: py.name(),
        x_levels,
        y_levels,
        cells,
    })
}

fn axis(values: &[f64], bins: usize) -> (Vec<f64>, Vec<usize>) {
    let mut distinct: Vec<f64> = values.iter().map(|v| round9(*v)).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() <= bins {
        let index = values
            .iter()
            .map(|v| distinct.partition_point(|d| *d < round9(*v)))
            .collect();
        return (distinct, index);
    }
    let (lo, hi) = (distinct[0], distinct[distinct.len() - 1]);
    let width = (hi - lo) / bins as f64;
    let levels = (0..bins).map(|i| lo + (i as f64 + 0.5) * width).collect();
    let index = values
        .iter()
        .map(|v| (((v - lo) / width) as usize).min(bins - 1))
        .collect();
    (levels, index)
}
