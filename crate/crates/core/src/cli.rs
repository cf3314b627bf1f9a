//! Command-line interface.
//!
//! Exit codes: 0 on success, 2 for bad input (missing files, malformed
//! JSON/CSV, invalid flags), 3 for domain failures such as an
//! unidentifiable calibration.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::annotation::Annotation;
use crate::dataset::{Dataset, DatasetError, Manifest, ManifestEntry, Split};
use crate::head::{self, AzimuthRad, CalibrationObservation, HeadError, HeadModel};
use crate::opt::{self, ContourStat, ObjectiveKind, OptError, ParamSpace, TpeConfig};
use crate::pipeline::{self, PipelineConfig, PipelineParams};
use crate::scene::{self, SceneSpec, SceneSuite};
use crate::wav::{self, WavEncoding};

/// Environment variable capping the worker threads used by `optimize`.
pub const THREADS_ENV: &str = "DOA_LAB_THREADS";

#[derive(Debug)]
pub enum CliError {
    /// Exit code 2.
    Input(String),
    /// Exit code 3.
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Domain(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Domain(m) => write!(f, "error: {m}"),
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        input(e)
    }
}

impl From<OptError> for CliError {
    fn from(e: OptError) -> Self {
        match e {
            OptError::Pipeline(_) | OptError::Infeasible => CliError::Domain(e.to_string()),
            _ => input(e),
        }
    }
}

impl From<HeadError> for CliError {
    fn from(e: HeadError) -> Self {
        match e {
            HeadError::Unidentifiable => CliError::Domain(format!("unidentifiable: {e}")),
            _ => input(e),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "doa-lab", version, about = "Binaural direction-of-arrival estimation and parameter search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct HeadArgs {
    /// Ear-to-ear distance in meters.
    #[arg(long, default_value_t = head::DEFAULT_EAR_DISTANCE_M)]
    pub ear_distance: f64,
    /// Speed of sound in m/s.
    #[arg(long, default_value_t = head::DEFAULT_SPEED_OF_SOUND_MPS)]
    pub speed_of_sound: f64,
}

impl HeadArgs {
    fn model(&self) -> Result<HeadModel, CliError> {
        HeadModel::new(self.ear_distance, self.speed_of_sound).map_err(input)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Grid,
    Tpe,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Encoding {
    Pcm16,
    Float32,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic scenes to WAV files, annotation sidecars and a manifest.
    Simulate {
        /// Scene spec, list of specs or suite as JSON. Defaults to the built-in suite.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Seed of the built-in suite.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Encoding::Float32)]
        encoding: Encoding,
        #[command(flatten)]
        head: HeadArgs,
    },
    /// Run the pipeline on a stereo WAV and write per-frame estimates as CSV.
    Estimate {
        #[arg(long)]
        wav: PathBuf,
        /// Pipeline parameters as JSON. Defaults to the best known parameters.
        #[arg(long)]
        params: Option<PathBuf>,
        #[command(flatten)]
        head: HeadArgs,
        /// Report angles in degrees (column `angle_deg`).
        #[arg(long)]
        degrees: bool,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score an estimates CSV against an annotation sidecar.
    Evaluate {
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        annotation: PathBuf,
        /// Frame size in seconds used to produce the estimates.
        #[arg(long)]
        frame_size: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search pipeline parameters over the training recordings of a manifest.
    Optimize {
        #[arg(long)]
        manifest: PathBuf,
        /// Search space JSON. Defaults to the full grid for `grid` and the
        /// distribution form otherwise.
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Method,
        /// classification, doa, joint, jointreg or jointreg=<lambda>.
        #[arg(long, default_value = "joint")]
        objective: String,
        #[arg(long, default_value_t = 300)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for trials.jsonl and best.json.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        head: HeadArgs,
    },
    /// Simulated streaming latency for one or more frame sizes.
    Latency {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated frame sizes in seconds.
        #[arg(long, value_delimiter = ',', default_value = "0.35,0.45,0.6")]
        frame_sizes: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long)]
        params: Option<PathBuf>,
        #[command(flatten)]
        head: HeadArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the ear distance to known-angle time differences.
    Calibrate {
        /// CSV with header `theta_rad,tau_s`.
        #[arg(long)]
        observations: PathBuf,
        #[arg(long, default_value_t = head::DEFAULT_SPEED_OF_SOUND_MPS)]
        speed_of_sound: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bin trial objectives on two numeric parameters.
    Contour {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, default_value = "frame_size_s")]
        x: String,
        #[arg(long, default_value = "step_fraction")]
        y: String,
        #[arg(long, default_value = "min")]
        stat: String,
        #[arg(long, default_value_t = opt::DEFAULT_CONTOUR_BINS)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

/// Size the global worker pool from [`THREADS_ENV`], if set.
pub fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate {
            spec,
            seed,
            out,
            encoding,
            head,
        } => simulate(spec.as_deref(), seed, &out, encoding, &head.model()?),
        Command::Estimate {
            wav,
            params,
            head,
            degrees,
            out,
        } => estimate(&wav, params.as_deref(), &head.model()?, degrees, out.as_deref()),
        Command::Evaluate {
            estimates,
            annotation,
            frame_size,
            out,
        } => evaluate(&estimates, &annotation, frame_size, out.as_deref()),
        Command::Optimize {
            manifest,
            space,
            method,
            objective,
            trials,
            seed,
            out,
            head,
        } => {
            let kind: ObjectiveKind = objective.parse().map_err(CliError::Input)?;
            optimize(&manifest, space.as_deref(), method, kind, trials, seed, &out, &head.model()?)
        }
        Command::Latency {
            manifest,
            frame_sizes,
            repeats,
            params,
            head,
            out,
        } => latency(&manifest, &frame_sizes, repeats, params.as_deref(), &head.model()?, out.as_deref()),
        Command::Calibrate {
            observations,
            speed_of_sound,
            out,
        } => calibrate(&observations, speed_of_sound, out.as_deref()),
        Command::Contour {
            trials,
            x,
            y,
            stat,
            bins,
            out,
        } => {
            let stat: ContourStat = stat.parse().map_err(CliError::Input)?;
            contour(&trials, &x, &y, stat, bins, out.as_deref())
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| input(format!("{}: {e}", p.display()))),
        None => std::io::stdout().write_all(bytes).map_err(input),
    }
}

fn pretty<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut v = serde_json::to_vec_pretty(value).map_err(input)?;
    v.push(b'\n');
    Ok(v)
}

fn load_params(path: Option<&Path>) -> Result<PipelineParams, CliError> {
    match path {
        Some(p) => read_json(p),
        None => Ok(PipelineParams::best()),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    Suite(SceneSuite),
    Many(Vec<SceneSpec>),
    One(Box<SceneSpec>),
}

fn simulate(spec: Option<&Path>, seed: u64, out: &Path, encoding: Encoding, model: &HeadModel) -> Result<(), CliError> {
    let rows: Vec<(SceneSpec, Split)> = match spec {
        None => {
            let suite = scene::default_suite(seed);
            tag_suite(suite)
        }
        Some(p) => match read_json::<SpecFile>(p)? {
            SpecFile::Suite(s) => tag_suite(s),
            SpecFile::Many(v) => v.into_iter().map(|s| (s, Split::Train)).collect(),
            SpecFile::One(s) => vec![(*s, Split::Train)],
        },
    };
    for (s, _) in &rows {
        s.validate().map_err(input)?;
    }
    fs::create_dir_all(out).map_err(|e| input(format!("{}: {e}", out.display())))?;
    let encoding = match encoding {
        Encoding::Pcm16 => WavEncoding::Pcm16,
        Encoding::Float32 => WavEncoding::Float32,
    };
    let mut manifest = Manifest::default();
    for (i, (spec, split)) in rows.iter().enumerate() {
        let rec = scene::render(spec, model).map_err(|e| CliError::Domain(e.to_string()))?;
        let stem = format!("{:02}", i + 1);
        let wav_name = PathBuf::from(format!("{stem}.wav"));
        let ann_name = PathBuf::from(format!("{stem}.json"));
        wav::write_stereo(out.join(&wav_name), &rec.audio, encoding).map_err(input)?;
        rec.annotation.write(out.join(&ann_name)).map_err(input)?;
        manifest.recordings.push(ManifestEntry {
            wav: wav_name,
            annotation: ann_name,
            weight: Some(spec.weight),
            split: *split,
        });
    }
    manifest.write(out.join("manifest.json"))?;
    Ok(())
}

fn tag_suite(suite: SceneSuite) -> Vec<(SceneSpec, Split)> {
    suite
        .train
        .into_iter()
        .map(|s| (s, Split::Train))
        .chain(suite.test.into_iter().map(|s| (s, Split::Test)))
        .collect()
}

fn estimate(wav_path: &Path, params: Option<&Path>, model: &HeadModel, degrees: bool, out: Option<&Path>) -> Result<(), CliError> {
    let params = load_params(params)?;
    let audio = wav::read_stereo(wav_path).map_err(|e| input(format!("{}: {e}", wav_path.display())))?;
    let estimates = pipeline::run_on_audio(&audio, &params, model, &PipelineConfig::default())
        .map_err(|e| CliError::Domain(e.to_string()))?;
    let mut buf = Vec::new();
    pipeline::write_estimates_csv(&mut buf, &estimates, degrees).map_err(input)?;
    emit(out, &buf)
}

fn evaluate(estimates: &Path, annotation: &Path, frame_size: f64, out: Option<&Path>) -> Result<(), CliError> {
    if !(frame_size.is_finite() && frame_size > 0.0) {
        return Err(input(format!("frame size {frame_size} must be positive")));
    }
    let ann = Annotation::read(annotation).map_err(|e| input(format!("{}: {e}", annotation.display())))?;
    let file = fs::File::open(estimates).map_err(|e| input(format!("{}: {e}", estimates.display())))?;
    let est = pipeline::read_estimates_csv(BufReader::new(file), frame_size).map_err(input)?;
    let metrics = pipeline::evaluate(&est, &ann);
    emit(out, &pretty(&metrics)?)
}

#[allow(clippy::too_many_arguments)]
fn optimize(
    manifest: &Path,
    space: Option<&Path>,
    method: Method,
    kind: ObjectiveKind,
    n_trials: usize,
    seed: u64,
    out: &Path,
    model: &HeadModel,
) -> Result<(), CliError> {
    let dataset = Dataset::load(manifest, Some(Split::Train))?;
    let space = match space {
        Some(p) => {
            let s: ParamSpace = read_json(p)?;
            s.validate()?;
            s
        }
        None if method == Method::Grid => ParamSpace::full_grid(),
        None => ParamSpace::tpe_default(),
    };
    let outcome = match method {
        Method::Grid => opt::grid_search(&space, kind, &dataset, model)?,
        Method::Random => opt::random_search(&space, kind, &dataset, model, n_trials, seed)?,
        Method::Tpe => {
            let config = TpeConfig::with_seed(seed);
            if n_trials < config.n_startup {
                return Err(input(format!(
                    "TPE needs at least {} trials, got {n_trials}",
                    config.n_startup
                )));
            }
            opt::tpe_optimize(&space, kind, &dataset, model, n_trials, &config)?
        }
    };
    fs::create_dir_all(out).map_err(|e| input(format!("{}: {e}", out.display())))?;
    let mut jsonl = Vec::new();
    opt::write_trials_jsonl(&mut jsonl, &outcome.trials)?;
    emit(Some(&out.join("trials.jsonl")), &jsonl)?;
    let best = json!({
        "method": format!("{method:?}").to_lowercase(),
        "objective": kind,
        "seed": seed,
        "n_trials": outcome.trials.len(),
        "no_trials": outcome.no_trials(),
        "best": outcome.best,
        "best_rounded_params": outcome.best.as_ref().map(|t| opt::round_for_report(&t.params)),
        "best_so_far": outcome.best_so_far(),
    });
    emit(Some(&out.join("best.json")), &pretty(&best)?)
}

#[derive(Serialize)]
struct LatencyGroup {
    frame_size_s: f64,
    events: usize,
    dropped: usize,
    wallclock_mean_s: f64,
    wallclock_std_s: f64,
    wallclock_latencies_s: Vec<f64>,
}

fn latency(
    manifest: &Path,
    frame_sizes: &[f64],
    repeats: usize,
    params: Option<&Path>,
    model: &HeadModel,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if frame_sizes.is_empty() || frame_sizes.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(input("frame sizes must be positive"));
    }
    if repeats == 0 {
        return Err(input("repeats must be at least 1"));
    }
    let dataset = Dataset::load(manifest, None)?;
    let base = load_params(params)?;
    let mut groups = Vec::new();
    for &f in frame_sizes {
        let stats = pipeline::latency_over(
            &dataset.recordings,
            &base.with_frame_size(f),
            model,
            repeats,
            &PipelineConfig::default(),
        )
        .map_err(|e| CliError::Domain(e.to_string()))?;
        groups.push(LatencyGroup {
            frame_size_s: f,
            events: stats.latencies_s.len(),
            dropped: stats.dropped,
            wallclock_mean_s: stats.mean_s,
            wallclock_std_s: stats.std_s,
            wallclock_latencies_s: stats.latencies_s,
        });
    }
    let mut report = json!({ "repeats": repeats, "groups": groups });
    if groups.len() == 2 {
        let t = pipeline::two_sample_t_test(&groups[0].wallclock_latencies_s, &groups[1].wallclock_latencies_s);
        report["wallclock_t_test"] = json!(t);
    }
    emit(out, &pretty(&report)?)
}

fn calibrate(observations: &Path, speed_of_sound: f64, out: Option<&Path>) -> Result<(), CliError> {
    let file = fs::File::open(observations).map_err(|e| input(format!("{}: {e}", observations.display())))?;
    let mut reader = csv::Reader::from_reader(file);
    let header: Vec<String> = reader.headers().map_err(input)?.iter().map(str::to_string).collect();
    if header != ["theta_rad", "tau_s"] {
        return Err(input(format!("expected header theta_rad,tau_s, found {}", header.join(","))));
    }
    let mut obs = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(input)?;
        let num = |i: usize| -> Result<f64, CliError> {
            rec[i].trim().parse::<f64>().map_err(|_| input(format!("bad number '{}'", &rec[i])))
        };
        obs.push(CalibrationObservation {
            theta: AzimuthRad::new(num(0)?).map_err(input)?,
            tau_s: num(1)?,
        });
    }
    if obs.is_empty() {
        return Err(input("no observations"));
    }
    let fit = head::calibrate_distance(&obs, speed_of_sound)?;
    emit(out, &pretty(&fit)?)
}

fn contour(trials: &Path, x: &str, y: &str, stat: ContourStat, bins: usize, out: Option<&Path>) -> Result<(), CliError> {
    let file = fs::File::open(trials).map_err(|e| input(format!("{}: {e}", trials.display())))?;
    let trials = opt::read_trials_jsonl(BufReader::new(file))?;
    let grid = opt::contour_export_with_bins(&trials, x, y, stat, bins)?;
    let mut buf = Vec::new();
    grid.write_csv(&mut buf)?;
    emit(out, &buf)
}
