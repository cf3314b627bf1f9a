//! Property checks for every module, run through a deterministic proptest
//! runner with at least [`CASES`] cases each. Shared by the `properties`
//! target and the acceptance report.

use std::path::Path;

use doa_lab::classify::{self, ClassifierConfig, ClassifierKind, ModulationFilterbank, OnsetMode, Thresholds};
use doa_lab::head::{self, AzimuthRad, CalibrationObservation, HeadModel};
use doa_lab::opt::{self, Dim, Evaluation, ObjectiveKind, ParamSpace, TpeConfig};
use doa_lab::pipeline::{self, DoaEstimate, Metrics, PipelineConfig, PipelineParams};
use doa_lab::scene::{self, Distractor, DistractorKind, Echo, SceneSpec};
use doa_lab::signal::{self, FramingParams, MonoSignal};
use doa_lab::tde::{self, GccOptions, WeightingKind};
use doa_lab::annotation::AnnotatedRecording;
use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CASES: u32 = 100;
const SR: f64 = 16_000.0;

pub type Check = fn() -> Result<(), String>;

/// Every property, in module order.
pub const ALL: &[(&str, Check)] = &[
    ("signal: transform linearity", signal_linearity),
    ("signal: Parseval", signal_parseval),
    ("signal: envelope sign invariance", signal_envelope_sign),
    ("signal: frame count", signal_frame_count),
    ("tde: oracle equivalence", tde_oracle_equivalence),
    ("tde: channel-swap antisymmetry", tde_antisymmetry),
    ("tde: integer delay recovery", tde_delay_recovery),
    ("tde: PHAT prominence under an echo", tde_phat_prominence),
    ("head: monotonicity", head_monotone),
    ("head: round trip", head_round_trip),
    ("head: model ordering", head_model_ordering),
    ("head: calibration consistency", head_calibration),
    ("classify: SRMR scale invariance", classify_srmr_scale),
    ("classify: onset scale invariance", classify_onset_scale),
    ("classify: threshold widening", classify_widening),
    ("classify: step onset peak", classify_step_onset),
    ("pipeline: determinism", pipeline_determinism),
    ("pipeline: accepted values inside thresholds", pipeline_thresholds),
    ("pipeline: channel-swap antisymmetry", pipeline_antisymmetry),
    ("pipeline: F1 against brute force", pipeline_f1_brute_force),
    ("opt: equal weights give the mean", opt_equal_weights),
    ("opt: JointReg with lambda 0 is Joint", opt_jointreg_zero),
    ("opt: grid search argmin", opt_grid_argmin),
    ("opt: TPE startup equals random search", opt_tpe_startup),
    ("opt: MSE scaling", opt_mse_scaling),
    ("scene: determinism", scene_determinism),
    ("scene: ground-truth consistency", scene_ground_truth),
    ("scene: energy bookkeeping", scene_energy),
    ("cli: byte-for-byte reproducibility", cli_reproducible),
    ("cli: exit codes", cli_exit_codes),
];

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn mono(x: Vec<f64>) -> MonoSignal {
    MonoSignal::new(x, SR).unwrap()
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn fail(msg: String) -> TestCaseError {
    TestCaseError::fail(msg)
}

// ---------------------------------------------------------------- signal

pub fn signal_linearity() -> Result<(), String> {
    let strat = (1usize..300).prop_flat_map(|n| (vec(-1.0..1.0f64, n), vec(-1.0..1.0f64, n), -10.0..10.0f64, -10.0..10.0f64));
    check(CASES, strat, |(x, y, a, b)| {
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let fm = signal::forward_transform(&mono(mixed)).unwrap();
        let fx = signal::forward_transform(&mono(x)).unwrap();
        let fy = signal::forward_transform(&mono(y)).unwrap();
        for k in 0..fm.bins.len() {
            let expect = fx.bins[k] * a + fy.bins[k] * b;
            prop_assert!((fm.bins[k] - expect).norm() < 1e-9, "bin {k}");
        }
        Ok(())
    })
}

pub fn signal_parseval() -> Result<(), String> {
    check(CASES, vec(-5.0..5.0, 1..500), |x| {
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let n = x.len() as f64;
        let spec = signal::forward_transform(&mono(x)).unwrap();
        let bins: f64 = spec.bins.iter().map(|c| c.norm_sqr()).sum::<f64>() / n;
        prop_assert!((energy - bins).abs() <= 1e-6 * energy.max(1e-300));
        Ok(())
    })
}

pub fn signal_envelope_sign() -> Result<(), String> {
    check(CASES, vec(-1.0..1.0, signal::MIN_ENVELOPE_LEN..400), |x| {
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let a = signal::analytic_envelope(&mono(x)).unwrap();
        let b = signal::analytic_envelope(&mono(neg)).unwrap();
        for (p, q) in a.samples().iter().zip(b.samples()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
        Ok(())
    })
}

pub fn signal_frame_count() -> Result<(), String> {
    check(CASES, (0usize..40_000, 0.0002..1.0f64, 0.01..=1.0f64), |(len, frame_s, step)| {
        let params = FramingParams::new(frame_s, step).unwrap();
        let frame_len = (frame_s * SR).round() as usize;
        let hop = ((frame_s * step * SR).round() as usize).max(1);
        match params.layout(len, SR) {
            Err(_) => prop_assert!(frame_len < 2),
            Ok(layout) => {
                let mut brute = 0;
                while brute * hop + frame_len <= len {
                    brute += 1;
                }
                prop_assert_eq!(layout.count, brute);
                if len <= 4000 {
                    let frames = signal::frame_stream(&mono(vec![0.5; len]), &params).unwrap();
                    prop_assert_eq!(frames.len(), brute);
                }
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- tde

/// Fraction of random pairs on which the transform and the direct sum pick
/// the same lag. Pairs mix a delayed copy with independent noise.
pub fn oracle_agreement(trials: u64) -> (u64, u64) {
    let mut agree = 0;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(64..600);
        let max_lag = rng.random_range(1..=32.min(n / 4));
        let d = rng.random_range(-(max_lag as i64)..=max_lag as i64);
        let src = noise(&mut rng, n + 2 * max_lag);
        let mix = rng.random_range(0.0..1.0);
        let x: Vec<f64> = src[max_lag..max_lag + n].to_vec();
        let y: Vec<f64> = (0..n)
            .map(|i| src[(max_lag as i64 + i as i64 - d) as usize] + mix * rng.random_range(-1.0..1.0))
            .collect();
        let (xm, ym) = (mono(x), mono(y));
        let (_, fast) = tde::gcc(&xm, &ym, WeightingKind::PlainCC, max_lag).unwrap();
        let direct = tde::time_domain_xcorr(&xm, &ym, max_lag).unwrap();
        if direct.lag_of_index(direct.peak_index()) == fast.lag_samples {
            agree += 1;
        }
    }
    (agree, trials)
}

pub fn tde_oracle_equivalence() -> Result<(), String> {
    let (agree, n) = oracle_agreement(CASES as u64);
    if agree >= 99 * n / 100 {
        Ok(())
    } else {
        Err(format!("{agree}/{n} pairs agree"))
    }
}

pub fn tde_antisymmetry() -> Result<(), String> {
    check(CASES, (any::<u64>(), -14i64..=14, 0.0..0.5f64), |(seed, d, mix)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 800;
        let src = noise(&mut rng, n + 40);
        let x = src[20..20 + n].to_vec();
        let y: Vec<f64> = (0..n)
            .map(|i| src[(20 + i as i64 - d) as usize] + mix * rng.random_range(-1.0..1.0))
            .collect();
        let (xm, ym) = (mono(x), mono(y));
        for kind in WeightingKind::ALL {
            let (_, a) = tde::gcc(&xm, &ym, kind, 16).unwrap();
            let (_, b) = tde::gcc(&ym, &xm, kind, 16).unwrap();
            prop_assert_eq!(a.lag_samples, -b.lag_samples, "{:?}", kind);
        }
        Ok(())
    })
}

pub fn tde_delay_recovery() -> Result<(), String> {
    check(CASES, (any::<u64>(), -16i64..=16, 256usize..1200), |(seed, d, n)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = noise(&mut rng, n + 32);
        let x = mono(src[16..16 + n].to_vec());
        // y[i] = x[i - d]: the right channel lags by d samples.
        let y = mono(src[(16 - d) as usize..(16 - d) as usize + n].to_vec());
        for kind in WeightingKind::ALL {
            for options in [GccOptions::default(), PipelineConfig::default().gcc] {
                let (_, r) = tde::gcc_with(&x, &y, kind, 16, &options).unwrap();
                prop_assert_eq!(r.lag_samples, d, "{:?} {:?}", kind, options.window);
            }
        }
        Ok(())
    })
}

/// Mean prominence per weighting over `n_scenes` static scenes with one echo
/// of gain 0.7 from -60 degrees, averaging each scene's speech frames first.
/// Frames without a competing peak (the infinite sentinel) are left out of
/// the mean and counted separately.
#[derive(Debug, Clone, Copy)]
pub struct ProminenceStudy {
    pub mean: [f64; 3],
    pub sentinels: [usize; 3],
    pub phat_wins: usize,
    pub scenes: usize,
}

pub fn prominence_study(n_scenes: usize, seed: u64) -> ProminenceStudy {
    let model = HeadModel::default();
    let config = PipelineConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = [0.0; 3];
    let mut sentinels = [0; 3];
    let mut phat_wins = 0;
    let framing = FramingParams::new(0.34, 0.9).unwrap();
    for i in 0..n_scenes {
        let mut spec = scene::clean_static_scene(rng.random_range(-50.0..50.0), 4.0, seed.wrapping_add(i as u64));
        spec.echoes = vec![Echo {
            extra_delay_s: rng.random_range(0.003..0.012),
            gain: 0.7,
            azimuth_rad: (-60.0f64).to_radians(),
        }];
        let rec = scene::render(&spec, &model).unwrap();
        let layout = framing.layout(rec.audio.len(), SR).unwrap();
        let mut scene_mean = [0.0; 3];
        for (k, kind) in WeightingKind::ALL.iter().enumerate() {
            let mut finite = Vec::new();
            for f in 0..layout.count {
                if !pipeline::ground_truth_label(layout.start_s(f), layout.frame_duration_s(), &rec.annotation) {
                    continue;
                }
                let r = pipeline::frame_delay(&rec.audio, &layout, f, *kind, config.max_lag(&model, SR), &config.gcc)
                    .expect("speech frame is not silent");
                if r.prominence.is_finite() {
                    finite.push(r.prominence);
                } else {
                    sentinels[k] += 1;
                }
            }
            scene_mean[k] = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
            sums[k] += scene_mean[k];
        }
        if scene_mean[1] > scene_mean[0] {
            phat_wins += 1;
        }
    }
    ProminenceStudy {
        mean: sums.map(|s| s / n_scenes as f64),
        sentinels,
        phat_wins,
        scenes: n_scenes,
    }
}

pub fn tde_phat_prominence() -> Result<(), String> {
    let s = prominence_study(20, 0);
    if s.mean[1] > s.mean[0] && 2 * s.phat_wins > s.scenes {
        Ok(())
    } else {
        Err(format!("PHAT {:.3} vs CC {:.3}, PHAT ahead in {}/{} scenes", s.mean[1], s.mean[0], s.phat_wins, s.scenes))
    }
}

// ---------------------------------------------------------------- head

pub fn head_monotone() -> Result<(), String> {
    let m = HeadModel::default();
    let grid: Vec<f64> = (0..1000)
        .map(|i| -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / 999.0)
        .map(|t| head::itd_woodworth(AzimuthRad::new(t).unwrap(), &m))
        .collect();
    match grid.windows(2).position(|w| w[1] <= w[0]) {
        None => Ok(()),
        Some(i) => Err(format!("not increasing at grid point {i}")),
    }
}

pub fn head_round_trip() -> Result<(), String> {
    let m = HeadModel::default();
    let half = std::f64::consts::FRAC_PI_2;
    check(1000, -half..=half, |theta| {
        let tau = head::itd_woodworth(AzimuthRad::new(theta).unwrap(), &m);
        let back = head::angle_from_itd(tau, &m).unwrap().azimuth.value();
        prop_assert!((back - theta).abs() < 1e-9, "{theta} -> {back}");
        Ok(())
    })
}

pub fn head_model_ordering() -> Result<(), String> {
    let half = std::f64::consts::FRAC_PI_2;
    check(CASES, (-half..=half, 0.05..0.5f64, 250.0..400.0f64), |(theta, d, v)| {
        prop_assume!(theta != 0.0);
        let m = HeadModel::new(d, v).unwrap();
        let az = AzimuthRad::new(theta).unwrap();
        prop_assert!(head::itd_woodworth(az, &m).abs() >= head::itd_simple(az, &m).abs());
        Ok(())
    })
}

pub fn head_calibration() -> Result<(), String> {
    let half = std::f64::consts::FRAC_PI_2;
    let strat = (0.1..0.4f64, 300.0..360.0f64, vec(-half..=half, 1..20));
    check(CASES, strat, |(d, v, angles)| {
        prop_assume!(angles.iter().any(|a| *a != 0.0));
        let m = HeadModel::new(d, v).unwrap();
        let obs: Vec<CalibrationObservation> = angles
            .iter()
            .map(|a| {
                let theta = AzimuthRad::new(*a).unwrap();
                CalibrationObservation {
                    theta,
                    tau_s: head::itd_woodworth(theta, &m),
                }
            })
            .collect();
        let fit = head::calibrate_distance(&obs, v).unwrap();
        prop_assert!(fit.residual_rms_s < 1e-12, "residual {}", fit.residual_rms_s);
        Ok(())
    })
}

// ---------------------------------------------------------------- classify

pub fn classify_srmr_scale() -> Result<(), String> {
    let bank = ModulationFilterbank::default();
    check(CASES, (any::<u64>(), 0.1..0.5f64, -2.0..2.0f64), |(seed, dur, log_c)| {
        let frame = scene::synth_speech_like(0.5, SR, seed).unwrap();
        let n = (dur * SR) as usize;
        let x = frame.slice(0, n);
        let c = 10f64.powf(log_c);
        let a = classify::srmr(&x, &bank, classify::DEFAULT_FLOOR_EPS).unwrap();
        let b = classify::srmr(&x.scaled(c), &bank, classify::DEFAULT_FLOOR_EPS).unwrap();
        prop_assert!((a - b).abs() <= 1e-6 * a.abs(), "{a} vs {b} at c = {c}");
        Ok(())
    })
}

fn bounded_away() -> impl Strategy<Value = f64> {
    (0.01..1.0f64, any::<bool>()).prop_map(|(m, s)| if s { m } else { -m })
}

pub fn classify_onset_scale() -> Result<(), String> {
    let strat = (1usize..400).prop_flat_map(|n| (vec(-1.0..1.0f64, n), vec(bounded_away(), n), 0.1..10.0f64));
    check(CASES, strat, |(cur, prev, c)| {
        let a = classify::power_onset_ratio(&mono(cur.clone()), &mono(prev.clone()), 1e-10).unwrap();
        let scaled = |v: &[f64]| mono(v.iter().map(|s| s * c).collect());
        let b = classify::power_onset_ratio(&scaled(&cur), &scaled(&prev), 1e-10).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-300));
        Ok(())
    })
}

pub fn classify_widening() -> Result<(), String> {
    let strat = (0.0..20.0f64, 0.01..10.0f64, 0.01..10.0f64, 0.0..5.0f64, 0.0..5.0f64);
    check(CASES, strat, |(value, lo, width, lower_by, raise_by)| {
        let narrow = Thresholds::new(lo, lo + width).unwrap();
        let wide_lo = (lo - lower_by).max(1e-9);
        let wide = Thresholds::new(wide_lo, lo + width + raise_by).unwrap();
        if classify::classify(value, &narrow) {
            prop_assert!(classify::classify(value, &wide));
        }
        Ok(())
    })
}

/// Silence followed by speech-like samples from a position in the first 40%
/// of frame `k`. The per-sample ratio also fires on the frame after the step
/// for samples aligned with the silent head of the step frame, so the step
/// frame only dominates when most of it is voiced; the whole-frame ratio is
/// checked for any step position.
pub fn classify_step_onset() -> Result<(), String> {
    let strat = (
        50usize..400,
        3usize..8,
        any::<prop::sample::Index>(),
        0.0..1.0f64,
        any::<u64>(),
    );
    check(CASES, strat, |(n, frames, k_idx, q, seed)| {
        let k = 1 + k_idx.index(frames - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let voiced = |rng: &mut ChaCha8Rng| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        };
        let layout = FramingParams::new(n as f64 / SR, 1.0).unwrap().layout(n * frames, SR).unwrap();
        for (mode, q_max) in [(OnsetMode::PerSample, 0.4), (OnsetMode::WholeFrame, 1.0)] {
            let step = k * n + ((q * q_max) * n as f64) as usize;
            let step = step.min(k * n + n - 1);
            let x: Vec<f64> = (0..n * frames).map(|i| if i < step { 0.0 } else { voiced(&mut rng) }).collect();
            let config = ClassifierConfig {
                onset_mode: mode,
                ..ClassifierConfig::default()
            };
            let values = pipeline::classifier_values(&mono(x), &layout, ClassifierKind::PowerOnset, &config).unwrap();
            let best = (1..values.len())
                .max_by(|a, b| values[*a].unwrap().total_cmp(&values[*b].unwrap()))
                .unwrap();
            prop_assert_eq!(best, k, "{:?}: values {:?}", mode, values);
            let unique = (1..values.len()).filter(|i| values[*i] == values[k]).count() == 1;
            prop_assert!(unique);
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- pipeline

fn small_scene(seed: u64, duration_s: f64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: f64 = rng.random_range(-70.0..70.0);
    let b: f64 = rng.random_range(-70.0..70.0);
    let mut spec = scene::clean_static_scene(a, duration_s, seed);
    if rng.random_bool(0.5) {
        spec.talker_track = vec![[0.0, a.to_radians()], [duration_s, b.to_radians()]];
    }
    if rng.random_bool(0.5) {
        spec.echoes.push(Echo {
            extra_delay_s: rng.random_range(0.002..0.015),
            gain: rng.random_range(0.2..0.7),
            azimuth_rad: rng.random_range(-1.4..1.4),
        });
    }
    spec.noise_rms = rng.random_range(0.001..0.05);
    spec.robot_noise = rng.random_bool(0.3);
    spec
}

fn scene_pool(n: usize, duration_s: f64) -> Vec<AnnotatedRecording> {
    let model = HeadModel::default();
    (0..n)
        .map(|i| scene::render(&small_scene(1000 + i as u64, duration_s), &model).unwrap())
        .collect()
}

fn params_strategy() -> impl Strategy<Value = PipelineParams> {
    (
        prop::sample::select(ClassifierKind::ALL.to_vec()),
        prop::sample::select(WeightingKind::ALL.to_vec()),
        0.05..0.5f64,
        0.2..=1.0f64,
        0.01..5.0f64,
        0.5..50.0f64,
    )
        .prop_map(|(classifier, timing, frame, step, lo, width)| PipelineParams {
            classifier,
            timing,
            framing: FramingParams::new(frame, step).unwrap(),
            thresholds: Thresholds::new(lo, lo + width).unwrap(),
        })
}

fn without_emit(e: &[DoaEstimate]) -> Vec<DoaEstimate> {
    e.iter().map(|x| DoaEstimate { emit_time_s: 0.0, ..*x }).collect()
}

pub fn pipeline_determinism() -> Result<(), String> {
    let pool = scene_pool(4, 2.0);
    let model = HeadModel::default();
    check(CASES, (0..pool.len(), params_strategy()), |(i, p)| {
        let a = pipeline::run_pipeline(&pool[i], &p, &model).unwrap();
        let b = pipeline::run_pipeline(&pool[i], &p, &model).unwrap();
        prop_assert_eq!(without_emit(&a), without_emit(&b));
        Ok(())
    })
}

pub fn pipeline_thresholds() -> Result<(), String> {
    let pool = scene_pool(4, 2.0);
    let model = HeadModel::default();
    check(CASES, (0..pool.len(), params_strategy()), |(i, p)| {
        for e in pipeline::run_pipeline(&pool[i], &p, &model).unwrap() {
            if e.accepted {
                let v = e.classifier_value.ok_or_else(|| fail("accepted without a value".into()))?;
                prop_assert!(p.thresholds.low() < v && v < p.thresholds.high(), "{v}");
            }
        }
        Ok(())
    })
}

pub fn pipeline_antisymmetry() -> Result<(), String> {
    let pool = scene_pool(4, 2.0);
    let model = HeadModel::default();
    let config = PipelineConfig::default();
    check(CASES, (0..pool.len(), params_strategy()), |(i, p)| {
        let a = pipeline::run_on_audio(&pool[i].audio, &p, &model, &config).unwrap();
        let swapped = pool[i].audio.swapped();
        let b = pipeline::run_on_audio(&swapped, &p, &model, &config).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.accepted, y.accepted);
            if let (Some(p), Some(q)) = (x.angle, y.angle) {
                prop_assert!((p.value() + q.value()).abs() < 1e-12, "{} vs {}", p.value(), q.value());
            }
        }
        Ok(())
    })
}

fn brute_force_f1(est: &[DoaEstimate], rec: &AnnotatedRecording) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for e in est {
        let end = e.frame_start_s + e.frame_size_s;
        let mut covered = 0.0;
        for [a, b] in &rec.annotation.speech_intervals {
            if *b > e.frame_start_s && *a < end {
                covered += b.min(end) - a.max(e.frame_start_s);
            }
        }
        let truth = 2.0 * covered + 2e-12 >= e.frame_size_s;
        match (e.accepted, truth) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) }
}

pub fn pipeline_f1_brute_force() -> Result<(), String> {
    let pool = scene_pool(20, 1.5);
    let model = HeadModel::default();
    check(CASES, (0..pool.len(), params_strategy()), |(i, p)| {
        let est = pipeline::run_pipeline(&pool[i], &p, &model).unwrap();
        let m = pipeline::evaluate(&est, &pool[i].annotation);
        let brute = brute_force_f1(&est, &pool[i]);
        prop_assert!((m.f1 - brute).abs() < 1e-12, "{} vs {}", m.f1, brute);
        Ok(())
    })
}

// ---------------------------------------------------------------- opt

fn metrics_strategy(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Metrics>> {
    vec((0.01..=1.0f64, 0.0..2.0f64, 1usize..50), n).prop_map(|v| {
        v.into_iter()
            .map(|(f1, mse, tp)| Metrics {
                f1,
                precision: f1,
                recall: f1,
                mse,
                n_accepted: tp,
                n_true_positive: tp,
                n_frames: 2 * tp,
                no_speech_windows: false,
            })
            .collect()
    })
}

pub fn opt_equal_weights() -> Result<(), String> {
    check(CASES, (metrics_strategy(1..12), 1u32..6), |(m, w)| {
        let weights = vec![w; m.len()];
        let n = m.len() as f64;
        let cls = opt::aggregate(&m, &weights, ObjectiveKind::Classification, 0.3).unwrap();
        let doa = opt::aggregate(&m, &weights, ObjectiveKind::Doa, 0.3).unwrap();
        let mean_f1 = m.iter().map(|x| x.f1).sum::<f64>() / n;
        let mean_mse = m.iter().map(|x| x.mse).sum::<f64>() / n;
        prop_assert!((cls + mean_f1).abs() < 1e-12);
        prop_assert!((doa - mean_mse).abs() < 1e-12);
        Ok(())
    })
}

pub fn opt_jointreg_zero() -> Result<(), String> {
    check(CASES, (metrics_strategy(1..12), vec(1u32..5, 12), 0.05..1.0f64), |(m, w, frame)| {
        let w = &w[..m.len()];
        let joint = opt::aggregate(&m, w, ObjectiveKind::Joint, frame).unwrap();
        let reg = opt::aggregate(&m, w, ObjectiveKind::JointReg { lambda: 0.0 }, frame).unwrap();
        prop_assert_eq!(joint, reg);
        Ok(())
    })
}

fn toy_objective(p: &PipelineParams, salt: u64) -> f64 {
    let cls = p.classifier as u64 as f64;
    let tim = p.timing as u64 as f64;
    (p.framing.frame_size_s * 7.3 + salt as f64).sin()
        + (p.framing.step_fraction * 3.1).cos()
        + 0.1 * (p.thresholds.low() - 2.0).powi(2)
        + 0.05 * p.thresholds.high()
        + 0.3 * cls
        - 0.2 * tim
}

pub fn opt_grid_argmin() -> Result<(), String> {
    let grid = |lo: f64, n: u32, step: f64| Dim::Grid {
        min: lo,
        max: lo + step * (n - 1) as f64,
        step,
    };
    let strat = (1u32..4, 1u32..4, 1u32..4, 1u32..4, any::<u64>());
    check(CASES, strat, |(a, b, c, d, salt)| {
        let space = ParamSpace {
            frame_size: grid(0.1, a, 0.2),
            step_fraction: grid(0.3, b, 0.2),
            delta_low: grid(1.0, c, 1.0),
            delta_high: grid(2.5, d, 1.0),
            ..ParamSpace::full_grid()
        };
        let out = opt::grid_search_with(&space, |p| Ok(Evaluation::value(toy_objective(p, salt % 97)))).unwrap();
        let best = out.best.as_ref().ok_or_else(|| fail("no best".into()))?;
        prop_assert_eq!(out.trials.len(), space.grid_points().unwrap().len());
        for t in &out.trials {
            prop_assert!(best.objective <= t.objective);
        }
        prop_assert!(out.trials.iter().any(|t| t == best));
        Ok(())
    })
}

pub fn opt_tpe_startup() -> Result<(), String> {
    check(CASES, (any::<u64>(), 1usize..30), |(seed, n)| {
        let space = ParamSpace::tpe_default();
        let config = TpeConfig {
            n_startup: n,
            ..TpeConfig::with_seed(seed)
        };
        let f = |p: &PipelineParams| Ok(Evaluation::value(toy_objective(p, 3)));
        let tpe = opt::tpe_minimize(&space, n, &config, f).unwrap();
        let random = opt::random_search_with(&space, n, seed, f).unwrap();
        prop_assert_eq!(tpe.trials, random.trials);
        Ok(())
    })
}

pub fn opt_mse_scaling() -> Result<(), String> {
    check(CASES, (metrics_strategy(1..12), vec(1u32..5, 12), 0.01..100.0f64), |(m, w, c)| {
        let w = &w[..m.len()];
        let scaled: Vec<Metrics> = m.iter().map(|x| Metrics { mse: x.mse * c, ..*x }).collect();
        let doa = opt::aggregate(&m, w, ObjectiveKind::Doa, 0.3).unwrap();
        let doa_c = opt::aggregate(&scaled, w, ObjectiveKind::Doa, 0.3).unwrap();
        prop_assert!((doa_c - c * doa).abs() <= 1e-12 * (c * doa).abs().max(1.0));
        let cls = opt::aggregate(&m, w, ObjectiveKind::Classification, 0.3).unwrap();
        let cls_c = opt::aggregate(&scaled, w, ObjectiveKind::Classification, 0.3).unwrap();
        prop_assert_eq!(cls, cls_c);
        Ok(())
    })
}

// ---------------------------------------------------------------- scene

fn random_spec(seed: u64, max_duration_s: f64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration = (rng.random_range(3.0..max_duration_s) * 1000.0).round() / 1000.0;
    let mut spec = small_scene(seed, duration);
    // One or two utterances leaving at least a second of non-speech.
    let first = rng.random_range(0.2..0.6);
    let len = rng.random_range(0.6..(duration - 1.6) / 2.0);
    spec.speech_intervals = vec![[first, first + len]];
    if rng.random_bool(0.5) {
        let s = first + len + 0.4;
        spec.speech_intervals.push([s, s + len]);
    }
    spec.noise_rms = rng.random_range(0.0..=0.1);
    let speech_end = spec.speech_intervals.last().unwrap()[1];
    spec.distractors = (0..rng.random_range(0..=2))
        .map(|_| Distractor {
            time_s: rng.random_range(speech_end + 0.05..duration - 0.1),
            kind: if rng.random_bool(0.5) { DistractorKind::Click } else { DistractorKind::Burst },
            level: rng.random_range(0.1..0.5),
        })
        .collect();
    spec
}

pub fn scene_determinism() -> Result<(), String> {
    let model = HeadModel::default();
    check(CASES, any::<u64>(), |seed| {
        let spec = random_spec(seed, 3.5);
        let a = scene::render(&spec, &model).unwrap();
        let b = scene::render(&spec, &model).unwrap();
        prop_assert!(a == b);
        Ok(())
    })
}

/// Azimuths whose interaural delay is a whole number of samples, so integer
/// lag resolution can represent them exactly. Plain CC is the probe: on clean
/// scenes PHAT's whitening lifts the noise floor and lands one lag off on
/// roughly one loud frame in two hundred.
pub fn scene_ground_truth() -> Result<(), String> {
    let model = HeadModel::default();
    let config = PipelineConfig::default();
    let max_lag = config.max_lag(&model, SR) as i64;
    check(CASES, (-(max_lag - 1)..max_lag, any::<u64>()), |(k, seed)| {
        let azimuth = head::angle_from_itd(k as f64 / SR, &model).unwrap().azimuth.degrees();
        let spec = scene::clean_static_scene(azimuth, 6.0, seed);
        let rec = scene::render(&spec, &model).unwrap();
        let layout = FramingParams::new(0.1, 1.0).unwrap().layout(rec.audio.len(), SR).unwrap();
        let voiced = |i: usize| {
            let (a, b) = (layout.start_s(i), layout.start_s(i) + layout.frame_duration_s());
            rec.annotation.speech_intervals.iter().any(|[s, e]| *s <= a && b <= *e)
        };
        let power = |i: usize| signal::frame_power(&rec.audio.left().slice(layout.start(i), layout.frame_len));
        let loudest = (0..layout.count).filter(|i| voiced(*i)).map(power).fold(0.0, f64::max);
        prop_assert!(loudest > 0.0);
        for i in (0..layout.count).filter(|i| voiced(*i) && power(*i) > 0.5 * loudest) {
            let r = pipeline::frame_delay(&rec.audio, &layout, i, WeightingKind::PlainCC, max_lag as usize, &config.gcc)
                .unwrap();
            let est = head::angle_from_itd(r.lag_seconds, &model).unwrap().azimuth.degrees();
            prop_assert!((est - azimuth).abs() < 2.0, "frame {i}: {est} vs {azimuth}");
        }
        Ok(())
    })
}

pub fn scene_energy() -> Result<(), String> {
    let model = HeadModel::default();
    check(CASES, any::<u64>(), |seed| {
        let spec = random_spec(seed, 5.0);
        let rec = scene::render(&spec, &model).unwrap();
        let sr = spec.sample_rate_hz;
        let (mut inside, mut outside) = ((0.0, 0usize), (0.0, 0usize));
        for (i, (l, r)) in rec.audio.left().samples().iter().zip(rec.audio.right().samples()).enumerate() {
            let t = i as f64 / sr;
            let e = 0.5 * (l * l + r * r);
            if spec.speech_intervals.iter().any(|[a, b]| t >= *a && t < *b) {
                inside = (inside.0 + e, inside.1 + 1);
            } else {
                outside = (outside.0 + e, outside.1 + 1);
            }
        }
        let rms_in = (inside.0 / inside.1 as f64).sqrt();
        let rms_out = (outside.0 / outside.1 as f64).sqrt();
        prop_assert!(rms_in > rms_out, "{rms_in} vs {rms_out}");
        Ok(())
    })
}

// ---------------------------------------------------------------- cli

fn cli(args: &[&str]) -> i32 {
    doa_lab::cli::run(std::iter::once("doa-lab").chain(args.iter().copied()))
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn cli_reproducible() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let model = HeadModel::default();
    let rec = scene::render(&scene::clean_static_scene(25.0, 1.0, 5), &model).unwrap();
    let wav = dir.path().join("clip.wav");
    doa_lab::wav::write_stereo(&wav, &rec.audio, doa_lab::wav::WavEncoding::Float32).unwrap();
    let half = std::f64::consts::FRAC_PI_2;
    let strat = (params_strategy(), vec((-half..=half, -1e-3..1e-3f64), 1..10), any::<bool>());
    check(CASES, strat, |(p, obs, degrees)| {
        let params = dir.path().join("params.json");
        std::fs::write(&params, serde_json::to_vec(&p).unwrap()).unwrap();
        let mut outputs = Vec::new();
        for round in 0..2 {
            let est = dir.path().join(format!("est{round}.csv"));
            let mut args = vec!["estimate", "--wav", path_str(&wav), "--params", path_str(&params), "--out", path_str(&est)];
            if degrees {
                args.push("--degrees");
            }
            prop_assert_eq!(cli(&args), 0);
            outputs.push(std::fs::read(&est).unwrap());
        }
        let csv = dir.path().join("obs.csv");
        let body: String = obs.iter().map(|(t, tau)| format!("{t},{tau}\n")).collect();
        std::fs::write(&csv, format!("theta_rad,tau_s\n{body}")).unwrap();
        for round in 0..2 {
            let fit = dir.path().join(format!("fit{round}.json"));
            let code = cli(&["calibrate", "--observations", path_str(&csv), "--out", path_str(&fit)]);
            if code == 0 {
                outputs.push(std::fs::read(&fit).unwrap());
            } else {
                outputs.push(code.to_string().into_bytes());
            }
        }
        prop_assert!(outputs[0] == outputs[1]);
        prop_assert!(outputs[2] == outputs[3]);
        Ok(())
    })
}

pub fn cli_exit_codes() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    check(CASES, (0u8..4, vec(any::<u8>(), 0..64), 1usize..6), |(case, garbage, n)| {
        let csv = dir.path().join("obs.csv");
        let missing = dir.path().join("missing.csv");
        let out = dir.path().join("out.json");
        let (body, expected) = match case {
            // Arbitrary bytes are never a valid observation table.
            0 => {
                let mut b = b"nonsense\n".to_vec();
                b.extend(&garbage);
                (b, 2)
            }
            // Header only.
            1 => (b"theta_rad,tau_s\n".to_vec(), 2),
            // All observations at the front carry no information about D.
            2 => ((0..n).fold(b"theta_rad,tau_s\n".to_vec(), |mut b, _| {
                b.extend(b"0.0,0.0\n");
                b
            }), 3),
            _ => (Vec::new(), 2),
        };
        std::fs::write(&csv, body).unwrap();
        let target = if case == 3 { &missing } else { &csv };
        let code = cli(&["calibrate", "--observations", path_str(target), "--out", path_str(&out)]);
        prop_assert_eq!(code, expected, "case {}", case);
        Ok(())
    })
}
