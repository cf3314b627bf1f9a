//! Mapping between interaural time difference and source azimuth.
//!
//! Two models are provided. The plane-wave model `tau = D sin(theta) / v`
//! ignores the head; the Woodworth-Schlosberg spherical-head model
//! `tau = D / (2 v) * (theta + sin(theta))` adds the path the wavefront
//! travels around the head. The spherical model is the one used to turn
//! measured lags into angles. Azimuths are restricted to the frontal
//! half-plane `[-pi/2, pi/2]`, positive toward the left ear, so that a
//! positive time difference (left leads) maps to a positive angle.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ear-to-ear distance measured on the robot head.
pub const DEFAULT_EAR_DISTANCE_M: f64 = 0.255;
/// Speed of sound in air at 20 degC.
pub const DEFAULT_SPEED_OF_SOUND_MPS: f64 = 343.0;

const ANGLE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeadError {
    #[error("ear distance {0} m outside [0.05, 0.5]")]
    EarDistance(f64),
    #[error("speed of sound {0} m/s must be positive")]
    SpeedOfSound(f64),
    #[error("azimuth {0} rad outside [-pi/2, pi/2]")]
    AzimuthRange(f64),
    #[error("time difference is not finite")]
    NonFiniteItd,
    #[error("ear distance is unidentifiable: every observation has zero azimuth")]
    Unidentifiable,
    #[error("no observations")]
    NoObservations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadModel {
    ear_distance_m: f64,
    speed_of_sound_mps: f64,
}

impl Default for HeadModel {
    fn default() -> Self {
        Self {
            ear_distance_m: DEFAULT_EAR_DISTANCE_M,
            speed_of_sound_mps: DEFAULT_SPEED_OF_SOUND_MPS,
        }
    }
}

impl HeadModel {
    pub fn new(ear_distance_m: f64, speed_of_sound_mps: f64) -> Result<Self, HeadError> {
        if !(0.05..=0.5).contains(&ear_distance_m) {
            return Err(HeadError::EarDistance(ear_distance_m));
        }
        if !(speed_of_sound_mps.is_finite() && speed_of_sound_mps > 0.0) {
            return Err(HeadError::SpeedOfSound(speed_of_sound_mps));
        }
        Ok(Self {
            ear_distance_m,
            speed_of_sound_mps,
        })
    }

    pub fn ear_distance_m(&self) -> f64 {
        self.ear_distance_m
    }

    pub fn speed_of_sound_mps(&self) -> f64 {
        self.speed_of_sound_mps
    }

    /// Time difference for a source at +pi/2 under the spherical model.
    pub fn max_itd(&self) -> f64 {
        itd_woodworth(AzimuthRad::LEFT, self)
    }
}

/// Azimuth in radians, `0` straight ahead, positive to the left.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AzimuthRad(f64);

impl AzimuthRad {
    pub const LEFT: AzimuthRad = AzimuthRad(FRAC_PI_2);
    pub const RIGHT: AzimuthRad = AzimuthRad(-FRAC_PI_2);
    pub const FRONT: AzimuthRad = AzimuthRad(0.0);

    pub fn new(value: f64) -> Result<Self, HeadError> {
        if !value.is_finite() || value.abs() > FRAC_PI_2 + ANGLE_TOLERANCE {
            return Err(HeadError::AzimuthRange(value));
        }
        Ok(Self(value.clamp(-FRAC_PI_2, FRAC_PI_2)))
    }

    pub fn from_degrees(deg: f64) -> Result<Self, HeadError> {
        Self::new(deg.to_radians())
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }
}

impl TryFrom<f64> for AzimuthRad {
    type Error = HeadError;
    fn try_from(v: f64) -> Result<Self, HeadError> {
        AzimuthRad::new(v)
    }
}

impl From<AzimuthRad> for f64 {
    fn from(a: AzimuthRad) -> f64 {
        a.0
    }
}

impl std::ops::Neg for AzimuthRad {
    type Output = AzimuthRad;
    fn neg(self) -> AzimuthRad {
        AzimuthRad(-self.0)
    }
}

/// Plane-wave model, `D sin(theta) / v`.
pub fn itd_simple(theta: AzimuthRad, model: &HeadModel) -> f64 {
    model.ear_distance_m * theta.0.sin() / model.speed_of_sound_mps
}

/// Woodworth-Schlosberg spherical-head model, `D / (2 v) (theta + sin theta)`.
pub fn itd_woodworth(theta: AzimuthRad, model: &HeadModel) -> f64 {
    woodworth_factor(theta.0) * model.ear_distance_m / (2.0 * model.speed_of_sound_mps)
}

fn woodworth_factor(theta: f64) -> f64 {
    theta + theta.sin()
}

/// Result of inverting the spherical model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleEstimate {
    pub azimuth: AzimuthRad,
    /// The time difference exceeded what any frontal source can produce.
    pub clipped: bool,
}

/// Invert [`itd_woodworth`] by bisection; out-of-range differences clamp to +-pi/2.
pub fn angle_from_itd(tau: f64, model: &HeadModel) -> Result<AngleEstimate, HeadError> {
    if !tau.is_finite() {
        return Err(HeadError::NonFiniteItd);
    }
    let max = model.max_itd();
    if tau.abs() >= max {
        let azimuth = if tau > 0.0 { AzimuthRad::LEFT } else { AzimuthRad::RIGHT };
        return Ok(AngleEstimate {
            azimuth,
            clipped: tau.abs() > max,
        });
    }
    let target = tau * 2.0 * model.speed_of_sound_mps / model.ear_distance_m;
    let (mut lo, mut hi) = (-FRAC_PI_2, FRAC_PI_2);
    // 60 halvings of pi take the bracket well below 1e-15 rad.
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if woodworth_factor(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(AngleEstimate {
        azimuth: AzimuthRad(0.5 * (lo + hi)),
        clipped: false,
    })
}

/// One known-angle measurement for [`calibrate_distance`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationObservation {
    pub theta: AzimuthRad,
    pub tau_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub ear_distance_m: f64,
    /// Root-mean-square of `tau_k - tau(theta_k; D)` at the fitted distance.
    pub residual_rms_s: f64,
    pub observations: usize,
}

/// Least-squares ear distance for the spherical model. The model is linear in
/// `D`, so the fit is closed form.
pub fn calibrate_distance(
    observations: &[CalibrationObservation],
    speed_of_sound_mps: f64,
) -> Result<CalibrationFit, HeadError> {
    if observations.is_empty() {
        return Err(HeadError::NoObservations);
    }
    if !(speed_of_sound_mps.is_finite() && speed_of_sound_mps > 0.0) {
        return Err(HeadError::SpeedOfSound(speed_of_sound_mps));
    }
    if observations.iter().any(|o| !o.tau_s.is_finite()) {
        return Err(HeadError::NonFiniteItd);
    }
    let basis = |o: &CalibrationObservation| woodworth_factor(o.theta.0) / (2.0 * speed_of_sound_mps);
    let (num, den) = observations.iter().fold((0.0, 0.0), |(n, d), o| {
        let a = basis(o);
        (n + a * o.tau_s, d + a * a)
    });
    if den == 0.0 {
        return Err(HeadError::Unidentifiable);
    }
    let d = num / den;
    let sse: f64 = observations
        .iter()
        .map(|o| (o.tau_s - d * basis(o)).powi(2))
        .sum();
    Ok(CalibrationFit {
        ear_distance_m: d,
        residual_rms_s: (sse / observations.len() as f64).sqrt(),
        observations: observations.len(),
    })
}
