//! WAV reading and writing (16-bit PCM and 32-bit float, mono or stereo).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use thiserror::Error;

use crate::signal::{MonoSignal, SignalError, StereoSignal};

#[derive(Debug, Error)]
pub enum WavError {
    #[error("wav: {0}")]
    Hound(#[from] hound::Error),
    #[error("unsupported wav layout: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Sample encoding used when writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

/// Channels as read from disk, before any stereo requirement is applied.
#[derive(Debug, Clone, PartialEq)]
pub enum WavAudio {
    Mono(MonoSignal),
    Stereo(StereoSignal),
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<WavAudio, WavError> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        (SampleFormat::Int, bits @ 8..=32) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<Result<_, _>>()?
        }
        (format, bits) => {
            return Err(WavError::Unsupported(format!("{format:?} at {bits} bits")));
        }
    };
    let rate = spec.sample_rate as f64;
    match spec.channels {
        1 => Ok(WavAudio::Mono(MonoSignal::new(interleaved, rate)?)),
        2 => {
            let left = interleaved.iter().step_by(2).copied().collect();
            let right = interleaved.iter().skip(1).step_by(2).copied().collect();
            Ok(WavAudio::Stereo(StereoSignal::new(
                MonoSignal::new(left, rate)?,
                MonoSignal::new(right, rate)?,
            )?))
        }
        n => Err(WavError::Unsupported(format!("{n} channels"))),
    }
}

/// Read a file that must be stereo.
pub fn read_stereo(path: impl AsRef<Path>) -> Result<StereoSignal, WavError> {
    match read_wav(path)? {
        WavAudio::Stereo(s) => Ok(s),
        WavAudio::Mono(_) => Err(WavError::Unsupported("expected 2 channels, found 1".into())),
    }
}

pub fn write_stereo(path: impl AsRef<Path>, audio: &StereoSignal, encoding: WavEncoding) -> Result<(), WavError> {
    let frames: Vec<[f64; 2]> = audio
        .left()
        .samples()
        .iter()
        .zip(audio.right().samples())
        .map(|(l, r)| [*l, *r])
        .collect();
    write_interleaved(path, 2, audio.sample_rate(), frames.iter().flatten().copied(), encoding)
}

pub fn write_mono(path: impl AsRef<Path>, audio: &MonoSignal, encoding: WavEncoding) -> Result<(), WavError> {
    write_interleaved(path, 1, audio.sample_rate(), audio.samples().iter().copied(), encoding)
}

fn write_interleaved(
    path: impl AsRef<Path>,
    channels: u16,
    sample_rate: f64,
    samples: impl Iterator<Item = f64>,
    encoding: WavEncoding,
) -> Result<(), WavError> {
    if sample_rate.fract() != 0.0 || sample_rate > u32::MAX as f64 {
        return Err(WavError::Unsupported(format!("sample rate {sample_rate}")));
    }
    let spec = WavSpec {
        channels,
        sample_rate: sample_rate as u32,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec)?;
    for s in samples {
        match encoding {
            WavEncoding::Pcm16 => {
                writer.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16)?
            }
            WavEncoding::Float32 => writer.write_sample(s as f32)?,
        }
    }
    writer.finalize()?;
    Ok(())
}
