//! 16 kHz mono 16-bit PCM WAV I/O. Other formats are rejected, not resampled.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!(
            "{}: {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Format(format!(
            "{}: {} Hz, expected {SAMPLE_RATE} Hz",
            path.display(),
            spec.sample_rate
        )));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "{}: {bits}-bit {fmt:?} samples unsupported",
                path.display()
            )))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM; samples are clipped to [-1, 1).
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in w.samples() {
        writer.write_sample(to_i16(s))?;
    }
    writer.finalize()?;
    Ok(())
}

pub fn to_i16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}
