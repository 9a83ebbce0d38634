//! Deterministic signal processing: spectral analysis, inversion, pitch,
//! loudness, degradation and intrusive metrics.

pub mod griffin_lim;
pub mod loudness;
pub mod mel;
pub mod metrics;
pub mod mix;
pub mod pitch;
pub mod reverb;
pub mod stft;
pub mod wav;

pub use griffin_lim::{griffin_lim_invert, griffin_lim_with_phase, PhaseInit};
pub use loudness::rms_loudness;
pub use mel::{mel_spectrogram, MelFilterbank, MelSpectrogram};
pub use metrics::{log_spectral_distance, si_sdr};
pub use mix::{fit_length, measured_snr_db, mix_at_snr, power};
pub use pitch::{estimate_f0_acf, F0_MAX, F0_MIN};
pub use reverb::{apply_rir, c50, synth_rir, ImpulseResponse};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
/// 64 ms Hann window.
pub const WINDOW: usize = 1024;
/// 10 ms hop.
pub const HOP: usize = 160;
pub const N_MELS: usize = 128;
pub const MEL_FMAX: f64 = 8000.0;
/// Floor applied to mel magnitudes before the natural log.
pub const LOG_FLOOR: f64 = 1e-5;
/// Clamp for C50 and SI-SDR, and the "clean" attribute convention.
pub const DB_CLAMP: f64 = 60.0;

/// Mono 16 kHz audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::InvalidInput(format!(
                "sample rate {sample_rate} Hz unsupported, expected {SAMPLE_RATE} Hz"
            )));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn slice(&self, start: usize, end: usize) -> Waveform {
        Waveform {
            samples: self.samples[start..end.min(self.samples.len())].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub(crate) fn require_window(&self) -> Result<()> {
        if self.samples.len() < WINDOW {
            Err(Error::TooShort {
                len: self.samples.len(),
                min: WINDOW,
            })
        } else {
            Ok(())
        }
    }
}

/// Frame index sequence on the mel grid for a signal of `len` samples.
pub fn mel_frames(len: usize) -> usize {
    stft::frame_count(len, HOP)
}
