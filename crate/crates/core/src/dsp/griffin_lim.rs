//! Mel inversion: pseudo-inverse of the filterbank to recover a linear
//! magnitude, then Griffin-Lim phase retrieval.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::mel::{analyzer, MelSpectrogram};
use super::stft::Spectrum;
use super::{Waveform, HOP, LOG_FLOOR};
use crate::error::{Error, Result};

pub const DEFAULT_PHASE_SEED: u64 = 0x5eed;

/// Starting phase for the iteration.
#[derive(Clone, Debug)]
pub enum PhaseInit<'a> {
    /// Uniform random phase from a fixed seed.
    Random(u64),
    /// STFT phase of a reference signal on the same frame grid.
    FromSignal(&'a Waveform),
}

/// Linear STFT magnitude estimated from a log-mel spectrogram.
pub fn mel_to_linear(mel: &MelSpectrogram) -> Vec<f64> {
    let a = analyzer();
    let pinv = a.pinv();
    let bins = a.bank.bins();
    let n_mels = a.bank.n_mels();
    let mut out = vec![0.0; mel.frames() * bins];
    let mut lin_mel = vec![0.0; n_mels];
    for t in 0..mel.frames() {
        for (l, &v) in lin_mel.iter_mut().zip(mel.frame(t)) {
            // The floor maps back to exactly zero.
            *l = (v.exp() - LOG_FLOOR).max(0.0);
        }
        let row = &mut out[t * bins..(t + 1) * bins];
        for (k, r) in row.iter_mut().enumerate() {
            let p = &pinv[k * n_mels..(k + 1) * n_mels];
            let v: f64 = p.iter().zip(&lin_mel).map(|(a, b)| a * b).sum();
            *r = v.max(0.0);
        }
    }
    out
}

/// Griffin-Lim inversion from a fixed random phase seed.
pub fn griffin_lim_invert(mel: &MelSpectrogram, iters: usize) -> Result<Waveform> {
    griffin_lim_with_phase(mel, iters, PhaseInit::Random(DEFAULT_PHASE_SEED))
}

pub fn griffin_lim_with_phase(
    mel: &MelSpectrogram,
    iters: usize,
    init: PhaseInit<'_>,
) -> Result<Waveform> {
    if iters == 0 {
        return Err(Error::InvalidInput("griffin-lim needs at least one iteration".into()));
    }
    let stft = &analyzer().stft;
    let bins = stft.bins();
    let frames = mel.frames();
    let len = frames * HOP;
    let mag = mel_to_linear(mel);

    let mut spec = Spectrum {
        frames,
        bins,
        data: vec![Complex64::new(0.0, 0.0); frames * bins],
    };
    match init {
        PhaseInit::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (c, &m) in spec.data.iter_mut().zip(&mag) {
                let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                *c = Complex64::from_polar(m, phi);
            }
        }
        PhaseInit::FromSignal(reference) => {
            let mut samples = reference.samples().to_vec();
            samples.resize(len.max(stft.n_fft()), 0.0);
            let r = stft.forward(&samples)?;
            for t in 0..frames {
                let src = if t < r.frames { r.frame(t) } else { r.frame(r.frames - 1) };
                for k in 0..bins {
                    let m = mag[t * bins + k];
                    let p = src[k];
                    spec.data[t * bins + k] = if p.norm() > 0.0 {
                        p * (m / p.norm())
                    } else {
                        Complex64::new(m, 0.0)
                    };
                }
            }
        }
    }

    if len < stft.n_fft() {
        return Err(Error::TooShort {
            len,
            min: stft.n_fft(),
        });
    }
    for _ in 0..iters {
        let x = stft.inverse(&spec, len);
        let rebuilt = stft.forward(&x)?;
        for ((c, r), &m) in spec.data.iter_mut().zip(&rebuilt.data).zip(&mag) {
            let n = r.norm();
            *c = if n > 1e-12 { r * (m / n) } else { Complex64::new(m, 0.0) };
        }
    }
    Waveform::from_samples(stft.inverse(&spec, len))
}
