//! Centered short-time Fourier transform with reflection padding.
//!
//! Frame `t` is centered on sample `t * hop`. A signal of `len` samples yields
//! `ceil(len / hop)` frames, i.e. every frame whose center lies inside the
//! signal. Mel, loudness and pitch tracks all share this grid.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of centered frames for a signal of `len` samples.
pub fn frame_count(len: usize, hop: usize) -> usize {
    len.div_ceil(hop)
}

/// Reflect-pad (numpy "reflect", edge sample not repeated).
pub fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    let reflect = |i: isize| -> f64 {
        // Bounce back and forth until inside [0, n).
        let period = 2 * (n as isize - 1);
        let mut j = i.rem_euclid(period.max(1));
        if j >= n as isize {
            j = period - j;
        }
        x[j as usize]
    };
    for i in 0..(n + 2 * pad) {
        out.push(reflect(i as isize - pad as isize));
    }
    out
}

/// Complex STFT matrix, row-major `frames x bins`.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

#[derive(Clone)]
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("n_fft", &self.n_fft)
            .field("hop", &self.hop)
            .finish()
    }
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Stft {
            n_fft,
            hop,
            window: hann(n_fft),
            fft: planner.plan_fft_forward(n_fft),
            ifft: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn forward(&self, x: &[f64]) -> Result<Spectrum> {
        if x.len() < self.n_fft {
            return Err(Error::TooShort {
                len: x.len(),
                min: self.n_fft,
            });
        }
        let frames = frame_count(x.len(), self.hop);
        let padded = reflect_pad(x, self.n_fft / 2);
        let bins = self.bins();
        let mut data = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            let start = t * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(padded[start + i] * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            data.extend_from_slice(&buf[..bins]);
        }
        Ok(Spectrum { frames, bins, data })
    }

    /// Weighted overlap-add inverse; returns exactly `len` samples.
    pub fn inverse(&self, spec: &Spectrum, len: usize) -> Vec<f64> {
        let n = self.n_fft;
        let pad = n / 2;
        let total = (spec.frames.saturating_sub(1)) * self.hop + n;
        let mut acc = vec![0.0; total.max(len + 2 * pad)];
        let mut wsum = vec![0.0; acc.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.ifft.get_inplace_scratch_len()];
        let scale = 1.0 / n as f64;
        for t in 0..spec.frames {
            let frame = spec.frame(t);
            buf[..spec.bins].copy_from_slice(frame);
            for k in 1..(n - spec.bins + 1) {
                buf[n - k] = frame[k].conj();
            }
            // DC and Nyquist must be real for a real signal.
            buf[0].im = 0.0;
            buf[n / 2].im = 0.0;
            self.ifft.process_with_scratch(&mut buf, &mut scratch);
            let start = t * self.hop;
            for i in 0..n {
                let w = self.window[i];
                acc[start + i] += buf[i].re * scale * w;
                wsum[start + i] += w * w;
            }
        }
        (0..len)
            .map(|i| {
                let j = i + pad;
                if wsum[j] > 1e-10 {
                    acc[j] / wsum[j]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_grid_is_center_aligned() {
        assert_eq!(frame_count(16000, 160), 100);
        assert_eq!(frame_count(32000, 160), 200);
        assert_eq!(frame_count(32001, 160), 201);
    }

    #[test]
    fn reflect_pad_matches_numpy() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(reflect_pad(&x, 2), vec![3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]);
    }

    #[test]
    fn stft_inverse_reconstructs() {
        let stft = Stft::new(1024, 160);
        let x: Vec<f64> = (0..8000)
            .map(|i| (i as f64 * 0.031).sin() + 0.3 * (i as f64 * 0.173).cos())
            .collect();
        let spec = stft.forward(&x).unwrap();
        let y = stft.inverse(&spec, x.len());
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "max error {err}");
    }

    #[test]
    fn too_short_is_rejected() {
        let stft = Stft::new(1024, 160);
        assert!(matches!(stft.forward(&[0.0; 1000]), Err(Error::TooShort { .. })));
    }
}
