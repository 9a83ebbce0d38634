//! Normalized-autocorrelation pitch tracker on the mel frame grid.
//!
//! For each centered 1024-sample frame the normalized cross-correlation
//! `r(tau) = sum x[n] x[n+tau] / sqrt(E_head(tau) E_tail(tau))` is evaluated
//! over the lag range of `[fmin, fmax]`. A frame is voiced when its best local
//! maximum reaches 0.5. To avoid sub-octave picks, the shortest lag whose local
//! maximum is within 97 % of the best one is kept, then refined by parabolic
//! interpolation.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::stft::{frame_count, reflect_pad};
use super::{Waveform, HOP, WINDOW};
use crate::error::{Error, Result};

pub const F0_MIN: f64 = 50.0;
pub const F0_MAX: f64 = 550.0;
pub const VOICING_THRESHOLD: f64 = 0.5;
const OCTAVE_RATIO: f64 = 0.97;
const SILENCE_RMS: f64 = 1e-4;

pub fn estimate_f0_acf(w: &Waveform, fmin: f64, fmax: f64) -> Result<Vec<f64>> {
    let sr = w.sample_rate() as f64;
    if !(fmin > 0.0 && fmin < fmax && fmax < sr / 2.0) {
        return Err(Error::InvalidInput(format!(
            "pitch range must satisfy 0 < fmin < fmax < {}; got [{fmin}, {fmax}]",
            sr / 2.0
        )));
    }
    w.require_window()?;
    let lag_min = (sr / fmax).floor().max(2.0) as usize;
    let lag_max = ((sr / fmin).ceil() as usize).min(WINDOW - 2);
    let x = w.samples();
    let padded = reflect_pad(x, WINDOW / 2);
    let frames = frame_count(x.len(), HOP);

    let nfft = (2 * WINDOW).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(nfft);
    let ifft = planner.plan_fft_inverse(nfft);
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let mut frame = vec![0.0; WINDOW];
    let mut cum = vec![0.0; WINDOW + 1];
    let mut r = vec![0.0; lag_max + 2];

    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let seg = &padded[t * HOP..t * HOP + WINDOW];
        let mean = seg.iter().sum::<f64>() / WINDOW as f64;
        for (f, s) in frame.iter_mut().zip(seg) {
            *f = s - mean;
        }
        let energy: f64 = frame.iter().map(|v| v * v).sum();
        if (energy / WINDOW as f64).sqrt() < SILENCE_RMS {
            out.push(0.0);
            continue;
        }
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(if i < WINDOW { frame[i] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        for b in buf.iter_mut() {
            *b = Complex64::new(b.norm_sqr(), 0.0);
        }
        ifft.process(&mut buf);
        for i in 0..WINDOW {
            cum[i + 1] = cum[i] + frame[i] * frame[i];
        }
        for (lag, rv) in r.iter_mut().enumerate().skip(lag_min - 1) {
            let head = cum[WINDOW - lag];
            let tail = cum[WINDOW] - cum[lag];
            let denom = (head * tail).sqrt();
            *rv = if denom > 0.0 {
                buf[lag].re / nfft as f64 / denom
            } else {
                0.0
            };
        }
        out.push(pick_f0(&r, lag_min, lag_max, sr, fmin, fmax));
    }
    Ok(out)
}

fn pick_f0(r: &[f64], lag_min: usize, lag_max: usize, sr: f64, fmin: f64, fmax: f64) -> f64 {
    let peaks: Vec<usize> = (lag_min..=lag_max)
        .filter(|&l| r[l] >= r[l - 1] && r[l] > r[l + 1])
        .collect();
    let best = peaks.iter().map(|&l| r[l]).fold(f64::NEG_INFINITY, f64::max);
    if peaks.is_empty() || best < VOICING_THRESHOLD {
        return 0.0;
    }
    let lag = peaks
        .into_iter()
        .find(|&l| r[l] >= OCTAVE_RATIO * best)
        .expect("the best peak itself qualifies");
    let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
    let denom = a - 2.0 * b + c;
    let delta = if denom.abs() > 1e-12 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let f0 = sr / (lag as f64 + delta);
    if f0 < fmin || f0 > fmax {
        0.0
    } else {
        f0
    }
}
