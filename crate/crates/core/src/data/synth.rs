//! Synthetic vowel speech: additive harmonics shaped by speaker-scaled
//! formants, piecewise-linear f0, and silences. Also the colored-noise bank.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{Waveform, HOP, SAMPLE_RATE, WINDOW};
use crate::error::{Error, Result};

pub const F0_LOW: f64 = 80.0;
pub const F0_HIGH: f64 = 300.0;
const TARGET_RMS: f64 = 0.05;
const RAMP: usize = 160;
const BLOCK: usize = 32;

/// Formant frequencies (Hz) of the five vowels.
pub const VOWELS: [(char, [f64; 3]); 5] = [
    ('a', [730.0, 1090.0, 2440.0]),
    ('e', [530.0, 1840.0, 2480.0]),
    ('i', [270.0, 2290.0, 3010.0]),
    ('o', [570.0, 840.0, 2410.0]),
    ('u', [300.0, 870.0, 2240.0]),
];
const BANDWIDTHS: [f64; 3] = [90.0, 110.0, 170.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerPreset {
    pub label: u32,
    pub name: String,
    pub formant_scale: f64,
    pub bandwidth_scale: f64,
    /// Per-harmonic amplitude decay.
    pub tilt: f64,
    /// Typical f0 in Hz.
    pub f0_base: f64,
}

impl SpeakerPreset {
    /// Deterministic preset for speaker `label` (1-based).
    pub fn generate(label: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (label as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        SpeakerPreset {
            label,
            name: format!("spk{label:03}"),
            formant_scale: rng.gen_range(0.85..1.2),
            bandwidth_scale: rng.gen_range(0.8..1.3),
            tilt: rng.gen_range(0.82..0.93),
            f0_base: rng.gen_range(105.0..215.0),
        }
    }
}

/// One piece of an utterance plan.
#[derive(Clone, Debug, PartialEq)]
enum Piece {
    Vowel { vowel: usize, len: usize },
    Silence { len: usize },
}

#[derive(Clone, Debug)]
pub struct SynthUtterance {
    pub audio: Waveform,
    /// Programmed f0 on the mel frame grid; 0 unless the whole analysis
    /// window is voiced.
    pub f0: Vec<f64>,
    pub vowels: String,
}

/// Synthesizes `duration` seconds of vowel speech for `spk`.
pub fn synth_utterance(spk: &SpeakerPreset, duration: f64, rng: &mut impl Rng) -> Result<SynthUtterance> {
    let n = (duration * SAMPLE_RATE as f64).round() as usize;
    if n < 4 * 1024 {
        return Err(Error::InvalidInput(format!("utterance of {duration} s is too short")));
    }
    // plan: leading silence, vowels separated by occasional silences
    let mut plan = vec![Piece::Silence { len: rng.gen_range(800..2400) }];
    let mut used = match plan[0] {
        Piece::Silence { len } => len,
        _ => 0,
    };
    let mut vowels = String::new();
    while used < n {
        let len = rng.gen_range(2400..6400);
        let v = rng.gen_range(0..VOWELS.len());
        vowels.push(VOWELS[v].0);
        plan.push(Piece::Vowel { vowel: v, len });
        used += len;
        if rng.gen_bool(0.4) {
            let len = rng.gen_range(1600..4000);
            plan.push(Piece::Silence { len });
            used += len;
        }
    }

    // per-sample voicing, vowel index and breakpoints for f0
    let mut vowel_at = vec![usize::MAX; n];
    let mut gain = vec![0.0f64; n];
    let mut pos = 0;
    for piece in &plan {
        match *piece {
            Piece::Silence { len } => pos += len,
            Piece::Vowel { vowel, len } => {
                let end = (pos + len).min(n);
                for i in pos..end {
                    vowel_at[i] = vowel;
                    let k = (i - pos).min(end - 1 - i);
                    gain[i] = if k < RAMP { 0.5 - 0.5 * (PI * k as f64 / RAMP as f64).cos() } else { 1.0 };
                }
                pos = end;
            }
        }
        if pos >= n {
            break;
        }
    }
    let mut knots = vec![(0usize, (spk.f0_base * rng.gen_range(0.8..1.25)).clamp(F0_LOW, F0_HIGH))];
    let mut k = 0;
    while k < n {
        k += rng.gen_range(4800..9600);
        knots.push((k.min(n), (spk.f0_base * rng.gen_range(0.85..1.18)).clamp(F0_LOW, F0_HIGH)));
    }
    let contour = |i: usize| -> f64 {
        let j = knots.iter().position(|&(s, _)| s > i).unwrap_or(knots.len() - 1).max(1);
        let (s0, v0) = knots[j - 1];
        let (s1, v1) = knots[j];
        if s1 == s0 {
            v1
        } else {
            v0 + (v1 - v0) * (i - s0) as f64 / (s1 - s0) as f64
        }
    };

    // formants follow their targets through a one-pole smoother (~7.5 ms)
    let glide = 1.0 / 120.0;
    let mut formants = vec![[0.0f64; 3]; n];
    let mut current = VOWELS[plan
        .iter()
        .find_map(|p| match p {
            Piece::Vowel { vowel, .. } => Some(*vowel),
            _ => None,
        })
        .unwrap_or(0)]
    .1;
    for i in 0..n {
        if vowel_at[i] != usize::MAX {
            let target = VOWELS[vowel_at[i]].1;
            for j in 0..3 {
                current[j] += (target[j] - current[j]) * glide;
            }
        }
        for j in 0..3 {
            formants[i][j] = current[j] * spk.formant_scale;
        }
    }

    let nyq = SAMPLE_RATE as f64 / 2.0 - 200.0;
    let mut phase = 0.0f64;
    let mut out = vec![0.0f64; n];
    let mut amps: Vec<f64> = Vec::new();
    for start in (0..n).step_by(BLOCK) {
        let end = (start + BLOCK).min(n);
        let mid = (start + end) / 2;
        let f0_mid = contour(mid);
        let harmonics = (nyq / f0_mid).floor() as usize;
        amps.clear();
        for h in 1..=harmonics {
            let f = h as f64 * f0_mid;
            let mut g = 0.02;
            for j in 0..3 {
                let b = BANDWIDTHS[j] * spk.bandwidth_scale;
                let x = (f - formants[mid][j]) / (0.5 * b);
                g += [1.0, 0.7, 0.4][j] / (1.0 + x * x);
            }
            amps.push(g * spk.tilt.powi(h as i32 - 1));
        }
        for i in start..end {
            phase += 2.0 * PI * contour(i) / SAMPLE_RATE as f64;
            if gain[i] == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for (h, a) in amps.iter().enumerate() {
                s += a * ((h + 1) as f64 * phase).sin();
            }
            out[i] = gain[i] * s;
        }
        phase %= 2.0 * PI * 1e6;
    }
    let voiced: Vec<f64> = out.iter().zip(&gain).filter(|(_, &g)| g > 0.0).map(|(v, _)| *v).collect();
    let rms = crate::dsp::power(&voiced).sqrt();
    if rms > 0.0 {
        for v in out.iter_mut() {
            *v *= TARGET_RMS / rms;
        }
    }
    let frames = crate::dsp::mel_frames(n);
    let f0 = (0..frames)
        .map(|t| {
            let c = (t * HOP).min(n - 1);
            let lo = c.saturating_sub(WINDOW / 2);
            let hi = (c + WINDOW / 2).min(n);
            if gain[lo..hi].iter().all(|&g| g >= 1.0) {
                contour(c)
            } else {
                0.0
            }
        })
        .collect();
    Ok(SynthUtterance {
        audio: Waveform::from_samples(out)?,
        f0,
        vowels,
    })
}

/// Kinds of noise in the synthetic bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    White,
    Pink,
    Brown,
    /// Band-limited noise around a random center.
    Band,
    /// Mains-like hum with harmonics plus a little white noise.
    Hum,
}

pub const NOISE_KINDS: [NoiseKind; 5] = [
    NoiseKind::White,
    NoiseKind::Pink,
    NoiseKind::Brown,
    NoiseKind::Band,
    NoiseKind::Hum,
];

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Brown => "brown",
            NoiseKind::Band => "band",
            NoiseKind::Hum => "hum",
        }
    }
}

/// Unit-power noise of `len` samples, shaped in the frequency domain.
pub fn colored_noise(kind: NoiseKind, len: usize, rng: &mut impl Rng) -> Waveform {
    let n = len.next_power_of_two().max(2);
    let sr = SAMPLE_RATE as f64;
    let mut spec: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let center = rng.gen_range(300.0..4000.0);
    let hum = rng.gen_range(50.0..120.0);
    for (k, c) in spec.iter_mut().enumerate() {
        let bin = if k <= n / 2 { k } else { n - k };
        let f = (bin as f64 * sr / n as f64).max(20.0);
        let g = match kind {
            NoiseKind::White | NoiseKind::Hum => 1.0,
            NoiseKind::Pink => f.powf(-0.5),
            NoiseKind::Brown => 1.0 / f,
            NoiseKind::Band => (-((f - center) / (0.3 * center)).powi(2)).exp(),
        };
        *c *= g;
    }
    let fft = FftPlanner::new().plan_fft_inverse(n);
    fft.process(&mut spec);
    let mut x: Vec<f64> = spec[..len].iter().map(|c| c.re).collect();
    if kind == NoiseKind::Hum {
        let p = crate::dsp::power(&x).sqrt().max(1e-12);
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64 / sr;
            let tone: f64 = (1..6).map(|h| (2.0 * PI * hum * h as f64 * t).sin() / h as f64).sum();
            *v = 0.1 * *v / p + tone;
        }
    }
    let p = crate::dsp::power(&x).sqrt().max(1e-12);
    Waveform::from_samples(x.into_iter().map(|v| v / p).collect()).expect("finite noise")
}
