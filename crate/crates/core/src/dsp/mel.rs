//! Log-mel analysis: 128 HTK-scale triangular bands over 0-8000 Hz, applied to
//! STFT magnitudes, natural log with a floor.

use std::io::{Read, Write};
use std::sync::OnceLock;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;

use super::stft::Stft;
use super::{Waveform, HOP, LOG_FLOOR, MEL_FMAX, N_MELS, SAMPLE_RATE, WINDOW};
use crate::error::{Error, Result};

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Dense triangular filterbank, `n_mels x bins`.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    n_mels: usize,
    bins: usize,
    weights: Vec<f64>,
    centers: Vec<f64>,
    /// Non-zero support per band, `[start, end)`.
    support: Vec<(usize, usize)>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: f64, fmin: f64, fmax: f64) -> Self {
        let bins = n_fft / 2 + 1;
        let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let pts: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut weights = vec![0.0; n_mels * bins];
        let mut support = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (lo, c, hi) = (pts[m], pts[m + 1], pts[m + 2]);
            let mut first = usize::MAX;
            let mut last = 0;
            for k in 0..bins {
                let f = k as f64 * sample_rate / n_fft as f64;
                let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c)).max(0.0);
                if w > 0.0 {
                    weights[m * bins + k] = w;
                    first = first.min(k);
                    last = k + 1;
                }
            }
            support.push(if first == usize::MAX { (0, 0) } else { (first, last) });
        }
        MelFilterbank {
            n_mels,
            bins,
            weights,
            centers: pts[1..=n_mels].to_vec(),
            support,
        }
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Center frequency of each band in Hz.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn weight(&self, band: usize, bin: usize) -> f64 {
        self.weights[band * self.bins + bin]
    }

    /// Apply to one magnitude frame of length `bins`.
    pub fn apply(&self, mag: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            let (s, e) = self.support[m];
            let row = &self.weights[m * self.bins..];
            *o = (s..e).map(|k| row[k] * mag[k]).sum();
        }
    }

    /// Moore-Penrose pseudo-inverse, `bins x n_mels`, row-major.
    pub fn pseudo_inverse(&self) -> Vec<f64> {
        let m = DMatrix::from_row_slice(self.n_mels, self.bins, &self.weights);
        let pinv = m
            .pseudo_inverse(1e-10)
            .expect("pseudo-inverse of a real matrix always exists");
        let mut out = Vec::with_capacity(self.bins * self.n_mels);
        for r in 0..self.bins {
            for c in 0..self.n_mels {
                out.push(pinv[(r, c)]);
            }
        }
        out
    }
}

pub(crate) struct MelAnalyzer {
    pub stft: Stft,
    pub bank: MelFilterbank,
    pinv: OnceLock<Vec<f64>>,
}

impl MelAnalyzer {
    pub fn pinv(&self) -> &[f64] {
        self.pinv.get_or_init(|| self.bank.pseudo_inverse())
    }
}

pub(crate) fn analyzer() -> &'static MelAnalyzer {
    static A: OnceLock<MelAnalyzer> = OnceLock::new();
    A.get_or_init(|| MelAnalyzer {
        stft: Stft::new(WINDOW, HOP),
        bank: MelFilterbank::new(N_MELS, WINDOW, SAMPLE_RATE as f64, 0.0, MEL_FMAX),
        pinv: OnceLock::new(),
    })
}

/// `T x 128` natural-log mel magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    frames: usize,
    data: Vec<f64>,
    pub hop: usize,
    pub window: usize,
}

const MEL_MAGIC: &[u8; 4] = b"AMEL";
const MEL_VERSION: u32 = 1;

impl MelSpectrogram {
    pub fn from_frames(frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * N_MELS {
            return Err(Error::ShapeMismatch(format!(
                "mel data has {} values, expected {} x {N_MELS}",
                data.len(),
                frames
            )));
        }
        if frames == 0 {
            return Err(Error::InvalidInput("mel spectrogram with zero frames".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite mel value".into()));
        }
        Ok(MelSpectrogram {
            frames,
            data,
            hop: HOP,
            window: WINDOW,
        })
    }

    /// A mel whose every entry is the log floor.
    pub fn silent(frames: usize) -> Self {
        MelSpectrogram {
            frames,
            data: vec![LOG_FLOOR.ln(); frames * N_MELS],
            hop: HOP,
            window: WINDOW,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bands(&self) -> usize {
        N_MELS
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * N_MELS..(t + 1) * N_MELS]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * N_MELS..(t + 1) * N_MELS]
    }

    /// Frames `[start, end)`, clipped to the available range.
    pub fn slice(&self, start: usize, end: usize) -> MelSpectrogram {
        let end = end.min(self.frames);
        MelSpectrogram {
            frames: end - start,
            data: self.data[start * N_MELS..end * N_MELS].to_vec(),
            hop: self.hop,
            window: self.window,
        }
    }

    pub fn concat(parts: &[MelSpectrogram]) -> Result<MelSpectrogram> {
        let frames = parts.iter().map(|p| p.frames).sum();
        let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        MelSpectrogram::from_frames(frames, data)
    }

    /// Header: magic, version, T, bands, hop, window (u32 LE), then `T*128` f32 LE.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MEL_MAGIC)?;
        for v in [MEL_VERSION, self.frames as u32, N_MELS as u32, self.hop as u32, self.window as u32] {
            w.write_u32::<LittleEndian>(v)?;
        }
        for &v in &self.data {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let io = |e| Error::Format(format!("mel file: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MEL_MAGIC {
            return Err(Error::Format("mel file: bad magic".into()));
        }
        let mut header = [0u32; 5];
        for h in header.iter_mut() {
            *h = r.read_u32::<LittleEndian>().map_err(io)?;
        }
        let [version, frames, bands, hop, window] = header;
        if version != MEL_VERSION {
            return Err(Error::Format(format!("mel file: unsupported version {version}")));
        }
        if bands as usize != N_MELS || hop as usize != HOP || window as usize != WINDOW {
            return Err(Error::Format(format!(
                "mel file: bands/hop/window {bands}/{hop}/{window} unsupported"
            )));
        }
        let mut data = Vec::with_capacity(frames as usize * N_MELS);
        for _ in 0..frames as usize * N_MELS {
            data.push(r.read_f32::<LittleEndian>().map_err(io)? as f64);
        }
        MelSpectrogram::from_frames(frames as usize, data)
    }
}

/// Log-mel spectrogram of `w` on the shared centered frame grid.
pub fn mel_spectrogram(w: &Waveform) -> Result<MelSpectrogram> {
    w.require_window()?;
    let a = analyzer();
    let spec = a.stft.forward(w.samples())?;
    let mut data = vec![0.0; spec.frames * N_MELS];
    let mut mag = vec![0.0; spec.bins];
    for t in 0..spec.frames {
        for (m, c) in mag.iter_mut().zip(spec.frame(t)) {
            *m = c.norm();
        }
        let out = &mut data[t * N_MELS..(t + 1) * N_MELS];
        a.bank.apply(&mag, out);
        for v in out.iter_mut() {
            *v = v.max(LOG_FLOOR).ln();
        }
    }
    MelSpectrogram::from_frames(spec.frames, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, amp: f64, n: usize) -> Waveform {
        let s = (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        Waveform::from_samples(s).unwrap()
    }

    #[test]
    fn one_second_shape() {
        let m = mel_spectrogram(&sine(440.0, 0.5, 16000)).unwrap();
        assert_eq!(m.bands(), 128);
        assert!((94..=101).contains(&m.frames()), "{}", m.frames());
    }

    #[test]
    fn zero_input_hits_floor() {
        let w = Waveform::from_samples(vec![0.0; 4000]).unwrap();
        let m = mel_spectrogram(&w).unwrap();
        assert!(m.data().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn sine_peaks_in_nearest_band() {
        let bank = &analyzer().bank;
        // Oracle: band whose center frequency is nearest 1 kHz.
        let expected = bank
            .centers()
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        let m = mel_spectrogram(&sine(1000.0, 0.5, 16000)).unwrap();
        let frame = m.frame(50);
        let argmax = (0..128).max_by(|&a, &b| frame[a].total_cmp(&frame[b])).unwrap();
        assert_eq!(argmax, expected);
    }

    #[test]
    fn every_band_has_support() {
        let bank = &analyzer().bank;
        for b in 0..128 {
            assert!((0..bank.bins()).any(|k| bank.weight(b, k) > 0.0), "band {b} empty");
        }
    }

    #[test]
    fn short_signal_rejected() {
        let w = Waveform::from_samples(vec![0.1; 500]).unwrap();
        assert!(matches!(mel_spectrogram(&w), Err(Error::TooShort { .. })));
    }

    #[test]
    fn binary_roundtrip() {
        let m = mel_spectrogram(&sine(300.0, 0.3, 4000)).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 20 + m.frames() * 128 * 4);
        let back = MelSpectrogram::read_from(&buf[..]).unwrap();
        assert_eq!(back.frames(), m.frames());
        for (a, b) in back.data().iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        buf[0] = b'X';
        assert!(MelSpectrogram::read_from(&buf[..]).is_err());
    }
}
