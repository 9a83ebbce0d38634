use super::stft::{frame_count, reflect_pad};
use super::Waveform;
use crate::error::{Error, Result};

/// Short-time RMS level on centered, reflection-padded frames.
///
/// With `window = 1024, hop = 160` the frame grid is the mel grid.
pub fn rms_loudness(w: &Waveform, window: usize, hop: usize) -> Result<Vec<f64>> {
    if window == 0 || hop == 0 {
        return Err(Error::InvalidInput("window and hop must be >= 1".into()));
    }
    let x = w.samples();
    if x.len() < window.max(2) {
        return Err(Error::TooShort {
            len: x.len(),
            min: window.max(2),
        });
    }
    let padded = reflect_pad(x, window / 2);
    // Prefix sums of squares make each frame O(1).
    let mut cum = Vec::with_capacity(padded.len() + 1);
    cum.push(0.0);
    let mut acc = 0.0;
    for v in &padded {
        acc += v * v;
        cum.push(acc);
    }
    let frames = frame_count(x.len(), hop);
    Ok((0..frames)
        .map(|t| {
            let s = t * hop;
            let e = (s + window).min(padded.len());
            ((cum[e] - cum[s]).max(0.0) / (e - s) as f64).sqrt()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{mel_frames, HOP, WINDOW};

    #[test]
    fn constant_signal() {
        let w = Waveform::from_samples(vec![0.3; 5000]).unwrap();
        for v in rms_loudness(&w, WINDOW, HOP).unwrap() {
            assert!((v - 0.3).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_signal() {
        let w = Waveform::from_samples(vec![0.0; 5000]).unwrap();
        assert!(rms_loudness(&w, WINDOW, HOP).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_rms() {
        let s = (0..16000).map(|i| (i as f64 * 0.0731).sin()).collect();
        let w = Waveform::from_samples(s).unwrap();
        let target = 1.0 / 2f64.sqrt();
        for v in rms_loudness(&w, WINDOW, HOP).unwrap() {
            assert!((v - target).abs() / target < 0.03, "{v}");
        }
    }

    #[test]
    fn grid_matches_mel() {
        let w = Waveform::from_samples(vec![0.1; 12345]).unwrap();
        assert_eq!(rms_loudness(&w, WINDOW, HOP).unwrap().len(), mel_frames(12345));
    }

    #[test]
    fn errors() {
        let w = Waveform::from_samples(vec![0.1; 100]).unwrap();
        assert!(rms_loudness(&w, WINDOW, HOP).is_err());
        assert!(rms_loudness(&w, 0, HOP).is_err());
    }
}
