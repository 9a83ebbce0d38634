//! The six attribute tracks of an utterance segment: content units, f0,
//! loudness, speaker, SNR and C50.

use std::io::{BufRead, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::dsp::mel::MelFilterbank;
use crate::dsp::stft::Stft;
use crate::dsp::{
    estimate_f0_acf, rms_loudness, Waveform, DB_CLAMP, F0_MAX, F0_MIN, HOP, LOG_FLOOR, MEL_FMAX,
    SAMPLE_RATE, WINDOW,
};
use crate::error::{Error, Result};

/// Content frames are computed at half the mel frame rate.
pub const CONTENT_HOP: usize = 2 * HOP;
pub const CONTENT_DIM: usize = 13;
/// Filterbank size for the cepstra.
pub const CONTENT_MELS: usize = 26;
pub const MEL_RATE: f64 = SAMPLE_RATE as f64 / HOP as f64;
pub const CONTENT_RATE: f64 = SAMPLE_RATE as f64 / CONTENT_HOP as f64;

/// What the degradation step did to an utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationMeta {
    pub true_snr_db: f64,
    pub true_c50_db: f64,
    pub noise_id: String,
    pub rir_id: String,
}

impl DegradationMeta {
    /// No noise, no reverberation.
    pub fn clean() -> Self {
        DegradationMeta {
            true_snr_db: DB_CLAMP,
            true_c50_db: DB_CLAMP,
            noise_id: "none".into(),
            rir_id: "none".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.true_snr_db.is_finite() || !self.true_c50_db.is_finite() {
            return Err(Error::InvalidInput("degradation meta must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeSet {
    /// `T1 x 13` pseudo-content frames.
    pub content: Vec<Vec<f64>>,
    pub content_rate: f64,
    /// Hz, 0 for unvoiced frames.
    pub f0: Vec<f64>,
    pub loudness: Vec<f64>,
    /// 1-based speaker label.
    pub speaker: u32,
    pub snr: Vec<f64>,
    pub c50: Vec<f64>,
    /// Rate of f0, loudness, snr and c50 (the mel grid).
    pub frame_rate: f64,
}

impl AttributeSet {
    pub fn frames(&self) -> usize {
        self.f0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.f0.len();
        if self.loudness.len() != t || self.snr.len() != t || self.c50.len() != t {
            return Err(Error::ShapeMismatch(format!(
                "track lengths differ: f0 {t}, loudness {}, snr {}, c50 {}",
                self.loudness.len(),
                self.snr.len(),
                self.c50.len()
            )));
        }
        if self.content.iter().any(|r| r.len() != CONTENT_DIM) {
            return Err(Error::ShapeMismatch("content frames must have 13 coefficients".into()));
        }
        if self
            .f0
            .iter()
            .any(|&f| !(f == 0.0 || (F0_MIN..=F0_MAX).contains(&f)))
        {
            return Err(Error::InvalidInput("f0 outside {0} U [50, 550]".into()));
        }
        if self.loudness.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput("loudness must be finite and >= 0".into()));
        }
        let in_db = |v: &f64| (-DB_CLAMP..=DB_CLAMP).contains(v);
        if !self.snr.iter().all(in_db) || !self.c50.iter().all(in_db) {
            return Err(Error::InvalidInput("snr/c50 outside [-60, 60]".into()));
        }
        Ok(())
    }

    /// Writes one JSON object per track.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        let line = |w: &mut dyn Write, v: serde_json::Value| -> Result<()> {
            serde_json::to_writer(&mut *w, &v)?;
            w.write_all(b"\n").map_err(|e| Error::io("<sidecar>", e))
        };
        line(
            &mut w,
            serde_json::json!({"track": "content", "frame_rate": self.content_rate, "dim": CONTENT_DIM, "values": self.content}),
        )?;
        for (name, values) in [("f0", &self.f0), ("loudness", &self.loudness)] {
            line(
                &mut w,
                serde_json::json!({"track": name, "frame_rate": self.frame_rate, "values": values}),
            )?;
        }
        line(
            &mut w,
            serde_json::json!({"track": "speaker", "frame_rate": 0.0, "values": [self.speaker]}),
        )?;
        for (name, values) in [("snr", &self.snr), ("c50", &self.c50)] {
            line(
                &mut w,
                serde_json::json!({"track": name, "frame_rate": self.frame_rate, "values": values}),
            )?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        #[derive(Deserialize)]
        struct Line {
            track: String,
            frame_rate: f64,
            values: serde_json::Value,
        }
        let mut set = AttributeSet {
            content: Vec::new(),
            content_rate: CONTENT_RATE,
            f0: Vec::new(),
            loudness: Vec::new(),
            speaker: 0,
            snr: Vec::new(),
            c50: Vec::new(),
            frame_rate: MEL_RATE,
        };
        let mut seen = 0u8;
        for line in r.lines() {
            let line = line.map_err(|e| Error::io("<sidecar>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(&line)?;
            let v = l.values;
            match l.track.as_str() {
                "content" => {
                    set.content = serde_json::from_value(v)?;
                    set.content_rate = l.frame_rate;
                    seen |= 1;
                }
                "f0" => {
                    set.f0 = serde_json::from_value(v)?;
                    set.frame_rate = l.frame_rate;
                    seen |= 2;
                }
                "loudness" => {
                    set.loudness = serde_json::from_value(v)?;
                    seen |= 4;
                }
                "speaker" => {
                    let s: Vec<u32> = serde_json::from_value(v)?;
                    set.speaker = *s
                        .first()
                        .ok_or_else(|| Error::Format("empty speaker track".into()))?;
                    seen |= 8;
                }
                "snr" => {
                    set.snr = serde_json::from_value(v)?;
                    seen |= 16;
                }
                "c50" => {
                    set.c50 = serde_json::from_value(v)?;
                    seen |= 32;
                }
                other => return Err(Error::Format(format!("unknown track {other:?}"))),
            }
        }
        if seen != 63 {
            return Err(Error::Format("attribute sidecar is missing tracks".into()));
        }
        Ok(set)
    }
}

struct ContentAnalyzer {
    stft: Stft,
    bank: MelFilterbank,
    dct: Vec<f64>,
}

fn content_analyzer() -> &'static ContentAnalyzer {
    static A: OnceLock<ContentAnalyzer> = OnceLock::new();
    A.get_or_init(|| {
        // orthonormal DCT-II, first 13 rows
        let n = CONTENT_MELS as f64;
        let mut dct = Vec::with_capacity(CONTENT_DIM * CONTENT_MELS);
        for k in 0..CONTENT_DIM {
            let s = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for i in 0..CONTENT_MELS {
                dct.push(s * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n).cos());
            }
        }
        ContentAnalyzer {
            stft: Stft::new(WINDOW, CONTENT_HOP),
            bank: MelFilterbank::new(CONTENT_MELS, WINDOW, SAMPLE_RATE as f64, 0.0, MEL_FMAX),
            dct,
        }
    })
}

/// 13 MFCCs per frame at 50 Hz.
pub fn content_units(clean: &Waveform) -> Result<Vec<Vec<f64>>> {
    clean.require_window()?;
    let a = content_analyzer();
    let spec = a.stft.forward(clean.samples())?;
    let mut mag = vec![0.0; spec.bins];
    let mut mel = vec![0.0; CONTENT_MELS];
    let mut out = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        for (m, c) in mag.iter_mut().zip(spec.frame(t)) {
            *m = c.norm();
        }
        a.bank.apply(&mag, &mut mel);
        for v in mel.iter_mut() {
            *v = v.max(LOG_FLOOR).ln();
        }
        out.push(
            a.dct
                .chunks(CONTENT_MELS)
                .map(|row| row.iter().zip(&mel).map(|(d, m)| d * m).sum())
                .collect(),
        );
    }
    Ok(out)
}

/// A1-A4 from the clean signal, A5/A6 as constant tracks from `meta`.
pub fn extract_attributes(
    clean: &Waveform,
    meta: &DegradationMeta,
    speaker: u32,
) -> Result<AttributeSet> {
    meta.validate()?;
    if speaker == 0 {
        return Err(Error::InvalidInput("speaker labels are 1-based".into()));
    }
    let content = content_units(clean)?;
    let f0 = estimate_f0_acf(clean, F0_MIN, F0_MAX)?;
    let loudness = rms_loudness(clean, WINDOW, HOP)?;
    let t = f0.len();
    let clamp = |v: f64| v.clamp(-DB_CLAMP, DB_CLAMP);
    Ok(AttributeSet {
        content,
        content_rate: CONTENT_RATE,
        f0,
        loudness,
        speaker,
        snr: vec![clamp(meta.true_snr_db); t],
        c50: vec![clamp(meta.true_c50_db); t],
        frame_rate: MEL_RATE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::mel_frames;

    fn tone(secs: f64, f: f64) -> Waveform {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        Waveform::from_samples(
            (0..n)
                .map(|i| 0.3 * (2.0 * std::f64::consts::PI * f * i as f64 / 16000.0).sin())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn content_rate_is_half_mel_rate() {
        let c = content_units(&tone(2.0, 200.0)).unwrap();
        assert_eq!(c.len(), 100);
        assert!(c.iter().all(|r| r.len() == CONTENT_DIM));
    }

    #[test]
    fn deterministic() {
        let w = tone(1.0, 310.0);
        let meta = DegradationMeta::clean();
        assert_eq!(
            extract_attributes(&w, &meta, 3).unwrap(),
            extract_attributes(&w, &meta, 3).unwrap()
        );
    }

    #[test]
    fn clean_convention_and_lengths() {
        let w = tone(2.0, 150.0);
        let a = extract_attributes(&w, &DegradationMeta::clean(), 1).unwrap();
        assert!(a.snr.iter().all(|&v| v == 60.0));
        assert!(a.c50.iter().all(|&v| v == 60.0));
        assert_eq!(a.f0.len(), mel_frames(w.len()));
        assert_eq!(a.loudness.len(), a.f0.len());
        a.validate().unwrap();

        let meta = DegradationMeta {
            true_snr_db: 10.0,
            ..DegradationMeta::clean()
        };
        let a = extract_attributes(&w, &meta, 1).unwrap();
        assert!(a.snr.iter().all(|&v| v == 10.0));
    }

    #[test]
    fn dct_first_coefficient_matches_scaled_mean() {
        let w = tone(0.5, 440.0);
        let c = content_units(&w).unwrap();
        // c0 = sqrt(N) * mean(log mel); recompute the mean by hand.
        let a = content_analyzer();
        let spec = a.stft.forward(w.samples()).unwrap();
        let mag: Vec<f64> = spec.frame(3).iter().map(|c| c.norm()).collect();
        let mut mel = vec![0.0; CONTENT_MELS];
        a.bank.apply(&mag, &mut mel);
        let mean = mel.iter().map(|v| v.max(LOG_FLOOR).ln()).sum::<f64>() / CONTENT_MELS as f64;
        assert!((c[3][0] - mean * (CONTENT_MELS as f64).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn sidecar_roundtrip() {
        let w = tone(1.0, 200.0);
        let a = extract_attributes(&w, &DegradationMeta::clean(), 2).unwrap();
        let mut buf = Vec::new();
        a.write_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 6);
        let b = AttributeSet::read_jsonl(&buf[..]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let w = tone(1.0, 200.0);
        assert!(extract_attributes(&w, &DegradationMeta::clean(), 0).is_err());
        let bad = DegradationMeta {
            true_snr_db: f64::NAN,
            ..DegradationMeta::clean()
        };
        assert!(extract_attributes(&w, &bad, 1).is_err());
        let short = Waveform::from_samples(vec![0.0; 100]).unwrap();
        assert!(content_units(&short).is_err());
    }
}
