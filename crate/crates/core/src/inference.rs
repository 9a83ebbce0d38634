//! Analysis, attribute edits, generation and resynthesis with a trained model.
//!
//! Inputs longer than one segment are cut into consecutive non-overlapping
//! segments; the last one is zero-padded and its outputs truncated.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attributes::AttributeSet;
use crate::data::TokenSet;
use crate::dsp::{
    estimate_f0_acf, griffin_lim_with_phase, mel_frames, mel_spectrogram, MelSpectrogram, PhaseInit,
    Waveform, DB_CLAMP, F0_MAX, F0_MIN, HOP,
};
use crate::error::{Error, Result};
use crate::mae::Mae;
use crate::masking::{all_or_nothing, Hide};
use crate::tokenize::{DiscreteTokenSequence, Family, TokenizerManifest};
use crate::vqvae::VqVae;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const VQVAE_FILE: &str = "vqvae.ckpt";
/// Crossfade at segment joins, in samples (10 ms).
pub const CROSSFADE: usize = 160;

/// One attribute edit in physical units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlEdit {
    /// Percent change of voiced f0.
    PitchShift(f64),
    SetSnr(f64),
    SetC50(f64),
    ScaleLoudness(f64),
    SetSpeaker(u32),
}

impl ControlEdit {
    pub fn validate(&self, manifest: &TokenizerManifest) -> Result<()> {
        let ok = match *self {
            ControlEdit::PitchShift(p) => (-90.0..=400.0).contains(&p),
            ControlEdit::SetSnr(v) | ControlEdit::SetC50(v) => (-DB_CLAMP..=DB_CLAMP).contains(&v),
            ControlEdit::ScaleLoudness(f) => f.is_finite() && f >= 0.0,
            ControlEdit::SetSpeaker(l) => l >= 1 && l as usize <= manifest.spec(Family::Speaker).k,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("edit out of range: {self:?}")))
        }
    }
}

/// Applies `edits` in order.
pub fn apply_edits(attrs: &AttributeSet, edits: &[ControlEdit], manifest: &TokenizerManifest) -> Result<AttributeSet> {
    let mut out = attrs.clone();
    for e in edits {
        e.validate(manifest)?;
        match *e {
            ControlEdit::PitchShift(p) => {
                let r = 1.0 + p / 100.0;
                let mut clamped = 0;
                for f in out.f0.iter_mut().filter(|f| **f > 0.0) {
                    let v = *f * r;
                    *f = v.clamp(F0_MIN, F0_MAX);
                    clamped += usize::from(*f != v);
                }
                if clamped > 0 {
                    log::warn!("pitch shift {p:+}%: {clamped} frames clamped to [{F0_MIN}, {F0_MAX}] Hz");
                }
            }
            ControlEdit::SetSnr(v) => out.snr.iter_mut().for_each(|x| *x = v),
            ControlEdit::SetC50(v) => out.c50.iter_mut().for_each(|x| *x = v),
            ControlEdit::ScaleLoudness(s) => {
                let max = manifest.spec(Family::Loudness).range[1];
                out.loudness.iter_mut().for_each(|x| *x = (*x * s).clamp(0.0, max));
            }
            ControlEdit::SetSpeaker(l) => out.speaker = l,
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResynthConfig {
    pub griffin_lim_iters: usize,
    /// Start Griffin-Lim from the input's STFT phase instead of a seeded
    /// random phase.
    pub phase_from_input: bool,
    pub phase_seed: u64,
}

impl Default for ResynthConfig {
    fn default() -> Self {
        ResynthConfig {
            griffin_lim_iters: 64,
            phase_from_input: true,
            phase_seed: crate::dsp::griffin_lim::DEFAULT_PHASE_SEED,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Analysis {
    pub attrs: AttributeSet,
    /// Majority speaker label per segment.
    pub segment_speakers: Vec<u32>,
    /// Completed tokens per segment.
    pub segment_tokens: Vec<TokenSet>,
}

/// Tokenizer, VQ-VAE and MAE that belong together.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub manifest: TokenizerManifest,
    pub vq: VqVae,
    pub mae: Mae,
}

fn placeholder(manifest: &TokenizerManifest) -> TokenSet {
    let layout = manifest.layout();
    TokenSet {
        families: Family::ALL
            .iter()
            .map(|&f| vec![1; layout.lengths[f.index()] * manifest.vocab(f).0])
            .collect(),
    }
}

/// Repeats the last element until `v` has `n` entries.
fn pad_edge<T: Clone>(v: &[T], n: usize) -> Vec<T> {
    let mut out = v[..v.len().min(n)].to_vec();
    while out.len() < n {
        out.push(v[v.len() - 1].clone());
    }
    out
}

impl Pipeline {
    pub fn new(manifest: TokenizerManifest, vq: VqVae, mae: Mae) -> Result<Self> {
        manifest.validate()?;
        if mae.vocab.manifest_hash != manifest.hash() {
            return Err(Error::ManifestMismatch("MAE was trained against a different tokenizer".into()));
        }
        if vq.config.f != manifest.ms_codebooks || vq.config.c != manifest.ms_codebook_size {
            return Err(Error::ManifestMismatch(format!(
                "VQ-VAE has F={} C={}, tokenizer expects F={} C={}",
                vq.config.f, vq.config.c, manifest.ms_codebooks, manifest.ms_codebook_size
            )));
        }
        if !vq.trained {
            return Err(Error::Untrained("VQ-VAE has not been trained".into()));
        }
        Ok(Pipeline { manifest, vq, mae })
    }

    /// Loads `tokenizer.json` and `vqvae.ckpt` from `model_dir` plus the MAE checkpoint.
    pub fn load(model_dir: &Path, mae_ckpt: &Path) -> Result<Self> {
        let manifest = TokenizerManifest::load(&model_dir.join(TOKENIZER_FILE))?;
        let vq = VqVae::load(&model_dir.join(VQVAE_FILE))?;
        let mae = Mae::load(mae_ckpt, &manifest)?;
        Self::new(manifest, vq, mae)
    }

    pub fn segment_samples(&self) -> usize {
        self.manifest.segment_frames * HOP
    }

    /// Segment waveforms, the last one zero-padded.
    fn segments(&self, w: &Waveform) -> Result<Vec<Waveform>> {
        let n = self.segment_samples();
        if w.is_empty() {
            return Err(Error::TooShort { len: 0, min: 1 });
        }
        (0..w.len().div_ceil(n))
            .map(|i| {
                let mut s = w.slice(i * n, (i + 1) * n).into_samples();
                s.resize(n, 0.0);
                Waveform::from_samples(s)
            })
            .collect()
    }

    /// MS tokens to attribute tokens, one segment.
    pub fn analyze_segment(&self, mel: &MelSpectrogram) -> Result<(AttributeSet, TokenSet)> {
        let mut t = placeholder(&self.manifest);
        t.families[0] = self.vq.encode(mel)?;
        let mask = all_or_nothing(self.mae.layout(), Hide::Sa);
        let done = self.mae.complete(&t, &mask)?;
        let seqs = Family::ATTRS
            .iter()
            .map(|&f| DiscreteTokenSequence::new(f, self.manifest.vocab(f).0, done.families[f.index()].clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok((self.manifest.detokenize(&seqs)?, done))
    }

    pub fn analyze(&self, w: &Waveform) -> Result<Analysis> {
        let frames = mel_frames(w.len());
        let seg_frames = self.manifest.segment_frames;
        let mut parts = Vec::new();
        let mut tokens = Vec::new();
        for s in self.segments(w)? {
            let (a, t) = self.analyze_segment(&mel_spectrogram(&s)?)?;
            parts.push(a);
            tokens.push(t);
        }
        let mut attrs = AttributeSet {
            content: Vec::new(),
            content_rate: parts[0].content_rate,
            f0: Vec::new(),
            loudness: Vec::new(),
            speaker: 1,
            snr: Vec::new(),
            c50: Vec::new(),
            frame_rate: parts[0].frame_rate,
        };
        let mut votes = vec![0usize; self.manifest.spec(Family::Speaker).k + 1];
        for (i, p) in parts.iter().enumerate() {
            let valid = (frames - i * seg_frames).min(seg_frames);
            attrs.f0.extend_from_slice(&p.f0[..valid]);
            attrs.loudness.extend_from_slice(&p.loudness[..valid]);
            attrs.snr.extend_from_slice(&p.snr[..valid]);
            attrs.c50.extend_from_slice(&p.c50[..valid]);
            attrs.content.extend_from_slice(&p.content[..valid.div_ceil(2).min(p.content.len())]);
            votes[p.speaker as usize] += valid;
        }
        attrs.speaker = (1..votes.len()).max_by_key(|&l| (votes[l], std::cmp::Reverse(l))).unwrap_or(1) as u32;
        Ok(Analysis {
            attrs,
            segment_speakers: parts.iter().map(|p| p.speaker).collect(),
            segment_tokens: tokens,
        })
    }

    /// Attribute tokens to MS tokens to a mel spectrogram, one segment.
    pub fn generate_segment(&self, attrs: &AttributeSet) -> Result<MelSpectrogram> {
        let mut t = placeholder(&self.manifest);
        for (f, s) in Family::ATTRS.iter().zip(self.manifest.tokenize(attrs)?) {
            t.families[f.index()] = s.tokens;
        }
        let mask = all_or_nothing(self.mae.layout(), Hide::Ms);
        let done = self.mae.complete(&t, &mask)?;
        self.vq.decode(&done.families[0])
    }

    pub fn generate(&self, attrs: &AttributeSet) -> Result<MelSpectrogram> {
        attrs.validate()?;
        let total = attrs.frames();
        if total == 0 || attrs.content.is_empty() {
            return Err(Error::InvalidInput("empty attribute set".into()));
        }
        let n = self.manifest.segment_frames;
        let cn = self.manifest.content_frames();
        let mut parts = Vec::new();
        for i in 0..total.div_ceil(n) {
            let r = i * n..((i + 1) * n).min(total);
            let cr = (i * cn).min(attrs.content.len() - 1)..((i + 1) * cn).min(attrs.content.len());
            let seg = AttributeSet {
                content: pad_edge(&attrs.content[cr], cn),
                content_rate: attrs.content_rate,
                f0: pad_edge(&attrs.f0[r.clone()], n),
                loudness: pad_edge(&attrs.loudness[r.clone()], n),
                speaker: attrs.speaker,
                snr: pad_edge(&attrs.snr[r.clone()], n),
                c50: pad_edge(&attrs.c50[r.clone()], n),
                frame_rate: attrs.frame_rate,
            };
            parts.push(self.generate_segment(&seg)?.slice(0, r.len()));
        }
        MelSpectrogram::concat(&parts)
    }

    /// Griffin-Lim per segment with one frame of context on each side,
    /// joined by a linear crossfade centered on each boundary.
    pub fn invert(&self, mel: &MelSpectrogram, len: usize, reference: Option<&Waveform>, cfg: &ResynthConfig) -> Result<Waveform> {
        let n = self.manifest.segment_frames;
        let total = mel.frames();
        let mut out = vec![0.0; total * HOP];
        let segs = total.div_ceil(n);
        let half = CROSSFADE / 2;
        for i in 0..segs {
            let a = (i * n).saturating_sub(1);
            let b = ((i + 1) * n + 1).min(total);
            let part = mel.slice(a, b);
            let refseg = reference.map(|r| r.slice(a * HOP, b * HOP));
            let init = match (&refseg, cfg.phase_from_input) {
                (Some(r), true) => PhaseInit::FromSignal(r),
                _ => PhaseInit::Random(cfg.phase_seed),
            };
            let y = griffin_lim_with_phase(&part, cfg.griffin_lim_iters, init)?;
            let y = y.samples();
            let start = i * n * HOP;
            let end = ((i + 1) * n).min(total) * HOP;
            let lo = if i == 0 { 0 } else { start - half };
            let hi = if i + 1 == segs { end } else { end + half };
            for g in lo..hi {
                let v = y[g - a * HOP];
                let wgt = if i > 0 && g < start + half {
                    (g + half - start) as f64 / CROSSFADE as f64
                } else if i + 1 < segs && g >= end - half {
                    (end + half - g) as f64 / CROSSFADE as f64
                } else {
                    1.0
                };
                out[g] += wgt * v;
            }
        }
        out.truncate(len.min(out.len()));
        out.resize(len, 0.0);
        Waveform::from_samples(out)
    }

    /// Analysis, edits, generation and inversion, plus a re-analysis report.
    pub fn resynthesize(&self, w: &Waveform, edits: &[ControlEdit], cfg: &ResynthConfig) -> Result<(Waveform, ResynthReport)> {
        let analysis = self.analyze(w)?;
        let edited = apply_edits(&analysis.attrs, edits, &self.manifest)?;
        let mel = self.generate(&edited)?;
        let out = self.invert(&mel, w.len(), Some(w), cfg)?;

        let ratio = edits.iter().fold(1.0, |r, e| match e {
            ControlEdit::PitchShift(p) => r * (1.0 + p / 100.0),
            _ => r,
        });
        let oracle_in = estimate_f0_acf(w, F0_MIN, F0_MAX)?;
        let target: Vec<f64> = oracle_in
            .iter()
            .map(|&f| if f > 0.0 { (f * ratio).clamp(F0_MIN, F0_MAX) } else { 0.0 })
            .collect();
        let oracle_out = estimate_f0_acf(&out, F0_MIN, F0_MAX)?;
        let re = self.analyze(&out)?;
        let report = ResynthReport {
            schema_version: REPORT_SCHEMA_VERSION,
            duration_secs: w.duration_secs(),
            segments: analysis.segment_speakers.len(),
            edits: edits.to_vec(),
            f0_ratio: ratio,
            analyzed_speaker: analysis.attrs.speaker,
            target_speaker: edited.speaker,
            reanalyzed_speaker: re.attrs.speaker,
            reanalyzed_segment_speakers: re.segment_speakers.clone(),
            mean_snr_analyzed: mean(&analysis.attrs.snr),
            mean_snr_target: mean(&edited.snr),
            mean_snr_reanalyzed: mean(&re.attrs.snr),
            f0_check: F0Check::compute(&target, &oracle_out),
            f0_check_model: F0Check::compute(&edited.f0, &oracle_out),
            tracks: Tracks {
                analyzed_f0: analysis.attrs.f0.clone(),
                edited_f0: edited.f0.clone(),
                oracle_input_f0: oracle_in,
                target_f0: target,
                reanalyzed_f0: oracle_out,
            },
        };
        Ok((out, report))
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Re-analysis of f0 against a target track.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0Check {
    /// Mean absolute error in Hz over frames voiced in both tracks; `None`
    /// when no frame is.
    pub aae_hz: Option<f64>,
    pub median_rel_error: Option<f64>,
    pub voiced_frames: usize,
}

impl F0Check {
    pub fn compute(target: &[f64], est: &[f64]) -> F0Check {
        let pairs: Vec<(f64, f64)> = target
            .iter()
            .zip(est)
            .filter(|(t, e)| **t > 0.0 && **e > 0.0)
            .map(|(t, e)| (*t, *e))
            .collect();
        if pairs.is_empty() {
            return F0Check {
                aae_hz: None,
                median_rel_error: None,
                voiced_frames: 0,
            };
        }
        let aae = pairs.iter().map(|(t, e)| (t - e).abs()).sum::<f64>() / pairs.len() as f64;
        let mut rel: Vec<f64> = pairs.iter().map(|(t, e)| (e - t).abs() / t).collect();
        rel.sort_by(f64::total_cmp);
        F0Check {
            aae_hz: Some(aae),
            median_rel_error: Some(rel[rel.len() / 2]),
            voiced_frames: pairs.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tracks {
    pub analyzed_f0: Vec<f64>,
    pub edited_f0: Vec<f64>,
    /// Pitch tracker on the input.
    pub oracle_input_f0: Vec<f64>,
    /// `oracle_input_f0` scaled by the requested shift.
    pub target_f0: Vec<f64>,
    /// Pitch tracker on the output.
    pub reanalyzed_f0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResynthReport {
    pub schema_version: u32,
    pub duration_secs: f64,
    pub segments: usize,
    pub edits: Vec<ControlEdit>,
    pub f0_ratio: f64,
    pub analyzed_speaker: u32,
    pub target_speaker: u32,
    pub reanalyzed_speaker: u32,
    pub reanalyzed_segment_speakers: Vec<u32>,
    pub mean_snr_analyzed: f64,
    pub mean_snr_target: f64,
    pub mean_snr_reanalyzed: f64,
    /// Output pitch against the shifted input pitch.
    pub f0_check: F0Check,
    /// Output pitch against the edited model track.
    pub f0_check_model: F0Check,
    pub tracks: Tracks,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attributes::{CONTENT_DIM, CONTENT_RATE, MEL_RATE};
    use crate::tokenize::{fit_content_codebook, KMeansCodebook};

    fn manifest() -> TokenizerManifest {
        let frames: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64; CONTENT_DIM]).collect();
        let cb: KMeansCodebook = fit_content_codebook(&frames, 4, 0).unwrap();
        TokenizerManifest::new(200, 8, 16, 0.5, cb, vec!["a".into(), "b".into(), "c".into()]).unwrap()
    }

    fn attrs() -> AttributeSet {
        AttributeSet {
            content: vec![vec![0.0; CONTENT_DIM]; 100],
            content_rate: CONTENT_RATE,
            f0: (0..200).map(|i| if i % 5 == 0 { 0.0 } else { 200.0 }).collect(),
            loudness: vec![0.1; 200],
            speaker: 2,
            snr: vec![10.0; 200],
            c50: vec![20.0; 200],
            frame_rate: MEL_RATE,
        }
    }

    #[test]
    fn pitch_shift_scales_voiced_only() {
        let m = manifest();
        let a = attrs();
        let b = apply_edits(&a, &[ControlEdit::PitchShift(50.0)], &m).unwrap();
        for (x, y) in a.f0.iter().zip(&b.f0) {
            if *x == 0.0 {
                assert_eq!(*y, 0.0);
            } else {
                assert!((y - 300.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_and_zero_edits_are_identity() {
        let m = manifest();
        let a = attrs();
        assert_eq!(apply_edits(&a, &[], &m).unwrap(), a);
        assert_eq!(apply_edits(&a, &[ControlEdit::PitchShift(0.0)], &m).unwrap(), a);
    }

    #[test]
    fn shifts_compose() {
        let m = manifest();
        let a = attrs();
        let b = apply_edits(&a, &[ControlEdit::PitchShift(50.0), ControlEdit::PitchShift(-100.0 / 3.0)], &m).unwrap();
        let half_bin = m.spec(Family::F0).bin_width() / 2.0;
        for (x, y) in a.f0.iter().zip(&b.f0) {
            assert!((x - y).abs() <= half_bin);
        }
    }

    #[test]
    fn overwrite_edits() {
        let m = manifest();
        let a = attrs();
        let b = apply_edits(
            &a,
            &[
                ControlEdit::SetSnr(40.0),
                ControlEdit::SetC50(-3.0),
                ControlEdit::ScaleLoudness(10.0),
                ControlEdit::SetSpeaker(3),
            ],
            &m,
        )
        .unwrap();
        assert!(b.snr.iter().all(|&v| v == 40.0));
        assert!(b.c50.iter().all(|&v| v == -3.0));
        assert!(b.loudness.iter().all(|&v| v == 0.5));
        assert_eq!(b.speaker, 3);
    }

    #[test]
    fn out_of_range_edits_rejected() {
        let m = manifest();
        let a = attrs();
        for e in [
            ControlEdit::PitchShift(-95.0),
            ControlEdit::PitchShift(401.0),
            ControlEdit::SetSnr(61.0),
            ControlEdit::SetSpeaker(4),
            ControlEdit::SetSpeaker(0),
        ] {
            assert!(apply_edits(&a, &[e], &m).is_err(), "{e:?}");
        }
    }

    #[test]
    fn shift_clamps_to_f0_range() {
        let m = manifest();
        let a = attrs();
        let b = apply_edits(&a, &[ControlEdit::PitchShift(300.0)], &m).unwrap();
        assert!(b.f0.iter().all(|&f| f == 0.0 || f == F0_MAX));
    }

    #[test]
    fn edit_json_shape() {
        let s = serde_json::to_string(&ControlEdit::PitchShift(10.0)).unwrap();
        assert_eq!(s, r#"{"pitch_shift":10.0}"#);
    }

    #[test]
    fn f0_check_intersection() {
        let c = F0Check::compute(&[0.0, 100.0, 200.0, 300.0], &[150.0, 105.0, 0.0, 306.0]);
        assert_eq!(c.voiced_frames, 2);
        assert!((c.aae_hz.unwrap() - 5.5).abs() < 1e-12);
        assert!(F0Check::compute(&[0.0], &[1.0]).aae_hz.is_none());
    }

    #[test]
    fn pad_edge_repeats() {
        assert_eq!(pad_edge(&[1, 2], 4), vec![1, 2, 2, 2]);
        assert_eq!(pad_edge(&[1, 2, 3], 2), vec![1, 2]);
    }
}
