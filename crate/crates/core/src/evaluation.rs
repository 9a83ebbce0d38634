//! Desk-scale experiments: f0 robustness, pitch-shift accuracy and denoising.
//!
//! Each runner writes a CSV next to an SVG plot when given an output directory.

use std::path::Path;

use plotters::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::synth::NOISE_KINDS;
use crate::data::{degrade_with, Corpus, UtteranceRecord};
use crate::dsp::wav::read_wav;
use crate::dsp::{apply_rir, estimate_f0_acf, synth_rir, log_spectral_distance, mel_spectrogram, si_sdr, Waveform, DB_CLAMP, F0_MAX, F0_MIN};
use crate::error::{Error, Result};
use crate::inference::{ControlEdit, Pipeline, ResynthConfig};

/// Mean |est − ref| in Hz over frames voiced (> 0) in both.
pub fn aae(est: &[f64], reference: &[f64]) -> Result<f64> {
    let (sum, n) = abs_error_sum(est, reference)?;
    if n == 0 {
        return Err(Error::InvalidInput("no mutually voiced frames".into()));
    }
    Ok(sum / n as f64)
}

fn abs_error_sum(est: &[f64], reference: &[f64]) -> Result<(f64, usize)> {
    if est.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} frames", est.len(), reference.len())));
    }
    Ok(est
        .iter()
        .zip(reference)
        .filter(|(e, r)| **e > 0.0 && **r > 0.0)
        .fold((0.0, 0), |(s, n), (e, r)| (s + (e - r).abs(), n + 1)))
}

/// Pools absolute errors over utterances.
#[derive(Clone, Copy, Debug, Default)]
struct Pooled {
    sum: f64,
    frames: usize,
}

impl Pooled {
    fn add(&mut self, est: &[f64], reference: &[f64]) -> Result<()> {
        let (s, n) = abs_error_sum(est, reference)?;
        self.sum += s;
        self.frames += n;
        Ok(())
    }

    fn aae(&self) -> f64 {
        if self.frames == 0 {
            f64::NAN
        } else {
            self.sum / self.frames as f64
        }
    }
}

/// Clean utterances, one per distinct clean file.
pub fn clean_records(corpus: &Corpus) -> Vec<&UtteranceRecord> {
    corpus.records.iter().filter(|r| r.is_clean()).collect()
}

/// Programmed contour when the corpus has one, else the pitch tracker on the
/// clean signal.
pub fn reference_f0(corpus: &Corpus, r: &UtteranceRecord, clean: &Waveform) -> Result<Vec<f64>> {
    match corpus.read_f0_contour(r)? {
        Some(c) => Ok(c),
        None => estimate_f0_acf(clean, F0_MIN, F0_MAX),
    }
}

/// Order-preserving parallel map over utterances.
fn map_records<I: Sync, T: Send>(records: &[I], f: impl Fn(usize, &I) -> Result<T> + Sync) -> Result<Vec<T>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(records.len().max(1));
    if workers <= 1 {
        return records.iter().enumerate().map(|(i, r)| f(i, r)).collect();
    }
    let chunk = records.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = records
            .chunks(chunk)
            .enumerate()
            .map(|(c, rs)| {
                let f = &f;
                s.spawn(move || rs.iter().enumerate().map(|(i, r)| f(c * chunk + i, r)).collect::<Result<Vec<T>>>())
            })
            .collect();
        let mut out = Vec::with_capacity(records.len());
        for h in handles {
            out.extend(h.join().map_err(|_| Error::Unreachable("worker panicked".into()))??);
        }
        Ok(out)
    })
}

fn utterance_rng(seed: u64, i: usize, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0RobustnessRow {
    /// 60 is the clean condition.
    pub snr_db: f64,
    pub reverb: bool,
    pub model_aae_hz: f64,
    pub oracle_aae_hz: f64,
    pub utterances: usize,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct F0RobustnessConfig {
    /// Entries of 60 dB or more mean no added noise.
    pub snr_grid: Vec<f64>,
    pub reverb: Vec<bool>,
    /// C50 of the synthetic room used when reverb is on.
    pub reverb_c50_db: f64,
    pub rir_secs: f64,
    pub seed: u64,
}

impl Default for F0RobustnessConfig {
    fn default() -> Self {
        F0RobustnessConfig {
            snr_grid: vec![0.0, 5.0, 10.0, DB_CLAMP],
            reverb: vec![false, true],
            reverb_c50_db: 10.0,
            rir_secs: 0.5,
            seed: 0,
        }
    }
}

/// Model analysis and the autocorrelation tracker on degraded copies of
/// every clean utterance, scored against the reference f0.
pub fn run_f0_robustness(
    pipeline: &Pipeline,
    corpus: &Corpus,
    cfg: &F0RobustnessConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<F0RobustnessRow>> {
    let records = clean_records(corpus);
    if records.is_empty() {
        return Err(Error::NotEnoughData("corpus has no clean utterances".into()));
    }
    let mut rows = Vec::new();
    for (ci, &reverb) in cfg.reverb.iter().enumerate() {
        for (si, &snr) in cfg.snr_grid.iter().enumerate() {
            let salt = ((ci as u64) << 16) | si as u64;
            let per = map_records(&records, |i, r| {
                let clean = read_wav(&corpus.path(&r.clean))?;
                let reference = reference_f0(corpus, r, &clean)?;
                let mut rng = utterance_rng(cfg.seed, i, salt);
                let c50 = if reverb { cfg.reverb_c50_db } else { DB_CLAMP };
                let w = if snr < DB_CLAMP {
                    degrade_with(&clean, snr, c50, NOISE_KINDS[i % NOISE_KINDS.len()], cfg.rir_secs, &mut rng)?.0
                } else if reverb {
                    let ir = synth_rir(c50, cfg.rir_secs, &mut rng)?;
                    apply_rir(&clean, &ir)?
                } else {
                    clean.clone()
                };
                let model = pipeline.analyze(&w)?.attrs.f0;
                let oracle = estimate_f0_acf(&w, F0_MIN, F0_MAX)?;
                let mut m = Pooled::default();
                let mut o = Pooled::default();
                m.add(&model, &reference)?;
                o.add(&oracle, &reference)?;
                Ok((m, o))
            })?;
            let (m, o) = per.iter().fold((Pooled::default(), Pooled::default()), |(a, b), (m, o)| {
                (
                    Pooled {
                        sum: a.sum + m.sum,
                        frames: a.frames + m.frames,
                    },
                    Pooled {
                        sum: b.sum + o.sum,
                        frames: b.frames + o.frames,
                    },
                )
            });
            let row = F0RobustnessRow {
                snr_db: snr,
                reverb,
                model_aae_hz: m.aae(),
                oracle_aae_hz: o.aae(),
                utterances: records.len(),
                frames: m.frames,
            };
            log::info!(
                "f0 robustness snr {} reverb {}: model {:.2} Hz, tracker {:.2} Hz",
                fmt_snr(snr),
                reverb,
                row.model_aae_hz,
                row.oracle_aae_hz
            );
            rows.push(row);
        }
    }
    if let Some(dir) = out_dir {
        write_csv(&dir.join("f0_robustness.csv"), &rows)?;
        plot_f0_robustness(&dir.join("f0_robustness.svg"), &rows)?;
    }
    Ok(rows)
}

fn fmt_snr(s: f64) -> String {
    if s >= DB_CLAMP {
        "clean".to_string()
    } else {
        format!("{s} dB")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchShiftRow {
    pub shift_percent: f64,
    /// Pooled over utterances against the shifted tracker f0 of the input.
    pub aae_hz: f64,
    pub median_rel_error: f64,
    pub utterances: usize,
    pub frames: usize,
}

/// Resynthesizes every clean utterance at each shift; a 0 % row is added as
/// a control when missing.
pub fn run_pitch_shift_eval(
    pipeline: &Pipeline,
    corpus: &Corpus,
    shifts: &[f64],
    resynth: &ResynthConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<PitchShiftRow>> {
    let records = clean_records(corpus);
    if records.is_empty() {
        return Err(Error::NotEnoughData("corpus has no clean utterances".into()));
    }
    let mut grid = shifts.to_vec();
    if !grid.contains(&0.0) {
        grid.push(0.0);
    }
    let mut rows = Vec::new();
    for &p in &grid {
        let per = map_records(&records, |_, r| {
            let w = read_wav(&corpus.path(&r.clean))?;
            let (_, rep) = pipeline.resynthesize(&w, &[ControlEdit::PitchShift(p)], resynth)?;
            let mut pooled = Pooled::default();
            pooled.add(&rep.tracks.reanalyzed_f0, &rep.tracks.target_f0)?;
            let rel: Vec<f64> = rep
                .tracks
                .target_f0
                .iter()
                .zip(&rep.tracks.reanalyzed_f0)
                .filter(|(t, e)| **t > 0.0 && **e > 0.0)
                .map(|(t, e)| (e - t).abs() / t)
                .collect();
            Ok((pooled, rel))
        })?;
        let mut pooled = Pooled::default();
        let mut rel = Vec::new();
        for (pl, r) in per {
            pooled.sum += pl.sum;
            pooled.frames += pl.frames;
            rel.extend(r);
        }
        rel.sort_by(f64::total_cmp);
        let row = PitchShiftRow {
            shift_percent: p,
            aae_hz: pooled.aae(),
            median_rel_error: rel.get(rel.len() / 2).copied().unwrap_or(f64::NAN),
            utterances: records.len(),
            frames: pooled.frames,
        };
        log::info!("pitch shift {p:+}%: AAE {:.2} Hz over {} frames", row.aae_hz, row.frames);
        rows.push(row);
    }
    if let Some(dir) = out_dir {
        write_csv(&dir.join("pitch_shift.csv"), &rows)?;
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.shift_percent, r.aae_hz)).collect();
        line_plot(
            &dir.join("pitch_shift.svg"),
            "Pitch-shift accuracy",
            "shift (%)",
            "AAE (Hz)",
            &[("resynthesis", pts)],
        )?;
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseRow {
    pub id: String,
    pub input_snr_db: f64,
    pub lsd_noisy: f64,
    pub lsd_denoised: f64,
    /// Resynthesis with the SNR set to the input's true value.
    pub lsd_passthrough: f64,
    pub si_sdr_noisy: f64,
    pub si_sdr_denoised: f64,
    pub si_sdr_passthrough: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseSummary {
    pub utterances: usize,
    pub target_snr_db: f64,
    pub mean_lsd_noisy: f64,
    pub mean_lsd_denoised: f64,
    pub mean_lsd_passthrough: f64,
    /// Denoised minus noisy; negative is better.
    pub delta_lsd: f64,
    pub delta_lsd_passthrough: f64,
    pub mean_si_sdr_noisy: f64,
    pub mean_si_sdr_denoised: f64,
    pub delta_si_sdr: f64,
    /// Share of utterances whose SI-SDR did not drop.
    pub si_sdr_not_worse: f64,
}

impl DenoiseSummary {
    pub fn from_rows(rows: &[DenoiseRow], target_snr_db: f64) -> DenoiseSummary {
        let n = rows.len().max(1) as f64;
        let m = |f: fn(&DenoiseRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let (ln, ld, lp) = (m(|r| r.lsd_noisy), m(|r| r.lsd_denoised), m(|r| r.lsd_passthrough));
        let (sn, sd) = (m(|r| r.si_sdr_noisy), m(|r| r.si_sdr_denoised));
        DenoiseSummary {
            utterances: rows.len(),
            target_snr_db,
            mean_lsd_noisy: ln,
            mean_lsd_denoised: ld,
            mean_lsd_passthrough: lp,
            delta_lsd: ld - ln,
            delta_lsd_passthrough: lp - ln,
            mean_si_sdr_noisy: sn,
            mean_si_sdr_denoised: sd,
            delta_si_sdr: sd - sn,
            si_sdr_not_worse: rows.iter().filter(|r| r.si_sdr_denoised >= r.si_sdr_noisy).count() as f64 / n,
        }
    }
}

/// Corpus mixtures at `snr_in` (within 0.5 dB) with their clean references;
/// when the corpus has none, every clean utterance is mixed with noise at
/// `snr_in`.
pub fn denoise_inputs(corpus: &Corpus, snr_in: f64, seed: u64) -> Result<Vec<(String, Waveform, Waveform, f64)>> {
    let found: Vec<&UtteranceRecord> = corpus
        .records
        .iter()
        .filter(|r| !r.is_clean() && (r.meta.true_snr_db - snr_in).abs() <= 0.5)
        .collect();
    let mut out = Vec::new();
    if !found.is_empty() {
        for r in found {
            out.push((
                r.id.clone(),
                read_wav(&corpus.path(&r.mixture))?,
                read_wav(&corpus.path(&r.clean))?,
                r.meta.true_snr_db,
            ));
        }
        return Ok(out);
    }
    for (i, r) in clean_records(corpus).into_iter().enumerate() {
        let clean = read_wav(&corpus.path(&r.clean))?;
        let mut rng = utterance_rng(seed, i, 0xde);
        let (mix, _) = degrade_with(&clean, snr_in, DB_CLAMP, NOISE_KINDS[i % NOISE_KINDS.len()], 0.5, &mut rng)?;
        out.push((format!("{}_snr{snr_in}", r.id), mix, clean, snr_in));
    }
    if out.is_empty() {
        return Err(Error::NotEnoughData("corpus has no utterances".into()));
    }
    Ok(out)
}

/// Resynthesis with the SNR attribute set to `target_snr`, against the noisy
/// input and a passthrough control.
pub fn run_denoise_eval(
    pipeline: &Pipeline,
    corpus: &Corpus,
    snr_in: f64,
    target_snr: f64,
    resynth: &ResynthConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<(Vec<DenoiseRow>, DenoiseSummary)> {
    let inputs = denoise_inputs(corpus, snr_in, seed)?;
    let rows = map_records(&inputs, |_, (id, noisy, clean, snr)| {
        let clean_mel = mel_spectrogram(clean)?;
        let (den, _) = pipeline.resynthesize(noisy, &[ControlEdit::SetSnr(target_snr)], resynth)?;
        let (pass, _) = pipeline.resynthesize(noisy, &[ControlEdit::SetSnr(snr.clamp(-DB_CLAMP, DB_CLAMP))], resynth)?;
        let row = DenoiseRow {
            id: id.clone(),
            input_snr_db: *snr,
            lsd_noisy: log_spectral_distance(&mel_spectrogram(noisy)?, &clean_mel)?,
            lsd_denoised: log_spectral_distance(&mel_spectrogram(&den)?, &clean_mel)?,
            lsd_passthrough: log_spectral_distance(&mel_spectrogram(&pass)?, &clean_mel)?,
            si_sdr_noisy: si_sdr(noisy, clean)?,
            si_sdr_denoised: si_sdr(&den, clean)?,
            si_sdr_passthrough: si_sdr(&pass, clean)?,
        };
        log::info!(
            "denoise {}: LSD {:.3} -> {:.3}, SI-SDR {:.2} -> {:.2} dB",
            row.id,
            row.lsd_noisy,
            row.lsd_denoised,
            row.si_sdr_noisy,
            row.si_sdr_denoised
        );
        Ok(row)
    })?;
    let summary = DenoiseSummary::from_rows(&rows, target_snr);
    if let Some(dir) = out_dir {
        write_csv(&dir.join("denoise.csv"), &rows)?;
        crate::io::write_atomic(&dir.join("denoise_summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
        let pts = |f: fn(&DenoiseRow) -> f64| rows.iter().enumerate().map(|(i, r)| (i as f64, f(r))).collect::<Vec<_>>();
        line_plot(
            &dir.join("denoise.svg"),
            "LSD to clean mel per utterance",
            "utterance",
            "LSD",
            &[
                ("noisy", pts(|r| r.lsd_noisy)),
                ("denoised", pts(|r| r.lsd_denoised)),
                ("passthrough", pts(|r| r.lsd_passthrough)),
            ],
        )?;
    }
    Ok((rows, summary))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn plot_f0_robustness(path: &Path, rows: &[F0RobustnessRow]) -> Result<()> {
    // clean is drawn 5 dB right of the highest noisy SNR
    let max = rows.iter().map(|r| r.snr_db).filter(|&v| v < DB_CLAMP).fold(0.0, f64::max);
    let x = |r: &F0RobustnessRow| if r.snr_db >= DB_CLAMP { max + 5.0 } else { r.snr_db };
    let mut series = Vec::new();
    for reverb in [false, true] {
        let sel: Vec<&F0RobustnessRow> = rows.iter().filter(|r| r.reverb == reverb).collect();
        if sel.is_empty() {
            continue;
        }
        let tag = if reverb { "reverb" } else { "dry" };
        let mut m: Vec<(f64, f64)> = sel.iter().map(|r| (x(r), r.model_aae_hz)).collect();
        let mut o: Vec<(f64, f64)> = sel.iter().map(|r| (x(r), r.oracle_aae_hz)).collect();
        m.sort_by(|a, b| a.0.total_cmp(&b.0));
        o.sort_by(|a, b| a.0.total_cmp(&b.0));
        series.push((format!("model {tag}"), m));
        series.push((format!("tracker {tag}"), o));
    }
    let named: Vec<(&str, Vec<(f64, f64)>)> = series.iter().map(|(n, p)| (n.as_str(), p.clone())).collect();
    line_plot(path, "f0 AAE vs SNR (rightmost point: clean)", "SNR (dB)", "AAE (Hz)", &named)
}

fn line_plot(path: &Path, title: &str, xlabel: &str, ylabel: &str, series: &[(&str, Vec<(f64, f64)>)]) -> Result<()> {
    let pts = series.iter().flat_map(|(_, p)| p.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        x0 = 0.0;
        x1 = 1.0;
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let y1 = if y1 > 0.0 { y1 * 1.1 } else { 1.0 };
    let err = |e: &dyn std::fmt::Display| Error::Format(format!("{}: plot: {e}", path.display()));
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, 0.0..y1)
        .map_err(|e| err(&e))?;
    chart
        .configure_mesh()
        .x_desc(xlabel)
        .y_desc(ylabel)
        .draw()
        .map_err(|e| err(&e))?;
    for (i, (name, p)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let p: Vec<(f64, f64)> = p.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
        chart
            .draw_series(LineSeries::new(p.clone(), color.stroke_width(2)))
            .map_err(|e| err(&e))?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        chart
            .draw_series(p.iter().map(|&(x, y)| Circle::new((x, y), 3, color.filled())))
            .map_err(|e| err(&e))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn aae_identity_and_offset() {
        let r = vec![0.0, 100.0, 150.0, 0.0, 220.0];
        assert_eq!(aae(&r, &r).unwrap(), 0.0);
        let e: Vec<f64> = r.iter().map(|&v| if v > 0.0 { v + 5.0 } else { 0.0 }).collect();
        assert!((aae(&e, &r).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn aae_errors() {
        assert!(aae(&[0.0, 100.0], &[100.0, 0.0]).is_err());
        assert!(aae(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn naive(e: &[f64], r: &[f64]) -> Option<f64> {
        let mut s = 0.0;
        let mut n = 0;
        for i in 0..e.len() {
            if e[i] > 0.0 && r[i] > 0.0 {
                s += (e[i] - r[i]).abs();
                n += 1;
            }
        }
        (n > 0).then(|| s / n as f64)
    }

    fn track() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(prop_oneof![Just(0.0), 50.0..550.0f64], 24)
    }

    proptest! {
        #[test]
        fn aae_matches_masked_mean(e in track(), r in track()) {
            match naive(&e, &r) {
                Some(v) => prop_assert!((aae(&e, &r).unwrap() - v).abs() < 1e-9),
                None => prop_assert!(aae(&e, &r).is_err()),
            }
        }

        #[test]
        fn aae_symmetric_nonnegative(e in track(), r in track()) {
            if let (Ok(a), Ok(b)) = (aae(&e, &r), aae(&r, &e)) {
                prop_assert!(a >= 0.0);
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn denoise_summary_counts() {
        let row = |ln: f64, ld: f64, sn: f64, sd: f64| DenoiseRow {
            id: "x".into(),
            input_snr_db: 0.0,
            lsd_noisy: ln,
            lsd_denoised: ld,
            lsd_passthrough: ln,
            si_sdr_noisy: sn,
            si_sdr_denoised: sd,
            si_sdr_passthrough: sn,
        };
        let s = DenoiseSummary::from_rows(&[row(2.0, 1.0, 0.0, 1.0), row(2.0, 2.0, 0.0, -1.0)], 40.0);
        assert_eq!(s.utterances, 2);
        assert!((s.delta_lsd + 0.5).abs() < 1e-12);
        assert!((s.si_sdr_not_worse - 0.5).abs() < 1e-12);
    }

    #[test]
    fn csv_and_plot_written() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            F0RobustnessRow {
                snr_db: 0.0,
                reverb: false,
                model_aae_hz: 12.0,
                oracle_aae_hz: 9.0,
                utterances: 2,
                frames: 100,
            },
            F0RobustnessRow {
                snr_db: DB_CLAMP,
                reverb: false,
                model_aae_hz: 3.0,
                oracle_aae_hz: 2.0,
                utterances: 2,
                frames: 120,
            },
        ];
        write_csv(&dir.path().join("a.csv"), &rows).unwrap();
        plot_f0_robustness(&dir.path().join("a.svg"), &rows).unwrap();
        let text = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("snr_db,reverb,model_aae_hz"));
        assert!(std::fs::read_to_string(dir.path().join("a.svg")).unwrap().contains("<svg"));
    }
}
