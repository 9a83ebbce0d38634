use super::mel::MelSpectrogram;
use super::{Waveform, DB_CLAMP};
use crate::error::{Error, Result};

/// Scale-invariant SDR in dB, clamped to ±60.
///
/// `est` is projected onto `ref`; the projection is the target and the
/// remainder the distortion. No mean removal.
pub fn si_sdr(est: &Waveform, reference: &Waveform) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    let r = reference.samples();
    let e = est.samples();
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(Error::InvalidInput("reference is all zero".into()));
    }
    let alpha = e.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target = alpha * alpha * rr;
    let residual: f64 = e.iter().zip(r).map(|(a, b)| (a - alpha * b).powi(2)).sum();
    if residual == 0.0 || residual <= target * 1e-12 {
        return Ok(DB_CLAMP);
    }
    if target == 0.0 {
        return Ok(-DB_CLAMP);
    }
    Ok((10.0 * (target / residual).log10()).clamp(-DB_CLAMP, DB_CLAMP))
}

/// Root mean square over frames of the per-frame RMS log-mel difference.
///
/// Units are those of the log-mel entries, so a constant offset `c` gives `|c|`.
pub fn log_spectral_distance(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<f64> {
    if a.frames() != b.frames() || a.bands() != b.bands() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.frames(),
            a.bands(),
            b.frames(),
            b.bands()
        )));
    }
    let per_frame_ms: f64 = (0..a.frames())
        .map(|t| {
            a.frame(t)
                .iter()
                .zip(b.frame(t))
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                / a.bands() as f64
        })
        .sum();
    Ok((per_frame_ms / a.frames() as f64).sqrt())
}
