//! Synthetic room impulse responses and the C50 clarity index.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{Waveform, DB_CLAMP, SAMPLE_RATE};
use crate::error::{Error, Result};

/// 50 ms at 16 kHz.
pub const EARLY_SAMPLES: usize = 800;

#[derive(Clone, Debug, PartialEq)]
pub struct ImpulseResponse {
    taps: Vec<f64>,
    sample_rate: u32,
}

impl ImpulseResponse {
    pub fn new(taps: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidInput("empty impulse response".into()));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("non-finite impulse response tap".into()));
        }
        if taps.iter().all(|&t| t == 0.0) {
            return Err(Error::InvalidInput("impulse response has no onset".into()));
        }
        Ok(ImpulseResponse { taps, sample_rate })
    }

    pub fn delta() -> Self {
        ImpulseResponse {
            taps: vec![1.0],
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Index of the first non-zero tap (direct sound).
    pub fn onset(&self) -> usize {
        self.taps.iter().position(|&t| t != 0.0).unwrap_or(0)
    }
}

/// Early (first 50 ms after onset) to late energy ratio in dB, clamped to ±60.
pub fn c50(ir: &ImpulseResponse) -> f64 {
    let early_len = (0.05 * ir.sample_rate as f64).round() as usize;
    let onset = ir.onset();
    let split = (onset + early_len).min(ir.taps.len());
    let early: f64 = ir.taps[onset..split].iter().map(|v| v * v).sum();
    let late: f64 = ir.taps[split..].iter().map(|v| v * v).sum();
    if late == 0.0 {
        return DB_CLAMP;
    }
    (10.0 * (early / late).log10()).clamp(-DB_CLAMP, DB_CLAMP)
}

/// C50 of an ideal exponential energy decay `exp(-2t/tau)` truncated after `n` samples.
fn exp_c50(tau: f64, n: usize) -> f64 {
    let q = (-2.0 / (SAMPLE_RATE as f64 * tau)).exp();
    let early = 1.0 - q.powi(EARLY_SAMPLES as i32);
    let late = q.powi(EARLY_SAMPLES as i32) - q.powi(n as i32);
    10.0 * (early / late).log10()
}

/// Closed-form C50 of an untruncated `exp(-t/tau)` amplitude envelope.
pub fn exp_envelope_c50(tau: f64) -> f64 {
    10.0 * ((0.1 / tau).exp() - 1.0).log10()
}

/// Decay constant whose untruncated exponential envelope has the given C50.
pub fn tau_for_c50(c50_db: f64) -> f64 {
    0.1 / (1.0 + 10f64.powf(c50_db / 10.0)).ln()
}

/// Noise-excited exponentially decaying impulse response with a measured C50
/// equal to `c50_target` (late tail rescaled to hit the target exactly).
pub fn synth_rir(c50_target: f64, length_secs: f64, rng: &mut impl Rng) -> Result<ImpulseResponse> {
    if !c50_target.is_finite() {
        return Err(Error::InvalidInput(format!("c50 target must be finite, got {c50_target}")));
    }
    if !(length_secs >= 0.2) {
        return Err(Error::InvalidInput(format!("rir length must be >= 0.2 s, got {length_secs}")));
    }
    if c50_target >= DB_CLAMP {
        return Ok(ImpulseResponse::delta());
    }
    let n = (length_secs * SAMPLE_RATE as f64).round() as usize;
    // A flat envelope is the least clear IR a finite length can produce.
    let floor = 10.0 * (EARLY_SAMPLES as f64 / (n - EARLY_SAMPLES) as f64).log10();
    if c50_target <= floor + 0.5 {
        return Err(Error::Unreachable(format!(
            "C50 {c50_target:.2} dB needs a longer response than {length_secs} s (floor {floor:.2} dB)"
        )));
    }
    // exp_c50 decreases monotonically in tau; bisect on log tau.
    let (mut lo, mut hi) = (1e-5f64.ln(), 1e3f64.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if exp_c50(mid.exp(), n) > c50_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = (0.5 * (lo + hi)).exp();
    let decay = (-1.0 / (SAMPLE_RATE as f64 * tau)).exp();
    let mut taps = Vec::with_capacity(n);
    let mut env = 1.0;
    for k in 0..n {
        let e: f64 = rng.sample(StandardNormal);
        taps.push(if k == 0 { 1.0 } else { e * env });
        env *= decay;
    }
    let early: f64 = taps[..EARLY_SAMPLES].iter().map(|v| v * v).sum();
    let late: f64 = taps[EARLY_SAMPLES..].iter().map(|v| v * v).sum();
    if late <= 0.0 {
        return Err(Error::Unreachable(format!("C50 {c50_target:.2} dB: late tail vanished")));
    }
    let gain = (early / (late * 10f64.powf(c50_target / 10.0))).sqrt();
    for t in taps[EARLY_SAMPLES..].iter_mut() {
        *t *= gain;
    }
    ImpulseResponse::new(taps, SAMPLE_RATE)
}

/// Linear convolution truncated to the input length.
pub fn apply_rir(x: &Waveform, ir: &ImpulseResponse) -> Result<Waveform> {
    let len = x.len();
    let taps = ir.taps();
    if taps.len() == 1 {
        return Waveform::new(x.samples().iter().map(|v| v * taps[0]).collect(), x.sample_rate());
    }
    let n = (len + taps.len()).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(x.samples().get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    let mut b: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(taps.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    fft.process(&mut a);
    fft.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    ifft.process(&mut a);
    Waveform::new(
        a[..len].iter().map(|c| c.re / n as f64).collect(),
        x.sample_rate(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exponential_ir(tau: f64, secs: f64) -> ImpulseResponse {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        let taps = (0..n)
            .map(|k| (-(k as f64) / (SAMPLE_RATE as f64 * tau)).exp())
            .collect();
        ImpulseResponse::new(taps, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn delta_clamps() {
        assert_eq!(c50(&ImpulseResponse::delta()), 60.0);
    }

    #[test]
    fn even_split_is_zero_db() {
        let mut taps = vec![0.0; 2000];
        taps[3] = 1.0; // onset
        taps[3 + EARLY_SAMPLES] = 1.0;
        let ir = ImpulseResponse::new(taps, SAMPLE_RATE).unwrap();
        assert!(c50(&ir).abs() < 1e-12);
    }

    #[test]
    fn exponential_matches_closed_form() {
        for target in [0.0, 5.0, 10.0, 20.0] {
            let tau = tau_for_c50(target);
            assert!((exp_envelope_c50(tau) - target).abs() < 1e-9);
            let measured = c50(&exponential_ir(tau, 3.0));
            assert!((measured - target).abs() < 0.2, "{target}: {measured}");
        }
    }

    #[test]
    fn synthetic_rir_hits_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for target in [0.0, 5.0, 10.0, 20.0, 40.0] {
            let ir = synth_rir(target, 0.5, &mut rng).unwrap();
            let got = c50(&ir);
            assert!((got - target).abs() <= 0.5, "{target}: {got}");
        }
    }

    #[test]
    fn unreachable_and_invalid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(synth_rir(-10.0, 0.2, &mut rng), Err(Error::Unreachable(_))));
        assert!(synth_rir(5.0, 0.1, &mut rng).is_err());
        assert!(synth_rir(f64::NAN, 0.5, &mut rng).is_err());
        assert_eq!(synth_rir(60.0, 0.5, &mut rng).unwrap(), ImpulseResponse::delta());
    }

    #[test]
    fn convolution_with_delta_is_identity() {
        let x = Waveform::from_samples((0..3000).map(|i| (i as f64 * 0.01).sin()).collect()).unwrap();
        let mut taps = vec![0.0; 100];
        taps[0] = 1.0;
        let y = apply_rir(&x, &ImpulseResponse::new(taps, SAMPLE_RATE).unwrap()).unwrap();
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
