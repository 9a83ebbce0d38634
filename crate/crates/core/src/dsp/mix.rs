use super::Waveform;
use crate::error::{Error, Result};

/// Mean power.
pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Loop or crop `noise` to exactly `len` samples.
pub fn fit_length(noise: &Waveform, len: usize) -> Result<Waveform> {
    if noise.is_empty() {
        return Err(Error::InvalidInput("empty noise signal".into()));
    }
    let src = noise.samples();
    Waveform::new(
        (0..len).map(|i| src[i % src.len()]).collect(),
        noise.sample_rate(),
    )
}

/// `clean + g * noise`, with `g` chosen so that the clean-to-scaled-noise
/// power ratio equals `snr_db`.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidInput(format!("snr must be finite, got {snr_db}")));
    }
    if clean.len() != noise.len() {
        return Err(Error::ShapeMismatch(format!(
            "clean has {} samples, noise {}; fit the noise length first",
            clean.len(),
            noise.len()
        )));
    }
    let pc = power(clean.samples());
    let pn = power(noise.samples());
    if pc == 0.0 {
        return Err(Error::DegenerateSnr("clean signal is all zero".into()));
    }
    if pn == 0.0 {
        return Err(Error::DegenerateSnr("noise signal is all zero".into()));
    }
    let g = (pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    Waveform::new(
        clean
            .samples()
            .iter()
            .zip(noise.samples())
            .map(|(c, n)| c + g * n)
            .collect(),
        clean.sample_rate(),
    )
}

/// SNR of `mixture` taking `mixture - clean` as the noise.
pub fn measured_snr_db(clean: &[f64], mixture: &[f64]) -> f64 {
    let noise: Vec<f64> = mixture.iter().zip(clean).map(|(m, c)| m - c).collect();
    10.0 * (power(clean) / power(&noise)).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random(seed: u64, n: usize) -> Waveform {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Waveform::from_samples((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn unit_power(w: Waveform) -> Waveform {
        let p = power(w.samples()).sqrt();
        Waveform::from_samples(w.samples().iter().map(|v| v / p).collect()).unwrap()
    }

    #[test]
    fn zero_db_unit_power() {
        let c = unit_power(random(1, 4000));
        let n = unit_power(random(2, 4000));
        let m = mix_at_snr(&c, &n, 0.0).unwrap();
        // g = 1 for equal powers
        let g_noise: Vec<f64> = m.samples().iter().zip(c.samples()).map(|(a, b)| a - b).collect();
        for (a, b) in g_noise.iter().zip(n.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(measured_snr_db(c.samples(), m.samples()).abs() < 1e-6);
    }

    #[test]
    fn high_snr_is_nearly_clean() {
        let c = random(3, 4000);
        let m = mix_at_snr(&c, &random(4, 4000), 60.0).unwrap();
        let err = power(&m.samples().iter().zip(c.samples()).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(((err / power(c.samples())).sqrt() - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn noise_equal_to_clean() {
        let c = random(5, 2000);
        let m = mix_at_snr(&c, &c, 6.0).unwrap();
        assert!((measured_snr_db(c.samples(), m.samples()) - 6.0).abs() < 1e-6);
        let ratio = m.samples()[10] / c.samples()[10];
        for (a, b) in m.samples().iter().zip(c.samples()) {
            assert!((a - ratio * b).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let z = Waveform::from_samples(vec![0.0; 100]).unwrap();
        let n = random(6, 100);
        assert!(matches!(mix_at_snr(&z, &n, 0.0), Err(Error::DegenerateSnr(_))));
        assert!(matches!(mix_at_snr(&n, &z, 0.0), Err(Error::DegenerateSnr(_))));
        assert!(mix_at_snr(&n, &n, f64::INFINITY).is_err());
        assert!(mix_at_snr(&n, &random(7, 99), 0.0).is_err());
    }

    #[test]
    fn fit_length_loops() {
        let n = Waveform::from_samples(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(fit_length(&n, 7).unwrap().samples(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0]);
        assert_eq!(fit_length(&n, 2).unwrap().samples(), &[1.0, 2.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn measured_snr_matches_request(snr in -10.0f64..60.0, seed in 0u64..1000) {
            let c = random(seed, 1024);
            let n = random(seed + 7919, 1024);
            let m = mix_at_snr(&c, &n, snr).unwrap();
            prop_assert!((measured_snr_db(c.samples(), m.samples()) - snr).abs() < 1e-6);
        }
    }
}
