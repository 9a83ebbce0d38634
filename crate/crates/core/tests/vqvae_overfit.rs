use ancogen::dsp::{MelSpectrogram, N_MELS};
use ancogen::vqvae::{VqVae, VqvaeConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_frames(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n * N_MELS);
    for _ in 0..n {
        let peak = rng.gen_range(10.0..110.0);
        let width = rng.gen_range(3.0..15.0);
        let level = rng.gen_range(-2.0..2.0);
        for b in 0..N_MELS {
            let d = (b as f64 - peak) / width;
            out.push(-8.0 + level + 6.0 * (-d * d).exp() + 0.3 * ((b as f64) * 0.7 + peak).sin());
        }
    }
    out
}

#[test]
fn overfits_64_frames() {
    let frames = toy_frames(64, 3);
    let mut m = VqVae::new(VqvaeConfig { steps: 2000, batch: 64, ..Default::default() }).unwrap();
    let t = std::time::Instant::now();
    let curve = m.train(&frames).unwrap();
    for c in curve.iter().step_by(4) {
        eprintln!("{:?}", c);
    }
    let mel = MelSpectrogram::from_frames(64, frames).unwrap();
    let mse = m.frame_mse(&mel).unwrap();
    let max = mse.iter().cloned().fold(0.0, f64::max);
    eprintln!("max frame mse {max} mean {} in {:?}", mse.iter().sum::<f64>() / 64.0, t.elapsed());
    assert!(max < 1e-3);
}
