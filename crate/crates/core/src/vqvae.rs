//! Frame-wise VQ-VAE: each 128-band log-mel frame is encoded by strided 1-D
//! convolutions along the frequency axis into `F` latent vectors, each
//! quantized against its own `C`-entry codebook.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{MelSpectrogram, N_MELS};
use crate::error::{Error, Result};
use crate::io::{load_container, save_container, Container};
use crate::nn::conv::{Conv1d, ConvTranspose1d};
use crate::nn::{all_finite, AdamW, AdamWConfig, ParamStore, Scalar};

const MAGIC: &[u8; 4] = b"AVQV";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VqvaeConfig {
    /// Codebooks per frame.
    pub f: usize,
    /// Codes per codebook.
    pub c: usize,
    pub latent_dim: usize,
    /// Hidden channel counts, one per intermediate resolution.
    pub channels: Vec<usize>,
    pub beta: f64,
    pub ema_decay: f64,
    /// Steps without use after which a code is re-seeded from the batch.
    pub dead_after: u64,
    pub lr: f64,
    pub batch: usize,
    pub steps: u64,
    pub seed: u64,
    pub log_every: u64,
}

impl Default for VqvaeConfig {
    fn default() -> Self {
        VqvaeConfig {
            f: 8,
            c: 128,
            latent_dim: 16,
            channels: vec![16, 32, 32],
            beta: 0.25,
            ema_decay: 0.99,
            dead_after: 200,
            lr: 2e-3,
            batch: 64,
            steps: 3000,
            seed: 0,
            log_every: 100,
        }
    }
}

impl VqvaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.f == 0 || self.c < 2 || self.latent_dim == 0 {
            return Err(Error::Config("vqvae: need F >= 1, C >= 2, latent_dim >= 1".into()));
        }
        if !N_MELS.is_multiple_of(self.f) || !(N_MELS / self.f).is_power_of_two() || N_MELS / self.f < 2 {
            return Err(Error::Config(format!(
                "vqvae: 128 / F must be a power of two >= 2 (F = {})",
                self.f
            )));
        }
        let layers = (N_MELS / self.f).trailing_zeros() as usize;
        if self.channels.len() + 1 != layers || self.channels.contains(&0) {
            return Err(Error::Config(format!(
                "vqvae: F = {} needs {} hidden channel counts, got {:?}",
                self.f,
                layers - 1,
                self.channels
            )));
        }
        if !(0.0..1.0).contains(&self.ema_decay) || self.batch == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("vqvae: invalid ema_decay, batch or lr".into()));
        }
        Ok(())
    }
}

/// Encoder/decoder layer handles.
#[derive(Clone, Debug)]
pub struct VqNet {
    enc: Vec<Conv1d>,
    dec: Vec<ConvTranspose1d>,
    pub f: usize,
    pub latent: usize,
}

pub struct EncCache<T> {
    cols: Vec<Vec<T>>,
    /// Pre-activation outputs of every layer but the last.
    pre: Vec<Vec<T>>,
    lens: Vec<usize>,
}

pub struct DecCache<T> {
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    lens: Vec<usize>,
}

fn relu<T: Scalar>(v: &[T]) -> Vec<T> {
    v.iter().map(|&x| x.max(T::zero())).collect()
}

fn relu_back<T: Scalar>(pre: &[T], d: &mut [T]) {
    for (g, &p) in d.iter_mut().zip(pre) {
        if p <= T::zero() {
            *g = T::zero();
        }
    }
}

impl VqNet {
    pub fn new<T: Scalar>(cfg: &VqvaeConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Self {
        let mut chans = vec![1];
        chans.extend(&cfg.channels);
        chans.push(cfg.latent_dim);
        let enc = (0..chans.len() - 1)
            .map(|i| Conv1d::new(store, &format!("enc.{i}"), chans[i], chans[i + 1], 4, 2, 1, rng))
            .collect();
        let dec = (0..chans.len() - 1)
            .rev()
            .map(|i| {
                ConvTranspose1d::new(store, &format!("dec.{i}"), chans[i + 1], chans[i], 4, 2, 1, rng)
            })
            .collect();
        VqNet {
            enc,
            dec,
            f: cfg.f,
            latent: cfg.latent_dim,
        }
    }

    /// `x`: `batch x 128` normalized frames. Returns `batch x F x latent`.
    pub fn encode<T: Scalar>(&self, p: &[T], x: &[T], batch: usize) -> (Vec<T>, EncCache<T>) {
        let mut h = x.to_vec();
        let mut len = N_MELS;
        let mut cache = EncCache {
            cols: Vec::new(),
            pre: Vec::new(),
            lens: Vec::new(),
        };
        for (i, conv) in self.enc.iter().enumerate() {
            let (y, cols) = conv.forward(p, &h, batch, len);
            cache.cols.push(cols);
            cache.lens.push(len);
            len = conv.out_len(len);
            if i + 1 < self.enc.len() {
                h = relu(&y);
                cache.pre.push(y);
            } else {
                h = y;
            }
        }
        (h, cache)
    }

    /// Gradient w.r.t. encoder parameters given `dz`.
    pub fn encode_backward<T: Scalar>(
        &self,
        p: &[T],
        g: &mut [T],
        cache: &EncCache<T>,
        dz: &[T],
        batch: usize,
    ) {
        let mut d = dz.to_vec();
        for i in (0..self.enc.len()).rev() {
            if i + 1 < self.enc.len() {
                relu_back(&cache.pre[i], &mut d);
            }
            d = self.enc[i].backward(p, g, &cache.cols[i], &d, batch, cache.lens[i]);
        }
    }

    /// `z`: `batch x F x latent`. Returns `batch x 128`.
    pub fn decode<T: Scalar>(&self, p: &[T], z: &[T], batch: usize) -> (Vec<T>, DecCache<T>) {
        let mut h = z.to_vec();
        let mut len = self.f;
        let mut cache = DecCache {
            inputs: Vec::new(),
            pre: Vec::new(),
            lens: Vec::new(),
        };
        for (i, ct) in self.dec.iter().enumerate() {
            let y = ct.forward(p, &h, batch, len);
            cache.inputs.push(h);
            cache.lens.push(len);
            len = ct.out_len(len);
            if i + 1 < self.dec.len() {
                h = relu(&y);
                cache.pre.push(y);
            } else {
                h = y;
            }
        }
        (h, cache)
    }

    /// Returns the gradient w.r.t. the decoder input.
    pub fn decode_backward<T: Scalar>(
        &self,
        p: &[T],
        g: &mut [T],
        cache: &DecCache<T>,
        dy: &[T],
        batch: usize,
    ) -> Vec<T> {
        let mut d = dy.to_vec();
        for i in (0..self.dec.len()).rev() {
            if i + 1 < self.dec.len() {
                relu_back(&cache.pre[i], &mut d);
            }
            d = self.dec[i].backward(p, g, &cache.inputs[i], &d, batch, cache.lens[i]);
        }
        d
    }
}

/// Nearest code per latent vector; ties go to the lower index. 0-based.
pub fn nearest_codes<T: Scalar>(z: &[T], codebooks: &[T], f: usize, c: usize, l: usize) -> Vec<u32> {
    let n = z.len() / l;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let fi = i % f;
        let v = &z[i * l..(i + 1) * l];
        let book = &codebooks[fi * c * l..(fi + 1) * c * l];
        let mut best = (T::infinity(), 0u32);
        for k in 0..c {
            let e = &book[k * l..(k + 1) * l];
            let d: T = v.iter().zip(e).map(|(&a, &b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, k as u32);
            }
        }
        out.push(best.1);
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VqStepLog {
    pub step: u64,
    pub recon_mse: f64,
    pub commit: f64,
    /// Mean over codebooks of the number of codes used in the logging window.
    pub active_codes: f64,
}

#[derive(Clone, Debug)]
pub struct VqVae {
    pub config: VqvaeConfig,
    net: VqNet,
    pub params: ParamStore<f32>,
    /// `F x C x latent`.
    pub codebooks: Vec<f32>,
    pub norm_mean: f64,
    pub norm_std: f64,
    pub trained: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: VqvaeConfig,
    norm_mean: f64,
    norm_std: f64,
    trained: bool,
    params: Vec<(String, Vec<usize>)>,
}

impl VqVae {
    pub fn new(config: VqvaeConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::default();
        let net = VqNet::new(&config, &mut params, &mut rng);
        let codebooks = (0..config.f * config.c * config.latent_dim)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect();
        Ok(VqVae {
            config,
            net,
            params,
            codebooks,
            norm_mean: 0.0,
            norm_std: 1.0,
            trained: false,
        })
    }

    fn normalize(&self, frames: &[f64]) -> Vec<f32> {
        frames
            .iter()
            .map(|&v| ((v - self.norm_mean) / self.norm_std) as f32)
            .collect()
    }

    fn require_trained(&self) -> Result<()> {
        if self.trained {
            Ok(())
        } else {
            Err(Error::Untrained("VQ-VAE has not been trained".into()))
        }
    }

    /// One token of `F` 1-based codes per frame, flattened `T x F`.
    pub fn encode(&self, mel: &MelSpectrogram) -> Result<Vec<u32>> {
        self.require_trained()?;
        let x = self.normalize(mel.data());
        let (z, _) = self.net.encode(&self.params.data, &x, mel.frames());
        let cfg = &self.config;
        Ok(nearest_codes(&z, &self.codebooks, cfg.f, cfg.c, cfg.latent_dim)
            .into_iter()
            .map(|k| k + 1)
            .collect())
    }

    /// Inverse of [`VqVae::encode`]; `tokens` is `T x F` with entries in `1..=C`.
    pub fn decode(&self, tokens: &[u32]) -> Result<MelSpectrogram> {
        self.require_trained()?;
        let cfg = &self.config;
        if tokens.is_empty() || !tokens.len().is_multiple_of(cfg.f) {
            return Err(Error::ShapeMismatch(format!(
                "{} MS entries is not a multiple of F = {}",
                tokens.len(),
                cfg.f
            )));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t < 1 || t as usize > cfg.c) {
            return Err(Error::OutOfVocabulary(format!("MS code {bad} outside [1, {}]", cfg.c)));
        }
        let frames = tokens.len() / cfg.f;
        let l = cfg.latent_dim;
        let mut z = Vec::with_capacity(tokens.len() * l);
        for (i, &t) in tokens.iter().enumerate() {
            let fi = i % cfg.f;
            let off = (fi * cfg.c + t as usize - 1) * l;
            z.extend_from_slice(&self.codebooks[off..off + l]);
        }
        let (y, _) = self.net.decode(&self.params.data, &z, frames);
        let data = y
            .iter()
            .map(|&v| v as f64 * self.norm_std + self.norm_mean)
            .collect();
        MelSpectrogram::from_frames(frames, data)
    }

    /// Normalized-unit reconstruction MSE per frame of `mel`.
    pub fn frame_mse(&self, mel: &MelSpectrogram) -> Result<Vec<f64>> {
        let back = self.decode(&self.encode(mel)?)?;
        Ok((0..mel.frames())
            .map(|t| {
                mel.frame(t)
                    .iter()
                    .zip(back.frame(t))
                    .map(|(a, b)| ((a - b) / self.norm_std).powi(2))
                    .sum::<f64>()
                    / N_MELS as f64
            })
            .collect())
    }

    /// Trains on the given frames (`frames x 128`, log-mel). Returns the curve.
    pub fn train(&mut self, frames: &[f64]) -> Result<Vec<VqStepLog>> {
        let cfg = self.config.clone();
        let n = frames.len() / N_MELS;
        if n == 0 || !frames.len().is_multiple_of(N_MELS) {
            return Err(Error::NotEnoughData("no mel frames to train on".into()));
        }
        let mean = frames.iter().sum::<f64>() / frames.len() as f64;
        let var = frames.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / frames.len() as f64;
        self.norm_mean = mean;
        self.norm_std = var.sqrt().max(1e-6);
        let x_all = self.normalize(frames);

        let (f, c, l) = (cfg.f, cfg.c, cfg.latent_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a7a);
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: cfg.lr,
                weight_decay: 0.0,
                clip_norm: Some(5.0),
                ..Default::default()
            },
            self.params.decay_mask(),
        );
        let batch = cfg.batch.min(n);
        let mut order: Vec<usize> = (0..n).collect();
        let mut cursor = n;

        let mut ema_count = vec![1.0f64; f * c];
        let mut ema_sum: Vec<f64> = self.codebooks.iter().map(|&v| v as f64).collect();
        let mut last_used = vec![0u64; f * c];
        let mut window_used = vec![false; f * c];
        let mut seeded = false;
        let mut curve = Vec::new();
        let mut acc = (0.0, 0.0, 0usize);

        for step in 1..=cfg.steps {
            let mut xb = Vec::with_capacity(batch * N_MELS);
            for _ in 0..batch {
                if cursor == n {
                    rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
                    cursor = 0;
                }
                let i = order[cursor];
                cursor += 1;
                xb.extend_from_slice(&x_all[i * N_MELS..(i + 1) * N_MELS]);
            }
            let p = &self.params.data;
            let (z, enc_cache) = self.net.encode(p, &xb, batch);
            if !seeded {
                // codebooks start at encoder outputs of the first batch
                for fi in 0..f {
                    for k in 0..c {
                        let b = rng.gen_range(0..batch);
                        let src = (b * f + fi) * l;
                        let dst = (fi * c + k) * l;
                        for j in 0..l {
                            let v = z[src + j] + rng.gen_range(-0.01f32..0.01);
                            self.codebooks[dst + j] = v;
                            ema_sum[dst + j] = v as f64;
                        }
                    }
                }
                seeded = true;
            }
            let codes = nearest_codes(&z, &self.codebooks, f, c, l);
            let mut zq = Vec::with_capacity(z.len());
            for (i, &k) in codes.iter().enumerate() {
                let off = ((i % f) * c + k as usize) * l;
                zq.extend_from_slice(&self.codebooks[off..off + l]);
            }
            let (y, dec_cache) = self.net.decode(p, &zq, batch);
            let inv_n = 1.0 / (batch * N_MELS) as f32;
            let mut recon = 0.0f64;
            let dy: Vec<f32> = y
                .iter()
                .zip(&xb)
                .map(|(&a, &b)| {
                    recon += ((a - b) as f64).powi(2);
                    2.0 * (a - b) * inv_n
                })
                .collect();
            recon /= (batch * N_MELS) as f64;
            let mut grads = self.params.zeros_like();
            let mut dz = self.net.decode_backward(p, &mut grads, &dec_cache, &dy, batch);
            let inv_z = 1.0 / z.len() as f32;
            let beta = cfg.beta as f32;
            let mut commit = 0.0f64;
            for ((g, &ze), &eq) in dz.iter_mut().zip(&z).zip(&zq) {
                commit += ((ze - eq) as f64).powi(2);
                *g += 2.0 * beta * (ze - eq) * inv_z;
            }
            commit /= z.len() as f64;
            if !recon.is_finite() || !commit.is_finite() {
                return Err(Error::Diverged {
                    message: format!("VQ-VAE loss became non-finite at step {step}"),
                    last_good: None,
                });
            }
            self.net
                .encode_backward(&self.params.data, &mut grads, &enc_cache, &dz, batch);
            opt.step(&mut self.params.data, &mut grads);
            if !all_finite(&self.params.data) {
                return Err(Error::Diverged {
                    message: format!("VQ-VAE parameters became non-finite at step {step}"),
                    last_good: None,
                });
            }

            // EMA codebook update
            let gamma = cfg.ema_decay;
            let mut cnt = vec![0.0f64; f * c];
            let mut sum = vec![0.0f64; f * c * l];
            for (i, &k) in codes.iter().enumerate() {
                let slot = (i % f) * c + k as usize;
                cnt[slot] += 1.0;
                for j in 0..l {
                    sum[slot * l + j] += z[i * l + j] as f64;
                }
                last_used[slot] = step;
                window_used[slot] = true;
            }
            for fi in 0..f {
                let mut total = 0.0;
                for k in 0..c {
                    let s = fi * c + k;
                    ema_count[s] = gamma * ema_count[s] + (1.0 - gamma) * cnt[s];
                    total += ema_count[s];
                    for j in 0..l {
                        ema_sum[s * l + j] = gamma * ema_sum[s * l + j] + (1.0 - gamma) * sum[s * l + j];
                    }
                }
                let eps = 1e-5;
                for k in 0..c {
                    let s = fi * c + k;
                    let smoothed = (ema_count[s] + eps) / (total + c as f64 * eps) * total;
                    for j in 0..l {
                        self.codebooks[s * l + j] = (ema_sum[s * l + j] / smoothed) as f32;
                    }
                }
                for k in 0..c {
                    let s = fi * c + k;
                    if step - last_used[s] > cfg.dead_after {
                        let b = rng.gen_range(0..batch);
                        let src = (b * f + fi) * l;
                        for j in 0..l {
                            let v = z[src + j] + rng.gen_range(-0.01f32..0.01);
                            self.codebooks[s * l + j] = v;
                            ema_sum[s * l + j] = v as f64;
                        }
                        ema_count[s] = 1.0;
                        last_used[s] = step;
                    }
                }
            }

            acc.0 += recon;
            acc.1 += commit;
            acc.2 += 1;
            if step % cfg.log_every.max(1) == 0 || step == cfg.steps {
                let active = (0..f)
                    .map(|fi| window_used[fi * c..(fi + 1) * c].iter().filter(|&&u| u).count())
                    .sum::<usize>() as f64
                    / f as f64;
                let log = VqStepLog {
                    step,
                    recon_mse: acc.0 / acc.2 as f64,
                    commit: acc.1 / acc.2 as f64,
                    active_codes: active,
                };
                log::info!(
                    "vqvae step {step}: recon {:.5} commit {:.5} active {:.1}",
                    log.recon_mse,
                    log.commit,
                    log.active_codes
                );
                curve.push(log);
                acc = (0.0, 0.0, 0);
                window_used.iter_mut().for_each(|u| *u = false);
            }
        }
        self.trained = true;
        Ok(curve)
    }

    /// SHA-256 over configuration, normalization and weights.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        h.update(self.norm_mean.to_le_bytes());
        h.update(self.norm_std.to_le_bytes());
        for v in self.params.data.iter().chain(&self.codebooks) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Number of distinct codes each codebook assigns over `mel`.
    pub fn code_usage(&self, mel: &MelSpectrogram) -> Result<Vec<usize>> {
        let codes = self.encode(mel)?;
        let f = self.config.f;
        Ok((0..f)
            .map(|fi| {
                let mut seen = vec![false; self.config.c + 1];
                for t in 0..mel.frames() {
                    seen[codes[t * f + fi] as usize] = true;
                }
                seen.iter().filter(|&&s| s).count()
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            config: self.config.clone(),
            norm_mean: self.norm_mean,
            norm_std: self.norm_std,
            trained: self.trained,
            params: self
                .params
                .specs
                .iter()
                .map(|s| (s.name.clone(), s.shape.clone()))
                .collect(),
        };
        save_container(
            path,
            MAGIC,
            VERSION,
            &Container {
                header: serde_json::to_value(header)?,
                blobs: vec![self.params.data.clone(), self.codebooks.clone()],
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = load_container(path, MAGIC, VERSION)?;
        let h: Header = serde_json::from_value(c.header)?;
        let mut m = VqVae::new(h.config)?;
        let layout: Vec<(String, Vec<usize>)> = m
            .params
            .specs
            .iter()
            .map(|s| (s.name.clone(), s.shape.clone()))
            .collect();
        if layout != h.params || c.blobs.len() != 2 {
            return Err(Error::Format("VQ-VAE checkpoint layout mismatch".into()));
        }
        let [params, books]: [Vec<f32>; 2] = c.blobs.try_into().unwrap();
        if params.len() != m.params.len() || books.len() != m.codebooks.len() {
            return Err(Error::Format("VQ-VAE checkpoint size mismatch".into()));
        }
        m.params.data = params;
        m.codebooks = books;
        m.norm_mean = h.norm_mean;
        m.norm_std = h.norm_std;
        m.trained = h.trained;
        Ok(m)
    }
}
