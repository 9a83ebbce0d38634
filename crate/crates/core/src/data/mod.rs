//! Corpus generation, degradation, manifests, segmentation and the token cache.
//!
//! Corpus directory layout:
//!
//! ```text
//! <corpus>/manifest.jsonl      one UtteranceRecord per line
//! <corpus>/clean/<id>.wav      dry speech
//! <corpus>/mix/<id>_d<k>.wav   degraded mixtures
//! <corpus>/f0/<id>.json        programmed f0 contour (synthetic corpora)
//! ```

pub mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attributes::{content_units, extract_attributes, DegradationMeta};
use crate::dsp::wav::{read_wav, write_wav};
use crate::dsp::{
    apply_rir, c50, mel_spectrogram, mix_at_snr, rms_loudness, synth_rir, MelSpectrogram, Waveform, DB_CLAMP, HOP, SAMPLE_RATE, WINDOW,
};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::tokenize::{fit_content_codebook, Family, TokenizerManifest};
use crate::vqvae::VqVae;
use synth::{colored_noise, synth_utterance, NoiseKind, SpeakerPreset, NOISE_KINDS};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub speakers: usize,
    pub utterances_per_speaker: usize,
    pub duration_secs: f64,
    /// Degraded mixtures written per clean utterance.
    pub degraded_per_utterance: usize,
    pub snr_range: [f64; 2],
    pub c50_range: [f64; 2],
    /// Probability that a mixture is reverberated.
    pub reverb_prob: f64,
    pub rir_secs: f64,
    pub segment_secs: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            speakers: 4,
            utterances_per_speaker: 8,
            duration_secs: 2.0,
            degraded_per_utterance: 1,
            snr_range: [0.0, 30.0],
            c50_range: [0.0, 25.0],
            reverb_prob: 0.5,
            rir_secs: 0.5,
            segment_secs: 2.0,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if self.speakers < 2 {
            return Err(Error::Config("corpus needs at least 2 speakers".into()));
        }
        if self.utterances_per_speaker == 0 {
            return Err(Error::Config("utterances_per_speaker must be >= 1".into()));
        }
        if !ordered(self.snr_range) || !ordered(self.c50_range) {
            return Err(Error::Config("snr_range and c50_range must be ordered and finite".into()));
        }
        if !(0.0..=1.0).contains(&self.reverb_prob) {
            return Err(Error::Config("reverb_prob must be in [0, 1]".into()));
        }
        if self.duration_secs < self.segment_secs || self.segment_secs * SAMPLE_RATE as f64 <= WINDOW as f64 {
            return Err(Error::Config("duration must cover at least one segment".into()));
        }
        Ok(())
    }

    pub fn segment_samples(&self) -> usize {
        (self.segment_secs * SAMPLE_RATE as f64).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    /// Paths relative to the corpus directory.
    pub clean: String,
    pub mixture: String,
    pub speaker: u32,
    pub speaker_name: String,
    pub meta: DegradationMeta,
    /// `[start, end)` sample bounds.
    pub segments: Vec<[usize; 2]>,
    pub f0_contour: Option<String>,
}

impl UtteranceRecord {
    pub fn is_clean(&self) -> bool {
        self.clean == self.mixture
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub dir: PathBuf,
    pub records: Vec<UtteranceRecord>,
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut records = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        let c = Corpus {
            dir: dir.to_path_buf(),
            records,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self) -> Result<()> {
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.push(b'\n');
        }
        write_atomic(&self.dir.join(MANIFEST_FILE), &out)
    }

    fn validate(&self) -> Result<()> {
        for r in &self.records {
            for p in [&r.clean, &r.mixture] {
                if !self.dir.join(p).is_file() {
                    return Err(Error::InvalidInput(format!("{}: missing file {p}", r.id)));
                }
            }
            if r.speaker == 0 {
                return Err(Error::InvalidInput(format!("{}: speaker labels are 1-based", r.id)));
            }
        }
        Ok(())
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Speaker names ordered by label.
    pub fn speakers(&self) -> Vec<String> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            m.insert(r.speaker, r.speaker_name.clone());
        }
        let max = m.keys().copied().max().unwrap_or(0);
        (1..=max)
            .map(|l| m.get(&l).cloned().unwrap_or_else(|| format!("speaker{l}")))
            .collect()
    }

    pub fn read_f0_contour(&self, r: &UtteranceRecord) -> Result<Option<Vec<f64>>> {
        match &r.f0_contour {
            None => Ok(None),
            Some(p) => {
                let path = self.path(p);
                let s = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                Ok(Some(serde_json::from_str(&s)?))
            }
        }
    }
}

/// Non-overlapping segments of `seg` samples; a trailing remainder is dropped.
pub fn segment_bounds(len: usize, seg: usize) -> Vec<[usize; 2]> {
    (0..len / seg).map(|i| [i * seg, (i + 1) * seg]).collect()
}

/// Reverberation (unless `c50_target >= 60`) then additive noise at `snr_db`.
pub fn degrade_with(
    clean: &Waveform,
    snr_db: f64,
    c50_target: f64,
    noise: NoiseKind,
    rir_secs: f64,
    rng: &mut impl Rng,
) -> Result<(Waveform, DegradationMeta)> {
    let (reverbed, c50_db, rir_id) = if c50_target >= DB_CLAMP {
        (clean.clone(), DB_CLAMP, "none".to_string())
    } else {
        let ir = synth_rir(c50_target, rir_secs, rng)?;
        (apply_rir(clean, &ir)?, c50(&ir), format!("exp-c50-{c50_target:.2}"))
    };
    let n = colored_noise(noise, clean.len(), rng);
    let mix = mix_at_snr(&reverbed, &n, snr_db)?;
    Ok((
        mix,
        DegradationMeta {
            true_snr_db: snr_db,
            true_c50_db: c50_db,
            noise_id: noise.name().to_string(),
            rir_id,
        },
    ))
}

/// Random degradation drawn from the configured ranges.
pub fn degrade(clean: &Waveform, cfg: &CorpusConfig, rng: &mut impl Rng) -> Result<(Waveform, DegradationMeta)> {
    let draw = |r: [f64; 2], rng: &mut dyn rand::RngCore| {
        if r[0] == r[1] {
            r[0]
        } else {
            rng.gen_range(r[0]..=r[1])
        }
    };
    let c50_target = if rng.gen_bool(cfg.reverb_prob) {
        draw(cfg.c50_range, rng)
    } else {
        DB_CLAMP
    };
    let snr = draw(cfg.snr_range, rng);
    let kind = NOISE_KINDS[rng.gen_range(0..NOISE_KINDS.len())];
    degrade_with(clean, snr, c50_target, kind, cfg.rir_secs, rng)
}

#[allow(clippy::too_many_arguments)]
fn write_degraded(
    dir: &Path,
    id: &str,
    clean: &Waveform,
    clean_rel: &str,
    speaker: (u32, &str),
    segments: &[[usize; 2]],
    f0_rel: Option<String>,
    cfg: &CorpusConfig,
    rng: &mut impl Rng,
) -> Result<Vec<UtteranceRecord>> {
    let mut out = vec![UtteranceRecord {
        id: id.to_string(),
        clean: clean_rel.to_string(),
        mixture: clean_rel.to_string(),
        speaker: speaker.0,
        speaker_name: speaker.1.to_string(),
        meta: DegradationMeta::clean(),
        segments: segments.to_vec(),
        f0_contour: f0_rel.clone(),
    }];
    for d in 0..cfg.degraded_per_utterance {
        let (mix, meta) = degrade(clean, cfg, rng)?;
        let rel = format!("mix/{id}_d{d}.wav");
        write_wav(&dir.join(&rel), &mix)?;
        out.push(UtteranceRecord {
            id: format!("{id}_d{d}"),
            clean: clean_rel.to_string(),
            mixture: rel,
            speaker: speaker.0,
            speaker_name: speaker.1.to_string(),
            meta,
            segments: segments.to_vec(),
            f0_contour: f0_rel.clone(),
        });
    }
    Ok(out)
}

fn mkdirs(dir: &Path) -> Result<()> {
    for sub in ["clean", "mix", "f0"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Writes a synthetic multi-speaker corpus into `dir` and returns it.
pub fn generate_synthetic_corpus(dir: &Path, cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    mkdirs(dir)?;
    let seg = cfg.segment_samples();
    let mut records = Vec::new();
    for label in 1..=cfg.speakers as u32 {
        let spk = SpeakerPreset::generate(label, cfg.seed);
        for u in 0..cfg.utterances_per_speaker {
            let mut rng = ChaCha8Rng::seed_from_u64(
                cfg.seed ^ ((label as u64) << 32) ^ (u as u64).wrapping_mul(0x2545_f491),
            );
            let utt = synth_utterance(&spk, cfg.duration_secs, &mut rng)?;
            let id = format!("{}_u{u:03}", spk.name);
            let clean_rel = format!("clean/{id}.wav");
            write_wav(&dir.join(&clean_rel), &utt.audio)?;
            // records refer to what is on disk
            let clean = read_wav(&dir.join(&clean_rel))?;
            let f0_rel = format!("f0/{id}.json");
            write_atomic(&dir.join(&f0_rel), serde_json::to_string(&utt.f0)?.as_bytes())?;
            records.extend(write_degraded(
                dir,
                &id,
                &clean,
                &clean_rel,
                (label, &spk.name),
                &segment_bounds(clean.len(), seg),
                Some(f0_rel),
                cfg,
                &mut rng,
            )?);
        }
    }
    let corpus = Corpus {
        dir: dir.to_path_buf(),
        records,
    };
    corpus.save()?;
    Ok(corpus)
}

/// Imports user WAVs listed as `path,speaker` lines (relative paths resolve
/// against the list's directory) and degrades them like the synthetic corpus.
pub fn ingest_wavs(list: &Path, dir: &Path, cfg: &CorpusConfig) -> Result<Corpus> {
    let text = fs::read_to_string(list).map_err(|e| Error::io(list, e))?;
    let base = list.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (p, s) = line.rsplit_once(',').ok_or_else(|| {
            Error::Format(format!("{}:{}: expected `path,speaker`", list.display(), n + 1))
        })?;
        entries.push((base.join(p.trim()), s.trim().to_string()));
    }
    let mut names: Vec<String> = entries.iter().map(|(_, s)| s.clone()).collect();
    names.sort();
    names.dedup();
    if names.len() < 2 {
        return Err(Error::NotEnoughData("ingest needs at least 2 speakers".into()));
    }
    mkdirs(dir)?;
    let seg = cfg.segment_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::new();
    for (i, (path, name)) in entries.iter().enumerate() {
        let w = read_wav(path)?;
        let segments = segment_bounds(w.len(), seg);
        if segments.is_empty() {
            log::warn!("{}: shorter than one segment, skipped", path.display());
            continue;
        }
        let label = names.iter().position(|n| n == name).unwrap() as u32 + 1;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("utt");
        let id = format!("{i:05}_{stem}");
        let clean_rel = format!("clean/{id}.wav");
        write_wav(&dir.join(&clean_rel), &w)?;
        let clean = read_wav(&dir.join(&clean_rel))?;
        records.extend(write_degraded(
            dir,
            &id,
            &clean,
            &clean_rel,
            (label, name),
            &segments,
            None,
            cfg,
            &mut rng,
        )?);
    }
    let corpus = Corpus {
        dir: dir.to_path_buf(),
        records,
    };
    corpus.save()?;
    Ok(corpus)
}

/// Log-mel frames (`n x 128`, flattened) of every mixture segment.
pub fn corpus_mel_frames(corpus: &Corpus) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for r in &corpus.records {
        let w = read_wav(&corpus.path(&r.mixture))?;
        for s in &r.segments {
            out.extend_from_slice(mel_spectrogram(&w.slice(s[0], s[1]))?.data());
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub content_clusters: usize,
    pub seed: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            content_clusters: 100,
            seed: 0,
        }
    }
}

/// Fits the content codebook and loudness range on the clean side of `corpus`.
pub fn fit_tokenizer(
    corpus: &Corpus,
    cfg: &TokenizerConfig,
    segment_frames: usize,
    ms_codebooks: usize,
    ms_codebook_size: usize,
) -> Result<TokenizerManifest> {
    let mut seen = std::collections::BTreeSet::new();
    let mut frames = Vec::new();
    let mut loud_max = 0.0f64;
    for r in &corpus.records {
        if !seen.insert(r.clean.clone()) {
            continue;
        }
        let w = read_wav(&corpus.path(&r.clean))?;
        for s in &r.segments {
            let seg = w.slice(s[0], s[1]);
            frames.extend(content_units(&seg)?);
            loud_max = rms_loudness(&seg, WINDOW, HOP)?
                .into_iter()
                .fold(loud_max, f64::max);
        }
    }
    if frames.is_empty() {
        return Err(Error::NotEnoughData("corpus has no segments".into()));
    }
    let cb = fit_content_codebook(&frames, cfg.content_clusters, cfg.seed)?;
    log::info!(
        "content codebook: K={} inertia {:.3} after {} iterations",
        cb.k,
        cb.inertia,
        cb.iterations
    );
    TokenizerManifest::new(
        segment_frames,
        ms_codebooks,
        ms_codebook_size,
        if loud_max > 0.0 { loud_max } else { 1.0 },
        cb,
        corpus.speakers(),
    )
}

/// Tokens of all seven families for one segment, each flattened `M x D`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSet {
    pub families: Vec<Vec<u32>>,
}

impl TokenSet {
    pub fn family(&self, f: Family) -> &[u32] {
        &self.families[f.index()]
    }

    pub fn validate(&self, manifest: &TokenizerManifest) -> Result<()> {
        let layout = manifest.layout();
        if self.families.len() != 7 {
            return Err(Error::ShapeMismatch("token set needs 7 families".into()));
        }
        for f in Family::ALL {
            let (d, k) = manifest.vocab(f);
            let v = self.family(f);
            if v.len() != layout.lengths[f.index()] * d {
                return Err(Error::ShapeMismatch(format!(
                    "{}: {} entries, layout expects {}",
                    f.name(),
                    v.len(),
                    layout.lengths[f.index()] * d
                )));
            }
            if let Some(bad) = v.iter().find(|&&t| t < 1 || t as usize > k) {
                return Err(Error::OutOfVocabulary(format!(
                    "{} entry {bad} outside [1, {k}]",
                    f.name()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub id: String,
    pub speaker: u32,
    pub tokens: TokenSet,
}

/// Tokens for one segment: MS from the mixture, attributes from the clean
/// signal and the degradation metadata.
pub fn segment_tokens(
    clean: &Waveform,
    mixture: &Waveform,
    meta: &DegradationMeta,
    speaker: u32,
    manifest: &TokenizerManifest,
    vq: &VqVae,
) -> Result<TokenSet> {
    let mel = mel_spectrogram(mixture)?;
    if mel.frames() != manifest.segment_frames {
        return Err(Error::ShapeMismatch(format!(
            "segment has {} mel frames, manifest expects {}",
            mel.frames(),
            manifest.segment_frames
        )));
    }
    let attrs = extract_attributes(clean, meta, speaker)?;
    let mut families = vec![vq.encode(&mel)?];
    families.extend(manifest.tokenize(&attrs)?.into_iter().map(|s| s.tokens));
    let t = TokenSet { families };
    t.validate(manifest)?;
    Ok(t)
}

/// Key under which cached tokens are valid.
pub fn cache_key(manifest: &TokenizerManifest, vq: &VqVae) -> String {
    format!("{}-{}", manifest.hash(), vq.fingerprint())
}

const CACHE_MAGIC: &[u8; 4] = b"ATOK";
const CACHE_VERSION: u32 = 1;

pub fn write_token_cache(path: &Path, key: &str, t: &TokenSet) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.write_u32::<LittleEndian>(CACHE_VERSION).unwrap();
    out.write_u32::<LittleEndian>(key.len() as u32).unwrap();
    out.extend_from_slice(key.as_bytes());
    out.write_u32::<LittleEndian>(t.families.len() as u32).unwrap();
    for f in &t.families {
        out.write_u32::<LittleEndian>(f.len() as u32).unwrap();
        for &v in f {
            out.write_u32::<LittleEndian>(v).unwrap();
        }
    }
    write_atomic(path, &out)
}

/// Refuses files written under a different key.
pub fn read_token_cache(path: &Path, key: &str) -> Result<TokenSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = &bytes[..];
    let bad = || Error::Format(format!("{}: corrupt token cache", path.display()));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad())?;
    if &magic != CACHE_MAGIC || r.read_u32::<LittleEndian>().map_err(|_| bad())? != CACHE_VERSION {
        return Err(bad());
    }
    let kl = r.read_u32::<LittleEndian>().map_err(|_| bad())? as usize;
    if kl > r.len() {
        return Err(bad());
    }
    if &r[..kl] != key.as_bytes() {
        return Err(Error::ManifestMismatch(format!(
            "{}: cached under a different tokenizer/VQ-VAE",
            path.display()
        )));
    }
    r = &r[kl..];
    let n = r.read_u32::<LittleEndian>().map_err(|_| bad())? as usize;
    let mut families = Vec::with_capacity(n.min(16));
    for _ in 0..n {
        let len = r.read_u32::<LittleEndian>().map_err(|_| bad())? as usize;
        if len * 4 > r.len() {
            return Err(bad());
        }
        let mut v = vec![0u32; len];
        r.read_u32_into::<LittleEndian>(&mut v).map_err(|_| bad())?;
        families.push(v);
    }
    Ok(TokenSet { families })
}

/// Tokenizes every segment of `corpus`, reusing `cache_dir` entries when their
/// key matches.
pub fn build_examples(
    corpus: &Corpus,
    manifest: &TokenizerManifest,
    vq: &VqVae,
    cache_dir: Option<&Path>,
) -> Result<Vec<TrainingExample>> {
    let key = cache_key(manifest, vq);
    let mut out = Vec::new();
    for r in &corpus.records {
        let mut audio: Option<(Waveform, Waveform)> = None;
        for (si, s) in r.segments.iter().enumerate() {
            let id = format!("{}_s{si}", r.id);
            let cache_path = cache_dir.map(|d| d.join(&key[..16]).join(format!("{id}.tok")));
            if let Some(p) = cache_path.as_ref().filter(|p| p.is_file()) {
                match read_token_cache(p, &key) {
                    Ok(t) if t.validate(manifest).is_ok() => {
                        out.push(TrainingExample {
                            id,
                            speaker: r.speaker,
                            tokens: t,
                        });
                        continue;
                    }
                    Ok(_) => log::warn!("{}: invalid cached tokens, rebuilding", p.display()),
                    Err(e) => log::warn!("{e}; rebuilding"),
                }
            }
            if audio.is_none() {
                audio = Some((
                    read_wav(&corpus.path(&r.clean))?,
                    read_wav(&corpus.path(&r.mixture))?,
                ));
            }
            let (clean, mix) = audio.as_ref().unwrap();
            let t = segment_tokens(
                &clean.slice(s[0], s[1]),
                &mix.slice(s[0], s[1]),
                &r.meta,
                r.speaker,
                manifest,
                vq,
            )?;
            if let Some(p) = &cache_path {
                write_token_cache(p, &key, &t)?;
            }
            out.push(TrainingExample {
                id,
                speaker: r.speaker,
                tokens: t,
            });
        }
    }
    Ok(out)
}

/// Mel of one segment of a record's mixture.
pub fn segment_mel(corpus: &Corpus, r: &UtteranceRecord, seg: usize) -> Result<MelSpectrogram> {
    let w = read_wav(&corpus.path(&r.mixture))?;
    let s = r.segments[seg];
    mel_spectrogram(&w.slice(s[0], s[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::measured_snr_db;

    #[test]
    fn segments_inside_bounds() {
        assert_eq!(segment_bounds(70000, 32000), vec![[0, 32000], [32000, 64000]]);
        assert!(segment_bounds(100, 32000).is_empty());
    }

    #[test]
    fn snr_draws_stay_in_range() {
        let cfg = CorpusConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..1000 {
            let v = rng.gen_range(cfg.snr_range[0]..=cfg.snr_range[1]);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert!(lo >= 0.0 && hi <= 30.0);
    }

    #[test]
    fn degrade_meta_matches_measurement() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spk = SpeakerPreset::generate(1, 0);
        let u = synth_utterance(&spk, 1.0, &mut rng).unwrap();
        let (mix, meta) = degrade_with(&u.audio, 7.5, DB_CLAMP, NoiseKind::Pink, 0.5, &mut rng).unwrap();
        assert_eq!(meta.true_c50_db, 60.0);
        assert_eq!(meta.rir_id, "none");
        assert!((measured_snr_db(u.audio.samples(), mix.samples()) - 7.5).abs() < 1e-6);
        let (_, meta) = degrade_with(&u.audio, 10.0, 8.0, NoiseKind::White, 0.5, &mut rng).unwrap();
        assert!((meta.true_c50_db - 8.0).abs() < 1e-6);
    }

    #[test]
    fn token_cache_roundtrip_and_key_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.tok");
        let t = TokenSet {
            families: vec![vec![1, 2, 3], vec![4], vec![], vec![5, 6], vec![7], vec![8], vec![9]],
        };
        write_token_cache(&p, "key-1", &t).unwrap();
        assert_eq!(read_token_cache(&p, "key-1").unwrap(), t);
        assert!(matches!(
            read_token_cache(&p, "key-2"),
            Err(Error::ManifestMismatch(_))
        ));
    }
}
