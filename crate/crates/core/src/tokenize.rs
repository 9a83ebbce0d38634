//! Discretisation of attribute tracks into grouped integer tokens, and back.
//!
//! Every token family has a `(D, K)` layout: a token is `D` contiguous values,
//! each an index in `1..=K`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attributes::{AttributeSet, CONTENT_DIM, CONTENT_RATE, MEL_RATE};
use crate::dsp::{DB_CLAMP, F0_MAX, F0_MIN};
use crate::error::{Error, Result};
use crate::masking::TokenLayout;

pub const MANIFEST_VERSION: u32 = 1;
pub const KMEANS_MAX_ITERS: usize = 300;

/// Token families in layout order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Ms,
    Content,
    F0,
    Loudness,
    Speaker,
    Snr,
    C50,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Ms,
        Family::Content,
        Family::F0,
        Family::Loudness,
        Family::Speaker,
        Family::Snr,
        Family::C50,
    ];
    pub const ATTRS: [Family; 6] = [
        Family::Content,
        Family::F0,
        Family::Loudness,
        Family::Speaker,
        Family::Snr,
        Family::C50,
    ];

    /// Position in [`Family::ALL`].
    pub fn index(self) -> usize {
        Family::ALL.iter().position(|&f| f == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Ms => "ms",
            Family::Content => "content",
            Family::F0 => "f0",
            Family::Loudness => "loudness",
            Family::Speaker => "speaker",
            Family::Snr => "snr",
            Family::C50 => "c50",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Norm {
    /// Equal-width bins over `range`.
    LinearMinMax,
    /// Index 1 is unvoiced (0 Hz); indices `2..=K` are equal-width over `range`.
    F0Voiced,
    /// The value is the index.
    Categorical,
    /// Nearest k-means centroid.
    Kmeans,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttrTokenSpec {
    pub attr_id: u8,
    pub d: usize,
    pub k: usize,
    pub frame_rate: f64,
    pub norm: Norm,
    pub range: [f64; 2],
}

impl AttrTokenSpec {
    pub fn content() -> Self {
        AttrTokenSpec {
            attr_id: 1,
            d: 2,
            k: 100,
            frame_rate: CONTENT_RATE,
            norm: Norm::Kmeans,
            range: [0.0, 0.0],
        }
    }

    pub fn f0() -> Self {
        AttrTokenSpec {
            attr_id: 2,
            d: 4,
            k: 400,
            frame_rate: MEL_RATE,
            norm: Norm::F0Voiced,
            range: [F0_MIN, F0_MAX],
        }
    }

    /// `max` is the corpus loudness maximum.
    pub fn loudness(max: f64) -> Self {
        AttrTokenSpec {
            attr_id: 3,
            d: 4,
            k: 100,
            frame_rate: MEL_RATE,
            norm: Norm::LinearMinMax,
            range: [0.0, max],
        }
    }

    pub fn speaker(count: usize) -> Self {
        AttrTokenSpec {
            attr_id: 4,
            d: 4,
            k: count,
            frame_rate: MEL_RATE,
            norm: Norm::Categorical,
            range: [1.0, count as f64],
        }
    }

    pub fn snr() -> Self {
        AttrTokenSpec {
            attr_id: 5,
            d: 4,
            k: 128,
            frame_rate: MEL_RATE,
            norm: Norm::LinearMinMax,
            range: [-DB_CLAMP, DB_CLAMP],
        }
    }

    pub fn c50() -> Self {
        AttrTokenSpec {
            attr_id: 6,
            ..Self::snr()
        }
    }

    pub fn family(&self) -> Family {
        Family::ATTRS[(self.attr_id as usize).saturating_sub(1).min(5)]
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.attr_id) {
            return Err(Error::InvalidInput(format!("attr_id {} not in 1..=6", self.attr_id)));
        }
        if self.k < 2 || self.d < 1 {
            return Err(Error::InvalidInput(format!(
                "attribute {}: need K >= 2 and D >= 1, got K={} D={}",
                self.attr_id, self.k, self.d
            )));
        }
        if matches!(self.norm, Norm::LinearMinMax | Norm::F0Voiced)
            && !(self.range[0].is_finite() && self.range[1] > self.range[0])
        {
            return Err(Error::InvalidInput(format!(
                "attribute {}: invalid range {:?}",
                self.attr_id, self.range
            )));
        }
        Ok(())
    }

    /// Width of one value bin in physical units.
    pub fn bin_width(&self) -> f64 {
        let span = self.range[1] - self.range[0];
        match self.norm {
            Norm::LinearMinMax => span / self.k as f64,
            Norm::F0Voiced => span / (self.k - 1) as f64,
            Norm::Categorical => 1.0,
            Norm::Kmeans => f64::NAN,
        }
    }

    /// Bin index in `1..=K`; second value is true when `v` had to be clamped.
    pub fn bin_of(&self, v: f64) -> (u32, bool) {
        let [lo, hi] = self.range;
        match self.norm {
            Norm::LinearMinMax => {
                let w = self.bin_width();
                let raw = ((v - lo) / w).floor();
                let b = raw.clamp(0.0, (self.k - 1) as f64);
                (b as u32 + 1, v < lo || v > hi)
            }
            Norm::F0Voiced => {
                if v <= 0.0 {
                    return (1, false);
                }
                let w = self.bin_width();
                let raw = ((v - lo) / w).floor();
                let b = raw.clamp(0.0, (self.k - 2) as f64);
                (b as u32 + 2, v < lo || v > hi)
            }
            Norm::Categorical => {
                let r = v.round().clamp(1.0, self.k as f64);
                (r as u32, r != v.round())
            }
            Norm::Kmeans => (1, true),
        }
    }

    /// Physical value represented by bin `idx`.
    pub fn center(&self, idx: u32) -> f64 {
        let lo = self.range[0];
        match self.norm {
            Norm::LinearMinMax => lo + (idx as f64 - 0.5) * self.bin_width(),
            Norm::F0Voiced => {
                if idx == 1 {
                    0.0
                } else {
                    lo + (idx as f64 - 1.5) * self.bin_width()
                }
            }
            Norm::Categorical => idx as f64,
            Norm::Kmeans => f64::NAN,
        }
    }
}

/// `M x D` tokens of one family, flattened row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteTokenSequence {
    pub family: Family,
    pub d: usize,
    pub tokens: Vec<u32>,
}

impl DiscreteTokenSequence {
    pub fn new(family: Family, d: usize, tokens: Vec<u32>) -> Result<Self> {
        if d == 0 || tokens.is_empty() || !tokens.len().is_multiple_of(d) {
            return Err(Error::ShapeMismatch(format!(
                "{} tokens cannot form rows of width {d}",
                tokens.len()
            )));
        }
        Ok(DiscreteTokenSequence { family, d, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, j: usize) -> &[u32] {
        &self.tokens[j * self.d..(j + 1) * self.d]
    }

    pub fn check_vocab(&self, k: usize) -> Result<()> {
        if let Some(bad) = self.tokens.iter().find(|&&t| t < 1 || t as usize > k) {
            return Err(Error::OutOfVocabulary(format!(
                "{} entry {bad} outside [1, {k}]",
                self.family.name()
            )));
        }
        Ok(())
    }
}

/// Groups `d` values per token, padding the last token by repeating the final value.
pub fn group(values: &[u32], d: usize) -> Vec<u32> {
    let m = values.len().div_ceil(d);
    let mut out = Vec::with_capacity(m * d);
    out.extend_from_slice(values);
    let last = *values.last().unwrap_or(&1);
    out.resize(m * d, last);
    out
}

/// Linear interpolation to `len` samples, keeping both endpoints.
pub fn resample_linear(track: &[f64], len: usize) -> Vec<f64> {
    if track.is_empty() || len == 0 {
        return Vec::new();
    }
    if track.len() == len {
        return track.to_vec();
    }
    if len == 1 || track.len() == 1 {
        return vec![track[0]; len];
    }
    let scale = (track.len() - 1) as f64 / (len - 1) as f64;
    (0..len)
        .map(|i| {
            let x = i as f64 * scale;
            let j = (x.floor() as usize).min(track.len() - 2);
            let a = x - j as f64;
            track[j] * (1.0 - a) + track[j + 1] * a
        })
        .collect()
}

pub fn quantize_scalar_track(track: &[f64], spec: &AttrTokenSpec) -> Result<DiscreteTokenSequence> {
    spec.validate()?;
    if track.is_empty() {
        return Err(Error::InvalidInput("cannot quantize an empty track".into()));
    }
    if matches!(spec.norm, Norm::Kmeans) {
        return Err(Error::InvalidInput("k-means attributes use tokenize_content".into()));
    }
    if track.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("track contains non-finite values".into()));
    }
    let mut clamped = 0usize;
    let bins: Vec<u32> = track
        .iter()
        .map(|&v| {
            let (b, c) = spec.bin_of(v);
            clamped += c as usize;
            b
        })
        .collect();
    if clamped > 0 {
        log::warn!(
            "{}: {clamped} value(s) outside {:?} were clamped",
            spec.family().name(),
            spec.range
        );
    }
    DiscreteTokenSequence::new(spec.family(), spec.d, group(&bins, spec.d))
}

/// Bin centers; truncated to `len` values when given.
pub fn dequantize_scalar_track(
    seq: &DiscreteTokenSequence,
    spec: &AttrTokenSpec,
    len: Option<usize>,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if seq.d != spec.d {
        return Err(Error::ShapeMismatch(format!(
            "token width {} but spec D = {}",
            seq.d, spec.d
        )));
    }
    seq.check_vocab(spec.k)?;
    let mut out: Vec<f64> = seq.tokens.iter().map(|&t| spec.center(t)).collect();
    if let Some(n) = len {
        out.truncate(n);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansCodebook {
    pub k: usize,
    pub dim: usize,
    /// `K x dim`, row-major.
    pub centroids: Vec<f64>,
    /// SHA-256 of the training frames.
    pub fitted_on: String,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KMeansCodebook {
    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// 0-based nearest centroid; ties go to the lower index.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for i in 0..self.k {
            let d = sq_dist(x, self.centroid(i));
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }
}

/// Lloyd's algorithm with k-means++ seeding.
pub fn fit_content_codebook(frames: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansCodebook> {
    if k == 0 {
        return Err(Error::InvalidInput("K must be >= 1".into()));
    }
    let dim = frames.first().map_or(0, |f| f.len());
    if dim == 0 || frames.iter().any(|f| f.len() != dim) {
        return Err(Error::ShapeMismatch("frames must be non-empty and rectangular".into()));
    }
    let mut distinct: Vec<Vec<u64>> = frames
        .iter()
        .map(|f| f.iter().map(|v| v.to_bits()).collect())
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::NotEnoughData(format!(
            "{} distinct frames for {k} clusters",
            distinct.len()
        )));
    }
    let mut hasher = Sha256::new();
    for f in frames {
        for v in f {
            hasher.update(v.to_le_bytes());
        }
    }
    let fitted_on = hex::encode(hasher.finalize());

    let n = frames.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(&frames[rng.gen_range(0..n)]);
    let mut d2: Vec<f64> = frames.iter().map(|f| sq_dist(f, &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        let c = frames[pick].clone();
        for (i, f) in frames.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(f, &c));
        }
        centroids.extend_from_slice(&c);
    }

    let mut cb = KMeansCodebook {
        k,
        dim,
        centroids,
        fitted_on,
        inertia: 0.0,
        iterations: 0,
        converged: false,
    };
    let mut assign = vec![usize::MAX; n];
    for iter in 1..=KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, f) in frames.iter().enumerate() {
            let a = cb.nearest(f);
            if a != assign[i] {
                assign[i] = a;
                changed = true;
            }
        }
        cb.iterations = iter;
        if !changed {
            cb.converged = true;
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (f, &a) in frames.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(f) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    cb.centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
        // Empty clusters take the point worst served by its centroid.
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(&frames[a], cb.centroid(assign[a]));
                        let db = sq_dist(&frames[b], cb.centroid(assign[b]));
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap();
                cb.centroids[c * dim..(c + 1) * dim].copy_from_slice(&frames[far]);
                assign[far] = c;
                counts[c] = 1;
            }
        }
    }
    cb.inertia = frames
        .iter()
        .map(|f| sq_dist(f, cb.centroid(cb.nearest(f))))
        .sum();
    Ok(cb)
}

pub fn tokenize_content(
    frames: &[Vec<f64>],
    cb: &KMeansCodebook,
    spec: &AttrTokenSpec,
) -> Result<DiscreteTokenSequence> {
    spec.validate()?;
    if spec.attr_id != 1 {
        return Err(Error::InvalidInput("content spec must have attr_id 1".into()));
    }
    if spec.k != cb.k {
        return Err(Error::ShapeMismatch(format!(
            "spec K={} but codebook has {} centroids",
            spec.k, cb.k
        )));
    }
    if frames.is_empty() {
        return Err(Error::InvalidInput("no content frames".into()));
    }
    if let Some(f) = frames.iter().find(|f| f.len() != cb.dim) {
        return Err(Error::ShapeMismatch(format!(
            "content frame has {} dims, codebook {}",
            f.len(),
            cb.dim
        )));
    }
    let idx: Vec<u32> = frames.iter().map(|f| cb.nearest(f) as u32 + 1).collect();
    DiscreteTokenSequence::new(Family::Content, spec.d, group(&idx, spec.d))
}

/// Centroid per entry, truncated to `len` frames when given.
pub fn dequantize_content(
    seq: &DiscreteTokenSequence,
    cb: &KMeansCodebook,
    len: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    seq.check_vocab(cb.k)?;
    let mut out: Vec<Vec<f64>> = seq
        .tokens
        .iter()
        .map(|&t| cb.centroid(t as usize - 1).to_vec())
        .collect();
    if let Some(n) = len {
        out.truncate(n);
    }
    Ok(out)
}

pub fn tokenize_speaker(label: u32, m: usize, spec: &AttrTokenSpec) -> Result<DiscreteTokenSequence> {
    spec.validate()?;
    if label < 1 || label as usize > spec.k {
        return Err(Error::OutOfVocabulary(format!(
            "speaker label {label} outside [1, {}]",
            spec.k
        )));
    }
    if m == 0 {
        return Err(Error::InvalidInput("speaker sequence needs M >= 1".into()));
    }
    DiscreteTokenSequence::new(Family::Speaker, spec.d, vec![label; m * spec.d])
}

/// Most frequent label over all entries; ties go to the lower label.
pub fn decode_speaker(seq: &DiscreteTokenSequence, spec: &AttrTokenSpec) -> Result<u32> {
    seq.check_vocab(spec.k)?;
    let mut counts = vec![0usize; spec.k + 1];
    for &t in &seq.tokens {
        counts[t as usize] += 1;
    }
    let mut best = 1;
    for l in 1..=spec.k {
        if counts[l] > counts[best] {
            best = l;
        }
    }
    Ok(best as u32)
}

/// Everything needed to turn attributes into tokens and back without the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizerManifest {
    pub version: u32,
    /// Mel frames per segment.
    pub segment_frames: usize,
    /// MS codebooks per frame (F) and codes per codebook (C).
    pub ms_codebooks: usize,
    pub ms_codebook_size: usize,
    /// Specs for attributes 1..=6 in order.
    pub specs: Vec<AttrTokenSpec>,
    pub content_codebook: KMeansCodebook,
    pub speakers: Vec<String>,
}

impl TokenizerManifest {
    pub fn new(
        segment_frames: usize,
        ms_codebooks: usize,
        ms_codebook_size: usize,
        loudness_max: f64,
        content_codebook: KMeansCodebook,
        speakers: Vec<String>,
    ) -> Result<Self> {
        let mut content = AttrTokenSpec::content();
        content.k = content_codebook.k;
        let m = TokenizerManifest {
            version: MANIFEST_VERSION,
            segment_frames,
            ms_codebooks,
            ms_codebook_size,
            specs: vec![
                content,
                AttrTokenSpec::f0(),
                AttrTokenSpec::loudness(loudness_max),
                AttrTokenSpec::speaker(speakers.len()),
                AttrTokenSpec::snr(),
                AttrTokenSpec::c50(),
            ],
            content_codebook,
            speakers,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::ManifestMismatch(format!(
                "tokenizer manifest version {} (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        if self.specs.len() != 6 {
            return Err(Error::ManifestMismatch("manifest needs six attribute specs".into()));
        }
        for (i, s) in self.specs.iter().enumerate() {
            s.validate()?;
            if s.attr_id as usize != i + 1 {
                return Err(Error::ManifestMismatch("attribute specs out of order".into()));
            }
        }
        if self.segment_frames < 2 || !self.segment_frames.is_multiple_of(2) {
            return Err(Error::InvalidInput("segment_frames must be even and >= 2".into()));
        }
        if self.content_codebook.dim != CONTENT_DIM || self.content_codebook.k != self.specs[0].k {
            return Err(Error::ManifestMismatch("content codebook does not match spec".into()));
        }
        if self.ms_codebooks == 0 || self.ms_codebook_size < 2 {
            return Err(Error::InvalidInput("need F >= 1 and C >= 2".into()));
        }
        Ok(())
    }

    pub fn spec(&self, f: Family) -> &AttrTokenSpec {
        &self.specs[f.index() - 1]
    }

    /// Content frames per segment.
    pub fn content_frames(&self) -> usize {
        self.segment_frames / 2
    }

    /// `(D, K)` of a family.
    pub fn vocab(&self, f: Family) -> (usize, usize) {
        match f {
            Family::Ms => (self.ms_codebooks, self.ms_codebook_size),
            _ => {
                let s = self.spec(f);
                (s.d, s.k)
            }
        }
    }

    pub fn layout(&self) -> TokenLayout {
        let mut lengths = [0usize; 7];
        lengths[0] = self.segment_frames;
        for f in Family::ATTRS {
            let t = if f == Family::Content {
                self.content_frames()
            } else {
                self.segment_frames
            };
            lengths[f.index()] = t.div_ceil(self.spec(f).d);
        }
        TokenLayout::new(lengths)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Six token sequences for one segment-sized attribute set.
    pub fn tokenize(&self, attrs: &AttributeSet) -> Result<Vec<DiscreteTokenSequence>> {
        attrs.validate()?;
        let t = self.segment_frames;
        let fit = |track: &[f64]| resample_linear(track, t);
        let content: Vec<Vec<f64>> = if attrs.content.len() == self.content_frames() {
            attrs.content.clone()
        } else {
            let cols: Vec<Vec<f64>> = (0..CONTENT_DIM)
                .map(|j| {
                    let col: Vec<f64> = attrs.content.iter().map(|r| r[j]).collect();
                    resample_linear(&col, self.content_frames())
                })
                .collect();
            (0..self.content_frames())
                .map(|i| cols.iter().map(|c| c[i]).collect())
                .collect()
        };
        if content.is_empty() || attrs.f0.is_empty() {
            return Err(Error::InvalidInput("empty attribute tracks".into()));
        }
        let f0 = if attrs.f0.len() == t {
            attrs.f0.clone()
        } else {
            // voicing does not interpolate: nearest frame
            (0..t)
                .map(|i| attrs.f0[(i * attrs.f0.len() / t).min(attrs.f0.len() - 1)])
                .collect()
        };
        let speaker_m = t.div_ceil(self.spec(Family::Speaker).d);
        Ok(vec![
            tokenize_content(&content, &self.content_codebook, self.spec(Family::Content))?,
            quantize_scalar_track(&f0, self.spec(Family::F0))?,
            quantize_scalar_track(&fit(&attrs.loudness), self.spec(Family::Loudness))?,
            tokenize_speaker(attrs.speaker, speaker_m, self.spec(Family::Speaker))?,
            quantize_scalar_track(&fit(&attrs.snr), self.spec(Family::Snr))?,
            quantize_scalar_track(&fit(&attrs.c50), self.spec(Family::C50))?,
        ])
    }

    /// Inverse of [`TokenizerManifest::tokenize`] for one segment.
    pub fn detokenize(&self, seqs: &[DiscreteTokenSequence]) -> Result<AttributeSet> {
        if seqs.len() != 6 {
            return Err(Error::ShapeMismatch(format!("expected 6 sequences, got {}", seqs.len())));
        }
        let t = Some(self.segment_frames);
        Ok(AttributeSet {
            content: dequantize_content(&seqs[0], &self.content_codebook, Some(self.content_frames()))?,
            content_rate: CONTENT_RATE,
            f0: dequantize_scalar_track(&seqs[1], self.spec(Family::F0), t)?,
            loudness: dequantize_scalar_track(&seqs[2], self.spec(Family::Loudness), t)?,
            speaker: decode_speaker(&seqs[3], self.spec(Family::Speaker))?,
            snr: dequantize_scalar_track(&seqs[4], self.spec(Family::Snr), t)?,
            c50: dequantize_scalar_track(&seqs[5], self.spec(Family::C50), t)?,
            frame_rate: MEL_RATE,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        crate::io::write_atomic(path, s.as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: TokenizerManifest = serde_json::from_str(&s)?;
        m.validate()?;
        Ok(m)
    }
}
