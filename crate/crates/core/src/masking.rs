//! Joint token layout and the two masking strategies used in training and
//! inference.

use std::ops::Range;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::Family;

/// Family lengths `(N, M1..M6)` in the order of [`Family::ALL`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub lengths: [usize; 7],
}

impl TokenLayout {
    pub fn new(lengths: [usize; 7]) -> Self {
        TokenLayout { lengths }
    }

    pub fn total(&self) -> usize {
        self.lengths.iter().sum()
    }

    pub fn ms_len(&self) -> usize {
        self.lengths[0]
    }

    pub fn sa_len(&self) -> usize {
        self.lengths[1..].iter().sum()
    }

    pub fn range(&self, f: Family) -> Range<usize> {
        let i = f.index();
        let start: usize = self.lengths[..i].iter().sum();
        start..start + self.lengths[i]
    }

    pub fn family_at(&self, pos: usize) -> Option<Family> {
        let mut acc = 0;
        for f in Family::ALL {
            acc += self.lengths[f.index()];
            if pos < acc {
                return Some(f);
            }
        }
        None
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengths.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "every family needs at least one token: {:?}",
                self.lengths
            )));
        }
        Ok(())
    }
}

/// `true` marks a masked position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPattern {
    pub flags: Vec<bool>,
    pub p: f64,
}

impl MaskPattern {
    pub fn masked_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn visible(&self) -> Vec<usize> {
        (0..self.flags.len()).filter(|&i| !self.flags[i]).collect()
    }

    pub fn masked(&self) -> Vec<usize> {
        (0..self.flags.len()).filter(|&i| self.flags[i]).collect()
    }

    pub fn masked_in(&self, layout: &TokenLayout, f: Family) -> usize {
        self.flags[layout.range(f)].iter().filter(|&&x| x).count()
    }

    pub fn check(&self, layout: &TokenLayout) -> Result<()> {
        if self.flags.len() != layout.total() {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} flags, layout {}",
                self.flags.len(),
                layout.total()
            )));
        }
        Ok(())
    }
}

/// `floor(x + 0.5)`.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Coupled masking with `p ~ Uniform(0, 1)`.
pub fn sample_coupled_mask(layout: &TokenLayout, rng: &mut impl Rng) -> MaskPattern {
    let p: f64 = rng.gen();
    sample_coupled_mask_with_p(layout, p, rng)
}

/// `round(p N)` MS positions and, independently per attribute,
/// `round((1 - p) M_i)` positions are masked uniformly at random.
pub fn sample_coupled_mask_with_p(layout: &TokenLayout, p: f64, rng: &mut impl Rng) -> MaskPattern {
    let p = p.clamp(0.0, 1.0);
    let mut flags = vec![false; layout.total()];
    for f in Family::ALL {
        let r = layout.range(f);
        let ratio = if f == Family::Ms { p } else { 1.0 - p };
        let n = round_half_up(ratio * r.len() as f64).min(r.len());
        for i in sample(rng, r.len(), n) {
            flags[r.start + i] = true;
        }
    }
    MaskPattern { flags, p }
}

/// Which representation is hidden.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hide {
    /// Generation: predict the mel tokens from the attributes.
    Ms,
    /// Analysis: predict the attributes from the mel tokens.
    Sa,
}

pub fn all_or_nothing(layout: &TokenLayout, hide: Hide) -> MaskPattern {
    let ms = layout.range(Family::Ms);
    let flags = (0..layout.total())
        .map(|i| ms.contains(&i) == (hide == Hide::Ms))
        .collect();
    MaskPattern {
        flags,
        p: if hide == Hide::Ms { 1.0 } else { 0.0 },
    }
}
