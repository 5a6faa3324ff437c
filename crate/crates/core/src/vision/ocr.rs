//! Parameterised OCR imperfections.
//!
//! Noise for a region is drawn from a generator keyed by the caller's seed,
//! the region's rounded canonical position and its true text. The same text
//! at the same place therefore reads the same way in every frame of a
//! session, as a real recogniser fails consistently on a given rendering.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::screen::{FrameObservation, TextRegion};

#[derive(Debug, Clone, PartialEq)]
pub struct OcrNoiseModel {
    pub sub_prob: f64,
    pub miss_prob: f64,
    pub ws_prob: f64,
    confusions: BTreeMap<char, Vec<char>>,
}

#[derive(Debug, Error)]
pub enum NoiseProfileError {
    #[error("invalid noise profile: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0} must be within [0, 1], got {1}")]
    Probability(&'static str, f64),
    #[error("confusion entries must be two distinct single characters, got {0:?}")]
    Confusion(Vec<String>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    sub_prob: f64,
    miss_prob: f64,
    ws_prob: f64,
    #[serde(default)]
    confusions: Vec<Vec<String>>,
}

const DEFAULT_CONFUSIONS: [(char, char); 6] =
    [('O', '0'), ('I', 'l'), ('l', '1'), ('I', '1'), ('S', '5'), ('B', '8')];

impl OcrNoiseModel {
    pub fn new(sub_prob: f64, miss_prob: f64, ws_prob: f64, pairs: &[(char, char)]) -> Result<Self, NoiseProfileError> {
        for (name, p) in [("sub_prob", sub_prob), ("miss_prob", miss_prob), ("ws_prob", ws_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(NoiseProfileError::Probability(name, p));
            }
        }
        let mut confusions: BTreeMap<char, Vec<char>> = BTreeMap::new();
        for &(a, b) in pairs {
            if a == b {
                return Err(NoiseProfileError::Confusion(vec![a.to_string(), b.to_string()]));
            }
            confusions.entry(a).or_default().push(b);
            confusions.entry(b).or_default().push(a);
        }
        for partners in confusions.values_mut() {
            partners.sort_unstable();
            partners.dedup();
        }
        Ok(Self { sub_prob, miss_prob, ws_prob, confusions })
    }

    /// A perfect recogniser.
    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0, &DEFAULT_CONFUSIONS).expect("valid constants")
    }

    /// Fitted so that about 0.25% of elements fail verification on random
    /// forms: 0.15% of regions go undetected and confusable characters flip
    /// with probability 0.03%, which adds roughly another 0.1% per element.
    pub fn calibrated() -> Self {
        Self::new(0.0003, 0.0015, 0.01, &DEFAULT_CONFUSIONS).expect("valid constants")
    }

    /// Reads a profile with keys `sub_prob`, `miss_prob`, `ws_prob`, `confusions`.
    pub fn from_toml(text: &str) -> Result<Self, NoiseProfileError> {
        let raw: RawProfile = toml::from_str(text)?;
        let mut pairs = Vec::with_capacity(raw.confusions.len());
        for entry in raw.confusions {
            let chars: Vec<char> = entry.iter().flat_map(|s| s.chars()).collect();
            if entry.len() != 2 || chars.len() != 2 {
                return Err(NoiseProfileError::Confusion(entry));
            }
            pairs.push((chars[0], chars[1]));
        }
        Self::new(raw.sub_prob, raw.miss_prob, raw.ws_prob, &pairs)
    }

    pub fn partners(&self, c: char) -> &[char] {
        self.confusions.get(&c).map_or(&[], Vec::as_slice)
    }

    pub fn is_zero(&self) -> bool {
        self.sub_prob == 0.0 && self.miss_prob == 0.0 && self.ws_prob == 0.0
    }

    /// Applies the model to one text; `None` means the region was not detected.
    pub fn perturb<R: Rng + ?Sized>(&self, text: &str, rng: &mut R) -> Option<String> {
        if self.miss_prob > 0.0 && rng.random_bool(self.miss_prob) {
            return None;
        }
        let mut chars: Vec<char> = text.chars().collect();
        if self.sub_prob > 0.0 {
            for c in chars.iter_mut() {
                let partners = self.partners(*c);
                if !partners.is_empty() && rng.random_bool(self.sub_prob) {
                    *c = partners[rng.random_range(0..partners.len())];
                }
            }
        }
        if self.ws_prob > 0.0 && rng.random_bool(self.ws_prob) {
            let spaces: Vec<usize> = (0..chars.len()).filter(|&i| chars[i] == ' ').collect();
            if !spaces.is_empty() && rng.random_bool(0.5) {
                chars.remove(spaces[rng.random_range(0..spaces.len())]);
            } else if chars.len() > 1 {
                chars.insert(rng.random_range(1..chars.len()), ' ');
            }
        }
        Some(chars.into_iter().collect())
    }
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>, mut h: u64) -> u64 {
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn region_seed(seed: u64, region: &TextRegion) -> u64 {
    let c = region.quad.centroid();
    let (cx, cy) = (c.x.round() as i64, c.y.round() as i64);
    let h = fnv1a(seed.to_le_bytes(), 0xcbf2_9ce4_8422_2325);
    let h = fnv1a(cx.to_le_bytes().into_iter().chain(cy.to_le_bytes()), h);
    fnv1a(region.text.bytes(), h)
}

/// Runs the recogniser over a canonical frame.
pub fn ocr_observe(frame: &FrameObservation, model: &OcrNoiseModel, seed: u64) -> FrameObservation {
    if model.is_zero() {
        return frame.clone();
    }
    let regions = frame
        .regions
        .iter()
        .filter_map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(region_seed(seed, r));
            model.perturb(&r.text, &mut rng).map(|text| TextRegion { quad: r.quad, text })
        })
        .collect();
    FrameObservation { regions, ..frame.clone() }
}
