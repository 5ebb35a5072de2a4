//! The toy text-to-image world: a five-slot attribute vocabulary, a
//! deterministic renderer and dataset sampling over public / private
//! attribute combinations.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::seeds;

/// Attribute slots per prompt.
pub const SLOTS: usize = 5;
/// Token values per slot.
pub const VALUES: usize = 4;
/// Word tokens plus one padding token.
pub const VOCAB_SIZE: usize = SLOTS * VALUES + 1;
pub const PAD_TOKEN: usize = SLOTS * VALUES;
/// Number of distinct prompts (`VALUES^SLOTS`).
pub const PROMPT_COUNT: usize = 1024;

pub const SLOT_NAMES: [&str; SLOTS] = ["shape", "size", "intensity", "x", "y"];

const WORDS: [[&str; VALUES]; SLOTS] = [
    ["circle", "square", "triangle", "cross"],
    ["tiny", "small", "medium", "large"],
    ["ghost", "faint", "dim", "bright"],
    ["right", "midright", "midleft", "left"],
    ["top", "upper", "lower", "bottom"],
];

const RADIUS: [f32; VALUES] = [2.5, 3.5, 4.5, 5.5];
const INTENSITY: [f32; VALUES] = [0.45, 0.6, 0.75, 0.9];
const X_FRAC: [f32; VALUES] = [0.70, 0.57, 0.43, 0.30];
const Y_FRAC: [f32; VALUES] = [0.30, 0.43, 0.57, 0.70];
const BACKGROUND: f32 = 0.1;
const SUPERSAMPLE: usize = 4;

/// A prompt: one value index per slot.
///
/// Value `v` in slot `s` corresponds to the global vocabulary id `s * VALUES + v`.
/// Serialized as its text form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Prompt([u8; SLOTS]);

impl TryFrom<String> for Prompt {
    type Error = Error;

    fn try_from(text: String) -> Result<Self> {
        Prompt::parse(&text)
    }
}

impl From<Prompt> for String {
    fn from(p: Prompt) -> String {
        p.text()
    }
}

impl Prompt {
    pub fn new(values: [u8; SLOTS]) -> Result<Self> {
        if let Some((slot, v)) = values.iter().enumerate().find(|(_, &v)| v as usize >= VALUES) {
            return Err(Error::InvalidPrompt(format!(
                "value {v} out of range for slot {}",
                SLOT_NAMES[slot]
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> [u8; SLOTS] {
        self.0
    }

    pub fn value(&self, slot: usize) -> usize {
        self.0[slot] as usize
    }

    /// Global vocabulary ids, one per slot.
    pub fn token_ids(&self) -> [usize; SLOTS] {
        let mut out = [0; SLOTS];
        for (s, v) in self.0.iter().enumerate() {
            out[s] = s * VALUES + *v as usize;
        }
        out
    }

    pub fn from_token_ids(ids: &[usize]) -> Result<Self> {
        if ids.len() != SLOTS {
            return Err(Error::InvalidPrompt(format!("expected {SLOTS} tokens, got {}", ids.len())));
        }
        let mut values = [0u8; SLOTS];
        for (s, &id) in ids.iter().enumerate() {
            if id / VALUES != s || id >= SLOTS * VALUES {
                return Err(Error::InvalidPrompt(format!(
                    "token {id} is not a {} token",
                    SLOT_NAMES[s]
                )));
            }
            values[s] = (id % VALUES) as u8;
        }
        Ok(Self(values))
    }

    /// Mixed-radix index in `0..PROMPT_COUNT`.
    pub fn index(&self) -> usize {
        self.0.iter().fold(0, |acc, &v| acc * VALUES + v as usize)
    }

    pub fn from_index(mut index: usize) -> Result<Self> {
        if index >= PROMPT_COUNT {
            return Err(Error::InvalidPrompt(format!("prompt index {index} out of range")));
        }
        let mut values = [0u8; SLOTS];
        for s in (0..SLOTS).rev() {
            values[s] = (index % VALUES) as u8;
            index /= VALUES;
        }
        Ok(Self(values))
    }

    pub fn all() -> impl Iterator<Item = Prompt> {
        (0..PROMPT_COUNT).map(|i| Prompt::from_index(i).expect("in range"))
    }

    pub fn text(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.len() != SLOTS {
            return Err(Error::InvalidPrompt(format!(
                "expected {SLOTS} words, got {}: {text:?}",
                words.len()
            )));
        }
        let mut values = [0u8; SLOTS];
        for (s, w) in words.iter().enumerate() {
            let v = WORDS[s]
                .iter()
                .position(|cand| cand == w)
                .ok_or_else(|| Error::InvalidPrompt(format!("unknown {} word {w:?}", SLOT_NAMES[s])))?;
            values[s] = v as u8;
        }
        Ok(Self(values))
    }

    /// Number of slots whose value differs.
    pub fn hamming(&self, other: &Prompt) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (s, v) in self.0.iter().enumerate() {
            if s > 0 {
                f.write_str(" ")?;
            }
            f.write_str(WORDS[s][*v as usize])?;
        }
        Ok(())
    }
}

/// Word for a global vocabulary id (`<pad>` for the padding token).
pub fn token_word(id: usize) -> &'static str {
    if id >= SLOTS * VALUES {
        "<pad>"
    } else {
        WORDS[id / VALUES][id % VALUES]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Real,
    SourceGenerated,
    OtherGenerated,
}

impl Origin {
    pub fn code(self) -> u8 {
        match self {
            Origin::Real => 0,
            Origin::SourceGenerated => 1,
            Origin::OtherGenerated => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Origin::Real),
            1 => Ok(Origin::SourceGenerated),
            2 => Ok(Origin::OtherGenerated),
            c => Err(Error::Format(format!("unknown origin code {c}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPair {
    pub prompt: Prompt,
    pub image: Image,
    origin: Origin,
}

impl LabeledPair {
    pub fn new(prompt: Prompt, image: Image, origin: Origin) -> Self {
        Self { prompt, image, origin }
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Partition {
    Public,
    Private,
    All,
}

/// Rule used to pick the reserved private combinations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrivateRule {
    /// Every prompt whose value in `slot` equals `value`.
    SlotValue { slot: usize, value: usize },
    /// A seeded uniform sample of `count` prompts.
    Random { count: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub image_size: usize,
    pub style_amplitude: f32,
    /// Reserved combinations, sorted by prompt index.
    pub private_combos: Vec<Prompt>,
    pub seed: u64,
}

impl WorldConfig {
    pub const DEFAULT_IMAGE_SIZE: usize = 16;
    pub const DEFAULT_STYLE_AMPLITUDE: f32 = 0.15;
    pub const DEFAULT_PRIVATE_RULE: PrivateRule = PrivateRule::SlotValue { slot: 0, value: 3 };

    pub fn new(seed: u64) -> Result<Self> {
        Self::with_rule(
            Self::DEFAULT_IMAGE_SIZE,
            Self::DEFAULT_STYLE_AMPLITUDE,
            Self::DEFAULT_PRIVATE_RULE,
            seed,
        )
    }

    pub fn with_rule(image_size: usize, style_amplitude: f32, rule: PrivateRule, seed: u64) -> Result<Self> {
        let private_combos = match rule {
            PrivateRule::SlotValue { slot, value } => {
                if slot >= SLOTS || value >= VALUES {
                    return Err(Error::InvalidArgument(format!("private rule {rule:?} out of range")));
                }
                Prompt::all().filter(|p| p.value(slot) == value).collect()
            }
            PrivateRule::Random { count } => {
                let mut all: Vec<Prompt> = Prompt::all().collect();
                let mut rng = seeds::rng_for(seed, "world/private", 0);
                all.shuffle(&mut rng);
                let mut picked: Vec<Prompt> = all.into_iter().take(count).collect();
                picked.sort();
                picked
            }
        };
        let cfg = Self {
            image_size,
            style_amplitude,
            private_combos,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 4 {
            return Err(Error::InvalidArgument(format!("image size {} too small", self.image_size)));
        }
        if !(0.0..=1.0).contains(&self.style_amplitude) {
            return Err(Error::InvalidArgument(format!(
                "style amplitude {} outside [0,1]",
                self.style_amplitude
            )));
        }
        if self.private_combos.is_empty() {
            return Err(Error::InvalidArgument("private combination list is empty".into()));
        }
        if self.private_combos.len() >= PROMPT_COUNT {
            return Err(Error::InvalidArgument("no public combinations left".into()));
        }
        if self.private_combos.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "private combinations must be sorted and distinct".into(),
            ));
        }
        Ok(())
    }

    pub fn is_private(&self, prompt: &Prompt) -> bool {
        self.private_combos.binary_search(prompt).is_ok()
    }

    pub fn partition(&self, partition: Partition) -> Vec<Prompt> {
        Prompt::all()
            .filter(|p| match partition {
                Partition::All => true,
                Partition::Private => self.is_private(p),
                Partition::Public => !self.is_private(p),
            })
            .collect()
    }

    pub fn pixel_count(&self) -> usize {
        self.image_size * self.image_size
    }

    /// SHA-256 over a canonical text rendering of the config.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical_text().as_bytes());
        hex(&h.finalize())
    }

    pub fn canonical_text(&self) -> String {
        let combos: Vec<String> = self.private_combos.iter().map(|p| p.index().to_string()).collect();
        format!(
            "image_size={}\nstyle_amplitude={}\nseed={}\nprivate={}\n",
            self.image_size,
            self.style_amplitude,
            self.seed,
            combos.join(",")
        )
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic ground-truth image for `prompt`.
pub fn render(prompt: &Prompt, config: &WorldConfig) -> Image {
    let side = config.image_size;
    let scale = side as f32 / 16.0;
    let radius = RADIUS[prompt.value(1)] * scale;
    let intensity = INTENSITY[prompt.value(2)];
    let cx = X_FRAC[prompt.value(3)] * side as f32;
    let cy = Y_FRAC[prompt.value(4)] * side as f32;
    let shape = prompt.value(0);

    let mut style_rng = seeds::rng_for(config.seed, "world/style", prompt.index() as u64);
    let amp = config.style_amplitude;

    let mut pixels = Vec::with_capacity(side * side);
    let inv = 1.0 / SUPERSAMPLE as f32;
    for py in 0..side {
        for px in 0..side {
            let mut covered = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = px as f32 + (sx as f32 + 0.5) * inv - cx;
                    let y = py as f32 + (sy as f32 + 0.5) * inv - cy;
                    if inside(shape, x, y, radius) {
                        covered += 1;
                    }
                }
            }
            let coverage = covered as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
            let base = BACKGROUND + (intensity - BACKGROUND) * coverage;
            let style: f32 = style_rng.random_range(-1.0f32..=1.0);
            pixels.push((base + amp * style).clamp(0.0, 1.0));
        }
    }
    Image::new(side, pixels).expect("square image")
}

fn inside(shape: usize, x: f32, y: f32, r: f32) -> bool {
    match shape {
        0 => x * x + y * y <= r * r,
        1 => x.abs() <= 0.85 * r && y.abs() <= 0.85 * r,
        2 => {
            // apex up, base at +r
            if !(-r..=r).contains(&y) {
                return false;
            }
            let half_width = r * (y + r) / (2.0 * r);
            x.abs() <= half_width
        }
        _ => {
            let arm = r / 3.0;
            (x.abs() <= arm && y.abs() <= r) || (y.abs() <= arm && x.abs() <= r)
        }
    }
}

/// Samples `count` distinct prompts from `partition` and pairs them with their
/// renders.
pub fn build_dataset(config: &WorldConfig, count: usize, partition: Partition, seed: u64) -> Result<Vec<LabeledPair>> {
    let prompts = sample_prompts(config, count, partition, seed)?;
    Ok(prompts
        .into_iter()
        .map(|p| LabeledPair::new(p, render(&p, config), Origin::Real))
        .collect())
}

/// Uniform sample without replacement, in draw order.
pub fn sample_prompts(config: &WorldConfig, count: usize, partition: Partition, seed: u64) -> Result<Vec<Prompt>> {
    let mut pool = config.partition(partition);
    if pool.is_empty() {
        return Err(Error::EmptyPartition(format!("{partition:?}")));
    }
    if count > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "asked for {count} prompts from a {partition:?} partition of {}",
            pool.len()
        )));
    }
    let mut rng = seeds::rng_for(seed, "world/dataset", 0);
    let (picked, _) = pool.partial_shuffle(&mut rng, count);
    Ok(picked.to_vec())
}

/// Distinct prompts of a dataset in first-appearance order.
pub fn distinct_prompts(pairs: &[LabeledPair]) -> Vec<Prompt> {
    let mut seen = BTreeSet::new();
    pairs
        .iter()
        .filter(|p| seen.insert(p.prompt))
        .map(|p| p.prompt)
        .collect()
}
