//! The unified encoder contract and a deterministic mock.

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::simulator::FrameTruth;

/// Maps text and images into one unit-norm embedding space.
pub trait Encoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode_text(&self, text: &str) -> Vec<f32>;
    /// `truth` is the simulator sidecar; real encoders ignore it.
    fn encode_image(&self, image: &RgbImage, truth: Option<&FrameTruth>) -> Vec<f32>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockMode {
    /// Every token gets its own pseudo-random direction.
    Hash,
    /// Gridworld vocabulary gets full weight, other words a small one, and
    /// images are embedded through their ground-truth sidecar.
    Semantic,
}

/// Words the semantic mock treats as meaningful concepts.
pub const VOCABULARY: &[&str] = &[
    // objects
    "sofa", "couch", "table", "coffee", "dining", "television", "tv", "plant", "chair", "fridge",
    "refrigerator", "counter", "lamp", "bed", "desk", "shelf", "cabinet", "sink", "toilet",
    // colors
    "white", "yellow", "black", "green", "red", "blue", "brown", "gray", "grey", "orange",
    "purple", "pink", "color", "colour",
    // places
    "room", "living", "media", "kitchen", "study", "bedroom", "bathroom", "hallway", "office", "box",
    // attributes
    "double", "large", "fabric", "flat", "leather", "metal", "small", "plastic", "potted", "short",
    "stone", "tall", "wooden", "bigger", "smaller", "same",
];

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "is", "are", "in", "on", "of", "and", "or", "to", "at", "with", "what", "which",
    "how", "many", "have", "has", "than", "there", "this", "that", "it", "be", "deg", "heading",
    // canonical-text keys
    "step", "object", "description", "cate", "attr", "desc", "decision", "state", "target",
    "position", "observed", "from",
];

const UNKNOWN_WEIGHT: f64 = 0.15;
const PIXEL_GRID: usize = 4;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn to_f32_unit(mut v: Vec<f64>) -> Vec<f32> {
    normalize(&mut v);
    let mut out: Vec<f32> = v.iter().map(|&x| x as f32).collect();
    // renormalize after the cast so the f32 vector itself is unit length
    let n = out.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    out.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone)]
pub struct MockEncoder {
    dim: usize,
    seed: u64,
    mode: MockMode,
    projection: Vec<f64>,
}

impl MockEncoder {
    pub fn new(dim: usize, seed: u64, mode: MockMode) -> Self {
        assert!(dim > 0, "encoder dimension must be positive");
        let features = PIXEL_GRID * PIXEL_GRID * 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let projection = (0..dim * features).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self {
            dim,
            seed,
            mode,
            projection,
        }
    }

    pub fn semantic(dim: usize, seed: u64) -> Self {
        Self::new(dim, seed, MockMode::Semantic)
    }

    pub fn mode(&self) -> MockMode {
        self.mode
    }

    fn direction(&self, key: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(key.as_bytes()) ^ self.seed);
        let mut v: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&mut v);
        v
    }

    fn concept(token: &str) -> Option<&'static str> {
        if let Some(w) = VOCABULARY.iter().find(|w| **w == token) {
            return Some(w);
        }
        let stem = token.strip_suffix('s').filter(|s| s.len() > 2)?;
        VOCABULARY.iter().find(|w| **w == stem).copied()
    }

    fn text_vector(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        let mut any = false;
        for tok in tokenize(text) {
            let (key, weight) = match self.mode {
                MockMode::Hash => (tok.clone(), 1.0),
                MockMode::Semantic => {
                    if tok.chars().all(|c| c.is_ascii_digit()) || STOPWORDS.contains(&tok.as_str()) {
                        continue;
                    }
                    match Self::concept(&tok) {
                        Some(c) => (c.to_string(), 1.0),
                        None => (tok.clone(), UNKNOWN_WEIGHT),
                    }
                }
            };
            any = true;
            for (a, d) in acc.iter_mut().zip(self.direction(&key)) {
                *a += weight * d;
            }
        }
        if !any {
            return self.direction("\u{0}empty");
        }
        normalize(&mut acc);
        acc
    }

    fn pixel_vector(&self, image: &RgbImage) -> Vec<f64> {
        let (w, h) = image.dimensions();
        let mut feats = vec![0.0; PIXEL_GRID * PIXEL_GRID * 3];
        let mut counts = vec![0usize; PIXEL_GRID * PIXEL_GRID];
        for (x, y, p) in image.enumerate_pixels() {
            let cx = (x as usize * PIXEL_GRID) / w.max(1) as usize;
            let cy = (y as usize * PIXEL_GRID) / h.max(1) as usize;
            let cell = cy * PIXEL_GRID + cx;
            counts[cell] += 1;
            for c in 0..3 {
                feats[cell * 3 + c] += p.0[c] as f64 / 255.0;
            }
        }
        for (cell, &n) in counts.iter().enumerate() {
            for c in 0..3 {
                feats[cell * 3 + c] = if n > 0 { feats[cell * 3 + c] / n as f64 - 0.5 } else { 0.0 };
            }
        }
        let nf = feats.len();
        let mut v: Vec<f64> = (0..self.dim)
            .map(|r| (0..nf).map(|c| self.projection[r * nf + c] * feats[c]).sum())
            .collect();
        normalize(&mut v);
        v
    }
}

impl Encoder for MockEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_text(&self, text: &str) -> Vec<f32> {
        to_f32_unit(self.text_vector(text))
    }

    fn encode_image(&self, image: &RgbImage, truth: Option<&FrameTruth>) -> Vec<f32> {
        let pixels = self.pixel_vector(image);
        let bias = self.direction("\u{0}image");
        let mut v: Vec<f64> = pixels.iter().zip(&bias).map(|(p, b)| 0.5 * p + 0.5 * b).collect();
        if let (MockMode::Semantic, Some(t)) = (self.mode, truth) {
            let text = t.room.clone().unwrap_or_default();
            let semantic = self.text_vector(&text);
            // the sidecar only names the room; objects are mixed in by the
            // caller through captions, which keeps images of the same room
            // close regardless of what happens to be in view
            v.iter_mut().zip(&semantic).for_each(|(a, s)| *a = 0.35 * *a + s);
        }
        to_f32_unit(v)
    }
}
