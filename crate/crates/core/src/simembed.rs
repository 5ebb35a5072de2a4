//! Image similarity: a fixed blur-and-project perceptual embedding for copy
//! detection, and the per-pixel RMS reconstruction distance.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::seeds;

/// Repo-wide seed for the projection matrix.
pub const EMBED_SEED: u64 = 0x5eed_cafe;
pub const EMBED_DIM: usize = 32;
const POOL: usize = 2;

/// Blur (2×2 average pool), mean-center, random-project, L2-normalize.
#[derive(Clone, Debug)]
pub struct PerceptualEmbedder {
    input_side: usize,
    projection: Vec<f32>,
}

/// Embedding plus whether the input carried no signal (constant image).
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f32>,
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub value: f32,
    /// Set when either embedding had zero norm; `value` is then 0.
    pub degenerate: bool,
}

impl PerceptualEmbedder {
    pub fn new(input_side: usize, seed: u64) -> Self {
        let pooled = (input_side / POOL) * (input_side / POOL);
        let mut rng = seeds::rng_for(seed, "simembed/projection", input_side as u64);
        let scale = 1.0 / (EMBED_DIM as f32).sqrt();
        let projection = (0..pooled * EMBED_DIM)
            .map(|_| rng.sample::<f32, _>(StandardNormal) * scale)
            .collect();
        Self { input_side, projection }
    }

    /// The shared embedder for a given image side.
    pub fn shared(input_side: usize) -> &'static PerceptualEmbedder {
        static CACHE: OnceLock<std::sync::Mutex<Vec<&'static PerceptualEmbedder>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let mut guard = cache.lock().expect("embedder cache poisoned");
        if let Some(e) = guard.iter().find(|e| e.input_side == input_side) {
            return e;
        }
        let e: &'static PerceptualEmbedder = Box::leak(Box::new(PerceptualEmbedder::new(input_side, EMBED_SEED)));
        guard.push(e);
        e
    }

    /// Unnormalized projection of the centered, blurred image.
    pub fn project(&self, image: &Image) -> Result<Vec<f32>> {
        if image.side() != self.input_side {
            return Err(Error::Shape(format!(
                "embedder expects {}px images, got {}px",
                self.input_side,
                image.side()
            )));
        }
        let pooled = image.avg_pool(POOL);
        let mean = pooled.mean();
        let centered: Vec<f32> = pooled.pixels().iter().map(|v| v - mean).collect();
        let mut out = vec![0.0f32; EMBED_DIM];
        for (&c, row) in centered.iter().zip(self.projection.chunks_exact(EMBED_DIM)) {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += c * w;
            }
        }
        Ok(out)
    }

    pub fn embed(&self, image: &Image) -> Result<Embedding> {
        let mut v = self.project(image)?;
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        let pooled = image.avg_pool(POOL);
        let mean = pooled.mean();
        // a constant image leaves only rounding residue after centering
        let flat = pooled.pixels().iter().all(|p| (p - mean).abs() <= 1e-6);
        if flat || norm <= 1e-12 {
            return Ok(Embedding {
                vector: vec![0.0; EMBED_DIM],
                degenerate: true,
            });
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        Ok(Embedding {
            vector: v,
            degenerate: false,
        })
    }
}

pub fn cosine(a: &Embedding, b: &Embedding) -> Similarity {
    if a.degenerate || b.degenerate {
        return Similarity {
            value: 0.0,
            degenerate: true,
        };
    }
    // accumulate in f64 so the result is exactly symmetric
    let dot: f64 = a.vector.iter().zip(&b.vector).map(|(x, y)| *x as f64 * *y as f64).sum();
    Similarity {
        value: (dot as f32).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Cosine similarity of perceptual embeddings.
pub fn perceptual_similarity(a: &Image, b: &Image) -> Result<Similarity> {
    if a.side() != b.side() {
        return Err(Error::Shape(format!("{}px vs {}px", a.side(), b.side())));
    }
    let e = PerceptualEmbedder::shared(a.side());
    Ok(cosine(&e.embed(a)?, &e.embed(b)?))
}

/// How key-sample output distances are measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceSpace {
    /// Per-pixel RMS, `‖a − b‖₂ / √P`.
    #[default]
    Pixel,
    /// Half the Euclidean distance between unit embeddings, also in `[0, 1]`.
    Embedding,
}

/// Per-pixel RMS distance; lies in `[0, 1]` for unit-range images.
pub fn recon_distance(a: &Image, b: &Image) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} pixels", a.len(), b.len())));
    }
    Ok(a.rms_distance(b))
}

pub fn distance(a: &Image, b: &Image, space: DistanceSpace) -> Result<f32> {
    match space {
        DistanceSpace::Pixel => recon_distance(a, b),
        DistanceSpace::Embedding => {
            if a.side() != b.side() {
                return Err(Error::Shape(format!("{}px vs {}px", a.side(), b.side())));
            }
            let e = PerceptualEmbedder::shared(a.side());
            let (ea, eb) = (e.embed(a)?, e.embed(b)?);
            let ss: f32 = ea.vector.iter().zip(&eb.vector).map(|(x, y)| (x - y) * (x - y)).sum();
            Ok(ss.sqrt() / 2.0)
        }
    }
}
