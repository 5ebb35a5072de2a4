//! Key-sample selection: which prompts to query a suspect with.
//!
//! * detection: the source's training pairs it reproduces best under the
//!   shared prompt seed (Top-N perceptual similarity);
//! * generation: prompt embeddings optimized against a target image with the
//!   model frozen, projected back to tokens, keeping the ones that stay
//!   closest to their seed prompt;
//! * random: a uniform draw from the training pairs, the baseline.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset;
use crate::diffmodel::{generate_batch, noise_coefficients, prompt_seed, ModelCheckpoint};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::numcore::{Graph, Optimizer, OptimizerKind, Tensor};
use crate::par;
use crate::seeds;
use crate::simembed::perceptual_similarity;
use crate::synthworld::{LabeledPair, Prompt, SLOTS, VALUES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Detect,
    Generate,
    Random,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Detect => "detect",
            Strategy::Generate => "generate",
            Strategy::Random => "random",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detect" => Ok(Strategy::Detect),
            "generate" => Ok(Strategy::Generate),
            "random" => Ok(Strategy::Random),
            other => Err(Error::InvalidArgument(format!("unknown key strategy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeySample {
    pub prompt: Prompt,
    /// Ground-truth image for detection and random keys, the optimization
    /// target for generated keys.
    pub reference: Image,
    /// Similarity (detect), hamming distance (generate) or draw order (random).
    pub score: f64,
    /// Final optimization loss for generated keys.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeySampleSet {
    pub strategy: Strategy,
    pub source_digest: String,
    pub dataset_digest: String,
    pub selection_seed: u64,
    /// Search settings, for generation-based sets.
    pub search: Option<SearchConfig>,
    pub samples: Vec<KeySample>,
}

impl KeySampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn prompts(&self) -> Vec<Prompt> {
        self.samples.iter().map(|k| k.prompt).collect()
    }

    /// The first `n` keys, keeping the set's provenance.
    pub fn prefix(&self, n: usize) -> Result<KeySampleSet> {
        if n == 0 || n > self.len() {
            return Err(Error::InvalidArgument(format!(
                "prefix of {n} keys from a set of {}",
                self.len()
            )));
        }
        Ok(KeySampleSet {
            samples: self.samples[..n].to_vec(),
            ..self.clone()
        })
    }

    pub fn digest(&self) -> Result<String> {
        Ok(crate::codec::sha256_hex(self.to_text()?.as_bytes()))
    }

    /// Pretty JSON, newline-terminated.
    pub fn to_text(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let set: KeySampleSet = serde_json::from_str(text)?;
        if set.samples.iter().any(|k| !k.reference.in_unit_range()) {
            return Err(Error::Format("key reference image outside [0, 1]".into()));
        }
        Ok(set)
    }

    /// Fails unless the set was selected against `source`.
    pub fn check_source(&self, source_digest: &str) -> Result<()> {
        if self.source_digest != source_digest {
            return Err(Error::DigestMismatch {
                what: "key set source".into(),
                expected: source_digest.into(),
                found: self.source_digest.clone(),
            });
        }
        Ok(())
    }
}

const GENERATION_CHUNK: usize = 32;

/// Source generations for `prompts` under the shared prompt seeds, in order.
pub fn shared_seed_generations(model: &ModelCheckpoint, prompts: &[Prompt]) -> Result<Vec<Image>> {
    let chunks: Vec<&[Prompt]> = prompts.chunks(GENERATION_CHUNK).collect();
    let out = par::try_map(&chunks, |_, chunk| {
        let seeds: Vec<u64> = chunk.iter().map(prompt_seed).collect();
        generate_batch(model, chunk, &seeds)
    })?;
    Ok(out.into_iter().flatten().collect())
}

/// Every training pair scored by the similarity of the source's generation to
/// its image, best first; ties go to the lexicographically smaller prompt,
/// then to the earlier dataset index.
pub fn rank_by_reproduction(source: &ModelCheckpoint, dataset: &[LabeledPair]) -> Result<Vec<(usize, f32)>> {
    let prompts: Vec<Prompt> = dataset.iter().map(|p| p.prompt).collect();
    let gens = shared_seed_generations(source, &prompts)?;
    let mut scored = Vec::with_capacity(dataset.len());
    for (i, (g, pair)) in gens.iter().zip(dataset).enumerate() {
        scored.push((i, perceptual_similarity(g, &pair.image)?.value));
    }
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| dataset[a.0].prompt.cmp(&dataset[b.0].prompt))
            .then(a.0.cmp(&b.0))
    });
    Ok(scored)
}

/// Top-N training pairs by reproduction similarity.
pub fn detect_key_samples(source: &ModelCheckpoint, dataset: &[LabeledPair], n: usize) -> Result<KeySampleSet> {
    check_count(n, dataset.len())?;
    let ranked = rank_by_reproduction(source, dataset)?;
    let samples = ranked
        .into_iter()
        .take(n)
        .map(|(i, score)| KeySample {
            prompt: dataset[i].prompt,
            reference: dataset[i].image.clone(),
            score: score as f64,
            loss: None,
        })
        .collect();
    Ok(KeySampleSet {
        strategy: Strategy::Detect,
        source_digest: source.digest()?,
        dataset_digest: dataset::digest(&source.world, dataset)?,
        selection_seed: 0,
        search: None,
        samples,
    })
}

/// Uniform draw of `n` training pairs without replacement.
pub fn random_key_samples(
    source: &ModelCheckpoint,
    dataset: &[LabeledPair],
    n: usize,
    seed: u64,
) -> Result<KeySampleSet> {
    check_count(n, dataset.len())?;
    let picked = random_indices(dataset.len(), n, seed);
    let samples = picked
        .into_iter()
        .enumerate()
        .map(|(order, i)| KeySample {
            prompt: dataset[i].prompt,
            reference: dataset[i].image.clone(),
            score: order as f64,
            loss: None,
        })
        .collect();
    Ok(KeySampleSet {
        strategy: Strategy::Random,
        source_digest: source.digest()?,
        dataset_digest: dataset::digest(&source.world, dataset)?,
        selection_seed: seed,
        search: None,
        samples,
    })
}

/// `n` distinct indices below `len` in draw order.
pub fn random_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeds::rng_for(seed, "keyselect/random", 0);
    index::sample(&mut rng, len, n).into_vec()
}

fn check_count(n: usize, available: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("key sample count must be positive".into()));
    }
    if n > available {
        return Err(Error::InsufficientData(format!(
            "{n} key samples requested from {available} pairs"
        )));
    }
    Ok(())
}

/// Settings for the generation-based strategy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Seed prompts drawn from the dataset.
    pub seeds_count: usize,
    /// Gradient steps per seed.
    pub iterations: usize,
    pub learning_rate: f32,
    /// Monte-Carlo `(t, ε)` draws per step.
    pub trials: usize,
    /// Search the whole vocabulary instead of each slot's own tokens.
    pub unconstrained: bool,
}

impl SearchConfig {
    pub fn for_keys(n: usize) -> Self {
        Self {
            seeds_count: 4 * n,
            iterations: 200,
            learning_rate: 0.05,
            trials: 8,
            unconstrained: false,
        }
    }
}

/// Result of optimizing one prompt embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSearch {
    /// Optimized slot rows, `[SLOTS, embed_dim]`.
    pub embedding: Tensor,
    /// Loss before each step.
    pub loss_trace: Vec<f32>,
}

impl EmbeddingSearch {
    /// Mean of the last (up to) ten trace entries.
    pub fn final_loss(&self) -> Option<f64> {
        if self.loss_trace.is_empty() {
            return None;
        }
        let tail = &self.loss_trace[self.loss_trace.len().saturating_sub(10)..];
        Some(tail.iter().map(|&v| v as f64).sum::<f64>() / tail.len() as f64)
    }
}

/// Fixed Monte-Carlo draws for one loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraws {
    pub times: Vec<usize>,
    /// `times.len()` rows of image-sized Gaussian noise.
    pub noise: Vec<f32>,
}

impl NoiseDraws {
    pub fn sample(model: &ModelCheckpoint, trials: usize, seed: u64, step: u64) -> Self {
        let pixels = model.net.config().pixels;
        let steps = model.schedule.steps();
        let mut rng = seeds::rng_for(seed, "keyselect/draws", step);
        let times = (0..trials).map(|_| rng.random_range(1..=steps)).collect();
        let noise = (0..trials * pixels).map(|_| rng.sample(StandardNormal)).collect();
        Self { times, noise }
    }
}

/// Reconstruction loss of `target` when the model is conditioned on the slot
/// rows `embedding`, and its gradient with respect to those rows. Model
/// parameters enter as constants.
pub fn embedding_loss_and_grad(
    model: &ModelCheckpoint,
    embedding: &Tensor,
    target: &Image,
    draws: &NoiseDraws,
) -> Result<(f32, Tensor)> {
    let net = &model.net;
    let cfg = net.config();
    if embedding.shape() != [SLOTS, cfg.embed_dim] {
        return Err(Error::Shape(format!(
            "embedding {:?}, expected [{SLOTS}, {}]",
            embedding.shape(),
            cfg.embed_dim
        )));
    }
    if target.len() != cfg.pixels {
        return Err(Error::Shape(format!("target has {} pixels, model {}", target.len(), cfg.pixels)));
    }
    let b = draws.times.len();
    let mut z = Vec::with_capacity(b * cfg.pixels);
    let mut coeffs = Vec::with_capacity(b);
    for (row, &t) in draws.times.iter().enumerate() {
        let (sa, sb) = noise_coefficients(&model.schedule, t);
        let eps = &draws.noise[row * cfg.pixels..(row + 1) * cfg.pixels];
        z.extend(target.pixels().iter().zip(eps).map(|(x, e)| sa * x + sb * e));
        coeffs.push((sa, sb));
    }

    let mut g = Graph::new();
    let vars = net.record(&mut g, false)?;
    let c = g.param(embedding.clone())?;
    let pooled = net.pool_slots(&mut g, c)?;
    let cond = g.broadcast_rows(pooled, b)?;
    let zv = g.constant(Tensor::matrix(b, cfg.pixels, z)?)?;
    let pred = net.forward_on_tape(&mut g, &vars, zv, &draws.times, cond, &coeffs)?;
    let eps = g.constant(Tensor::matrix(b, cfg.pixels, draws.noise.clone())?)?;
    let loss = g.squared_error(pred, eps)?;
    let value = g.value(loss)?.data()[0];
    let mut grads = g.backward(loss)?;
    let grad = grads.take(c).unwrap_or_else(|| Tensor::zeros(embedding.shape()));
    Ok((value, grad))
}

/// Adam on the prompt embedding only, starting from the seed prompt's rows.
pub fn optimize_prompt_embedding(
    model: &ModelCheckpoint,
    seed_prompt: &Prompt,
    target: &Image,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<EmbeddingSearch> {
    if cfg.iterations == 0 {
        return Err(Error::InvalidArgument("embedding search needs at least one step".into()));
    }
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument("embedding search needs at least one trial".into()));
    }
    if !target.in_unit_range() {
        return Err(Error::InvalidArgument("target image outside [0, 1]".into()));
    }
    let mut embedding = model.net.prompt_embedding(seed_prompt);
    let mut opt = Optimizer::new(OptimizerKind::adam(), cfg.learning_rate);
    let mut loss_trace = Vec::with_capacity(cfg.iterations);
    for step in 0..cfg.iterations {
        let draws = NoiseDraws::sample(model, cfg.trials, seed, step as u64);
        let (loss, grad) = embedding_loss_and_grad(model, &embedding, target, &draws)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("embedding search loss at step {step}")));
        }
        loss_trace.push(loss);
        opt.step(std::slice::from_mut(&mut embedding), &[grad])?;
    }
    Ok(EmbeddingSearch { embedding, loss_trace })
}

/// Nearest-token projection of optimized slot rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `None` when an unconstrained search picked tokens that do not form a
    /// one-token-per-slot prompt.
    pub prompt: Option<Prompt>,
    /// Chosen vocabulary ids per slot.
    pub token_ids: [usize; SLOTS],
    /// Concatenated chosen rows, `[SLOTS, embed_dim]`.
    pub projected: Tensor,
    /// Slots whose token differs from the seed prompt's.
    pub hamming: usize,
}

/// Per slot, the vocabulary row nearest in L2 (lowest id on ties), searched
/// within the slot's own tokens unless `unconstrained`.
pub fn project_to_tokens(
    embedding: &Tensor,
    table: &Tensor,
    seed_prompt: &Prompt,
    unconstrained: bool,
) -> Result<Projection> {
    let (rows, d) = embedding.dims2()?;
    let (vocab, td) = table.dims2()?;
    if rows != SLOTS || td != d {
        return Err(Error::Shape(format!(
            "embedding {:?} against vocabulary table {:?}",
            embedding.shape(),
            table.shape()
        )));
    }
    let word_tokens = SLOTS * VALUES;
    if vocab < word_tokens {
        return Err(Error::Shape(format!("vocabulary table has {vocab} rows")));
    }
    let seed_ids = seed_prompt.token_ids();
    let mut token_ids = [0usize; SLOTS];
    let mut projected = Vec::with_capacity(SLOTS * d);
    for slot in 0..SLOTS {
        let row = embedding.row(slot);
        let candidates = if unconstrained {
            0..vocab
        } else {
            slot * VALUES..(slot + 1) * VALUES
        };
        let mut best = (f32::INFINITY, candidates.start);
        for id in candidates {
            let dist: f32 = row.iter().zip(table.row(id)).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best.0 {
                best = (dist, id);
            }
        }
        token_ids[slot] = best.1;
        projected.extend_from_slice(table.row(best.1));
    }
    let hamming = token_ids.iter().zip(&seed_ids).filter(|(a, b)| a != b).count();
    let prompt = Prompt::from_token_ids(&token_ids).ok();
    Ok(Projection {
        prompt,
        token_ids,
        projected: Tensor::matrix(SLOTS, d, projected)?,
        hamming,
    })
}

/// One seed's outcome in the generation-based search.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    /// Position of the seed in the drawn seed list.
    pub seed_order: usize,
    pub seed_prompt: Prompt,
    pub prompt: Prompt,
    pub hamming: usize,
    pub final_loss: Option<f64>,
    pub target: Image,
}

/// Generation-based key samples: optimize from `seeds_count` seed pairs, keep
/// the `n` projections with the smallest hamming distance (then lowest final
/// loss, then seed order).
pub fn generate_key_samples(
    source: &ModelCheckpoint,
    dataset: &[LabeledPair],
    n: usize,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<KeySampleSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("key sample count must be positive".into()));
    }
    if cfg.seeds_count < n {
        return Err(Error::InvalidArgument(format!(
            "{} seed prompts cannot yield {n} key samples",
            cfg.seeds_count
        )));
    }
    if cfg.seeds_count > dataset.len() {
        return Err(Error::InsufficientData(format!(
            "{} seed prompts requested from {} pairs",
            cfg.seeds_count,
            dataset.len()
        )));
    }
    let candidates = search_candidates(source, dataset, cfg, seed)?;
    let mut kept = rank_candidates(candidates);
    if kept.len() < n {
        return Err(Error::InsufficientData(format!(
            "only {} seeds projected to valid prompts, {n} needed",
            kept.len()
        )));
    }
    kept.truncate(n);
    let samples = kept
        .into_iter()
        .map(|c| KeySample {
            prompt: c.prompt,
            reference: c.target,
            score: c.hamming as f64,
            loss: c.final_loss,
        })
        .collect();
    Ok(KeySampleSet {
        strategy: Strategy::Generate,
        source_digest: source.digest()?,
        dataset_digest: dataset::digest(&source.world, dataset)?,
        selection_seed: seed,
        search: Some(*cfg),
        samples,
    })
}

/// Runs the per-seed searches (in parallel) and returns them in seed order.
pub fn search_candidates(
    source: &ModelCheckpoint,
    dataset: &[LabeledPair],
    cfg: &SearchConfig,
    seed: u64,
) -> Result<Vec<Candidate>> {
    let seeds_idx = random_indices(dataset.len(), cfg.seeds_count, seed);
    let table = source.net.embedding_table().clone();
    let jobs: Vec<(usize, usize)> = seeds_idx.into_iter().enumerate().collect();
    par::try_map(&jobs, |_, &(order, i)| {
        let pair = &dataset[i];
        if cfg.iterations == 0 {
            return Ok(Candidate {
                seed_order: order,
                seed_prompt: pair.prompt,
                prompt: pair.prompt,
                hamming: 0,
                final_loss: None,
                target: pair.image.clone(),
            });
        }
        let search = optimize_prompt_embedding(
            source,
            &pair.prompt,
            &pair.image,
            cfg,
            seeds::derive(seed, "keyselect/search", order as u64),
        )?;
        let proj = project_to_tokens(&search.embedding, &table, &pair.prompt, cfg.unconstrained)?;
        Ok(Candidate {
            seed_order: order,
            seed_prompt: pair.prompt,
            prompt: proj.prompt.unwrap_or(pair.prompt),
            hamming: if proj.prompt.is_some() { proj.hamming } else { usize::MAX },
            final_loss: search.final_loss(),
            target: pair.image.clone(),
        })
    })
}

/// Drops invalid projections and sorts by hamming, final loss, seed order.
pub fn rank_candidates(mut candidates: Vec<Candidate>) -> Vec<Candidate> {
    candidates.retain(|c| c.hamming != usize::MAX);
    candidates.sort_by(|a, b| {
        a.hamming
            .cmp(&b.hamming)
            .then_with(|| match (a.final_loss, b.final_loss) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                _ => Ordering::Equal,
            })
            .then(a.seed_order.cmp(&b.seed_order))
    });
    candidates
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    fn table() -> Tensor {
        let mut rng = seeds::rng(9);
        Tensor::uniform(&[21, 4], 1.0, &mut rng)
    }

    #[test]
    fn exact_rows_project_to_their_prompt() {
        let t = table();
        let p = Prompt::new([1, 2, 3, 0, 2]).unwrap();
        let mut rows = Vec::new();
        for id in p.token_ids() {
            rows.extend_from_slice(t.row(id));
        }
        let e = Tensor::matrix(SLOTS, 4, rows).unwrap();
        let proj = project_to_tokens(&e, &t, &p, false).unwrap();
        assert_eq!(proj.prompt, Some(p));
        assert_eq!(proj.hamming, 0);
        assert_eq!(proj.projected, e);

        let nudged = e.map(|v| v + 1e-6);
        assert_eq!(project_to_tokens(&nudged, &t, &p, false).unwrap().prompt, Some(p));
    }

    #[test]
    fn hamming_counts_changed_slots() {
        let t = table();
        let target = Prompt::new([3, 3, 3, 3, 3]).unwrap();
        let seed = Prompt::new([3, 0, 3, 1, 3]).unwrap();
        let mut rows = Vec::new();
        for id in target.token_ids() {
            rows.extend_from_slice(t.row(id));
        }
        let e = Tensor::matrix(SLOTS, 4, rows).unwrap();
        let proj = project_to_tokens(&e, &t, &seed, false).unwrap();
        assert_eq!(proj.prompt, Some(target));
        assert_eq!(proj.hamming, 2);
    }

    #[test]
    fn ranking_orders_by_hamming_then_loss_then_seed() {
        let img = Image::filled(4, 0.2);
        let p = Prompt::from_index(5).unwrap();
        let mk = |order, hamming, loss| Candidate {
            seed_order: order,
            seed_prompt: p,
            prompt: p,
            hamming,
            final_loss: loss,
            target: img.clone(),
        };
        let ranked = rank_candidates(vec![
            mk(0, 1, Some(0.1)),
            mk(1, 0, Some(0.5)),
            mk(2, 0, Some(0.2)),
            mk(3, usize::MAX, Some(0.0)),
            mk(4, 0, Some(0.2)),
        ]);
        let order: Vec<usize> = ranked.iter().map(|c| c.seed_order).collect();
        assert_eq!(order, vec![2, 4, 1, 0]);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [Strategy::Detect, Strategy::Generate, Strategy::Random] {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert!("best".parse::<Strategy>().is_err());
    }
}
