use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diffmodel::{finetune, generate_batch, ModelCheckpoint, TrainConfig};
use crate::error::{Error, Result};
use crate::seeds;
use crate::synthworld::{build_dataset, LabeledPair, Origin, Partition, Prompt};

/// Recipe for a suspect: a base model fine-tuned on its own real pairs mixed
/// with pairs generated by a source model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuspectSpec {
    /// Real renders of public prompts the adversary holds.
    pub own_count: usize,
    /// Pairs generated by querying the source.
    pub generated_count: usize,
    pub train: TrainConfig,
}

impl SuspectSpec {
    /// `n` pairs of which `round(rho * n)` are generated.
    pub fn with_rho(n: usize, rho: f64, train: TrainConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidArgument(format!("rho must lie in [0, 1], got {rho}")));
        }
        let generated_count = (rho * n as f64).round() as usize;
        Ok(Self {
            own_count: n - generated_count,
            generated_count,
            train,
        })
    }

    pub fn total(&self) -> usize {
        self.own_count + self.generated_count
    }

    /// Generated fraction of the training set.
    pub fn rho(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        self.generated_count as f64 / self.total() as f64
    }

    pub fn is_innocent(&self) -> bool {
        self.generated_count == 0
    }
}

/// The suspect's training set: own pairs first, then generated pairs.
///
/// Generated pairs query the source with `query_pool` (shuffled, cycled when
/// the pool is smaller than the count) under adversary-specific noise seeds.
pub fn assemble_suspect_data(
    spec: &SuspectSpec,
    source: Option<&ModelCheckpoint>,
    query_pool: &[Prompt],
    world: &crate::synthworld::WorldConfig,
    seed: u64,
) -> Result<Vec<LabeledPair>> {
    if spec.total() == 0 {
        return Err(Error::InvalidArgument("suspect training set would be empty".into()));
    }
    let mut data = if spec.own_count > 0 {
        build_dataset(world, spec.own_count, Partition::Public, seeds::derive(seed, "suspect/own", 0))?
    } else {
        Vec::new()
    };
    if spec.generated_count == 0 {
        return Ok(data);
    }
    let source =
        source.ok_or_else(|| Error::InvalidArgument("a suspect with generated data needs a source model".into()))?;
    if source.world != *world {
        return Err(Error::WorldMismatch("source model belongs to another world".into()));
    }
    if query_pool.is_empty() {
        return Err(Error::InsufficientData("no prompts to query the source with".into()));
    }
    let mut pool = query_pool.to_vec();
    pool.shuffle(&mut seeds::rng_for(seed, "suspect/queries", 0));
    let prompts: Vec<Prompt> = pool.iter().cycle().take(spec.generated_count).copied().collect();
    let noise: Vec<u64> = (0..prompts.len())
        .map(|i| seeds::derive(seed, "suspect/noise", i as u64))
        .collect();
    let images = generate_batch(source, &prompts, &noise)?;
    data.extend(
        prompts
            .into_iter()
            .zip(images)
            .map(|(p, img)| LabeledPair::new(p, img, Origin::SourceGenerated)),
    );
    Ok(data)
}

/// Fine-tunes `base` on the suspect's mixed training set.
pub fn build_suspect(
    base: &ModelCheckpoint,
    spec: &SuspectSpec,
    source: Option<&ModelCheckpoint>,
    query_pool: &[Prompt],
    seed: u64,
) -> Result<ModelCheckpoint> {
    let data = assemble_suspect_data(spec, source, query_pool, &base.world, seed)?;
    let mut model = finetune(base, &data, &spec.train, seeds::derive(seed, "suspect/train", 0))?;
    model.provenance.role = if spec.is_innocent() { "innocent".into() } else { "suspect".into() };
    model.provenance.rho = Some(spec.rho() as f32);
    model.provenance.source = match (spec.is_innocent(), source) {
        (false, Some(s)) => Some(s.digest()?),
        _ => None,
    };
    Ok(model)
}
