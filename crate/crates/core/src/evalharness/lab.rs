use crate::attribution::{build_suspect, SuspectSpec};
use crate::diffmodel::{finetune, train, ModelCheckpoint, ModelSpec};
use crate::error::Result;
use crate::keyselect::{detect_key_samples, generate_key_samples, random_key_samples, KeySampleSet, SearchConfig, Strategy};
use crate::seeds;
use crate::synthworld::{build_dataset, LabeledPair, Partition, Prompt, WorldConfig};

use super::plan::ExperimentPlan;

/// Public renders for the pretrained base model.
pub fn base_dataset(world: &WorldConfig, plan: &ExperimentPlan, seed: u64) -> Result<Vec<LabeledPair>> {
    build_dataset(world, plan.base_count, Partition::Public, seeds::derive(seed, "lab/base-data", 0))
}

/// Private renders the source model memorizes.
pub fn source_dataset(world: &WorldConfig, plan: &ExperimentPlan, seed: u64) -> Result<Vec<LabeledPair>> {
    build_dataset(world, plan.source_count, Partition::Private, seeds::derive(seed, "lab/source-data", 0))
}

pub fn train_base(world: &WorldConfig, plan: &ExperimentPlan, data: &[LabeledPair], seed: u64) -> Result<ModelCheckpoint> {
    let mut m = train(data, world, &ModelSpec::desk(world), &plan.base_train, seeds::derive(seed, "lab/base", 0))?;
    m.provenance.role = "base".into();
    Ok(m)
}

pub fn train_source(world: &WorldConfig, plan: &ExperimentPlan, data: &[LabeledPair], seed: u64) -> Result<ModelCheckpoint> {
    let mut m = train(data, world, &ModelSpec::desk(world), &plan.source_train, seeds::derive(seed, "lab/source", 0))?;
    m.provenance.role = "source".into();
    Ok(m)
}

/// An innocent model in the same family: the base fine-tuned on public
/// renders only.
pub fn train_innocent_reference(base: &ModelCheckpoint, plan: &ExperimentPlan, seed: u64) -> Result<ModelCheckpoint> {
    let data = build_dataset(
        &base.world,
        plan.suspect_size,
        Partition::Public,
        seeds::derive(seed, "lab/innocent-reference-data", 0),
    )?;
    let mut m = finetune(base, &data, &plan.finetune, seeds::derive(seed, "lab/innocent-reference", 0))?;
    m.provenance.role = "innocent-reference".into();
    m.provenance.rho = Some(0.0);
    Ok(m)
}

/// The shared models of a scenario: world, pretrained base, source, and an
/// innocent reference.
#[derive(Clone, Debug)]
pub struct Lab {
    pub plan: ExperimentPlan,
    pub seed: u64,
    pub world: WorldConfig,
    pub base: ModelCheckpoint,
    pub source_data: Vec<LabeledPair>,
    pub source: ModelCheckpoint,
    pub innocent_reference: ModelCheckpoint,
}

impl Lab {
    pub fn build(plan: &ExperimentPlan, seed: u64) -> Result<Self> {
        plan.validate()?;
        let world = plan.world.build()?;
        let base_data = base_dataset(&world, plan, seed)?;
        let source_data = source_dataset(&world, plan, seed)?;
        let base = train_base(&world, plan, &base_data, seed)?;
        let source = train_source(&world, plan, &source_data, seed)?;
        let innocent_reference = train_innocent_reference(&base, plan, seed)?;
        Ok(Self {
            plan: plan.clone(),
            seed,
            world,
            base,
            source_data,
            source,
            innocent_reference,
        })
    }

    pub fn source_prompts(&self) -> Vec<Prompt> {
        self.source_data.iter().map(|p| p.prompt).collect()
    }

    /// A suspect with generated fraction `rho`, built by the standard recipe.
    pub fn suspect(&self, rho: f64, seed: u64) -> Result<ModelCheckpoint> {
        let spec = SuspectSpec::with_rho(self.plan.suspect_size, rho, self.plan.finetune)?;
        build_suspect(&self.base, &spec, Some(&self.source), &self.source_prompts(), seed)
    }

    pub fn select_keys(&self, strategy: Strategy, n: usize) -> Result<KeySampleSet> {
        select_keys(&self.source, &self.source_data, strategy, n, &self.plan.search, self.seed)
    }
}

/// Key selection with per-strategy seeds derived from `seed`.
pub fn select_keys(
    source: &ModelCheckpoint,
    data: &[LabeledPair],
    strategy: Strategy,
    n: usize,
    search: &SearchConfig,
    seed: u64,
) -> Result<KeySampleSet> {
    match strategy {
        Strategy::Detect => detect_key_samples(source, data, n),
        Strategy::Random => random_key_samples(source, data, n, seeds::derive(seed, "keys/random", 0)),
        Strategy::Generate => generate_key_samples(source, data, n, search, seeds::derive(seed, "keys/generate", 0)),
    }
}
