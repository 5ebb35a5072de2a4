//! Run configuration: flat `key = value` lines with dotted namespaces.
//!
//! ```text
//! # comment
//! seed = 7
//! world.image_size = 16
//! experiment.rho_values = 0.3, 0.5, 0.7, 1.0
//! ```
//!
//! Every key has a default, unknown keys are errors, and a key may appear at
//! most once per file. [`RunConfig::to_text`] lists every key in canonical
//! order and parses back to an equal config.

use std::fmt::Display;
use std::str::FromStr;

use provlab::attribution::AttributionConfig;
use provlab::evalharness::ExperimentPlan;
use provlab::simembed::DistanceSpace;
use provlab::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub plan: ExperimentPlan,
    /// Generated fraction for `build-suspect`.
    pub suspect_rho: f64,
    /// Replicate index for `build-suspect`.
    pub suspect_index: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            plan: ExperimentPlan::default(),
            suspect_rho: 1.0,
            suspect_index: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

fn space_name(space: DistanceSpace) -> &'static str {
    match space {
        DistanceSpace::Pixel => "pixel",
        DistanceSpace::Embedding => "embedding",
    }
}

fn parse_space(key: &str, value: &str) -> Result<DistanceSpace> {
    match value {
        "pixel" => Ok(DistanceSpace::Pixel),
        "embedding" => Ok(DistanceSpace::Embedding),
        other => Err(Error::Config(format!("{key}: expected pixel or embedding, got {other:?}"))),
    }
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.plan;
        let a: &mut AttributionConfig = &mut p.attribution;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "world.seed" => p.world.seed = parse(key, value)?,
            "world.image_size" => p.world.image_size = parse(key, value)?,
            "world.style_amplitude" => p.world.style_amplitude = parse(key, value)?,
            "world.private_slot" => p.world.private_slot = parse(key, value)?,
            "world.private_value" => p.world.private_value = parse(key, value)?,
            "data.base_count" => p.base_count = parse(key, value)?,
            "data.source_count" => p.source_count = parse(key, value)?,
            "train.base.iterations" => p.base_train.iterations = parse(key, value)?,
            "train.base.batch_size" => p.base_train.batch_size = parse(key, value)?,
            "train.base.learning_rate" => p.base_train.learning_rate = parse(key, value)?,
            "train.source.iterations" => p.source_train.iterations = parse(key, value)?,
            "train.source.batch_size" => p.source_train.batch_size = parse(key, value)?,
            "train.source.learning_rate" => p.source_train.learning_rate = parse(key, value)?,
            "train.finetune.iterations" => p.finetune.iterations = parse(key, value)?,
            "train.finetune.batch_size" => p.finetune.batch_size = parse(key, value)?,
            "train.finetune.learning_rate" => p.finetune.learning_rate = parse(key, value)?,
            "suspect.size" => p.suspect_size = parse(key, value)?,
            "suspect.rho" => self.suspect_rho = parse(key, value)?,
            "suspect.index" => self.suspect_index = parse(key, value)?,
            "keys.strategy" => p.strategy = value.parse()?,
            "keys.count" => a.keys = parse(key, value)?,
            "keys.search.seeds_count" => p.search.seeds_count = parse(key, value)?,
            "keys.search.iterations" => p.search.iterations = parse(key, value)?,
            "keys.search.learning_rate" => p.search.learning_rate = parse(key, value)?,
            "keys.search.trials" => p.search.trials = parse(key, value)?,
            "keys.search.unconstrained" => p.search.unconstrained = parse(key, value)?,
            "attribution.delta0" => a.delta0 = parse(key, value)?,
            "attribution.delta" => a.delta = parse(key, value)?,
            "attribution.samples_per_prompt" => a.samples_per_prompt = parse(key, value)?,
            "attribution.space" => a.space = parse_space(key, value)?,
            "attribution.calibrate" => p.calibrate = parse(key, value)?,
            "attribution.calibration_models" => p.calibration_models = parse(key, value)?,
            "experiment.rho_values" => p.rho_values = parse_list(key, value)?,
            "experiment.repetitions" => p.repetitions = parse(key, value)?,
            "experiment.n_values" => p.n_values = parse_list(key, value)?,
            "experiment.retrieval_candidates" => p.retrieval_candidates = parse(key, value)?,
            "statistical.shadow_size" => p.shadow_size = parse(key, value)?,
            "statistical.shadow_count" => p.shadow_count = parse(key, value)?,
            "statistical.split" => p.shadow_split = parse(key, value)?,
            "statistical.eval_models" => p.eval_models = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.plan;
        let a = &p.attribution;
        vec![
            ("seed", self.seed.to_string()),
            ("world.seed", p.world.seed.to_string()),
            ("world.image_size", p.world.image_size.to_string()),
            ("world.style_amplitude", p.world.style_amplitude.to_string()),
            ("world.private_slot", p.world.private_slot.to_string()),
            ("world.private_value", p.world.private_value.to_string()),
            ("data.base_count", p.base_count.to_string()),
            ("data.source_count", p.source_count.to_string()),
            ("train.base.iterations", p.base_train.iterations.to_string()),
            ("train.base.batch_size", p.base_train.batch_size.to_string()),
            ("train.base.learning_rate", p.base_train.learning_rate.to_string()),
            ("train.source.iterations", p.source_train.iterations.to_string()),
            ("train.source.batch_size", p.source_train.batch_size.to_string()),
            ("train.source.learning_rate", p.source_train.learning_rate.to_string()),
            ("train.finetune.iterations", p.finetune.iterations.to_string()),
            ("train.finetune.batch_size", p.finetune.batch_size.to_string()),
            ("train.finetune.learning_rate", p.finetune.learning_rate.to_string()),
            ("suspect.size", p.suspect_size.to_string()),
            ("suspect.rho", self.suspect_rho.to_string()),
            ("suspect.index", self.suspect_index.to_string()),
            ("keys.strategy", p.strategy.to_string()),
            ("keys.count", a.keys.to_string()),
            ("keys.search.seeds_count", p.search.seeds_count.to_string()),
            ("keys.search.iterations", p.search.iterations.to_string()),
            ("keys.search.learning_rate", p.search.learning_rate.to_string()),
            ("keys.search.trials", p.search.trials.to_string()),
            ("keys.search.unconstrained", p.search.unconstrained.to_string()),
            ("attribution.delta0", a.delta0.to_string()),
            ("attribution.delta", a.delta.to_string()),
            ("attribution.samples_per_prompt", a.samples_per_prompt.to_string()),
            ("attribution.space", space_name(a.space).to_string()),
            ("attribution.calibrate", p.calibrate.to_string()),
            ("attribution.calibration_models", p.calibration_models.to_string()),
            ("experiment.rho_values", join(&p.rho_values)),
            ("experiment.repetitions", p.repetitions.to_string()),
            ("experiment.n_values", join(&p.n_values)),
            ("experiment.retrieval_candidates", p.retrieval_candidates.to_string()),
            ("statistical.shadow_size", p.shadow_size.to_string()),
            ("statistical.shadow_count", p.shadow_count.to_string()),
            ("statistical.split", p.shadow_split.to_string()),
            ("statistical.eval_models", p.eval_models.to_string()),
        ]
    }

    /// Parses a config file on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`", lineno + 1)));
            };
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: {key} set twice", lineno + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        if !(0.0..=1.0).contains(&self.suspect_rho) {
            return Err(Error::Config(format!("suspect.rho {} outside [0, 1]", self.suspect_rho)));
        }
        Ok(())
    }

    /// Canonical text form listing every key.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn digest(&self) -> String {
        provlab::codec::sha256_hex(self.to_text().as_bytes())
    }
}
