use serde::{Deserialize, Serialize};

use super::AttributionConfig;
use crate::diffmodel::{generate_batch, prompt_seed, ModelCheckpoint};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::keyselect::KeySampleSet;
use crate::par;
use crate::seeds;
use crate::simembed::{distance, DistanceSpace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub conf: f64,
    /// One distance per key sample, in key order.
    pub distances: Vec<f32>,
}

/// Noise seed for the `j`-th generation of a key prompt; the first one is the
/// shared prompt seed.
fn sample_seed(base: u64, j: usize) -> u64 {
    if j == 0 {
        base
    } else {
        seeds::derive(base, "instance/sample", j as u64)
    }
}

/// `m` generations per key prompt, grouped by key.
pub fn key_outputs(model: &ModelCheckpoint, keys: &KeySampleSet, m: usize) -> Result<Vec<Vec<Image>>> {
    if m == 0 {
        return Err(Error::InvalidArgument("at least one sample per prompt".into()));
    }
    let rounds = par::try_range(m, |j| {
        let prompts = keys.prompts();
        let seeds: Vec<u64> = prompts.iter().map(|p| sample_seed(prompt_seed(p), j)).collect();
        generate_batch(model, &prompts, &seeds)
    })?;
    Ok((0..keys.len())
        .map(|k| rounds.iter().map(|r| r[k].clone()).collect())
        .collect())
}

/// Fraction of distances strictly below `delta0`.
pub fn conf_from_distances(distances: &[f32], delta0: f64) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    let hits = distances.iter().filter(|&&d| (d as f64) < delta0).count();
    hits as f64 / distances.len() as f64
}

/// Instance confidence of `suspect` against precomputed source outputs.
pub fn instance_conf_against(
    source_outputs: &[Vec<Image>],
    suspect: &ModelCheckpoint,
    keys: &KeySampleSet,
    cfg: &AttributionConfig,
) -> Result<InstanceResult> {
    cfg.validate()?;
    if source_outputs.len() != keys.len() {
        return Err(Error::Shape(format!(
            "{} source outputs for {} keys",
            source_outputs.len(),
            keys.len()
        )));
    }
    let suspect_outputs = key_outputs(suspect, keys, cfg.samples_per_prompt)?;
    let distances = paired_distances(source_outputs, &suspect_outputs, cfg.space)?;
    Ok(InstanceResult {
        conf: conf_from_distances(&distances, cfg.delta0),
        distances,
    })
}

fn paired_distances(a: &[Vec<Image>], b: &[Vec<Image>], space: DistanceSpace) -> Result<Vec<f32>> {
    a.iter()
        .zip(b)
        .map(|(xs, ys)| {
            if xs.len() != ys.len() || xs.is_empty() {
                return Err(Error::Shape("mismatched samples per prompt".into()));
            }
            let mut total = 0.0f64;
            for (x, y) in xs.iter().zip(ys) {
                total += distance(x, y, space)? as f64;
            }
            Ok((total / xs.len() as f64) as f32)
        })
        .collect()
}

/// Queries source and suspect with every key prompt under shared seeds and
/// counts the output pairs closer than `δ₀`.
pub fn instance_conf(
    source: &ModelCheckpoint,
    suspect: &ModelCheckpoint,
    keys: &KeySampleSet,
    cfg: &AttributionConfig,
) -> Result<InstanceResult> {
    keys.check_source(&source.digest()?)?;
    if source.world != suspect.world {
        return Err(Error::WorldMismatch("suspect belongs to another world".into()));
    }
    let source_outputs = key_outputs(source, keys, cfg.samples_per_prompt)?;
    instance_conf_against(&source_outputs, suspect, keys, cfg)
}

/// Infringing iff `conf > δ`.
pub fn instance_verdict(conf: f64, delta: f64) -> bool {
    conf > delta
}
