use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffmodel::{finetune, generate_batch, ModelCheckpoint, TrainConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::par;
use crate::seeds;
use crate::synthworld::{LabeledPair, Origin, Prompt};

/// Step-one material: prompts from the source's training set with their
/// ground-truth images, source generations and innocent-reference
/// generations.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowPools {
    pub prompts: Vec<Prompt>,
    pub ground_truth: Vec<Image>,
    pub source: Vec<Image>,
    pub innocent: Vec<Image>,
}

impl ShadowPools {
    pub fn collect(
        source: &ModelCheckpoint,
        innocent_reference: &ModelCheckpoint,
        training_pairs: &[LabeledPair],
        seed: u64,
    ) -> Result<Self> {
        if training_pairs.is_empty() {
            return Err(Error::InsufficientData("no source training pairs for shadow data".into()));
        }
        let prompts: Vec<Prompt> = training_pairs.iter().map(|p| p.prompt).collect();
        let noise = |label: &str| -> Vec<u64> {
            (0..prompts.len())
                .map(|i| seeds::derive(seed, label, i as u64))
                .collect()
        };
        let source_images = generate_batch(source, &prompts, &noise("shadow/source-noise"))?;
        let innocent_images = generate_batch(innocent_reference, &prompts, &noise("shadow/innocent-noise"))?;
        Ok(Self {
            ground_truth: training_pairs.iter().map(|p| p.image.clone()).collect(),
            prompts,
            source: source_images,
            innocent: innocent_images,
        })
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// `mixed` pairs from `other` (tagged `origin`) plus `n - mixed` ground
    /// truth pairs, each drawn without replacement.
    fn draw(&self, n: usize, mixed: usize, other: &[Image], origin: Origin, seed: u64) -> Vec<LabeledPair> {
        let mut rng = seeds::rng_for(seed, "shadow/draw", 0);
        let mut out = Vec::with_capacity(n);
        for i in index::sample(&mut rng, self.len(), n - mixed) {
            out.push(LabeledPair::new(self.prompts[i], self.ground_truth[i].clone(), Origin::Real));
        }
        for i in index::sample(&mut rng, self.len(), mixed) {
            out.push(LabeledPair::new(self.prompts[i], other[i].clone(), origin));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShadowModel {
    pub model: ModelCheckpoint,
    pub infringing: bool,
    /// Fraction of the training set taken from generated images (source
    /// generations for infringing shadows, innocent-reference generations
    /// otherwise).
    pub mix: f64,
    pub dataset: Vec<LabeledPair>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShadowEnsemble {
    pub innocent: Vec<ShadowModel>,
    pub infringing: Vec<ShadowModel>,
    pub source_digest: String,
    pub innocent_reference_digest: String,
    pub n: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ShadowPlan {
    infringing: bool,
    mixed: usize,
    seed: u64,
}

/// Draws a mix count in `1..=n` from a ratio uniform on `(0, 1]`.
fn draw_mix(n: usize, rng: &mut impl Rng) -> usize {
    let ratio = 1.0 - rng.random::<f64>();
    ((ratio * n as f64).round() as usize).clamp(1, n)
}

/// Trains `s` innocent and `s` infringing shadows by fine-tuning `base` on
/// `n` pairs each.
///
/// Innocent shadows mix ground truth with innocent-reference generations,
/// infringing shadows mix ground truth with source generations; the mix ratio
/// is drawn per shadow from `(0, 1]` and recorded exactly as `mixed / n`.
pub fn build_shadow_ensemble(
    base: &ModelCheckpoint,
    pools: &ShadowPools,
    source_digest: &str,
    innocent_reference_digest: &str,
    n: usize,
    s: usize,
    train: &TrainConfig,
    seed: u64,
) -> Result<ShadowEnsemble> {
    if n == 0 || s == 0 {
        return Err(Error::InvalidArgument("shadow ensemble needs n >= 1 and s >= 1".into()));
    }
    if pools.len() < n {
        return Err(Error::InsufficientData(format!(
            "{} source training prompts cannot supply {n} distinct pairs per shadow",
            pools.len()
        )));
    }
    let mut rng = seeds::rng_for(seed, "shadow/mix", 0);
    let mut plans = Vec::with_capacity(2 * s);
    for infringing in [false, true] {
        for i in 0..s {
            plans.push(ShadowPlan {
                infringing,
                mixed: draw_mix(n, &mut rng),
                seed: seeds::derive(seed, if infringing { "shadow/infringing" } else { "shadow/innocent" }, i as u64),
            });
        }
    }
    let mut shadows = par::try_map(&plans, |_, plan| {
        let (other, origin) = if plan.infringing {
            (&pools.source, Origin::SourceGenerated)
        } else {
            (&pools.innocent, Origin::OtherGenerated)
        };
        let dataset = pools.draw(n, plan.mixed, other, origin, plan.seed);
        let mut model = finetune(base, &dataset, train, seeds::derive(plan.seed, "shadow/train", 0))?;
        let mix = plan.mixed as f64 / n as f64;
        model.provenance.role = if plan.infringing { "shadow-infringing" } else { "shadow-innocent" }.into();
        if plan.infringing {
            model.provenance.rho = Some(mix as f32);
            model.provenance.source = Some(source_digest.to_string());
        } else {
            model.provenance.rho = Some(0.0);
        }
        Ok(ShadowModel {
            model,
            infringing: plan.infringing,
            mix,
            dataset,
        })
    })?;
    let infringing = shadows.split_off(s);
    Ok(ShadowEnsemble {
        innocent: shadows,
        infringing,
        source_digest: source_digest.to_string(),
        innocent_reference_digest: innocent_reference_digest.to_string(),
        n,
        seed,
    })
}

impl ShadowEnsemble {
    /// Innocent shadows first, then infringing.
    pub fn all(&self) -> impl Iterator<Item = &ShadowModel> {
        self.innocent.iter().chain(&self.infringing)
    }

    pub fn len(&self) -> usize {
        self.innocent.len() + self.infringing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Key-prompt outputs of every shadow under the shared prompt seeds, in
/// [`ShadowEnsemble::all`] order.
pub fn shadow_outputs(ensemble: &ShadowEnsemble, keys: &crate::keyselect::KeySampleSet) -> Result<Vec<Vec<Image>>> {
    let models: Vec<&ShadowModel> = ensemble.all().collect();
    par::try_map(&models, |_, s| {
        Ok(super::instance::key_outputs(&s.model, keys, 1)?
            .into_iter()
            .map(|mut v| v.remove(0))
            .collect())
    })
}
