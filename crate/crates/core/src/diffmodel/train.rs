use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::checkpoint::{ModelCheckpoint, Provenance};
use super::net::{DenoiserConfig, DenoiserNet};
use super::schedule::NoiseSchedule;
use crate::dataset;
use crate::error::{Error, Result};
use crate::numcore::{Graph, Optimizer, OptimizerKind, Tensor};
use crate::seeds;
use crate::synthworld::{LabeledPair, Prompt, WorldConfig};

/// Architecture and diffusion length of a fresh model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub denoiser: DenoiserConfig,
    pub diffusion_steps: usize,
}

impl ModelSpec {
    pub const DESK_DIFFUSION_STEPS: usize = 64;

    pub fn desk(world: &WorldConfig) -> Self {
        Self {
            denoiser: DenoiserConfig::desk(world.pixel_count()),
            diffusion_steps: Self::DESK_DIFFUSION_STEPS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Peak learning rate; decays to zero along a cosine over the run.
    pub learning_rate: f32,
}

impl TrainConfig {
    pub const BASE_ITERATIONS: usize = 8000;
    /// Long enough for the source to reproduce its own training images.
    pub const SOURCE_ITERATIONS: usize = 12000;
    pub const FINETUNE_ITERATIONS: usize = 1500;

    pub fn base() -> Self {
        Self {
            iterations: Self::BASE_ITERATIONS,
            batch_size: 16,
            learning_rate: 2e-3,
        }
    }

    pub fn source() -> Self {
        Self {
            iterations: Self::SOURCE_ITERATIONS,
            ..Self::base()
        }
    }

    pub fn finetune() -> Self {
        Self {
            iterations: Self::FINETUNE_ITERATIONS,
            ..Self::base()
        }
    }
}

/// Trains a fresh model on `dataset` by minimizing the noise-prediction error.
pub fn train(
    dataset: &[LabeledPair],
    world: &WorldConfig,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelCheckpoint> {
    let schedule = NoiseSchedule::scaled(spec.diffusion_steps)?;
    let net = DenoiserNet::init(spec.denoiser, &mut seeds::rng_for(seed, "train/init", 0))?;
    let mut ckpt = ModelCheckpoint {
        net,
        schedule,
        world: world.clone(),
        provenance: Provenance {
            role: "trained".into(),
            dataset_digest: dataset::digest(world, dataset)?,
            rho: None,
            parent: None,
            source: None,
            train_seed: seed,
            train: *cfg,
            loss_trace: Vec::new(),
        },
    };
    let trace = fit(&mut ckpt, dataset, cfg, seed)?;
    ckpt.provenance.loss_trace = trace;
    Ok(ckpt)
}

/// Continues training `base` on `dataset`.
pub fn finetune(base: &ModelCheckpoint, dataset: &[LabeledPair], cfg: &TrainConfig, seed: u64) -> Result<ModelCheckpoint> {
    let parent = base.digest()?;
    let mut ckpt = base.clone();
    ckpt.provenance = Provenance {
        role: "finetuned".into(),
        dataset_digest: dataset::digest(&base.world, dataset)?,
        rho: None,
        parent: Some(parent),
        source: None,
        train_seed: seed,
        train: *cfg,
        loss_trace: Vec::new(),
    };
    let trace = fit(&mut ckpt, dataset, cfg, seed)?;
    ckpt.provenance.loss_trace = trace;
    Ok(ckpt)
}

fn check_dataset(world: &WorldConfig, dataset: &[LabeledPair]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::InsufficientData("training set is empty".into()));
    }
    if let Some(p) = dataset.iter().find(|p| p.image.side() != world.image_size) {
        return Err(Error::WorldMismatch(format!(
            "{}px image in a {}px world",
            p.image.side(),
            world.image_size
        )));
    }
    Ok(())
}

fn fit(ckpt: &mut ModelCheckpoint, dataset: &[LabeledPair], cfg: &TrainConfig, seed: u64) -> Result<Vec<f32>> {
    check_dataset(&ckpt.world, dataset)?;
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let pixels = ckpt.net.config().pixels;
    let steps = ckpt.schedule.steps();
    let mut rng = seeds::rng_for(seed, "train/batches", 0);
    let mut opt = Optimizer::new(OptimizerKind::adam(), cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        opt.set_learning_rate(cosine_learning_rate(cfg.learning_rate, it, cfg.iterations));
        let b = cfg.batch_size;
        let mut prompts: Vec<&Prompt> = Vec::with_capacity(b);
        let mut times = Vec::with_capacity(b);
        let mut z = Vec::with_capacity(b * pixels);
        let mut eps = Vec::with_capacity(b * pixels);
        let mut coeffs = Vec::with_capacity(b);
        for _ in 0..b {
            let pair = &dataset[rng.random_range(0..dataset.len())];
            let t = rng.random_range(1..=steps);
            let (sa, sb) = noise_coefficients(&ckpt.schedule, t);
            for &x0 in pair.image.pixels() {
                let e: f32 = rng.sample(StandardNormal);
                z.push(sa * x0 + sb * e);
                eps.push(e);
            }
            coeffs.push((sa, sb));
            prompts.push(&pair.prompt);
            times.push(t);
        }

        let net = &ckpt.net;
        let mut g = Graph::new();
        let vars = net.record(&mut g, true)?;
        let zv = g.constant(Tensor::matrix(b, pixels, z)?)?;
        let cond = net.condition_on_tape(&mut g, &vars, &prompts)?;
        let pred = net.forward_on_tape(&mut g, &vars, zv, &times, cond, &coeffs)?;
        let target = g.constant(Tensor::matrix(b, pixels, eps)?)?;
        let loss = g
            .squared_error(pred, target)
            .map_err(|e| Error::NonFinite(format!("training loss at iteration {it}: {e}")))?;
        let loss_value = g.value(loss)?.data()[0];
        let mut grads = g.backward(loss)?;
        let grads: Vec<Tensor> = vars
            .all()
            .into_iter()
            .zip(net.params())
            .map(|(v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        drop(g);
        opt.step(ckpt.net.params_mut(), &grads)?;
        if ckpt.net.params().iter().any(|p| !p.all_finite()) {
            return Err(Error::NonFinite(format!("parameters after iteration {it}")));
        }
        trace.push(loss_value);
    }
    Ok(trace)
}

/// Learning rate at iteration `it` of `total`: cosine decay from `peak` to 0.
pub fn cosine_learning_rate(peak: f32, it: usize, total: usize) -> f32 {
    let f = it as f32 / total.max(1) as f32;
    peak * 0.5 * (1.0 + (std::f32::consts::PI * f).cos())
}

/// `(√ᾱ_t, √(1−ᾱ_t))`.
pub fn noise_coefficients(schedule: &NoiseSchedule, t: usize) -> (f32, f32) {
    let ab = schedule.alpha_bar(t);
    (ab.sqrt(), (1.0 - ab).sqrt())
}

/// Forward diffusion `z_t = √ᾱ_t·x0 + √(1−ᾱ_t)·noise`.
pub fn forward_noise(x0: &[f32], t: usize, noise: &[f32], schedule: &NoiseSchedule) -> Result<Vec<f32>> {
    schedule.check_step(t)?;
    if x0.len() != noise.len() {
        return Err(Error::Shape(format!(
            "noise has {} values for {} pixels",
            noise.len(),
            x0.len()
        )));
    }
    let (sa, sb) = noise_coefficients(schedule, t);
    Ok(x0.iter().zip(noise).map(|(x, e)| sa * x + sb * e).collect())
}
