//! Ancestral DDPM sampling and the Monte-Carlo reconstruction loss.

use rand::Rng;
use rand_distr::StandardNormal;

use super::checkpoint::ModelCheckpoint;
use super::schedule::NoiseSchedule;
use super::train::noise_coefficients;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::seeds;
use crate::synthworld::Prompt;

/// Anything that predicts the noise in `z_t` for a prompt.
pub trait Denoise {
    fn schedule(&self) -> &NoiseSchedule;
    fn pixels(&self) -> usize;
    /// `z` holds `times.len()` rows of `pixels()` values.
    fn predict_noise(&self, prompt: &Prompt, z: &[f32], times: &[usize]) -> Result<Vec<f32>>;
}

impl Denoise for ModelCheckpoint {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn pixels(&self) -> usize {
        self.net.config().pixels
    }

    fn predict_noise(&self, prompt: &Prompt, z: &[f32], times: &[usize]) -> Result<Vec<f32>> {
        let cond = self.net.condition(prompt);
        let rows: Vec<f32> = times.iter().flat_map(|_| cond.iter().copied()).collect();
        let coeffs: Vec<(f32, f32)> = times.iter().map(|&t| noise_coefficients(&self.schedule, t)).collect();
        self.net.predict(z, times, &rows, &coeffs)
    }
}

/// Shared noise seed for attribution queries: a hash of the prompt tokens, so
/// every model queried with the same prompt follows the same noise path.
pub fn prompt_seed(prompt: &Prompt) -> u64 {
    seeds::derive(0, "prompt-noise", prompt.index() as u64)
}

/// Gaussian noise for sampler step `t`, keyed only by `(seed, t)`.
pub fn step_noise(seed: u64, t: usize, len: usize) -> Vec<f32> {
    let mut rng = seeds::rng_for(seed, "sampler", t as u64);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn generate(ckpt: &ModelCheckpoint, prompt: &Prompt, noise_seed: u64) -> Result<Image> {
    Ok(generate_batch(ckpt, &[*prompt], &[noise_seed])?.remove(0))
}

/// Samples one image per `(prompt, seed)`; each row is identical to what
/// [`generate`] returns for it alone.
pub fn generate_batch(ckpt: &ModelCheckpoint, prompts: &[Prompt], noise_seeds: &[u64]) -> Result<Vec<Image>> {
    if prompts.len() != noise_seeds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} prompts but {} noise seeds",
            prompts.len(),
            noise_seeds.len()
        )));
    }
    if prompts.is_empty() {
        return Ok(Vec::new());
    }
    let pixels = ckpt.net.config().pixels;
    let schedule = &ckpt.schedule;
    let steps = schedule.steps();
    let batch = prompts.len();

    let mut cond = Vec::with_capacity(batch * ckpt.net.config().embed_dim);
    for p in prompts {
        cond.extend(ckpt.net.condition(p));
    }
    let mut z = Vec::with_capacity(batch * pixels);
    for &s in noise_seeds {
        z.extend(step_noise(s, steps, pixels));
    }

    for t in (1..=steps).rev() {
        let times = vec![t; batch];
        let (sa, sb) = noise_coefficients(schedule, t);
        let eps = ckpt.net.predict(&z, &times, &cond, &vec![(sa, sb); batch])?;
        let ab_prev = schedule.alpha_bar(t - 1);
        let beta = schedule.beta(t);
        let ab = schedule.alpha_bar(t);
        // posterior q(z_{t-1} | z_t, x0) with x0 predicted and clipped
        let coef_x0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let coef_z = schedule.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let sigma = (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt();
        for (row, &s) in noise_seeds.iter().enumerate() {
            let zr = &mut z[row * pixels..(row + 1) * pixels];
            let er = &eps[row * pixels..(row + 1) * pixels];
            let noise = if t > 1 { Some(step_noise(s, t - 1, pixels)) } else { None };
            for i in 0..pixels {
                let x0 = ((zr[i] - sb * er[i]) / sa).clamp(0.0, 1.0);
                let mut next = coef_x0 * x0 + coef_z * zr[i];
                if let Some(n) = &noise {
                    next += sigma * n[i];
                }
                zr[i] = next;
            }
        }
    }

    z.chunks_exact(pixels)
        .map(|row| Image::new(ckpt.world.image_size, row.iter().map(|v| v.clamp(0.0, 1.0)).collect()))
        .collect()
}

/// Per-trial reconstruction losses `mean((ε − ε̂(z_t, t, c))²)` over sampled `(t, ε)`.
pub fn reconstruction_losses<D: Denoise + ?Sized>(
    model: &D,
    prompt: &Prompt,
    target: &Image,
    trials: usize,
    seed: u64,
) -> Result<Vec<f32>> {
    let pixels = model.pixels();
    if target.len() != pixels {
        return Err(Error::Shape(format!("target has {} pixels, model {pixels}", target.len())));
    }
    let steps = model.schedule().steps();
    let mut rng = seeds::rng_for(seed, "recon-loss", 0);
    let mut out = Vec::with_capacity(trials);
    const CHUNK: usize = 128;
    let mut remaining = trials;
    while remaining > 0 {
        let b = remaining.min(CHUNK);
        let mut times = Vec::with_capacity(b);
        let mut z = Vec::with_capacity(b * pixels);
        let mut eps = Vec::with_capacity(b * pixels);
        for _ in 0..b {
            let t = rng.random_range(1..=steps);
            let (sa, sb) = noise_coefficients(model.schedule(), t);
            for &x0 in target.pixels() {
                let e: f32 = rng.sample(StandardNormal);
                z.push(sa * x0 + sb * e);
                eps.push(e);
            }
            times.push(t);
        }
        let pred = model.predict_noise(prompt, &z, &times)?;
        for (p_row, e_row) in pred.chunks_exact(pixels).zip(eps.chunks_exact(pixels)) {
            let ss: f32 = p_row.iter().zip(e_row).map(|(a, b)| (a - b) * (a - b)).sum();
            out.push(ss / pixels as f32);
        }
        remaining -= b;
    }
    Ok(out)
}

/// Monte-Carlo estimate of the noise-prediction loss for one `(prompt, image)` pair.
pub fn reconstruction_loss<D: Denoise + ?Sized>(
    model: &D,
    prompt: &Prompt,
    target: &Image,
    trials: usize,
    seed: u64,
) -> Result<f32> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let losses = reconstruction_losses(model, prompt, target, trials, seed)?;
    Ok((losses.iter().map(|&v| v as f64).sum::<f64>() / trials as f64) as f32)
}
