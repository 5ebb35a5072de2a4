//! Conditional noise-prediction network.
//!
//! Input row: `[noisy image ‖ sinusoidal time embedding ‖ pooled prompt
//! embedding]`, followed by `hidden_layers` silu layers and a linear output
//! layer of image size. The prompt embedding is the mean of the slot token
//! embeddings.
//!
//! The trunk output `f` is preconditioned by the noise level: with
//! `σ = √(1−ᾱ_t)/√ᾱ_t`, the clean-image estimate is
//! `μ + c_skip·(z/√ᾱ_t − μ) + c_out·f`, `c_skip = s²/(σ²+s²)`,
//! `c_out = σ·o/√(σ²+s²)`, and the predicted noise follows from it. At low noise
//! `f` acts as a noise estimate, at high noise as a scaled image estimate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{kernels, Graph, Tensor, Var};
use crate::synthworld::{Prompt, SLOTS, VOCAB_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub pixels: usize,
    pub embed_dim: usize,
    pub time_dim: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub vocab: usize,
}

impl DenoiserConfig {
    pub fn desk(pixels: usize) -> Self {
        Self {
            pixels,
            embed_dim: 16,
            time_dim: 16,
            hidden: 256,
            hidden_layers: 3,
            vocab: VOCAB_SIZE,
        }
    }

    pub fn input_width(&self) -> usize {
        self.pixels + self.time_dim + self.embed_dim
    }

    /// Parameter shapes in storage order: embedding table, then `(W, b)` per layer.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![vec![self.vocab, self.embed_dim]];
        let mut fan_in = self.input_width();
        for _ in 0..self.hidden_layers {
            shapes.push(vec![fan_in, self.hidden]);
            shapes.push(vec![self.hidden]);
            fan_in = self.hidden;
        }
        shapes.push(vec![fan_in, self.pixels]);
        shapes.push(vec![self.pixels]);
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.pixels == 0 || self.embed_dim == 0 || self.hidden == 0 || self.vocab == 0 {
            return Err(Error::InvalidArgument(format!("degenerate denoiser config {self:?}")));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::InvalidArgument("time embedding width must be even".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserNet {
    config: DenoiserConfig,
    params: Vec<Tensor>,
}

/// Handles for the parameters of one net recorded on a [`Graph`].
pub struct NetVars {
    pub embedding: Var,
    layers: Vec<(Var, Var)>,
    trainable: bool,
}

impl NetVars {
    /// All parameter handles in storage order.
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.embedding];
        for (w, b) in &self.layers {
            out.push(*w);
            out.push(*b);
        }
        out
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }
}

/// Pixel value the preconditioning centers on.
pub const DATA_CENTER: f64 = 0.25;
/// Noise level at which the preconditioning hands over from input to estimate.
pub const DATA_SCALE: f64 = 0.1;
/// Scale of the trunk output when it acts as an image estimate.
pub const OUTPUT_SCALE: f64 = 0.1;

/// Maps `(√ᾱ_t, √(1−ᾱ_t))` to `(a, b, c)` with `ε̂ = a·z + b·f + c`.
pub fn output_coefficients(signal: f32, noise: f32) -> (f32, f32, f32) {
    let (sa, sb) = (signal as f64, noise as f64);
    let sigma = sb / sa;
    let s2 = sigma * sigma + DATA_SCALE * DATA_SCALE;
    let a = sigma * sigma / (s2 * sb);
    let b = -OUTPUT_SCALE / s2.sqrt();
    let c = -DATA_CENTER * sigma / s2;
    (a as f32, b as f32, c as f32)
}

/// Sinusoidal embedding of an integer timestep.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    let tf = t as f32;
    for i in 0..half {
        let freq = (-(10000f32.ln()) * i as f32 / half as f32).exp();
        out.push((tf * freq).sin());
    }
    for i in 0..half {
        let freq = (-(10000f32.ln()) * i as f32 / half as f32).exp();
        out.push((tf * freq).cos());
    }
    out
}

impl DenoiserNet {
    /// Uniform `±1/√fan_in` initialization for the trunk; embedding rows are
    /// scaled so the slot mean has unit variance.
    pub fn init<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        let mut params = Vec::with_capacity(shapes.len());
        params.push(Tensor::uniform(&shapes[0], (3.0 * SLOTS as f32).sqrt(), rng));
        for pair in shapes[1..].chunks_exact(2) {
            let fan_in = pair[0][0];
            params.push(Tensor::uniform_fan_in(&pair[0], fan_in, rng));
            params.push(Tensor::uniform_fan_in(&pair[1], fan_in, rng));
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: DenoiserConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.len() || shapes.iter().zip(&params).any(|(s, p)| s.as_slice() != p.shape()) {
            return Err(Error::Shape("parameter tensors do not match denoiser config".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn embedding_table(&self) -> &Tensor {
        &self.params[0]
    }

    /// Token embedding rows for a prompt, `[SLOTS, embed_dim]`.
    pub fn prompt_embedding(&self, prompt: &Prompt) -> Tensor {
        let d = self.config.embed_dim;
        let mut data = Vec::with_capacity(SLOTS * d);
        for id in prompt.token_ids() {
            data.extend_from_slice(self.embedding_table().row(id));
        }
        Tensor::matrix(SLOTS, d, data).expect("slot rows")
    }

    /// Records the parameters on `g`.
    pub fn record(&self, g: &mut Graph, trainable: bool) -> Result<NetVars> {
        let mut vars = Vec::with_capacity(self.params.len());
        for p in &self.params {
            vars.push(if trainable {
                g.param(p.clone())?
            } else {
                g.constant(p.clone())?
            });
        }
        let embedding = vars[0];
        let layers = vars[1..].chunks_exact(2).map(|c| (c[0], c[1])).collect();
        Ok(NetVars {
            embedding,
            layers,
            trainable,
        })
    }

    /// Pooled condition rows `[batch, embed_dim]` from per-row prompts.
    pub fn condition_on_tape(&self, g: &mut Graph, vars: &NetVars, prompts: &[&Prompt]) -> Result<Var> {
        let ids: Vec<usize> = prompts.iter().flat_map(|p| p.token_ids()).collect();
        let rows = g.gather_rows(vars.embedding, &ids)?;
        g.mean_groups(rows, SLOTS)
    }

    /// Pools slot embeddings `[batch*SLOTS, embed_dim]` already on the tape.
    pub fn pool_slots(&self, g: &mut Graph, slot_rows: Var) -> Result<Var> {
        g.mean_groups(slot_rows, SLOTS)
    }

    /// Noise prediction on the tape. `z` is `[batch, pixels]`, `cond` is
    /// `[batch, embed_dim]`, `coeffs` holds `(√ᾱ_t, √(1−ᾱ_t))` per row.
    pub fn forward_on_tape(
        &self,
        g: &mut Graph,
        vars: &NetVars,
        z: Var,
        times: &[usize],
        cond: Var,
        coeffs: &[(f32, f32)],
    ) -> Result<Var> {
        if coeffs.len() != times.len() {
            return Err(Error::Shape(format!("{} coefficient rows for batch {}", coeffs.len(), times.len())));
        }
        let p = self.config.pixels;
        let z_values = g.value(z)?.data().to_vec();
        let mut skip = Vec::with_capacity(z_values.len());
        let mut gain = Vec::with_capacity(z_values.len());
        for (row, &(sa, sb)) in z_values.chunks_exact(p).zip(coeffs) {
            let (a, b, c) = output_coefficients(sa, sb);
            skip.extend(row.iter().map(|v| a * v + c));
            gain.extend(std::iter::repeat_n(b, p));
        }
        let skip = g.constant(Tensor::matrix(times.len(), p, skip)?)?;
        let gain = g.constant(Tensor::matrix(times.len(), p, gain)?)?;
        let temb = self.time_rows(times)?;
        let temb = g.constant(temb)?;
        let mut h = g.concat_cols(&[z, temb, cond])?;
        let last = vars.layers.len() - 1;
        for (i, (w, b)) in vars.layers.iter().enumerate() {
            h = g.affine(h, *w, *b)?;
            if i < last {
                h = g.silu(h)?;
            }
        }
        let h = g.mul(gain, h)?;
        g.add(skip, h)
    }

    fn time_rows(&self, times: &[usize]) -> Result<Tensor> {
        let d = self.config.time_dim;
        let mut data = Vec::with_capacity(times.len() * d);
        for &t in times {
            data.extend(time_embedding(t, d));
        }
        Tensor::matrix(times.len(), d, data)
    }

    /// Pooled condition for a prompt, computed exactly as on the tape.
    pub fn condition(&self, prompt: &Prompt) -> Vec<f32> {
        self.pool_embedding(self.prompt_embedding(prompt).data())
    }

    /// Mean over `SLOTS` rows of a `[SLOTS, embed_dim]` slice.
    pub fn pool_embedding(&self, slot_rows: &[f32]) -> Vec<f32> {
        let d = self.config.embed_dim;
        let mut out = vec![0.0; d];
        for row in slot_rows.chunks_exact(d) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / SLOTS as f32;
        for o in out.iter_mut() {
            *o *= inv;
        }
        out
    }

    /// Tape-free forward pass; bit-identical to [`Self::forward_on_tape`].
    /// `z` holds `batch` rows, `cond` holds `batch` pooled condition rows.
    pub fn predict(&self, z: &[f32], times: &[usize], cond: &[f32], coeffs: &[(f32, f32)]) -> Result<Vec<f32>> {
        let c = &self.config;
        let batch = times.len();
        if z.len() != batch * c.pixels || cond.len() != batch * c.embed_dim || coeffs.len() != batch {
            return Err(Error::Shape(format!(
                "predict: {} pixel values and {} condition values for batch {batch}",
                z.len(),
                cond.len()
            )));
        }
        let width = c.input_width();
        let mut h = Vec::with_capacity(batch * width);
        for (i, &t) in times.iter().enumerate() {
            h.extend_from_slice(&z[i * c.pixels..(i + 1) * c.pixels]);
            h.extend(time_embedding(t, c.time_dim));
            h.extend_from_slice(&cond[i * c.embed_dim..(i + 1) * c.embed_dim]);
        }
        let layers = (self.params.len() - 1) / 2;
        let mut fan_in = width;
        for l in 0..layers {
            let w = &self.params[1 + 2 * l];
            let b = &self.params[2 + 2 * l];
            let fan_out = b.len();
            let mut out = vec![0.0; batch * fan_out];
            kernels::matmul(&h, w.data(), &mut out, batch, fan_in, fan_out);
            kernels::add_row_bias(&mut out, b.data());
            if l + 1 < layers {
                for v in out.iter_mut() {
                    *v = kernels::silu(*v);
                }
            }
            h = out;
            fan_in = fan_out;
        }
        for ((hr, zr), &(sa, sb)) in h.chunks_exact_mut(c.pixels).zip(z.chunks_exact(c.pixels)).zip(coeffs) {
            let (a, b, c) = output_coefficients(sa, sb);
            for (hv, zv) in hr.iter_mut().zip(zr) {
                *hv = (a * zv + c) + b * *hv;
            }
        }
        if !h.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("denoiser forward".into()));
        }
        Ok(h)
    }
}
