//! Central-difference gradient oracle: the denoiser loss recomputed in `f64`
//! straight from the network's definition.

use provlab::diffmodel::{output_coefficients, time_embedding, DenoiserConfig, DenoiserNet};
use provlab::numcore::{finite_diff_grad, relative_error, Graph, Tensor};
use provlab::seeds;
use provlab::synthworld::{SLOTS, VOCAB_SIZE};
use rand::Rng;
use rand_distr::StandardNormal;

pub const STEP: f64 = 1e-3;
pub const FLOOR: f64 = 1e-8;

pub fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// One denoiser-loss instance: a batch of noisy inputs with their targets.
pub struct Instance {
    pub config: DenoiserConfig,
    pub tokens: Vec<usize>,
    pub z: Vec<f32>,
    pub times: Vec<usize>,
    pub coeffs: Vec<(f32, f32)>,
    pub eps: Vec<f32>,
}

/// Splits a flat parameter vector into tensors of the config's shapes.
pub fn unflatten(config: &DenoiserConfig, flat: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut at = 0;
    for shape in config.param_shapes() {
        let n: usize = shape.iter().product();
        out.push(flat[at..at + n].to_vec());
        at += n;
    }
    out
}

/// Predicted noise for every row, computed in `f64` straight from the
/// definition of the network.
pub fn predict64(inst: &Instance, params: &[Vec<f64>], cond_rows: &[f64]) -> Vec<f64> {
    let c = &inst.config;
    let d = c.embed_dim;
    let batch = inst.times.len();
    let mut out = Vec::with_capacity(batch * c.pixels);
    for r in 0..batch {
        let mut cond = vec![0.0; d];
        for s in 0..SLOTS {
            for k in 0..d {
                cond[k] += cond_rows[(r * SLOTS + s) * d + k] / SLOTS as f64;
            }
        }
        let z = &inst.z[r * c.pixels..(r + 1) * c.pixels];
        let mut h: Vec<f64> = to64(z);
        h.extend(to64(&time_embedding(inst.times[r], c.time_dim)));
        h.extend(cond);
        let layers = (params.len() - 1) / 2;
        for l in 0..layers {
            let w = &params[1 + 2 * l];
            let b = &params[2 + 2 * l];
            let n = b.len();
            let mut next = b.clone();
            for (i, hv) in h.iter().enumerate() {
                for j in 0..n {
                    next[j] += hv * w[i * n + j];
                }
            }
            if l + 1 < layers {
                next.iter_mut().for_each(|v| *v = silu(*v));
            }
            h = next;
        }
        let (sa, sb) = inst.coeffs[r];
        let (a, b, cc) = output_coefficients(sa, sb);
        for (hv, zv) in h.iter().zip(z) {
            out.push(a as f64 * *zv as f64 + cc as f64 + b as f64 * hv);
        }
    }
    out
}

pub fn mse(pred: &[f64], target: &[f32]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - *t as f64).powi(2)).sum::<f64>() / pred.len() as f64
}

pub fn gather64(table: &[f64], tokens: &[usize], d: usize) -> Vec<f64> {
    tokens.iter().flat_map(|&t| table[t * d..(t + 1) * d].to_vec()).collect()
}

pub fn loss64(inst: &Instance, flat: &[f64]) -> f64 {
    let params = unflatten(&inst.config, flat);
    let rows = gather64(&params[0], &inst.tokens, inst.config.embed_dim);
    mse(&predict64(inst, &params, &rows), &inst.eps)
}

pub fn random_instance(seed: u64) -> (Instance, DenoiserNet) {
    let mut rng = seeds::rng_for(seed, "test/gradients", 0);
    let config = DenoiserConfig {
        pixels: 16,
        embed_dim: 4,
        time_dim: 4,
        hidden: 8,
        hidden_layers: rng.random_range(1..=3),
        vocab: VOCAB_SIZE,
    };
    let net = DenoiserNet::init(config, &mut rng).unwrap();
    let batch = rng.random_range(1..=3);
    let tokens = (0..batch * SLOTS).map(|_| rng.random_range(0..VOCAB_SIZE)).collect();
    let mut z = Vec::new();
    let mut eps = Vec::new();
    let mut times = Vec::new();
    let mut coeffs = Vec::new();
    for _ in 0..batch {
        let sa: f32 = rng.random_range(0.05..0.999);
        coeffs.push((sa, (1.0 - sa * sa).sqrt()));
        times.push(rng.random_range(1..=64));
        for _ in 0..config.pixels {
            z.push(rng.sample::<f32, _>(StandardNormal));
            eps.push(rng.sample::<f32, _>(StandardNormal));
        }
    }
    (
        Instance {
            config,
            tokens,
            z,
            times,
            coeffs,
            eps,
        },
        net,
    )
}

/// Gradient of the training loss with respect to every parameter, from the
/// tape, flattened in storage order.
pub fn tape_gradient(inst: &Instance, net: &DenoiserNet) -> Vec<f64> {
    let batch = inst.times.len();
    let mut g = Graph::new();
    let vars = net.record(&mut g, true).unwrap();
    let rows = g.gather_rows(vars.embedding, &inst.tokens).unwrap();
    let cond = net.pool_slots(&mut g, rows).unwrap();
    let z = g.constant(Tensor::matrix(batch, inst.config.pixels, inst.z.clone()).unwrap()).unwrap();
    let pred = net.forward_on_tape(&mut g, &vars, z, &inst.times, cond, &inst.coeffs).unwrap();
    let target = g.constant(Tensor::matrix(batch, inst.config.pixels, inst.eps.clone()).unwrap()).unwrap();
    let loss = g.squared_error(pred, target).unwrap();
    let grads = g.backward(loss).unwrap();
    vars.all()
        .into_iter()
        .zip(net.params())
        .flat_map(|(v, p)| match grads.get(v) {
            Some(t) => to64(t.data()),
            None => vec![0.0; p.len()],
        })
        .collect()
}

/// Relative error between tape and finite-difference gradients of one random
/// denoiser-loss instance.
pub fn denoiser_gradient_error(seed: u64) -> f64 {
    let (inst, net) = random_instance(seed);
    let flat: Vec<f64> = net.params().iter().flat_map(|p| to64(p.data())).collect();
    let fd = finite_diff_grad(|x| loss64(&inst, x), &flat, STEP);
    relative_error(&tape_gradient(&inst, &net), &fd, FLOOR)
}
