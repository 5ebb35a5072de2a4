//! Training, fine-tuning, sampling and the reconstruction loss.

use std::sync::OnceLock;

use provlab::diffmodel::{
    cosine_learning_rate, finetune, forward_noise, generate, noise_coefficients, prompt_seed, reconstruction_loss, reconstruction_losses,
    train, Denoise, ModelCheckpoint, ModelSpec, NoiseSchedule, TrainConfig,
};
use provlab::simembed::recon_distance;
use provlab::synthworld::{build_dataset, render, LabeledPair, Origin, Partition, Prompt, WorldConfig};
use provlab::{Image, Result};

fn world() -> WorldConfig {
    WorldConfig::new(1).unwrap()
}

fn cfg(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        ..TrainConfig::source()
    }
}

/// Source trained on a small private set, shared across tests.
fn trained() -> &'static (Vec<LabeledPair>, ModelCheckpoint) {
    static T: OnceLock<(Vec<LabeledPair>, ModelCheckpoint)> = OnceLock::new();
    T.get_or_init(|| {
        let w = world();
        let data = build_dataset(&w, 16, Partition::Private, 2).unwrap();
        let model = train(&data, &w, &ModelSpec::desk(&w), &cfg(3000), 1).unwrap();
        (data, model)
    })
}

fn smoothed(trace: &[f32], window: usize) -> (f64, f64) {
    let mean = |s: &[f32]| s.iter().map(|&v| v as f64).sum::<f64>() / s.len() as f64;
    (mean(&trace[..window]), mean(&trace[trace.len() - window..]))
}

#[test]
fn forward_noise_endpoints() {
    let s = NoiseSchedule::scaled(64).unwrap();
    assert_eq!(s.alpha_bar(0), 1.0);
    let x0 = [0.3f32, 0.7];
    let noise = [1.5f32, -0.5];
    let (sa, sb) = noise_coefficients(&s, 0);
    let z0: Vec<f32> = x0.iter().zip(&noise).map(|(x, n)| sa * x + sb * n).collect();
    assert_eq!(z0, x0);
    let t = 17;
    let z = forward_noise(&[0.0, 0.0], t, &noise, &s).unwrap();
    let sb = (1.0 - s.alpha_bar(t)).sqrt();
    assert_eq!(z, vec![sb * noise[0], sb * noise[1]]);
    assert!(forward_noise(&x0, 65, &noise, &s).is_err());
}

#[test]
fn learning_rate_decays_from_peak_to_zero() {
    assert_eq!(cosine_learning_rate(2e-3, 0, 100), 2e-3);
    assert!((cosine_learning_rate(2e-3, 50, 100) - 1e-3).abs() < 1e-9);
    let rates: Vec<f32> = (0..=100).map(|i| cosine_learning_rate(2e-3, i, 100)).collect();
    assert!(rates.windows(2).all(|w| w[1] <= w[0]));
    assert!(rates[100].abs() < 1e-9);
}

#[test]
fn single_pair_is_overfit() {
    let w = world();
    let data = build_dataset(&w, 1, Partition::Private, 3).unwrap();
    let model = train(&data, &w, &ModelSpec::desk(&w), &cfg(3000), 2).unwrap();
    let (_, last) = smoothed(&model.provenance.loss_trace, 200);
    assert!(last < 0.05, "final loss {last}");
}

#[test]
fn zero_iterations_keep_the_initialization_and_training_is_deterministic() {
    let w = world();
    let data = build_dataset(&w, 8, Partition::Private, 3).unwrap();
    let spec = ModelSpec::desk(&w);
    let a = train(&data, &w, &spec, &cfg(0), 4).unwrap();
    let b = train(&data, &w, &spec, &cfg(0), 4).unwrap();
    assert_eq!(a.net, b.net);
    let c = train(&data, &w, &spec, &cfg(20), 4).unwrap();
    let d = train(&data, &w, &spec, &cfg(20), 4).unwrap();
    assert_ne!(a.net, c.net);
    assert_eq!(c.to_bytes().unwrap(), d.to_bytes().unwrap());
}

#[test]
fn loss_falls_over_a_default_source_run() {
    let (_, model) = trained();
    let (first, last) = smoothed(&model.provenance.loss_trace, 50);
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn finetuning_records_its_parent_and_lowers_loss_on_generated_data() {
    let (data, source) = trained();
    let w = world();
    let base_data = build_dataset(&w, 16, Partition::Public, 6).unwrap();
    let base = train(&base_data, &w, &ModelSpec::desk(&w), &cfg(300), 5).unwrap();

    let unchanged = finetune(&base, data, &cfg(0), 1).unwrap();
    assert_eq!(unchanged.net, base.net);
    assert_eq!(unchanged.provenance.parent, Some(base.digest().unwrap()));

    let generated: Vec<LabeledPair> = data
        .iter()
        .enumerate()
        .map(|(i, p)| LabeledPair::new(p.prompt, generate(source, &p.prompt, i as u64).unwrap(), Origin::SourceGenerated))
        .collect();
    let tuned = finetune(&base, &generated, &cfg(400), 7).unwrap();
    let (first, last) = smoothed(&tuned.provenance.loss_trace, 50);
    assert!(last < first, "{first} -> {last}");

    let wrong_size = vec![LabeledPair::new(data[0].prompt, Image::filled(8, 0.0), Origin::Real)];
    assert!(finetune(&base, &wrong_size, &cfg(1), 1).is_err());
}

#[test]
fn generation_is_deterministic_and_follows_the_prompt() {
    let (data, source) = trained();
    let w = world();
    let p = data[0].prompt;
    assert_eq!(generate(source, &p, 9).unwrap(), generate(source, &p, 9).unwrap());
    assert!(generate(source, &p, 9).unwrap().in_unit_range());

    let untrained = train(data, &w, &ModelSpec::desk(&w), &cfg(0), 1).unwrap();
    let spread = |m: &ModelCheckpoint| {
        let mut total = 0.0;
        for pair in data.windows(2) {
            let a = generate(m, &pair[0].prompt, 3).unwrap();
            let b = generate(m, &pair[1].prompt, 3).unwrap();
            total += recon_distance(&a, &b).unwrap();
        }
        total
    };
    assert!(spread(&untrained) < spread(source));
}

#[test]
fn own_render_beats_other_renders() {
    let (data, source) = trained();
    let w = world();
    let mut own = 0.0;
    let mut other = 0.0;
    let mut other_count = 0;
    for (i, pair) in data.iter().enumerate() {
        let img = generate(source, &pair.prompt, prompt_seed(&pair.prompt)).unwrap();
        own += recon_distance(&img, &render(&pair.prompt, &w)).unwrap();
        for (j, q) in data.iter().enumerate() {
            if i != j {
                other += recon_distance(&img, &q.image).unwrap();
                other_count += 1;
            }
        }
    }
    assert!(own / (data.len() as f32) < other / other_count as f32);
}

#[test]
fn checkpoint_bytes_round_trip() {
    let (_, source) = trained();
    let bytes = source.to_bytes().unwrap();
    let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(back.digest().unwrap(), source.digest().unwrap());
    let mut corrupt = bytes.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 1;
    assert!(ModelCheckpoint::from_verified_bytes(&corrupt, &source.digest().unwrap()).is_err());
}

/// Predicts noise from the known clean image, or always zero.
struct Stub {
    schedule: NoiseSchedule,
    clean: Option<Image>,
}

impl Denoise for Stub {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn pixels(&self) -> usize {
        256
    }

    fn predict_noise(&self, _: &Prompt, z: &[f32], times: &[usize]) -> Result<Vec<f32>> {
        let Some(clean) = &self.clean else {
            return Ok(vec![0.0; z.len()]);
        };
        let mut out = Vec::with_capacity(z.len());
        for (row, &t) in z.chunks_exact(256).zip(times) {
            let (sa, sb) = noise_coefficients(&self.schedule, t);
            out.extend(row.iter().zip(clean.pixels()).map(|(zv, x)| (zv - sa * x) / sb));
        }
        Ok(out)
    }
}

#[test]
fn reconstruction_loss_of_stub_denoisers() {
    let w = world();
    let pair = &build_dataset(&w, 1, Partition::Private, 1).unwrap()[0];
    let schedule = NoiseSchedule::scaled(64).unwrap();
    let perfect = Stub {
        schedule: schedule.clone(),
        clean: Some(pair.image.clone()),
    };
    assert!(reconstruction_loss(&perfect, &pair.prompt, &pair.image, 50, 1).unwrap() < 1e-6);
    let zero = Stub { schedule, clean: None };
    let l = reconstruction_loss(&zero, &pair.prompt, &pair.image, 2000, 1).unwrap();
    assert!((l - 1.0).abs() < 0.02, "{l}");
    assert!(reconstruction_loss(&zero, &pair.prompt, &pair.image, 0, 1).is_err());
}

#[test]
fn reconstruction_loss_estimates_agree() {
    let (data, source) = trained();
    let pair = &data[0];
    let small = reconstruction_loss(source, &pair.prompt, &pair.image, 1000, 1).unwrap() as f64;
    let big = reconstruction_losses(source, &pair.prompt, &pair.image, 10000, 2).unwrap();
    let mean = big.iter().map(|&v| v as f64).sum::<f64>() / big.len() as f64;
    let var = big.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (big.len() - 1) as f64;
    let sigma = (var / 1000.0 + var / 10000.0).sqrt();
    assert!((small - mean).abs() < 2.0 * sigma, "{small} vs {mean} (sigma {sigma})");
}
