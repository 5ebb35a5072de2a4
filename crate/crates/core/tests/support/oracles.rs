//! Brute-force references for key selection and the verdict metrics.

use std::collections::HashMap;

use provlab::diffmodel::{generate, prompt_seed, train, ModelCheckpoint, ModelSpec, TrainConfig};
use provlab::evalharness::metrics::{auc, tpr_at_fpr, ScoredPopulation};
use provlab::keyselect::detect_key_samples;
use provlab::seeds;
use provlab::simembed::perceptual_similarity;
use provlab::synthworld::{build_dataset, LabeledPair, Partition, Prompt, WorldConfig};
use rand::seq::IndexedRandom;
use rand::Rng;

/// A briefly trained source and the private pairs it saw.
pub fn small_source() -> (Vec<LabeledPair>, ModelCheckpoint) {
    let world = WorldConfig::new(1).unwrap();
    let pool = build_dataset(&world, 40, Partition::Private, 11).unwrap();
    let cfg = TrainConfig {
        iterations: 300,
        ..TrainConfig::source()
    };
    let model = train(&pool, &world, &ModelSpec::desk(&world), &cfg, 5).unwrap();
    (pool, model)
}

/// Indices ordered by an exhaustive "how many entries beat me" count.
pub fn brute_force_top_n(scores: &[f32], prompts: &[Prompt], n: usize) -> Vec<usize> {
    let beats = |j: usize, i: usize| {
        scores[j] > scores[i]
            || (scores[j] == scores[i] && prompts[j].token_ids() < prompts[i].token_ids())
            || (scores[j] == scores[i] && prompts[j] == prompts[i] && j < i)
    };
    let mut ranked = vec![usize::MAX; scores.len()];
    for i in 0..scores.len() {
        let rank = (0..scores.len()).filter(|&j| j != i && beats(j, i)).count();
        ranked[rank] = i;
    }
    ranked.truncate(n);
    ranked
}

/// Detection on a random multiset drawn from `pool`, compared with the
/// brute-force ranking of independently recomputed similarities.
pub fn check_top_n(
    pool: &[LabeledPair],
    model: &ModelCheckpoint,
    cache: &mut HashMap<Prompt, f32>,
    seed: u64,
) -> Result<(), String> {
    let mut rng = seeds::rng_for(seed, "test/top-n", 0);
    let len = rng.random_range(1..=24);
    let dataset: Vec<LabeledPair> = (0..len).map(|_| pool.choose(&mut rng).unwrap().clone()).collect();
    let n = rng.random_range(1..=len);
    let keys = detect_key_samples(model, &dataset, n).map_err(|e| e.to_string())?;

    let scores: Vec<f32> = dataset
        .iter()
        .map(|p| {
            *cache.entry(p.prompt).or_insert_with(|| {
                let img = generate(model, &p.prompt, prompt_seed(&p.prompt)).unwrap();
                perceptual_similarity(&img, &p.image).unwrap().value
            })
        })
        .collect();
    let prompts: Vec<Prompt> = dataset.iter().map(|p| p.prompt).collect();
    let expected = brute_force_top_n(&scores, &prompts, n);

    if keys.len() != n {
        return Err(format!("instance {seed}: {} keys, expected {n}", keys.len()));
    }
    for (rank, (sample, &i)) in keys.samples.iter().zip(&expected).enumerate() {
        if sample.prompt != dataset[i].prompt || sample.score != scores[i] as f64 || sample.reference != dataset[i].image {
            return Err(format!("instance {seed}: rank {rank} differs from the brute-force ranking"));
        }
    }
    Ok(())
}

/// Random population with heavy ties and both classes present.
pub fn random_population(seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = seeds::rng_for(seed, "test/population", 0);
    let len = rng.random_range(2..=200);
    let levels = rng.random_range(1..=len.min(30)) as f64;
    let mut labels: Vec<bool> = (0..len).map(|_| rng.random_bool(0.5)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = (0..len)
        .map(|_| (rng.random_range(0.0..1.0f64) * levels).floor() / levels)
        .collect();
    (scores, labels)
}

/// Share of (infringing, innocent) pairs ranked correctly, ties counting half.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice_wins, mut pairs) = (0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1;
                twice_wins += if si > sj {
                    2
                } else if si == sj {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice_wins as f64 / (2 * pairs) as f64
}

/// Best true-positive rate over every observed threshold whose false-positive
/// rate stays within `cap`.
pub fn brute_force_tpr(scores: &[f64], labels: &[bool], cap: f64) -> f64 {
    let p = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - p;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(f64::INFINITY);
    let mut best = 0;
    for &t in &thresholds {
        let tp = scores.iter().zip(labels).filter(|(s, l)| **l && **s >= t).count();
        let fp = scores.iter().zip(labels).filter(|(s, l)| !**l && **s >= t).count();
        if fp as f64 / n as f64 <= cap {
            best = best.max(tp);
        }
    }
    best as f64 / p as f64
}

pub fn check_auc(seed: u64) -> Result<(), String> {
    let (scores, labels) = random_population(seed);
    let pop = ScoredPopulation::from_scores(&scores, &labels).map_err(|e| e.to_string())?;
    let got = auc(&pop).map_err(|e| e.to_string())?;
    let expected = pairwise_auc(&scores, &labels);
    if got != expected {
        return Err(format!("instance {seed}: auc {got} vs {expected}"));
    }
    Ok(())
}

pub fn check_tpr(seed: u64) -> Result<(), String> {
    let (scores, labels) = random_population(seed + 1000);
    let pop = ScoredPopulation::from_scores(&scores, &labels).map_err(|e| e.to_string())?;
    let mut rng = seeds::rng_for(seed, "test/cap", 0);
    for cap in [0.1, 0.0, 1.0, rng.random_range(0.0..1.0)] {
        let got = tpr_at_fpr(&pop, cap).map_err(|e| e.to_string())?;
        let expected = brute_force_tpr(&scores, &labels, cap);
        if got != expected {
            return Err(format!("instance {seed} cap {cap}: tpr {got} vs {expected}"));
        }
    }
    Ok(())
}
