//! Key selection and evaluation metrics against brute-force oracles.

mod support;

use std::collections::HashMap;

use provlab::keyselect::{detect_key_samples, project_to_tokens};
use provlab::numcore::Tensor;
use provlab::seeds;
use provlab::synthworld::{Prompt, SLOTS, VALUES, VOCAB_SIZE};
use rand::Rng;

use support::oracles::{check_auc, check_top_n, check_tpr, small_source};

const INSTANCES: u64 = 50;

#[test]
fn detection_top_n_matches_brute_force() {
    let (pool, model) = small_source();
    let mut cache = HashMap::new();
    for seed in 0..INSTANCES {
        check_top_n(&pool, &model, &mut cache, seed).unwrap();
    }
}

#[test]
fn duplicated_pair_is_kept_once_per_index() {
    let (pool, model) = small_source();
    let mut dataset = pool[..6].to_vec();
    dataset.push(pool[0].clone());
    let keys = detect_key_samples(&model, &dataset, dataset.len()).unwrap();
    let copies = keys.samples.iter().filter(|s| s.prompt == pool[0].prompt).count();
    assert_eq!(copies, 2);
}

#[test]
fn auc_matches_pairwise_double_loop() {
    for seed in 0..INSTANCES {
        check_auc(seed).unwrap();
    }
}

#[test]
fn tpr_at_fpr_matches_threshold_enumeration() {
    for seed in 0..INSTANCES {
        check_tpr(seed).unwrap();
    }
}

#[test]
fn projection_matches_exhaustive_row_scan() {
    let d = 6;
    for seed in 0..INSTANCES {
        let mut rng = seeds::rng_for(seed, "test/projection", 0);
        let table = Tensor::uniform(&[VOCAB_SIZE, d], 1.0, &mut rng);
        let embedding = Tensor::uniform(&[SLOTS, d], 1.0, &mut rng);
        let seed_prompt = Prompt::from_token_ids(
            &(0..SLOTS)
                .map(|s| s * VALUES + rng.random_range(0..VALUES))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        for unconstrained in [false, true] {
            let proj = project_to_tokens(&embedding, &table, &seed_prompt, unconstrained).unwrap();
            for slot in 0..SLOTS {
                let dist = |id: usize| -> f64 {
                    embedding
                        .row(slot)
                        .iter()
                        .zip(table.row(id))
                        .map(|(a, b)| ((a - b) as f64).powi(2))
                        .sum()
                };
                let allowed: Vec<usize> = (0..VOCAB_SIZE)
                    .filter(|&id| unconstrained || id / VALUES == slot)
                    .collect();
                let best = allowed.iter().copied().min_by(|a, b| dist(*a).total_cmp(&dist(*b))).unwrap();
                assert_eq!(proj.token_ids[slot], best, "instance {seed} slot {slot}");
                assert_eq!(proj.projected.row(slot), table.row(best));
            }
            let expected_hamming = proj
                .token_ids
                .iter()
                .zip(seed_prompt.token_ids())
                .filter(|(a, b)| **a != *b)
                .count();
            assert_eq!(proj.hamming, expected_hamming);
        }
    }
}
