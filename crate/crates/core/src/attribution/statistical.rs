use serde::{Deserialize, Serialize};

use super::discriminator::ImageScorer;
use super::instance::key_outputs;
use crate::diffmodel::ModelCheckpoint;
use crate::error::{Error, Result};
use crate::keyselect::KeySampleSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticalResult {
    /// Per-key-image infringement probability, in key order.
    pub scores: Vec<f64>,
    /// Mean of `scores`.
    pub model_score: f64,
    /// 1 when the suspect is judged infringing.
    pub res: u8,
}

/// Mean probability, infringing iff strictly above one half.
pub fn verdict_from_scores(scores: Vec<f64>) -> Result<StatisticalResult> {
    if scores.is_empty() {
        return Err(Error::InsufficientData("no image scores".into()));
    }
    let model_score = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(StatisticalResult {
        res: u8::from(model_score > 0.5),
        model_score,
        scores,
    })
}

/// Scores the suspect's key-prompt outputs (shared prompt seeds).
pub fn statistical_verdict(
    scorer: &dyn ImageScorer,
    suspect: &ModelCheckpoint,
    keys: &KeySampleSet,
) -> Result<StatisticalResult> {
    let digest = keys.digest()?;
    if scorer.key_digest() != digest {
        return Err(Error::DigestMismatch {
            what: "discriminator key set".into(),
            expected: digest,
            found: scorer.key_digest().to_string(),
        });
    }
    let outputs = key_outputs(suspect, keys, 1)?;
    let scores = outputs
        .iter()
        .map(|imgs| scorer.score_image(&imgs[0]))
        .collect::<Result<Vec<f64>>>()?;
    verdict_from_scores(scores)
}
