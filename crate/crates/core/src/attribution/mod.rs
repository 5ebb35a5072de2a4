//! Attribution verdicts.
//!
//! Instance level: query source and suspect with the key prompts under shared
//! noise seeds and count how many output pairs fall within a distance
//! threshold. Statistical level: train shadow models under known innocent and
//! infringing recipes, fit a discriminator on their key-prompt outputs, and
//! score the suspect's outputs with it.

mod calibrate;
mod discriminator;
mod instance;
mod report;
mod shadow;
mod suspect;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simembed::DistanceSpace;

pub use calibrate::{calibrate_delta0, delta0_from_distances, percentile, Calibration, DistanceHistogram, HISTOGRAM_BINS};
pub use discriminator::{
    features, train_discriminator, Discriminator, FitConfig, ImageScorer, LabeledImage, ShadowSplit, TrainedDiscriminator,
    FEATURE_DIM,
};
pub use instance::{
    conf_from_distances, instance_conf, instance_conf_against, instance_verdict, key_outputs, InstanceResult,
};
pub use report::{AttributionReport, InstanceSection, StatisticalSection};
pub use shadow::{build_shadow_ensemble, shadow_outputs, ShadowEnsemble, ShadowModel, ShadowPools};
pub use statistical::{statistical_verdict, verdict_from_scores, StatisticalResult};
pub use suspect::{assemble_suspect_data, build_suspect, SuspectSpec};

mod statistical;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionConfig {
    /// Per-sample distance threshold.
    pub delta0: f64,
    /// Verdict threshold on conf.
    pub delta: f64,
    /// Key-sample count.
    pub keys: usize,
    /// Generations per key prompt.
    pub samples_per_prompt: usize,
    pub space: DistanceSpace,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            delta0: 0.15,
            delta: 0.5,
            keys: 30,
            samples_per_prompt: 1,
            space: DistanceSpace::Pixel,
        }
    }
}

impl AttributionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta0 > 0.0 && self.delta0 < 1.0) {
            return Err(Error::Config(format!("delta0 must lie in (0, 1), got {}", self.delta0)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.keys == 0 {
            return Err(Error::Config("key count must be positive".into()));
        }
        if self.samples_per_prompt == 0 {
            return Err(Error::Config("samples per prompt must be positive".into()));
        }
        Ok(())
    }
}
