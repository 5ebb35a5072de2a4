use serde::{Deserialize, Serialize};

use crate::attribution::AttributionConfig;
use crate::diffmodel::TrainConfig;
use crate::error::{Error, Result};
use crate::keyselect::{SearchConfig, Strategy};
use crate::synthworld::{PrivateRule, WorldConfig, SLOTS, VALUES};

/// World parameters with the private split given as "every prompt whose
/// `private_slot` holds `private_value`".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub image_size: usize,
    pub style_amplitude: f32,
    pub private_slot: usize,
    pub private_value: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            image_size: WorldConfig::DEFAULT_IMAGE_SIZE,
            style_amplitude: WorldConfig::DEFAULT_STYLE_AMPLITUDE,
            private_slot: 0,
            private_value: 3,
        }
    }
}

impl WorldSpec {
    pub fn build(&self) -> Result<WorldConfig> {
        if self.private_slot >= SLOTS || self.private_value >= VALUES {
            return Err(Error::Config(format!(
                "private rule slot {} value {} out of range",
                self.private_slot, self.private_value
            )));
        }
        WorldConfig::with_rule(
            self.image_size,
            self.style_amplitude,
            PrivateRule::SlotValue {
                slot: self.private_slot,
                value: self.private_value,
            },
            self.seed,
        )
    }
}

/// Everything an experiment run depends on besides the master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub world: WorldSpec,
    /// Public renders the pretrained base model learns from.
    pub base_count: usize,
    pub base_train: TrainConfig,
    /// Private renders the source model is trained on.
    pub source_count: usize,
    pub source_train: TrainConfig,
    /// Fine-tuning used for suspects, shadows and the innocent reference.
    pub finetune: TrainConfig,
    /// Training-set size of each suspect.
    pub suspect_size: usize,
    pub rho_values: Vec<f64>,
    pub repetitions: usize,
    pub strategy: Strategy,
    pub attribution: AttributionConfig,
    /// Replace the configured δ₀ by one calibrated on reference suspects.
    pub calibrate: bool,
    /// Reference suspects per class for calibration.
    pub calibration_models: usize,
    pub n_values: Vec<usize>,
    pub search: SearchConfig,
    /// Shadow training-set size.
    pub shadow_size: usize,
    /// Shadows per class.
    pub shadow_count: usize,
    /// Fraction of shadows per class used to fit the discriminator.
    pub shadow_split: f64,
    /// Held-out suspects per class.
    pub eval_models: usize,
    /// Candidate prompts per retrieval query.
    pub retrieval_candidates: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        let attribution = AttributionConfig::default();
        Self {
            world: WorldSpec::default(),
            base_count: 256,
            base_train: TrainConfig::base(),
            source_count: 128,
            source_train: TrainConfig::source(),
            finetune: TrainConfig::finetune(),
            suspect_size: 120,
            rho_values: vec![0.3, 0.5, 0.7, 1.0],
            repetitions: 8,
            strategy: Strategy::Detect,
            attribution,
            calibrate: true,
            calibration_models: 2,
            n_values: vec![20, 40, 60, 80, 100],
            search: SearchConfig::for_keys(attribution.keys),
            shadow_size: 120,
            shadow_count: 6,
            shadow_split: 0.67,
            eval_models: 12,
            retrieval_candidates: 50,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.world.build()?;
        self.attribution.validate()?;
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.rho_values.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("rho values must lie in [0, 1]".into()));
        }
        for (name, v) in [
            ("base_count", self.base_count),
            ("source_count", self.source_count),
            ("suspect_size", self.suspect_size),
            ("shadow_size", self.shadow_size),
            ("calibration_models", self.calibration_models),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.shadow_count < 2 {
            return Err(Error::Config("at least two shadows per class".into()));
        }
        if self.eval_models == 0 {
            return Err(Error::Config("at least one held-out suspect per class".into()));
        }
        if !(self.shadow_split > 0.0 && self.shadow_split < 1.0) {
            return Err(Error::Config("shadow split must lie in (0, 1)".into()));
        }
        if self.retrieval_candidates < 2 {
            return Err(Error::Config("retrieval needs at least two candidates".into()));
        }
        if self.attribution.keys > self.source_count {
            return Err(Error::Config(format!(
                "{} keys from {} source training pairs",
                self.attribution.keys, self.source_count
            )));
        }
        if let Some(&n) = self.n_values.iter().find(|&&n| n == 0 || n > self.source_count) {
            return Err(Error::Config(format!(
                "key count {n} outside 1..={}",
                self.source_count
            )));
        }
        for (name, t) in [("base", self.base_train), ("source", self.source_train), ("finetune", self.finetune)] {
            if t.batch_size == 0 || !(t.learning_rate >= 0.0) {
                return Err(Error::Config(format!("{name} training settings invalid")));
            }
        }
        Ok(())
    }
}
