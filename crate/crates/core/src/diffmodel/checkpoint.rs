use serde::{Deserialize, Serialize};

use super::net::{DenoiserConfig, DenoiserNet};
use super::schedule::NoiseSchedule;
use super::train::TrainConfig;
use crate::codec::{self, Container};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::synthworld::WorldConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PLCKPT\0\x01";

/// Where a checkpoint came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Free-form role label (`base`, `source`, `suspect`, `shadow-innocent`, …).
    pub role: String,
    pub dataset_digest: String,
    /// Generated fraction of the training set, when it was mixed.
    pub rho: Option<f32>,
    /// Checkpoint this one was fine-tuned from.
    pub parent: Option<String>,
    /// Checkpoint whose generations were mixed into the training set.
    pub source: Option<String>,
    pub train_seed: u64,
    pub train: TrainConfig,
    #[serde(skip)]
    pub loss_trace: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointMeta {
    denoiser: DenoiserConfig,
    schedule_steps: usize,
    beta_start: f32,
    beta_end: f32,
    world: WorldConfig,
    provenance: Provenance,
}

/// Trained denoiser plus everything needed to sample from it.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub net: DenoiserNet,
    pub schedule: NoiseSchedule,
    pub world: WorldConfig,
    pub provenance: Provenance,
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (beta_start, beta_end) = self.schedule.beta_range();
        let mut c = Container::new();
        c.push_json(
            b"META",
            &CheckpointMeta {
                denoiser: *self.net.config(),
                schedule_steps: self.schedule.steps(),
                beta_start,
                beta_end,
                world: self.world.clone(),
                provenance: self.provenance.clone(),
            },
        )?;
        for p in self.net.params() {
            c.push_tensor(b"PARM", p);
        }
        c.push_tensor(b"LOSS", &Tensor::vector(self.provenance.loss_trace.clone()));
        Ok(c.to_bytes(CHECKPOINT_MAGIC))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::from_bytes(bytes, CHECKPOINT_MAGIC)?;
        let meta: CheckpointMeta = c.json(b"META")?;
        meta.world.validate()?;
        let params = c
            .sections_tagged(b"PARM")
            .map(codec::decode_tensor)
            .collect::<Result<Vec<_>>>()?;
        let net = DenoiserNet::from_params(meta.denoiser, params)?;
        let schedule = NoiseSchedule::linear(meta.schedule_steps, meta.beta_start, meta.beta_end)?;
        let mut provenance = meta.provenance;
        provenance.loss_trace = codec::decode_tensor(c.section(b"LOSS")?)?.into_data();
        Ok(Self {
            net,
            schedule,
            world: meta.world,
            provenance,
        })
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn digest(&self) -> Result<String> {
        Ok(codec::sha256_hex(&self.to_bytes()?))
    }

    /// SHA-256 over the parameter tensors only.
    pub fn params_digest(&self) -> String {
        let mut bytes = Vec::new();
        for p in self.net.params() {
            bytes.extend(codec::encode_tensor(p));
        }
        codec::sha256_hex(&bytes)
    }

    /// Loads and checks the bytes against an expected digest.
    pub fn from_verified_bytes(bytes: &[u8], expected: &str) -> Result<Self> {
        let found = codec::sha256_hex(bytes);
        if found != expected {
            return Err(Error::DigestMismatch {
                what: "checkpoint".into(),
                expected: expected.into(),
                found,
            });
        }
        Self::from_bytes(bytes)
    }
}
