//! Conditional denoising diffusion in pixel space: training, fine-tuning,
//! seeded ancestral sampling and the Monte-Carlo reconstruction loss.

mod checkpoint;
mod codec_identity;
mod net;
mod sample;
mod schedule;
mod train;

pub use checkpoint::{ModelCheckpoint, Provenance, CHECKPOINT_MAGIC};
pub use codec_identity::IdentityCodec;
pub use net::{output_coefficients, time_embedding, DenoiserConfig, DenoiserNet, NetVars};
pub use sample::{
    generate, generate_batch, prompt_seed, reconstruction_loss, reconstruction_losses, step_noise, Denoise,
};
pub use schedule::NoiseSchedule;
pub use train::{cosine_learning_rate, finetune, forward_noise, noise_coefficients, train, ModelSpec, TrainConfig};
