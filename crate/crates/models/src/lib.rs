//! Networks of the video pipeline: the latent autoencoder with its
//! temporal-aware decoder, the ε-prediction denoiser with its training loop,
//! the motion-guided sampler and decoder fine-tuning.

pub mod autoencoder;
pub mod condition;
pub mod denoiser;
pub mod discriminator;
mod error;
pub mod finetune;
pub mod sampler;
pub mod train;

pub use autoencoder::{pretrain_autoencoder, Autoencoder, AutoencoderConfig, EncoderFeatures, FusionOrder, PretrainConfig};
pub use condition::{condition_grid, estimated_latent_motion, resample_motion, FlowSource, MotionConfig};
pub use denoiser::{Denoiser, DenoiserConfig, EpsModel};
pub use discriminator::Discriminator;
pub use error::{ModelError, Result};
pub use finetune::{finetune_decoder, FinetuneConfig, FinetuneExample, LossRecord};
pub use sampler::{motion_guided_sample, unguided_sample};
pub use train::{denoiser_loss, train_denoiser, DenoiserTrainConfig, LatentExample, TrainLog};
