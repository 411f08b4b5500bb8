//! Numerical core for motion-guided latent diffusion on video: sequences,
//! noise schedules, optical flow, guided DDPM updates, temporal metrics,
//! synthetic data and file formats.
//!
//! Everything is generic over [`Real`] (`f32` or `f64`); the aliases at the
//! bottom of this file fix the precision used by the training pipeline and
//! by gradient checks.

pub mod diffusion;
pub mod error;
pub mod gradcheck;
pub mod image_ops;
pub mod io;
pub mod metrics;
pub mod motion;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod sequence;
pub mod synth;

pub use diffusion::{
    apply_guidance, ddpm_step, forward_diffuse, warping_energy, warping_energy_grad, EvalPoint, GuidanceConfig,
};
pub use error::{CoreError, Result};
pub use metrics::{ForwardTermIndex, LossWeights};
pub use motion::{FlowField, FlowSet, MaskSet, OcclusionMask};
pub use rng::{gaussian_noise, Prng};
pub use scalar::Real;
pub use schedule::{NoiseSchedule, ReverseVariance, SamplingPlan, StepCoefficients};
pub use sequence::{l1_total, LatentSequence, VideoSequence};
pub use synth::{
    degrade_sequence, synth_sequence, DegradationSpec, SceneGenConfig, SceneSpec, SpriteSpec, SynthSequence, TextureSpec,
};

pub type Video = VideoSequence<f32>;
pub type Latents = LatentSequence<f32>;
pub type Flow = FlowField<f32>;
pub type Flows = FlowSet<f32>;
pub type Schedule = NoiseSchedule<f32>;

pub type Video64 = VideoSequence<f64>;
pub type Latents64 = LatentSequence<f64>;
pub type Flow64 = FlowField<f64>;
pub type Flows64 = FlowSet<f64>;
pub type Schedule64 = NoiseSchedule<f64>;
