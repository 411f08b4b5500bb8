//! Strided DDPM sampling with optional motion guidance.
//!
//! Both samplers draw the initial latent and then one noise array per step
//! from the same generator in the same order, so a zero guidance scale
//! reproduces the unguided trajectory bit for bit.

use flowguide_core::{
    apply_guidance, ddpm_step, gaussian_noise, CoreError, Flows, GuidanceConfig, Latents, LatentSequence, MaskSet,
    Prng, Schedule,
};
use ndarray::{Array4, Ix4};

use crate::denoiser::EpsModel;
use crate::error::Result;

fn noise4(shape: [usize; 4], rng: &mut Prng) -> Result<Array4<f32>> {
    Ok(gaussian_noise::<f32>(&shape, rng)?
        .into_dimensionality::<Ix4>()
        .expect("rank-4 noise"))
}

fn latent_shape<M: EpsModel>(model: &M, cond: &Array4<f32>) -> [usize; 4] {
    let (n, _, h, w) = cond.dim();
    [n, model.latent_channels(), h, w]
}

/// Plain ancestral sampling over `steps` strided timesteps.
pub fn unguided_sample<M: EpsModel>(
    model: &M,
    cond: &Array4<f32>,
    sched: &Schedule,
    steps: usize,
    rng: &mut Prng,
) -> Result<Latents> {
    let plan = sched.strided(steps)?;
    let shape = latent_shape(model, cond);
    let mut z = LatentSequence::new(noise4(shape, rng)?)?;
    for step in &plan.steps {
        let eps = model.predict_eps(z.data(), step.t, cond);
        let noise = noise4(shape, rng)?;
        z = ddpm_step(&z, step, &eps, &noise)?;
    }
    Ok(z)
}

/// Ancestral sampling where every guided step replaces the DDPM output
/// `z̃` by `z̃ − scale·σ_t²·∇E`, with `E` the masked latent warping energy
/// under `flows` and `masks` on the latent grid.
#[allow(clippy::too_many_arguments)]
pub fn motion_guided_sample<M: EpsModel>(
    model: &M,
    cond: &Array4<f32>,
    flows: &Flows,
    masks: &MaskSet,
    sched: &Schedule,
    gcfg: &GuidanceConfig,
    steps: usize,
    rng: &mut Prng,
) -> Result<Latents> {
    gcfg.validate()?;
    let shape = latent_shape(model, cond);
    if shape[0] < 2 || flows.frame_count() != shape[0] || (flows.height(), flows.width()) != (shape[2], shape[3]) {
        return Err(CoreError::Shape {
            expected: vec![shape[0], 2, shape[2], shape[3]],
            actual: vec![flows.frame_count(), 2, flows.height(), flows.width()],
        }
        .into());
    }
    let plan = sched.strided(steps)?;
    let mut z = LatentSequence::new(noise4(shape, rng)?)?;
    for (k, step) in plan.steps.iter().enumerate() {
        let eps = model.predict_eps(z.data(), step.t, cond);
        let noise = noise4(shape, rng)?;
        let z_tilde = ddpm_step(&z, step, &eps, &noise)?;
        z = if gcfg.guides_step(k) {
            apply_guidance(&z_tilde, &z, step, gcfg, flows, masks)?
        } else {
            z_tilde
        };
    }
    Ok(z)
}
