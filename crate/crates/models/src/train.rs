//! ε-prediction objective and the denoiser training loop.

use flowguide_core::{forward_diffuse, gaussian_noise, CoreError, Latents, LatentSequence, Prng, Schedule};
use flowguide_nn::{AdamConfig, Graph};
use ndarray::{concatenate, s, Array4, Axis, Ix4};
use serde::{Deserialize, Serialize};

use crate::autoencoder::to_dyn;
use crate::denoiser::{Denoiser, EpsModel};
use crate::error::{ModelError, Result};

/// One training sequence: normalised clean latents and their condition grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentExample {
    pub latents: Latents,
    pub cond: Array4<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserTrainConfig {
    pub iterations: usize,
    /// Sequences per step.
    pub batch: usize,
    pub adam: AdamConfig,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch: 2,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// `(iteration, loss)` per step.
    pub losses: Vec<(usize, f64)>,
}

fn noise4(shape: [usize; 4], rng: &mut Prng) -> Result<Array4<f32>> {
    Ok(gaussian_noise::<f32>(&shape, rng)?
        .into_dimensionality::<Ix4>()
        .expect("rank-4 noise"))
}

fn check_example(ex: &LatentExample) -> Result<()> {
    let [n, _, h, w] = ex.latents.shape();
    let (cn, _, ch, cw) = ex.cond.dim();
    if (n, h, w) != (cn, ch, cw) {
        return Err(CoreError::Shape {
            expected: vec![n, ex.cond.dim().1, h, w],
            actual: ex.cond.shape().to_vec(),
        }
        .into());
    }
    Ok(())
}

/// Monte-Carlo estimate of `E‖ε − ε_θ(z_t; t, y)‖²`: one `t ∼ U(1, T)` and
/// one noise draw per sequence, mean over elements and sequences.
pub fn denoiser_loss<M: EpsModel>(model: &M, batch: &[LatentExample], sched: &Schedule, rng: &mut Prng) -> Result<f64> {
    if batch.is_empty() {
        return Err(CoreError::InvalidArgument("denoiser loss needs a non-empty batch".into()).into());
    }
    let mut total = 0.0;
    for ex in batch {
        check_example(ex)?;
        let t = 1 + rng.below(sched.len());
        let eps = noise4(ex.latents.shape(), rng)?;
        let zt = forward_diffuse(&ex.latents, t, &eps, sched)?;
        let pred = model.predict_eps(zt.data(), t, &ex.cond);
        let se: f64 = pred.iter().zip(eps.iter()).map(|(p, e)| ((p - e) as f64).powi(2)).sum();
        total += se / eps.len() as f64;
    }
    Ok(total / batch.len() as f64)
}

/// Adam on the ε objective for a fixed number of steps. Aborts when the
/// step loss is non-finite or exceeds ten times the first step's loss.
pub fn train_denoiser(
    den: &mut Denoiser,
    data: &[LatentExample],
    sched: &Schedule,
    cfg: &DenoiserTrainConfig,
    rng: &mut Prng,
) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(CoreError::InvalidArgument("denoiser training needs data".into()).into());
    }
    data.iter().try_for_each(check_example)?;
    let frames = data[0].latents.frame_count();
    if data.iter().any(|ex| ex.latents.frame_count() != frames) {
        return Err(CoreError::InvalidArgument("training sequences must share a frame count".into()).into());
    }
    let mut log = TrainLog::default();
    let mut initial = None;
    for it in 0..cfg.iterations {
        let mut zs = Vec::new();
        let mut cs = Vec::new();
        let mut es = Vec::new();
        let mut ts = Vec::new();
        for _ in 0..cfg.batch.max(1) {
            let ex = &data[rng.below(data.len())];
            let t = 1 + rng.below(sched.len());
            let eps = noise4(ex.latents.shape(), rng)?;
            let zt = forward_diffuse(&ex.latents, t, &eps, sched)?;
            zs.push(zt.into_inner());
            cs.push(ex.cond.clone());
            es.push(eps);
            ts.extend(std::iter::repeat_n(t, frames));
        }
        let cat = |v: &[Array4<f32>]| {
            let views: Vec<_> = v.iter().map(|a| a.view()).collect();
            concatenate(Axis(0), &views).expect("matching shapes")
        };
        let mut g = Graph::new();
        let z = g.constant(to_dyn(cat(&zs)));
        let c = g.constant(to_dyn(cat(&cs)));
        let target = g.constant(to_dyn(cat(&es)));
        let pred = den.forward(&mut g, z, c, &ts, frames);
        let r = g.sub(pred, target);
        let sq = g.square(r);
        let loss = g.mean(sq);
        let value = g.scalar(loss) as f64;
        let first = *initial.get_or_insert(value);
        if !value.is_finite() || value > 10.0 * first {
            return Err(ModelError::Diverged {
                iteration: it,
                loss: value,
                initial: first,
            });
        }
        let grads = g.backward(loss);
        g.accumulate_param_grads(&grads, &mut den.store);
        den.store.adam_step(&cfg.adam);
        log.losses.push((it, value));
    }
    Ok(log)
}

/// Frames `start..start + len` of a training example.
pub fn window(ex: &LatentExample, start: usize, len: usize) -> Result<LatentExample> {
    let n = ex.latents.frame_count();
    if start + len > n || len == 0 {
        return Err(CoreError::InvalidArgument(format!("window {start}+{len} outside {n} frames")).into());
    }
    Ok(LatentExample {
        latents: LatentSequence::new(ex.latents.data().slice(s![start..start + len, .., .., ..]).to_owned())?,
        cond: ex.cond.slice(s![start..start + len, .., .., ..]).to_owned(),
    })
}
