//! Convolutional ε-prediction network on latent sequences.
//!
//! The condition grid is concatenated to the noisy latent at the input. Each
//! residual stage adds a projection of the sinusoidal timestep embedding and
//! ends with a zero-initialised residual convolution across frames. The
//! output adds `sqrt(1 − ᾱ_t)·z` to the network head, so at high noise
//! levels the network only predicts a small residual.

use std::rc::Rc;

use flowguide_core::{CoreError, Latents, LatentSequence, Prng, Schedule};
use flowguide_nn::layers::{Conv2d, Linear, TemporalConv};
use flowguide_nn::{Graph, ParamId, ParamStore, Var};
use ndarray::{Array2, Array4, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::autoencoder::{to4, to_dyn};
use crate::error::{ModelError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    pub cond_channels: usize,
    pub width: usize,
    pub stages: usize,
    pub time_dim: usize,
    /// Length of the noise schedule the skip table covers.
    pub timesteps: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_channels: 8,
            cond_channels: 3,
            width: 32,
            stages: 4,
            time_dim: 32,
            timesteps: 1000,
        }
    }
}

/// Anything that predicts the noise in a latent sequence at timestep `t`.
pub trait EpsModel {
    fn latent_channels(&self) -> usize;

    /// `z` and `cond` hold one sequence, `[N, C, h, w]`.
    fn predict_eps(&self, z: &Array4<f32>, t: usize, cond: &Array4<f32>) -> Array4<f32>;
}

#[derive(Clone, Debug)]
struct Stage {
    conv1: Conv2d,
    time: Linear,
    conv2: Conv2d,
    temporal: TemporalConv,
}

#[derive(Clone, Debug)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub store: ParamStore,
    latent_scale: ParamId,
    skip: ParamId,
    conv_in: Conv2d,
    time_mlp: Linear,
    stages: Vec<Stage>,
    conv_out: Conv2d,
}

/// Sinusoidal embedding `[sin(t·ω_j), cos(t·ω_j)]` with geometric
/// frequencies `ω_j = 10000^(−j/half)`.
pub fn timestep_embedding(ts: &[usize], dim: usize) -> Array2<f32> {
    let half = dim / 2;
    Array2::from_shape_fn((ts.len(), dim), |(b, j)| {
        let k = j % half.max(1);
        let freq = (-(10000f64.ln()) * k as f64 / half.max(1) as f64).exp();
        let arg = ts[b] as f64 * freq;
        (if j < half { arg.sin() } else { arg.cos() }) as f32
    })
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, rng: &mut Prng) -> Self {
        let mut store = ParamStore::new();
        let st = &mut store;
        let latent_scale = st.add("norm.latent_scale", ArrayD::from_elem(IxDyn(&[1]), 1.0));
        let skip = st.zeros("norm.skip", &[config.timesteps + 1]);
        let w = config.width;
        let conv_in = Conv2d::new(st, "denoiser.conv_in", config.latent_channels + config.cond_channels, w, 3, 1, rng);
        let time_mlp = Linear::new(st, "denoiser.time_mlp", config.time_dim, 2 * w, rng);
        let stages = (0..config.stages)
            .map(|s| Stage {
                conv1: Conv2d::new(st, &format!("denoiser.stage{s}.conv1"), w, w, 3, 1, rng),
                time: Linear::new(st, &format!("denoiser.stage{s}.time"), 2 * w, w, rng),
                conv2: Conv2d::with_gain(st, &format!("denoiser.stage{s}.conv2"), w, w, 3, 1, 0.5, rng),
                temporal: TemporalConv::zeroed(st, &format!("denoiser.stage{s}.temporal"), w),
            })
            .collect();
        let conv_out = Conv2d::zeroed(st, "denoiser.conv_out", w, config.latent_channels, 3);
        store.set_trainable("norm.", false);
        Self {
            config,
            store,
            latent_scale,
            skip,
            conv_in,
            time_mlp,
            stages,
            conv_out,
        }
    }

    /// Multiplier taking decoder-space latents to the unit-variance space
    /// the network is trained in.
    pub fn latent_scale(&self) -> f32 {
        self.store.value(self.latent_scale)[[0]]
    }

    pub fn set_latent_scale(&mut self, scale: f32) {
        self.store.value_mut(self.latent_scale).fill(scale);
    }

    /// Fills the skip table with `sqrt(1 − ᾱ_t)` of `sched`; until then the
    /// skip path is zero.
    pub fn set_skip_schedule(&mut self, sched: &Schedule) -> Result<()> {
        if sched.len() != self.config.timesteps {
            return Err(ModelError::Core(CoreError::Config(format!(
                "schedule has {} steps, denoiser expects {}",
                sched.len(),
                self.config.timesteps
            ))));
        }
        let table = self.store.value_mut(self.skip);
        table[[0]] = 0.0;
        for t in 1..=sched.len() {
            table[[t]] = (1.0 - sched.alpha_bar(t)?).sqrt();
        }
        Ok(())
    }

    pub fn skip_coefficient(&self, t: usize) -> f32 {
        self.store.value(self.skip)[[t.min(self.config.timesteps)]]
    }

    pub fn normalize(&self, z: &Latents) -> Latents {
        let s = self.latent_scale();
        LatentSequence::new(z.data().mapv(|v| v * s)).expect("finite latents")
    }

    pub fn denormalize(&self, z: &Latents) -> Latents {
        let s = self.latent_scale();
        LatentSequence::new(z.data().mapv(|v| v / s)).expect("finite latents")
    }

    /// ε̂ for a batch of consecutive `frames`-long groups; `ts` holds one
    /// timestep per batch element.
    pub fn forward(&self, g: &mut Graph, z: Var, cond: Var, ts: &[usize], frames: usize) -> Var {
        let st = &self.store;
        let emb = g.constant(timestep_embedding(ts, self.config.time_dim).into_dyn());
        let temb = self.time_mlp.forward(g, st, emb);
        let temb = g.silu(temb);
        let x = g.concat(z, cond);
        let mut h = self.conv_in.forward(g, st, x);
        for stage in &self.stages {
            let r = g.silu(h);
            let r = stage.conv1.forward(g, st, r);
            let t = stage.time.forward(g, st, temb);
            let r = g.add_channel(r, t);
            let r = g.silu(r);
            let r = stage.conv2.forward(g, st, r);
            h = g.add(h, r);
            let tr = stage.temporal.forward(g, st, h, frames);
            h = g.add(h, tr);
        }
        let h = g.silu(h);
        let head = self.conv_out.forward(g, st, h);
        let mut coef = ArrayD::<f32>::zeros(g.shape(z).to_vec());
        let per_item = coef.len() / ts.len();
        for (chunk, &t) in coef.as_slice_mut().expect("contiguous").chunks_mut(per_item).zip(ts) {
            chunk.fill(self.skip_coefficient(t));
        }
        let skip = g.mul_const(z, Rc::new(coef));
        g.add(head, skip)
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }
}

impl EpsModel for Denoiser {
    fn latent_channels(&self) -> usize {
        self.config.latent_channels
    }

    fn predict_eps(&self, z: &Array4<f32>, t: usize, cond: &Array4<f32>) -> Array4<f32> {
        let n = z.dim().0;
        let mut g = Graph::new();
        let zv = g.constant(to_dyn(z.clone()));
        let cv = g.constant(to_dyn(cond.clone()));
        let out = self.forward(&mut g, zv, cv, &vec![t; n], n);
        to4(g.value(out))
    }
}
