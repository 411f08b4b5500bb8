//! Named parameters with gradients, initialisation, Adam and checkpoints.

use std::hash::Hasher;
use std::sync::atomic::{AtomicU64, Ordering};

use flowguide_core::io::TensorArchive;
use flowguide_core::{CoreError, Prng};
use fnv::FnvHasher;
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
struct Param {
    name: String,
    value: ArrayD<f32>,
    grad: ArrayD<f32>,
    m: ArrayD<f32>,
    v: ArrayD<f32>,
    trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

static NEXT_KEY: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Debug)]
pub struct ParamStore {
    key: u64,
    params: Vec<Param>,
    steps: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            key: NEXT_KEY.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
            steps: 0,
        }
    }

    /// Identifies the store so graphs mixing several stores route
    /// gradients to the right one.
    pub(crate) fn key(&self) -> u64 {
        self.key
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f32>) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        let zeros = ArrayD::zeros(value.raw_dim());
        self.params.push(Param {
            name,
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, ArrayD::zeros(IxDyn(shape)))
    }

    /// Uniform in `±sqrt(6 / fan_in) · gain`, the He-uniform scheme.
    pub fn he_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, gain: f64, rng: &mut Prng) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt() * gain;
        let value = ArrayD::from_shape_fn(IxDyn(shape), |_| rng.uniform_range(-bound, bound) as f32);
        self.add(name, value)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<f32> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f32> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &ArrayD<f32> {
        &self.params[id.0].grad
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Freezes or unfreezes every parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.trainable = trainable;
        }
    }

    pub fn add_grad(&mut self, id: ParamId, g: &ArrayD<f32>) {
        let p = &mut self.params[id.0];
        if p.trainable {
            p.grad += g;
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.grad.iter().map(|&g| (g as f64).powi(2)).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// One Adam update of all trainable parameters; clears gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.steps += 1;
        let t = self.steps as i32;
        let norm = self.grad_norm();
        let clip = if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
            (cfg.clip_norm / norm) as f32
        } else {
            1.0
        };
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let step = (cfg.lr * c2.sqrt() / c1) as f32;
        let eps = cfg.eps as f32;
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            ndarray::Zip::from(&mut p.value)
                .and(&mut p.m)
                .and(&mut p.v)
                .and(&p.grad)
                .for_each(|w, m, v, &g| {
                    let g = g * clip;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= step * *m / (v.sqrt() + eps);
                });
        }
        self.zero_grad();
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    /// FNV-1a over names and little-endian values of parameters whose name
    /// starts with `prefix` (all parameters for an empty prefix).
    pub fn checksum(&self, prefix: &str) -> u64 {
        let mut h = FnvHasher::default();
        for p in self.params.iter().filter(|p| p.name.starts_with(prefix)) {
            h.write(p.name.as_bytes());
            for v in p.value.iter() {
                h.write(&v.to_le_bytes());
            }
        }
        h.finish()
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut a = TensorArchive::new();
        for p in &self.params {
            a.insert(p.name.clone(), p.value.as_standard_layout().to_owned());
        }
        a
    }

    /// Copies matching tensors from an archive; every parameter must be
    /// present with its exact shape.
    pub fn load_archive(&mut self, archive: &TensorArchive) -> Result<(), CoreError> {
        for p in &mut self.params {
            let t = archive.expect(&p.name, p.value.shape())?;
            p.value.assign(t);
        }
        Ok(())
    }

    /// Like [`Self::load_archive`] but only for names with `prefix`.
    pub fn load_prefix(&mut self, archive: &TensorArchive, prefix: &str) -> Result<(), CoreError> {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            let t = archive.expect(&p.name, p.value.shape())?;
            p.value.assign(t);
        }
        Ok(())
    }
}
