//! Parameterised layers that register their weights in a [`ParamStore`].

use flowguide_core::Prng;

use crate::{Graph, ParamId, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// He-initialised `k × k` convolution with "same" padding for odd `k`.
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, stride: usize, rng: &mut Prng) -> Self {
        Self::with_gain(store, name, cin, cout, k, stride, 1.0, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_gain(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        gain: f64,
        rng: &mut Prng,
    ) -> Self {
        let weight = store.he_uniform(format!("{name}.weight"), &[cout, cin, k, k], cin * k * k, gain, rng);
        let bias = store.zeros(format!("{name}.bias"), &[cout]);
        Self {
            weight,
            bias,
            stride,
            pad: k / 2,
        }
    }

    /// All-zero weights: the layer initially outputs zero.
    pub fn zeroed(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        let weight = store.zeros(format!("{name}.weight"), &[cout, cin, k, k]);
        let bias = store.zeros(format!("{name}.bias"), &[cout]);
        Self {
            weight,
            bias,
            stride: 1,
            pad: k / 2,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

/// 3-tap convolution across frames, zero-initialised.
#[derive(Clone, Debug)]
pub struct TemporalConv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl TemporalConv {
    pub fn zeroed(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            weight: store.zeros(format!("{name}.weight"), &[channels, channels, 3]),
            bias: store.zeros(format!("{name}.bias"), &[channels]),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, frames: usize) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.temporal_conv(x, w, b, frames)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut Prng) -> Self {
        Self {
            weight: store.he_uniform(format!("{name}.weight"), &[output, input], input, 1.0, rng),
            bias: store.zeros(format!("{name}.bias"), &[output]),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, b)
    }
}
