#![allow(dead_code)]

pub mod oracle;

use flowguide_core::motion::{FlowField, FlowSet, MaskSet, OcclusionMask};
use flowguide_core::Prng;
use ndarray::{Array2, Array3, Array4};

pub struct Case {
    pub data: Array4<f64>,
    pub other: Array4<f64>,
    pub fwd: Vec<Array3<f64>>,
    pub bwd: Vec<Array3<f64>>,
    pub mf: Vec<Array2<u8>>,
    pub mb: Vec<Array2<u8>>,
}

impl Case {
    /// Random sequences in `[0, 1]`, flows within `max_flow` (capped at the
    /// grid size), masks with
    /// roughly 80 % valid pixels.
    pub fn random(seed: u64, n: usize, c: usize, h: usize, w: usize, max_flow: f64) -> Self {
        let max_flow = max_flow.min(h.max(w) as f64);
        let mut rng = Prng::new(seed);
        let mut video = || Array4::from_shape_fn((n, c, h, w), |_| rng.uniform());
        let (data, other) = (video(), video());
        let flows = |rng: &mut Prng| -> Vec<Array3<f64>> {
            (0..n - 1)
                .map(|_| Array3::from_shape_fn((2, h, w), |_| rng.uniform_range(-max_flow, max_flow)))
                .collect()
        };
        let (fwd, bwd) = (flows(&mut rng), flows(&mut rng));
        let masks = |rng: &mut Prng| -> Vec<Array2<u8>> {
            (0..n - 1)
                .map(|_| Array2::from_shape_fn((h, w), |_| u8::from(rng.uniform() < 0.8)))
                .collect()
        };
        let (mf, mb) = (masks(&mut rng), masks(&mut rng));
        Self { data, other, fwd, bwd, mf, mb }
    }

    pub fn flow_set(&self) -> FlowSet<f64> {
        let wrap = |v: &[Array3<f64>]| v.iter().map(|f| FlowField::new(f.clone()).unwrap()).collect();
        FlowSet::new(wrap(&self.fwd), wrap(&self.bwd)).unwrap()
    }

    pub fn mask_set(&self) -> MaskSet {
        let wrap = |v: &[Array2<u8>]| v.iter().map(|m| OcclusionMask::new(m.clone()).unwrap()).collect();
        MaskSet {
            forward: wrap(&self.mf),
            backward: wrap(&self.mb),
        }
    }

    pub fn backward_flows(&self) -> Vec<FlowField<f64>> {
        self.flow_set().backward
    }
}
