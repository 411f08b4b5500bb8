//! Finite-difference checks of the analytic warping-energy gradient and of
//! the warp vector-Jacobian product on random small instances.
//!
//! Errors are measured entrywise as `|a − n| / max(1, |a|, |n|)`: relative
//! for entries of magnitude above one, absolute below.

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::diffusion::{warping_energy, warping_energy_grad};
use crate::error::Result;
use crate::motion::{warp_bilinear, warp_vjp, FlowField, FlowSet, MaskSet, OcclusionMask};
use crate::rng::Prng;
use crate::sequence::LatentSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub max_flow: f64,
    /// Probability that a mask pixel is valid.
    pub mask_density: f64,
    pub charbonnier_eps: f64,
    pub step: f64,
    pub energy_tolerance: f64,
    pub vjp_tolerance: f64,
    /// Adds a perturbation to the analytic gradient; the check must fail.
    pub corrupt_gradient: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 50,
            frames: 3,
            channels: 1,
            height: 8,
            width: 8,
            max_flow: 2.5,
            mask_density: 0.8,
            charbonnier_eps: 1e-3,
            step: 1e-6,
            energy_tolerance: 1e-3,
            vjp_tolerance: 1e-5,
            corrupt_gradient: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub instances: usize,
    pub energy_max_error: f64,
    pub vjp_max_error: f64,
    pub energy_passed: bool,
    pub vjp_passed: bool,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.energy_passed && self.vjp_passed
    }
}

/// A random latent sequence with flows and masks on its grid.
pub struct Instance {
    pub z: LatentSequence<f64>,
    pub flows: FlowSet<f64>,
    pub masks: MaskSet,
}

fn random_flow(h: usize, w: usize, max: f64, rng: &mut Prng) -> FlowField<f64> {
    FlowField::new(Array3::from_shape_fn((2, h, w), |_| rng.uniform_range(-max, max))).expect("bounded flow")
}

fn random_mask(h: usize, w: usize, density: f64, rng: &mut Prng) -> OcclusionMask {
    OcclusionMask::new(Array2::from_shape_fn((h, w), |_| u8::from(rng.uniform() < density))).expect("binary mask")
}

pub fn random_instance(cfg: &GradcheckConfig, rng: &mut Prng) -> Result<Instance> {
    let (n, c, h, w) = (cfg.frames, cfg.channels, cfg.height, cfg.width);
    let z = LatentSequence::new(Array4::from_shape_fn((n, c, h, w), |_| rng.standard_normal()))?;
    let forward = (0..n - 1).map(|_| random_flow(h, w, cfg.max_flow, rng)).collect();
    let backward = (0..n - 1).map(|_| random_flow(h, w, cfg.max_flow, rng)).collect();
    let masks = MaskSet {
        forward: (0..n - 1).map(|_| random_mask(h, w, cfg.mask_density, rng)).collect(),
        backward: (0..n - 1).map(|_| random_mask(h, w, cfg.mask_density, rng)).collect(),
    };
    Ok(Instance {
        z,
        flows: FlowSet::new(forward, backward)?,
        masks,
    })
}

fn entry_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

/// Largest entrywise error between the analytic energy gradient and central
/// differences.
pub fn energy_grad_error(inst: &Instance, eps: f64, h: f64, corrupt: bool) -> Result<f64> {
    let mut grad = warping_energy_grad(&inst.z, &inst.flows, &inst.masks, eps)?;
    if corrupt {
        grad.iter_mut().step_by(7).for_each(|g| *g += 0.1);
    }
    let mut z = inst.z.clone();
    let mut worst = 0.0f64;
    for idx in 0..grad.len() {
        let orig = z.data().as_slice().expect("standard layout")[idx];
        z.data_mut().as_slice_mut().expect("standard layout")[idx] = orig + h;
        let plus = warping_energy(&z, &inst.flows, &inst.masks, eps)?;
        z.data_mut().as_slice_mut().expect("standard layout")[idx] = orig - h;
        let minus = warping_energy(&z, &inst.flows, &inst.masks, eps)?;
        z.data_mut().as_slice_mut().expect("standard layout")[idx] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(entry_error(grad.as_slice().expect("standard layout")[idx], numeric));
    }
    Ok(worst)
}

/// Largest entrywise error between `warp_vjp` and central differences of
/// `⟨warp(x, flow), u⟩` with respect to `x`.
pub fn vjp_error(x: &Array3<f64>, flow: &FlowField<f64>, u: &Array3<f64>, h: f64) -> Result<f64> {
    let analytic = warp_vjp(flow, u.view())?;
    let inner = |x: &Array3<f64>| -> Result<f64> { Ok((warp_bilinear(x.view(), flow)? * u).sum()) };
    let mut x = x.clone();
    let mut worst = 0.0f64;
    for idx in 0..x.len() {
        let orig = x.as_slice().expect("standard layout")[idx];
        x.as_slice_mut().expect("standard layout")[idx] = orig + h;
        let plus = inner(&x)?;
        x.as_slice_mut().expect("standard layout")[idx] = orig - h;
        let minus = inner(&x)?;
        x.as_slice_mut().expect("standard layout")[idx] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(entry_error(analytic.as_slice().expect("standard layout")[idx], numeric));
    }
    Ok(worst)
}

pub fn run_gradcheck(cfg: &GradcheckConfig, seed: u64) -> Result<GradcheckReport> {
    let mut energy_max = 0.0f64;
    let mut vjp_max = 0.0f64;
    for k in 0..cfg.instances {
        let mut rng = Prng::new(seed).split(k as u64);
        let inst = random_instance(cfg, &mut rng)?;
        energy_max = energy_max.max(energy_grad_error(
            &inst,
            cfg.charbonnier_eps,
            cfg.step,
            cfg.corrupt_gradient,
        )?);
        let shape = (cfg.channels, cfg.height, cfg.width);
        let x = Array3::from_shape_fn(shape, |_| rng.standard_normal());
        let u = Array3::from_shape_fn(shape, |_| rng.standard_normal());
        vjp_max = vjp_max.max(vjp_error(&x, &inst.flows.backward[0], &u, cfg.step)?);
    }
    Ok(GradcheckReport {
        instances: cfg.instances,
        energy_max_error: energy_max,
        vjp_max_error: vjp_max,
        energy_passed: energy_max <= cfg.energy_tolerance,
        vjp_passed: vjp_max <= cfg.vjp_tolerance,
    })
}
