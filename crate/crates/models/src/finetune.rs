//! Fine-tuning of the decoder's temporal and fusion layers with sequence
//! losses on short windows of random crops.
//!
//! The spatial encoder and decoder stay frozen; their checksums are compared
//! before and after training.

use std::rc::Rc;

use flowguide_core::metrics::{sobel_structure, total_video_loss};
use flowguide_core::{
    CoreError, Flow, Flows, ForwardTermIndex, Latents, LossWeights, MaskSet, OcclusionMask, Prng, Video,
};
use flowguide_nn::{AdamConfig, Graph, Var};
use ndarray::{s, Array2, Array4, ArrayD, Axis, IxDyn};
use serde::{Deserialize, Serialize};

use crate::autoencoder::{
    to_dyn, upsample_video, Autoencoder, CFW_GROUP, DECODER_GROUP, DOWNSAMPLE, ENCODER_GROUP, TEMPORAL_GROUP,
};
use crate::discriminator::Discriminator;
use crate::error::{ModelError, Result};

/// One training sequence: degraded input, sampled latents (decoder units),
/// clean frames and their exact motion.
#[derive(Clone, Debug)]
pub struct FinetuneExample {
    pub lr: Video,
    pub latents: Latents,
    pub hr: Video,
    pub flows: Flows,
    pub masks: MaskSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub iterations: usize,
    /// Frames per training window.
    pub window: usize,
    pub crop: usize,
    pub cfw_weight: f64,
    pub forward_index: ForwardTermIndex,
    pub adam: AdamConfig,
    pub disc_adam: AdamConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            window: 5,
            crop: 64,
            cfw_weight: 0.5,
            forward_index: ForwardTermIndex::AsPrinted,
            adam: AdamConfig {
                lr: 5e-4,
                clip_norm: 0.0,
                ..AdamConfig::default()
            },
            disc_adam: AdamConfig {
                lr: 2e-4,
                beta1: 0.5,
                clip_norm: 0.0,
                ..AdamConfig::default()
            },
        }
    }
}

/// Loss components of one step, each reduced by sum over the window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub recon: f64,
    pub diff: f64,
    pub swc: f64,
    pub gan: f64,
    pub total: f64,
    pub critic: f64,
}

/// Horizontal and vertical Sobel kernels applied per channel: output
/// channel `2c` holds `∂x` of input channel `c`, `2c + 1` holds `∂y`.
fn sobel_kernel(channels: usize) -> ArrayD<f32> {
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let mut w = ArrayD::zeros(IxDyn(&[2 * channels, channels, 3, 3]));
    for c in 0..channels {
        for i in 0..3 {
            for j in 0..3 {
                w[[2 * c, c, i, j]] = kx[i][j];
                w[[2 * c + 1, c, i, j]] = kx[j][i];
            }
        }
    }
    w
}

fn crop_video(v: &Video, frames: std::ops::Range<usize>, y: usize, x: usize, c: usize) -> Array4<f32> {
    v.data().slice(s![frames, .., y..y + c, x..x + c]).to_owned()
}

fn crop_flow(f: &Flow, y: usize, x: usize, c: usize) -> Result<Flow> {
    Ok(Flow::new(f.data().slice(s![.., y..y + c, x..x + c]).to_owned())?)
}

/// Mask restricted to the crop, also dropping pixels whose flow target
/// leaves the crop.
fn crop_mask(m: &OcclusionMask, f: &Flow, c: usize) -> Array2<f32> {
    Array2::from_shape_fn((c, c), |(yy, xx)| {
        let (dx, dy) = f.at(yy, xx);
        let tx = xx as f32 + dx;
        let ty = yy as f32 + dy;
        let inside = tx >= 0.0 && ty >= 0.0 && tx <= (c - 1) as f32 && ty <= (c - 1) as f32;
        if inside && m.get(yy, xx) {
            1.0
        } else {
            0.0
        }
    })
}

/// Weight `[pairs, C, c, c]` from per-pair masks and structure maps.
fn pair_weights(masks: &[Array2<f32>], structure: &[&Array2<f32>], channels: usize) -> Rc<ArrayD<f32>> {
    let (h, w) = masks[0].dim();
    let mut out = Array4::zeros((masks.len(), channels, h, w));
    for (k, (m, s)) in masks.iter().zip(structure).enumerate() {
        let prod = m * *s;
        for c in 0..channels {
            out.slice_mut(s![k, c, .., ..]).assign(&prod);
        }
    }
    Rc::new(out.into_dyn())
}

fn select(g: &mut Graph, v: Var, idx: impl Iterator<Item = usize>) -> Var {
    g.select_frames(v, idx.collect())
}

/// `Σ |W ∘ (Warp(pred[src], flow) − pred[dst])|` over the listed pairs.
fn consistency_term(
    g: &mut Graph,
    pred: Var,
    pairs: &[(usize, usize)],
    flows: Vec<Flow>,
    weight: Rc<ArrayD<f32>>,
) -> Var {
    let src = select(g, pred, pairs.iter().map(|p| p.0));
    let dst = select(g, pred, pairs.iter().map(|p| p.1));
    let warped = g.warp(src, Rc::new(flows));
    let r = g.sub(warped, dst);
    let r = g.mul_const(r, weight);
    let r = g.abs(r);
    g.sum(r)
}

struct Window {
    lr_up: Array4<f32>,
    latents: Array4<f32>,
    hr: Array4<f32>,
    fwd: Vec<Flow>,
    bwd: Vec<Flow>,
    fwd_mask: Vec<Array2<f32>>,
    bwd_mask: Vec<Array2<f32>>,
    structure: Vec<Array2<f32>>,
}

fn sample_window(ex: &FinetuneExample, lr_up: &Video, cfg: &FinetuneConfig, w: f64, rng: &mut Prng) -> Result<Window> {
    let n = ex.hr.frame_count();
    let len = cfg.window.min(n);
    let c = cfg.crop.min(ex.hr.height()).min(ex.hr.width());
    let f0 = rng.below(n - len + 1);
    let y = rng.below((ex.hr.height() - c) / DOWNSAMPLE + 1) * DOWNSAMPLE;
    let x = rng.below((ex.hr.width() - c) / DOWNSAMPLE + 1) * DOWNSAMPLE;
    let frames = f0..f0 + len;
    let (ly, lx, lc) = (y / DOWNSAMPLE, x / DOWNSAMPLE, c / DOWNSAMPLE);
    let latents = ex.latents.data().slice(s![frames.clone(), .., ly..ly + lc, lx..lx + lc]).to_owned();
    let hr = crop_video(&ex.hr, frames.clone(), y, x, c);
    let mut fwd = Vec::new();
    let mut bwd = Vec::new();
    let mut fwd_mask = Vec::new();
    let mut bwd_mask = Vec::new();
    for i in f0..f0 + len - 1 {
        let f = crop_flow(&ex.flows.forward[i], y, x, c)?;
        let b = crop_flow(&ex.flows.backward[i], y, x, c)?;
        fwd_mask.push(crop_mask(&crop_mask_source(&ex.masks.forward[i], y, x, c)?, &f, c));
        bwd_mask.push(crop_mask(&crop_mask_source(&ex.masks.backward[i], y, x, c)?, &b, c));
        fwd.push(f);
        bwd.push(b);
    }
    let structure = (0..len)
        .map(|k| Ok(sobel_structure(hr.index_axis(Axis(0), k), w as f32)?.weight))
        .collect::<Result<Vec<_>>>()?;
    Ok(Window {
        lr_up: crop_video(lr_up, frames, y, x, c),
        latents,
        hr,
        fwd,
        bwd,
        fwd_mask,
        bwd_mask,
        structure,
    })
}

fn crop_mask_source(m: &OcclusionMask, y: usize, x: usize, c: usize) -> Result<OcclusionMask> {
    Ok(OcclusionMask::new(m.data().slice(s![y..y + c, x..x + c]).to_owned())?)
}

fn check_example(ex: &FinetuneExample) -> Result<()> {
    let n = ex.hr.frame_count();
    let [ln, _, lh, lw] = ex.latents.shape();
    if ln != n
        || ex.lr.frame_count() != n
        || lh * DOWNSAMPLE != ex.hr.height()
        || lw * DOWNSAMPLE != ex.hr.width()
        || ex.flows.frame_count() != n
        || ex.masks.pairs() != n - 1
    {
        return Err(CoreError::InvalidArgument(format!(
            "fine-tuning example with {n} frames of {}x{} has inconsistent latents, flows or masks",
            ex.hr.height(),
            ex.hr.width()
        ))
        .into());
    }
    Ok(())
}

/// Trains the temporal and fusion layers (and the discriminator) on
/// `recon + α·diff + β·swc + γ·gan`, logging every component per step.
pub fn finetune_decoder(
    ae: &mut Autoencoder,
    disc: &mut Discriminator,
    data: &[FinetuneExample],
    weights: &LossWeights,
    cfg: &FinetuneConfig,
    rng: &mut Prng,
) -> Result<Vec<LossRecord>> {
    if data.is_empty() {
        return Err(CoreError::InvalidArgument("decoder fine-tuning needs data".into()).into());
    }
    data.iter().try_for_each(check_example)?;
    if cfg.window < 2 {
        return Err(CoreError::Config("fine-tuning window must hold at least 2 frames".into()).into());
    }
    let frozen = [ENCODER_GROUP, DECODER_GROUP];
    let before: Vec<u64> = frozen.iter().map(|p| ae.store.checksum(p)).collect();
    ae.store.set_trainable(ENCODER_GROUP, false);
    ae.store.set_trainable(DECODER_GROUP, false);
    ae.store.set_trainable(TEMPORAL_GROUP, true);
    ae.store.set_trainable(CFW_GROUP, true);
    let lr_up: Vec<Video> = data
        .iter()
        .map(|ex| upsample_video(&ex.lr, ex.hr.height(), ex.hr.width()))
        .collect::<Result<_>>()?;
    let sobel = sobel_kernel(3);
    let mut log = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let k = rng.below(data.len());
        let win = sample_window(&data[k], &lr_up[k], cfg, weights.w, rng)?;
        let n = win.hr.dim().0;

        let mut g = Graph::new();
        let (_, feats) = ae.encode_graph(&mut g, win.lr_up);
        let z = g.constant(to_dyn(win.latents));
        let pred = ae.decode_graph_unclamped(&mut g, z, Some(&feats), n, cfg.cfw_weight as f32);
        let hr = g.constant(to_dyn(win.hr.clone()));

        let r = g.sub(pred, hr);
        let r = g.abs(r);
        let l1 = g.sum(r);
        let kern = g.constant(sobel.clone());
        let sp = g.conv2d(pred, kern, None, 1, 1);
        let sh = g.conv2d(hr, kern, None, 1, 1);
        let r = g.sub(sp, sh);
        let r = g.abs(r);
        let sob = g.sum(r);
        let recon = g.add(l1, sob);

        let next = select(&mut g, pred, 1..n);
        let prev = select(&mut g, pred, 0..n - 1);
        let dp = g.sub(next, prev);
        let gt_diff = &win.hr.slice(s![1.., .., .., ..]) - &win.hr.slice(s![..n - 1, .., .., ..]);
        let dg = g.constant(to_dyn(gt_diff));
        let r = g.sub(dp, dg);
        let r = g.abs(r);
        let diff = g.sum(r);

        let bwd_pairs: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let bwd_struct: Vec<&Array2<f32>> = (1..n).map(|i| &win.structure[i]).collect();
        let wb = pair_weights(&win.bwd_mask, &bwd_struct, 3);
        let swc_b = consistency_term(&mut g, pred, &bwd_pairs, win.bwd.clone(), wb);
        let (fwd_pairs, flow_idx): (Vec<(usize, usize)>, Vec<usize>) = match cfg.forward_index {
            ForwardTermIndex::AsPrinted => (1..n - 1).map(|i| ((i, i - 1), i)).unzip(),
            ForwardTermIndex::Aligned => (1..n).map(|i| ((i, i - 1), i - 1)).unzip(),
        };
        let swc = if fwd_pairs.is_empty() {
            swc_b
        } else {
            let masks: Vec<Array2<f32>> = flow_idx.iter().map(|&j| win.fwd_mask[j].clone()).collect();
            let st: Vec<&Array2<f32>> = fwd_pairs.iter().map(|p| &win.structure[p.1]).collect();
            let wf = pair_weights(&masks, &st, 3);
            let flows = flow_idx.iter().map(|&j| win.fwd[j].clone()).collect();
            let swc_f = consistency_term(&mut g, pred, &fwd_pairs, flows, wf);
            g.add(swc_b, swc_f)
        };

        disc.store.set_trainable("", false);
        let gan = disc.generator_loss(&mut g, pred);
        disc.store.set_trainable("", true);

        let a = g.scale(diff, weights.alpha as f32);
        let b = g.scale(swc, weights.beta as f32);
        let c = g.scale(gan, weights.gamma as f32);
        let total = g.add(recon, a);
        let total = g.add(total, b);
        let total = g.add(total, c);

        let values = [recon, diff, swc, gan].map(|v| g.scalar(v) as f64);
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Diverged {
                iteration: it,
                loss: g.scalar(total) as f64,
                initial: log.first().map_or(f64::NAN, |r: &LossRecord| r.total),
            });
        }
        let grads = g.backward(total);
        g.accumulate_param_grads(&grads, &mut ae.store);
        ae.store.adam_step(&cfg.adam);

        let mut critic = 0.0;
        if weights.gamma > 0.0 {
            let fake = g.value(pred).clone();
            let mut dg = Graph::new();
            let real = dg.constant(to_dyn(win.hr));
            let fake = dg.constant(fake);
            let loss = disc.critic_loss(&mut dg, real, fake);
            critic = dg.scalar(loss) as f64;
            let grads = dg.backward(loss);
            dg.accumulate_param_grads(&grads, &mut disc.store);
            disc.store.adam_step(&cfg.disc_adam);
        }

        let [recon, diff, swc, gan] = values;
        log.push(LossRecord {
            iteration: it,
            recon,
            diff,
            swc,
            gan,
            total: total_video_loss(recon, diff, swc, gan, weights),
            critic,
        });
    }
    ae.store.set_trainable(ENCODER_GROUP, true);
    ae.store.set_trainable(DECODER_GROUP, true);
    for (p, b) in frozen.iter().zip(before) {
        if ae.store.checksum(p) != b {
            return Err(ModelError::FrozenChanged(p.trim_end_matches('.').to_string()));
        }
    }
    Ok(log)
}

/// Decoded frames of a fine-tuning example's latents, for evaluation.
pub fn decode_example(ae: &Autoencoder, ex: &FinetuneExample, cfw_weight: f64) -> Result<Video> {
    let feats = ae.encode_degraded(&ex.lr, ex.hr.height(), ex.hr.width())?;
    ae.decode_sequence(&ex.latents, &feats, cfw_weight)
}
