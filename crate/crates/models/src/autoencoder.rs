//! Convolutional autoencoder with an 8× latent grid and a temporal-aware
//! decoder.
//!
//! Each decoder stage runs a spatial block, a residual 3-tap convolution
//! across frames and a feature fusion `F ← F + w·C(concat(F, e))` with the
//! encoder feature `e` of matching resolution. Temporal and fusion weights
//! start at zero, so a fresh decoder treats frames independently.

use flowguide_core::image_ops::resize_bicubic;
use flowguide_core::metrics::sequence_psnr;
use flowguide_core::{CoreError, LatentSequence, Latents, Prng, Video, VideoSequence};
use flowguide_nn::layers::{Conv2d, TemporalConv};
use flowguide_nn::{AdamConfig, Graph, ParamStore, Var};
use ndarray::{s, Array3, Array4, ArrayD, Axis, Ix4};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// Spatial reduction between images and latents, per axis.
pub const DOWNSAMPLE: usize = 8;
/// Channels of the retained encoder features, finest first.
pub const ENCODER_CHANNELS: [usize; 4] = [32, 32, 64, 64];
/// Channels of the decoder stages, coarsest first.
pub const DECODER_CHANNELS: [usize; 4] = [64, 64, 32, 16];

/// Parameter-name prefixes of the weight groups.
pub const ENCODER_GROUP: &str = "encoder.";
pub const DECODER_GROUP: &str = "decoder.";
pub const TEMPORAL_GROUP: &str = "temporal.";
pub const CFW_GROUP: &str = "cfw.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionOrder {
    /// spatial → temporal → fusion
    #[default]
    TemporalFirst,
    /// spatial → fusion → temporal
    FusionFirst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    pub latent_channels: usize,
    pub fusion_order: FusionOrder,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            latent_channels: 8,
            fusion_order: FusionOrder::TemporalFirst,
        }
    }
}

/// Encoder activations kept for fusion, one `[N, C, H, W]` map per stage,
/// finest first; each stage halves the spatial size.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderFeatures {
    pub stages: Vec<Array4<f32>>,
}

impl EncoderFeatures {
    pub fn frame_count(&self) -> usize {
        self.stages.first().map_or(0, |a| a.dim().0)
    }

    /// Features of a frame subset, in the given order.
    pub fn select(&self, frames: &[usize]) -> Self {
        Self {
            stages: self.stages.iter().map(|a| a.select(Axis(0), frames)).collect(),
        }
    }
}

/// `h + conv2(silu(conv1(silu(h))))`.
#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResBlock {
    fn new(store: &mut ParamStore, name: &str, c: usize, rng: &mut Prng) -> Self {
        Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), c, c, 3, 1, rng),
            conv2: Conv2d::with_gain(store, &format!("{name}.conv2"), c, c, 3, 1, 0.2, rng),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Var {
        let r = g.silu(h);
        let r = self.conv1.forward(g, store, r);
        let r = g.silu(r);
        let r = self.conv2.forward(g, store, r);
        g.add(h, r)
    }
}

#[derive(Clone, Debug)]
struct EncoderStage {
    down: Conv2d,
    block: ResBlock,
}

#[derive(Clone, Debug)]
pub(crate) struct DecoderStage {
    conv_in: Option<Conv2d>,
    block: ResBlock,
    temporal: TemporalConv,
    pub(crate) fusion: Conv2d,
}

#[derive(Clone, Debug)]
pub struct Autoencoder {
    pub config: AutoencoderConfig,
    pub store: ParamStore,
    conv_in: Conv2d,
    encoder: Vec<EncoderStage>,
    to_latent: Conv2d,
    from_latent: Conv2d,
    pub(crate) decoder: Vec<DecoderStage>,
    conv_out: Conv2d,
}

pub(crate) fn to_dyn(a: Array4<f32>) -> ArrayD<f32> {
    a.into_dyn()
}

pub(crate) fn to4(a: &ArrayD<f32>) -> Array4<f32> {
    a.view().into_dimensionality::<Ix4>().expect("rank-4 tensor").to_owned()
}

fn check_divisible(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(DOWNSAMPLE) || !w.is_multiple_of(DOWNSAMPLE) {
        return Err(CoreError::InvalidArgument(format!(
            "frame size {h}x{w} is not divisible by {DOWNSAMPLE}"
        ))
        .into());
    }
    Ok(())
}

impl Autoencoder {
    pub fn new(config: AutoencoderConfig, rng: &mut Prng) -> Self {
        let mut store = ParamStore::new();
        let st = &mut store;
        let conv_in = Conv2d::new(st, "encoder.conv_in", 3, ENCODER_CHANNELS[0], 3, 1, rng);
        let encoder = (1..4)
            .map(|s| EncoderStage {
                down: Conv2d::new(st, &format!("encoder.down{s}"), ENCODER_CHANNELS[s - 1], ENCODER_CHANNELS[s], 3, 2, rng),
                block: ResBlock::new(st, &format!("encoder.block{s}"), ENCODER_CHANNELS[s], rng),
            })
            .collect();
        let to_latent = Conv2d::new(st, "encoder.to_latent", ENCODER_CHANNELS[3], config.latent_channels, 3, 1, rng);
        let from_latent = Conv2d::new(st, "decoder.from_latent", config.latent_channels, DECODER_CHANNELS[0], 3, 1, rng);
        let decoder = (0..4)
            .map(|k| {
                let c = DECODER_CHANNELS[k];
                let e = ENCODER_CHANNELS[3 - k];
                DecoderStage {
                    conv_in: (k > 0)
                        .then(|| Conv2d::new(st, &format!("decoder.stage{k}.conv_in"), DECODER_CHANNELS[k - 1], c, 3, 1, rng)),
                    block: ResBlock::new(st, &format!("decoder.stage{k}.block"), c, rng),
                    temporal: TemporalConv::zeroed(st, &format!("temporal.stage{k}"), c),
                    fusion: Conv2d::zeroed(st, &format!("cfw.stage{k}"), c + e, c, 3),
                }
            })
            .collect();
        let conv_out = Conv2d::with_gain(st, "decoder.conv_out", DECODER_CHANNELS[3], 3, 3, 1, 0.1, rng);
        store.value_mut(conv_out.bias).fill(0.5);
        Self {
            config,
            store,
            conv_in,
            encoder,
            to_latent,
            from_latent,
            decoder,
            conv_out,
        }
    }

    /// Latents and per-stage features of a `[B, 3, H, W]` batch of frames in
    /// `[0, 1]`.
    pub fn encode_graph(&self, g: &mut Graph, frames: Array4<f32>) -> (Var, Vec<Var>) {
        let st = &self.store;
        let x = g.constant(to_dyn(frames.mapv(|v| 2.0 * v - 1.0)));
        let mut h = self.conv_in.forward(g, st, x);
        let mut feats = vec![h];
        for stage in &self.encoder {
            h = stage.down.forward(g, st, h);
            h = stage.block.forward(g, st, h);
            feats.push(h);
        }
        let h = g.silu(h);
        let z = self.to_latent.forward(g, st, h);
        (z, feats)
    }

    /// Stage `k` fusion: `f + weight·C(concat(f, e))`.
    pub(crate) fn fuse(&self, g: &mut Graph, k: usize, f: Var, e: Var, weight: f32) -> Var {
        let cat = g.concat(f, e);
        let delta = self.decoder[k].fusion.forward(g, &self.store, cat);
        let delta = g.scale(delta, weight);
        g.add(f, delta)
    }

    /// Decodes a `[B, Cz, h, w]` batch holding consecutive groups of
    /// `frames` frames, clamped to `[0, 1]`.
    pub fn decode_graph(&self, g: &mut Graph, z: Var, feats: Option<&[Var]>, frames: usize, cfw_weight: f32) -> Var {
        let out = self.decode_graph_unclamped(g, z, feats, frames, cfw_weight);
        g.clamp01(out)
    }

    /// The decoder before its output clamp; training losses use this so
    /// saturated pixels still receive gradient. Without features the
    /// temporal and fusion layers are skipped, which is exact while their
    /// weights are zero.
    pub fn decode_graph_unclamped(
        &self,
        g: &mut Graph,
        z: Var,
        feats: Option<&[Var]>,
        frames: usize,
        cfw_weight: f32,
    ) -> Var {
        let st = &self.store;
        let mut h = self.from_latent.forward(g, st, z);
        for (k, stage) in self.decoder.iter().enumerate() {
            if let Some(conv) = &stage.conv_in {
                h = g.upsample2(h);
                h = conv.forward(g, st, h);
            }
            h = stage.block.forward(g, st, h);
            if let Some(feats) = feats {
                let e = feats[3 - k];
                match self.config.fusion_order {
                    FusionOrder::TemporalFirst => {
                        let t = stage.temporal.forward(g, st, h, frames);
                        h = g.add(h, t);
                        h = self.fuse(g, k, h, e, cfw_weight);
                    }
                    FusionOrder::FusionFirst => {
                        h = self.fuse(g, k, h, e, cfw_weight);
                        let t = stage.temporal.forward(g, st, h, frames);
                        h = g.add(h, t);
                    }
                }
            }
        }
        let h = g.silu(h);
        self.conv_out.forward(g, st, h)
    }

    pub fn encode(&self, frames: &Video) -> Result<(Latents, EncoderFeatures)> {
        check_divisible(frames.height(), frames.width())?;
        let mut g = Graph::new();
        let (z, feats) = self.encode_graph(&mut g, frames.data().clone());
        let latents = LatentSequence::new(to4(g.value(z)))?;
        let stages = feats.iter().map(|&f| to4(g.value(f))).collect();
        Ok((latents, EncoderFeatures { stages }))
    }

    /// Features of a degraded sequence: bicubic-resized to `out_h × out_w`,
    /// then encoded.
    pub fn encode_degraded(&self, lr: &Video, out_h: usize, out_w: usize) -> Result<EncoderFeatures> {
        let up = upsample_video(lr, out_h, out_w)?;
        Ok(self.encode(&up)?.1)
    }

    pub fn decode_sequence(&self, z: &Latents, feats: &EncoderFeatures, cfw_weight: f64) -> Result<Video> {
        let n = z.frame_count();
        if feats.frame_count() != n || feats.stages.len() != 4 {
            return Err(CoreError::InvalidArgument(format!(
                "{n} latent frames but features for {} frames",
                feats.frame_count()
            ))
            .into());
        }
        let [_, _, h, w] = z.shape();
        for (s, f) in feats.stages.iter().enumerate() {
            let expect = ((h * DOWNSAMPLE) >> s, (w * DOWNSAMPLE) >> s);
            if (f.dim().2, f.dim().3) != expect || f.dim().1 != ENCODER_CHANNELS[s] {
                return Err(CoreError::Shape {
                    expected: vec![n, ENCODER_CHANNELS[s], expect.0, expect.1],
                    actual: f.shape().to_vec(),
                }
                .into());
            }
        }
        let mut g = Graph::new();
        let zv = g.constant(to_dyn(z.data().clone()));
        let fv: Vec<Var> = feats.stages.iter().map(|f| g.constant(to_dyn(f.clone()))).collect();
        let out = self.decode_graph(&mut g, zv, Some(&fv), n, cfw_weight as f32);
        Ok(VideoSequence::new(to4(g.value(out)))?)
    }

    /// Frame-wise decoding through the spatial blocks only.
    pub fn decode_spatial(&self, z: &Latents) -> Result<Video> {
        let mut g = Graph::new();
        let zv = g.constant(to_dyn(z.data().clone()));
        let out = self.decode_graph(&mut g, zv, None, z.frame_count(), 0.0);
        Ok(VideoSequence::new(to4(g.value(out)))?)
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }
}

/// Bicubic resize of every frame.
pub fn upsample_video(v: &Video, out_h: usize, out_w: usize) -> Result<Video> {
    let frames: Vec<Array3<f32>> = (0..v.frame_count())
        .map(|i| resize_bicubic(v.frame(i), out_h, out_w).mapv(|x| x.clamp(0.0, 1.0)))
        .collect();
    Ok(VideoSequence::from_frames(&frames)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub crop: usize,
    /// Steps of linear learning-rate warmup before cosine decay.
    pub warmup: usize,
    pub adam: AdamConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1500,
            batch: 8,
            crop: 32,
            warmup: 100,
            adam: AdamConfig {
                lr: 2e-3,
                clip_norm: 0.0,
                ..AdamConfig::default()
            },
        }
    }
}

/// Linear warmup to `base`, then cosine decay to a tenth of it.
pub fn scheduled_lr(base: f64, iteration: usize, total: usize, warmup: usize) -> f64 {
    if iteration < warmup {
        return base * (iteration + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    let p = ((iteration - warmup) as f64 / span).min(1.0);
    base * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * p).cos()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    /// `(iteration, mean per-element L1)` per step.
    pub losses: Vec<(usize, f64)>,
    pub heldout_psnr: f64,
}

/// Random `crop × crop` windows of random frames, stacked `[B, C, crop, crop]`.
/// Offsets are multiples of the latent stride.
fn random_crops(data: &[Video], batch: usize, crop: usize, rng: &mut Prng) -> Array4<f32> {
    let c = data[0].channels();
    let mut out = Array4::zeros((batch, c, crop, crop));
    for b in 0..batch {
        let v = &data[rng.below(data.len())];
        let f = rng.below(v.frame_count());
        let y = rng.below((v.height() - crop) / DOWNSAMPLE + 1) * DOWNSAMPLE;
        let x = rng.below((v.width() - crop) / DOWNSAMPLE + 1) * DOWNSAMPLE;
        out.slice_mut(s![b, .., .., ..])
            .assign(&v.data().slice(s![f, .., y..y + crop, x..x + crop]));
    }
    out
}

/// Trains the spatial encoder and decoder frame-wise with an L1 objective;
/// temporal and fusion weights stay at zero.
pub fn pretrain_autoencoder(
    ae: &mut Autoencoder,
    train: &[Video],
    heldout: &[Video],
    cfg: &PretrainConfig,
    rng: &mut Prng,
) -> Result<PretrainReport> {
    if train.is_empty() {
        return Err(CoreError::InvalidArgument("autoencoder pretraining needs data".into()).into());
    }
    let crop = cfg.crop.min(train[0].height()).min(train[0].width());
    check_divisible(crop, crop)?;
    ae.store.set_trainable(ENCODER_GROUP, true);
    ae.store.set_trainable(DECODER_GROUP, true);
    ae.store.set_trainable(TEMPORAL_GROUP, false);
    ae.store.set_trainable(CFW_GROUP, false);
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut initial = None;
    for it in 0..cfg.iterations {
        let x = random_crops(train, cfg.batch.max(1), crop, rng);
        let mut g = Graph::new();
        let (z, _) = ae.encode_graph(&mut g, x.clone());
        let xv = g.constant(to_dyn(x));
        let y = ae.decode_graph_unclamped(&mut g, z, None, 1, 0.0);
        let r = g.sub(y, xv);
        let r = g.abs(r);
        let loss = g.mean(r);
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
        g.accumulate_param_grads(&grads, &mut ae.store);
        let adam = AdamConfig {
            lr: scheduled_lr(cfg.adam.lr, it, cfg.iterations, cfg.warmup),
            ..cfg.adam.clone()
        };
        ae.store.adam_step(&adam);
        losses.push((it, value));
    }
    ae.store.set_trainable(TEMPORAL_GROUP, true);
    ae.store.set_trainable(CFW_GROUP, true);
    let heldout_psnr = reconstruction_psnr(ae, heldout)?;
    Ok(PretrainReport { losses, heldout_psnr })
}

/// Mean per-sequence PSNR of spatial encode/decode round trips.
pub fn reconstruction_psnr(ae: &Autoencoder, data: &[Video]) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for v in data {
        let (z, _) = ae.encode(v)?;
        let rec = ae.decode_spatial(&z)?;
        total += sequence_psnr(&rec, v)?;
    }
    Ok(total / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flowguide_core::gaussian_noise;

    fn small_video(n: usize, h: usize, w: usize, rng: &mut Prng) -> Video {
        let data = Array4::from_shape_fn((n, 3, h, w), |_| rng.uniform() as f32);
        VideoSequence::new(data).unwrap()
    }

    fn randomize(ae: &mut Autoencoder, prefix: &str, rng: &mut Prng) {
        let ids: Vec<_> = ae.store.ids().filter(|&id| ae.store.name(id).starts_with(prefix)).collect();
        for id in ids {
            ae.store.value_mut(id).mapv_inplace(|_| (rng.uniform() as f32 - 0.5) * 0.1);
        }
    }

    #[test]
    fn learning_rate_warms_up_then_decays() {
        assert!((scheduled_lr(1.0, 0, 100, 10) - 0.1).abs() < 1e-12);
        assert!((scheduled_lr(1.0, 9, 100, 10) - 1.0).abs() < 1e-12);
        assert!((scheduled_lr(1.0, 10, 100, 10) - 1.0).abs() < 1e-12);
        assert!((scheduled_lr(1.0, 100, 100, 10) - 0.1).abs() < 1e-12);
        assert!(scheduled_lr(1.0, 50, 100, 10) < 1.0);
    }

    #[test]
    fn latent_grid_is_eight_times_smaller() {
        let mut rng = Prng::new(1);
        let ae = Autoencoder::new(AutoencoderConfig::default(), &mut rng);
        let v = small_video(2, 64, 64, &mut rng);
        let (z, f) = ae.encode(&v).unwrap();
        assert_eq!(z.shape(), [2, 8, 8, 8]);
        let sizes: Vec<usize> = f.stages.iter().map(|a| a.dim().2).collect();
        assert_eq!(sizes, vec![64, 32, 16, 8]);
        let (z2, f2) = ae.encode(&v).unwrap();
        assert_eq!(z, z2);
        assert_eq!(f, f2);
        assert!(ae.encode(&small_video(1, 60, 64, &mut rng)).is_err());
    }

    #[test]
    fn large_frame_maps_to_sixty_four_grid() {
        let mut rng = Prng::new(2);
        let ae = Autoencoder::new(AutoencoderConfig::default(), &mut rng);
        let v = small_video(1, 512, 512, &mut rng);
        let (z, _) = ae.encode(&v).unwrap();
        assert_eq!(z.shape(), [1, 8, 64, 64]);
    }

    #[test]
    fn fresh_decoder_matches_spatial_path_and_stays_in_range() {
        let mut rng = Prng::new(3);
        let ae = Autoencoder::new(AutoencoderConfig::default(), &mut rng);
        let v = small_video(3, 32, 32, &mut rng);
        let (z, f) = ae.encode(&v).unwrap();
        let full = ae.decode_sequence(&z, &f, 0.5).unwrap();
        let spatial = ae.decode_spatial(&z).unwrap();
        assert_eq!(full, spatial);
        assert!(full.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn fresh_decoder_is_frame_permutation_equivariant() {
        let mut rng = Prng::new(4);
        let ae = Autoencoder::new(AutoencoderConfig::default(), &mut rng);
        let v = small_video(4, 32, 32, &mut rng);
        let (z, f) = ae.encode(&v).unwrap();
        let out = ae.decode_sequence(&z, &f, 1.0).unwrap();
        let perm = [2, 0, 3, 1];
        let zp = LatentSequence::new(z.data().select(Axis(0), &perm)).unwrap();
        let outp = ae.decode_sequence(&zp, &f.select(&perm), 1.0).unwrap();
        assert_eq!(outp.data(), &out.data().select(Axis(0), &perm));
    }

    #[test]
    fn zero_fusion_weight_ignores_features() {
        let mut rng = Prng::new(5);
        let mut ae = Autoencoder::new(AutoencoderConfig::default(), &mut rng);
        randomize(&mut ae, CFW_GROUP, &mut rng);
        randomize(&mut ae, TEMPORAL_GROUP, &mut rng);
        let v = small_video(3, 32, 32, &mut rng);
        let (z, f) = ae.encode(&v).unwrap();
        let mut other = f.clone();
        for a in &mut other.stages {
            let noise = gaussian_noise::<f32>(a.shape(), &mut rng).unwrap();
            *a += &noise.into_dimensionality::<Ix4>().unwrap();
        }
        let a = ae.decode_sequence(&z, &f, 0.0).unwrap();
        let b = ae.decode_sequence(&z, &other, 0.0).unwrap();
        assert_eq!(a, b);
        let c = ae.decode_sequence(&z, &other, 1.0).unwrap();
        assert_ne!(a, c);
        assert!(c.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn fusion_is_linear_in_weight() {
        let mut rng = Prng::new(6);
        let mut ae = Autoencoder::new(AutoencoderConfig::default(), &mut rng);
        randomize(&mut ae, CFW_GROUP, &mut rng);
        let bias = ae.decoder[1].fusion.bias;
        ae.store.value_mut(bias).fill(0.0);
        let c = DECODER_CHANNELS[1];
        let e = ENCODER_CHANNELS[2];
        let fval = gaussian_noise::<f32>(&[2, c, 8, 8], &mut rng).unwrap();
        let eval = gaussian_noise::<f32>(&[2, e, 8, 8], &mut rng).unwrap();
        let run = |w: f32| {
            let mut g = Graph::new();
            let f = g.constant(fval.clone());
            let ev = g.constant(eval.clone());
            let out = ae.fuse(&mut g, 1, f, ev, w);
            g.value(out).clone()
        };
        let half = run(0.5);
        let full = run(1.0);
        let expected = &fval + &((&full - &fval) * 0.5);
        for (a, b) in half.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn fusion_order_changes_nothing_while_zero() {
        let mut rng = Prng::new(7);
        let a = Autoencoder::new(AutoencoderConfig::default(), &mut rng.clone());
        let b = Autoencoder::new(
            AutoencoderConfig {
                fusion_order: FusionOrder::FusionFirst,
                ..AutoencoderConfig::default()
            },
            &mut rng,
        );
        let mut r = Prng::new(70);
        let v = small_video(2, 32, 32, &mut r);
        let (z, f) = a.encode(&v).unwrap();
        assert_eq!(a.decode_sequence(&z, &f, 0.5).unwrap(), b.decode_sequence(&z, &f, 0.5).unwrap());
    }

    #[test]
    fn mismatched_features_are_rejected() {
        let mut rng = Prng::new(8);
        let ae = Autoencoder::new(AutoencoderConfig::default(), &mut rng);
        let v = small_video(3, 32, 32, &mut rng);
        let (z, f) = ae.encode(&v).unwrap();
        assert!(ae.decode_sequence(&z, &f.select(&[0, 1]), 0.5).is_err());
    }

    #[test]
    fn zero_iterations_leave_weights_and_pretraining_learns() {
        let mut rng = Prng::new(9);
        let data: Vec<Video> = (0..2).map(|_| small_video(2, 32, 32, &mut rng)).collect();
        let mut ae = Autoencoder::new(AutoencoderConfig::default(), &mut rng);
        let before = ae.store.checksum("");
        let cfg0 = PretrainConfig {
            iterations: 0,
            crop: 32,
            ..PretrainConfig::default()
        };
        pretrain_autoencoder(&mut ae, &data, &data, &cfg0, &mut rng).unwrap();
        assert_eq!(ae.store.checksum(""), before);
        let temporal = ae.store.checksum(TEMPORAL_GROUP);
        let cfg = PretrainConfig {
            iterations: 30,
            batch: 2,
            crop: 32,
            ..PretrainConfig::default()
        };
        let report = pretrain_autoencoder(&mut ae, &data, &data, &cfg, &mut rng).unwrap();
        assert_eq!(ae.store.checksum(TEMPORAL_GROUP), temporal);
        let first = report.losses[0].1;
        let last = report.losses.last().unwrap().1;
        assert!(last < first, "{first} -> {last}");
        assert!(report.heldout_psnr.is_finite());
    }

    #[test]
    fn pretraining_is_reproducible() {
        let run = || {
            let mut rng = Prng::new(10);
            let data: Vec<Video> = (0..2).map(|_| small_video(2, 32, 32, &mut rng)).collect();
            let mut ae = Autoencoder::new(AutoencoderConfig::default(), &mut rng);
            let cfg = PretrainConfig {
                iterations: 3,
                batch: 1,
                crop: 32,
                ..PretrainConfig::default()
            };
            pretrain_autoencoder(&mut ae, &data, &data, &cfg, &mut rng).unwrap();
            ae.store.checksum("")
        };
        assert_eq!(run(), run());
    }
}
