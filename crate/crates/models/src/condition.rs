//! Inputs the sampler derives from a degraded sequence: the pooled
//! condition grid and motion on the latent grid.

use flowguide_core::image_ops::{area_downsample, resize_bicubic};
use flowguide_core::motion::{estimate_flow_set, FlowSolverConfig, OcclusionConfig};
use flowguide_core::{CoreError, Flows, MaskSet, Video};
use ndarray::{s, Array4};
use serde::{Deserialize, Serialize};

use crate::autoencoder::DOWNSAMPLE;
use crate::error::Result;

/// LR frames bicubic-resized to `out_h × out_w`, then area-pooled by the
/// latent stride: `[N, C, out_h/8, out_w/8]`.
pub fn condition_grid(lr: &Video, out_h: usize, out_w: usize) -> Result<Array4<f32>> {
    if !out_h.is_multiple_of(DOWNSAMPLE) || !out_w.is_multiple_of(DOWNSAMPLE) {
        return Err(CoreError::InvalidArgument(format!(
            "output size {out_h}x{out_w} is not divisible by {DOWNSAMPLE}"
        ))
        .into());
    }
    let (h, w) = (out_h / DOWNSAMPLE, out_w / DOWNSAMPLE);
    let mut out = Array4::zeros((lr.frame_count(), lr.channels(), h, w));
    for i in 0..lr.frame_count() {
        let up = resize_bicubic(lr.frame(i), out_h, out_w);
        out.slice_mut(s![i, .., .., ..]).assign(&area_downsample(up.view(), DOWNSAMPLE)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FlowSource {
    /// Horn–Schunck on the LR frames.
    #[default]
    Estimated,
    /// The generator's exact flows.
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct MotionConfig {
    pub source: FlowSource,
    pub solver: FlowSolverConfig,
    pub occlusion: OcclusionConfig,
}

/// Flows estimated on the LR frames with forward–backward masks, both
/// resampled to the `latent_h × latent_w` grid (flows rescaled, masks by
/// nearest neighbour).
pub fn estimated_latent_motion(
    lr: &Video,
    latent_h: usize,
    latent_w: usize,
    cfg: &MotionConfig,
) -> Result<(Flows, MaskSet)> {
    let flows = estimate_flow_set(lr, &cfg.solver)?;
    let masks = MaskSet::from_flows(&flows, &cfg.occlusion);
    resample_motion(&flows, &masks, latent_h, latent_w)
}

/// Brings full-resolution flows and masks to the latent grid.
pub fn resample_motion(flows: &Flows, masks: &MaskSet, latent_h: usize, latent_w: usize) -> Result<(Flows, MaskSet)> {
    let h = flows.height();
    if latent_h == 0 || !h.is_multiple_of(latent_h) || !flows.width().is_multiple_of(latent_w.max(1)) || h / latent_h != flows.width() / latent_w
    {
        return Err(CoreError::InvalidArgument(format!(
            "cannot resample {}x{} motion to {latent_h}x{latent_w}",
            h,
            flows.width()
        ))
        .into());
    }
    Ok((flows.downsample(latent_h, latent_w)?, masks.downsample_nearest(h / latent_h)?))
}
