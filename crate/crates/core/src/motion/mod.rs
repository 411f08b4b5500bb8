//! Optical flow, warping and occlusion reasoning.

mod flow;
mod horn_schunck;
mod occlusion;
mod warp;

pub use flow::{downsample_flow, FlowField, FlowSet};
pub use horn_schunck::{estimate_flow, estimate_flow_set, FlowSolverConfig};
pub use occlusion::{occlusion_mask_fb, MaskSet, OcclusionConfig, OcclusionMask};
pub use warp::{warp_bilinear, warp_vjp, warp_vjp_for};
