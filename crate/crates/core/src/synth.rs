//! Synthetic video with exact ground-truth motion and occlusion.
//!
//! Every layer (background and sprites) carries an analytic band-limited
//! texture that moves rigidly with the layer, so frames can be evaluated at
//! any sub-pixel offset and the flow inside each layer is exactly its
//! velocity. Pixels are point-sampled at their integer coordinates.
//!
//! The degradation pipeline runs, per frame and in this order: Gaussian
//! blur, area downsampling, additive Gaussian noise, mid-rise uniform
//! quantisation, clamp to `[0, 1]`.

use std::f64::consts::TAU;

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::image_ops::{area_downsample, gaussian_blur};
use crate::motion::{FlowField, FlowSet, MaskSet, OcclusionMask};
use crate::rng::Prng;
use crate::scalar::Real;
use crate::sequence::VideoSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub components: usize,
    pub min_wavelength: f64,
    pub max_wavelength: f64,
    /// Peak deviation from the base colour, per channel.
    pub contrast: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self {
            components: 6,
            min_wavelength: 10.0,
            max_wavelength: 40.0,
            contrast: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpriteShape {
    Rect { width: f64, height: f64 },
    Disc { radius: f64 },
}

impl SpriteShape {
    fn half_extent(&self) -> (f64, f64) {
        match *self {
            SpriteShape::Rect { width, height } => (width / 2.0, height / 2.0),
            SpriteShape::Disc { radius } => (radius, radius),
        }
    }

    fn contains(&self, dx: f64, dy: f64) -> bool {
        match *self {
            SpriteShape::Rect { width, height } => {
                dx >= -width / 2.0 && dx < width / 2.0 && dy >= -height / 2.0 && dy < height / 2.0
            }
            SpriteShape::Disc { radius } => dx * dx + dy * dy < radius * radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpriteSpec {
    pub shape: SpriteShape,
    /// Centre `(x, y)` at frame 0.
    pub start: [f64; 2],
    /// Displacement `(dx, dy)` per frame.
    pub velocity: [f64; 2],
    pub texture_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub background: TextureSpec,
    pub background_velocity: [f64; 2],
    pub sprites: Vec<SpriteSpec>,
    pub seed: u64,
}

/// Parameters for drawing random scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneGenConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub min_sprites: usize,
    pub max_sprites: usize,
    pub min_sprite_size: f64,
    pub max_sprite_size: f64,
    pub max_speed: f64,
    pub subpixel: bool,
    pub background_speed: f64,
    pub texture: TextureSpec,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            frames: 8,
            min_sprites: 1,
            max_sprites: 3,
            min_sprite_size: 20.0,
            max_sprite_size: 44.0,
            max_speed: 2.0,
            subpixel: false,
            background_speed: 0.0,
            texture: TextureSpec::default(),
        }
    }
}

impl SceneGenConfig {
    /// Many large, fast sprites: a stress set for occlusion handling.
    pub fn occlusion_heavy(height: usize, width: usize, frames: usize) -> Self {
        Self {
            height,
            width,
            frames,
            min_sprites: 3,
            max_sprites: 5,
            min_sprite_size: 24.0,
            max_sprite_size: 48.0,
            max_speed: 3.0,
            ..Self::default()
        }
    }
}

struct Texture {
    base: [f64; 3],
    waves: Vec<(f64, f64, f64, [f64; 3])>,
}

impl Texture {
    fn new(spec: &TextureSpec, seed: u64, base_range: (f64, f64)) -> Self {
        let mut rng = Prng::new(seed);
        let base = [0; 3].map(|_| rng.uniform_range(base_range.0, base_range.1));
        let n = spec.components.max(1);
        let amp = spec.contrast / n as f64 * 1.5;
        let waves = (0..n)
            .map(|_| {
                // log-uniform wavelength inside the band
                let lw = rng.uniform_range(spec.min_wavelength.ln(), spec.max_wavelength.ln());
                let k = TAU / lw.exp();
                let theta = rng.uniform_range(0.0, TAU);
                let phase = rng.uniform_range(0.0, TAU);
                let a = [0; 3].map(|_| amp * rng.uniform_range(0.4, 1.0));
                (k * theta.cos(), k * theta.sin(), phase, a)
            })
            .collect();
        Self { base, waves }
    }

    fn eval(&self, x: f64, y: f64) -> [f64; 3] {
        let mut out = self.base;
        for &(kx, ky, phase, a) in &self.waves {
            let s = (kx * x + ky * y + phase).sin();
            for c in 0..3 {
                out[c] += a[c] * s;
            }
        }
        out.map(|v| v.clamp(0.0, 1.0))
    }
}

/// Index of the layer visible at a point: `None` is the background.
type Layer = Option<usize>;

pub struct Scene<'a> {
    spec: &'a SceneSpec,
    background: Texture,
    sprites: Vec<Texture>,
}

impl<'a> Scene<'a> {
    pub fn new(spec: &'a SceneSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            background: Texture::new(&spec.background, spec.seed, (0.35, 0.65)),
            sprites: spec
                .sprites
                .iter()
                .map(|s| Texture::new(&spec.background, s.texture_seed, (0.1, 0.9)))
                .collect(),
        })
    }

    fn centre(&self, k: usize, frame: usize) -> (f64, f64) {
        let s = &self.spec.sprites[k];
        (
            s.start[0] + frame as f64 * s.velocity[0],
            s.start[1] + frame as f64 * s.velocity[1],
        )
    }

    fn layer_at(&self, frame: usize, x: f64, y: f64) -> Layer {
        (0..self.spec.sprites.len()).rev().find(|&k| {
            let (cx, cy) = self.centre(k, frame);
            self.spec.sprites[k].shape.contains(x - cx, y - cy)
        })
    }

    fn velocity(&self, layer: Layer) -> [f64; 2] {
        match layer {
            None => self.spec.background_velocity,
            Some(k) => self.spec.sprites[k].velocity,
        }
    }

    fn colour(&self, frame: usize, x: f64, y: f64) -> [f64; 3] {
        match self.layer_at(frame, x, y) {
            None => {
                let v = self.spec.background_velocity;
                self.background
                    .eval(x - frame as f64 * v[0], y - frame as f64 * v[1])
            }
            Some(k) => {
                let (cx, cy) = self.centre(k, frame);
                self.sprites[k].eval(x - cx, y - cy)
            }
        }
    }

    fn inside(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.spec.width - 1) as f64 && y <= (self.spec.height - 1) as f64
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.frames == 0 {
            return Err(CoreError::InvalidArgument("scene dims and frame count must be positive".into()));
        }
        for (k, s) in self.sprites.iter().enumerate() {
            let (hx, hy) = s.shape.half_extent();
            for f in [0, self.frames - 1] {
                let cx = s.start[0] + f as f64 * s.velocity[0];
                let cy = s.start[1] + f as f64 * s.velocity[1];
                if !(cx.is_finite() && cy.is_finite())
                    || cx - hx < 0.0
                    || cy - hy < 0.0
                    || cx + hx > self.width as f64
                    || cy + hy > self.height as f64
                {
                    return Err(CoreError::InvalidArgument(format!(
                        "sprite {k} leaves the {}x{} canvas at frame {f}",
                        self.width, self.height
                    )));
                }
            }
        }
        Ok(())
    }

    /// Draws a scene whose sprites stay on the canvas for every frame.
    pub fn random(seed: u64, cfg: &SceneGenConfig) -> Self {
        let mut rng = Prng::new(seed);
        let count = cfg.min_sprites + rng.below(cfg.max_sprites - cfg.min_sprites + 1);
        let span = (cfg.frames.max(1) - 1) as f64;
        let draw_speed = |rng: &mut Prng, max: f64| {
            let v = rng.uniform_range(-max, max);
            if cfg.subpixel {
                v
            } else {
                v.round()
            }
        };
        let background_velocity = [
            draw_speed(&mut rng, cfg.background_speed),
            draw_speed(&mut rng, cfg.background_speed),
        ];
        let mut sprites = Vec::with_capacity(count);
        for _ in 0..count {
            loop {
                let size = rng.uniform_range(cfg.min_sprite_size, cfg.max_sprite_size).round();
                let shape = if rng.uniform() < 0.5 {
                    SpriteShape::Rect {
                        width: size,
                        height: (size * rng.uniform_range(0.6, 1.0)).round(),
                    }
                } else {
                    SpriteShape::Disc { radius: (size / 2.0).round() }
                };
                let velocity = [draw_speed(&mut rng, cfg.max_speed), draw_speed(&mut rng, cfg.max_speed)];
                let (hx, hy) = shape.half_extent();
                let lo_x = hx + (-velocity[0] * span).max(0.0);
                let hi_x = cfg.width as f64 - hx - (velocity[0] * span).max(0.0);
                let lo_y = hy + (-velocity[1] * span).max(0.0);
                let hi_y = cfg.height as f64 - hy - (velocity[1] * span).max(0.0);
                if lo_x > hi_x || lo_y > hi_y {
                    continue;
                }
                let start = [rng.uniform_range(lo_x, hi_x).round(), rng.uniform_range(lo_y, hi_y).round()];
                let start = [start[0].clamp(lo_x.ceil(), hi_x.floor()), start[1].clamp(lo_y.ceil(), hi_y.floor())];
                if start[0] < lo_x || start[0] > hi_x || start[1] < lo_y || start[1] > hi_y {
                    continue;
                }
                sprites.push(SpriteSpec {
                    shape,
                    start,
                    velocity,
                    texture_seed: rng.next_u64(),
                });
                break;
            }
        }
        Self {
            height: cfg.height,
            width: cfg.width,
            frames: cfg.frames,
            background: cfg.texture.clone(),
            background_velocity,
            sprites,
            seed: rng.next_u64(),
        }
    }

    /// Plain `key=value` lines describing the scene.
    pub fn manifest_lines(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("height".to_string(), self.height.to_string()),
            ("width".into(), self.width.to_string()),
            ("frames".into(), self.frames.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("background.components".into(), self.background.components.to_string()),
            ("background.min_wavelength".into(), self.background.min_wavelength.to_string()),
            ("background.max_wavelength".into(), self.background.max_wavelength.to_string()),
            ("background.contrast".into(), self.background.contrast.to_string()),
            (
                "background.velocity".into(),
                format!("{},{}", self.background_velocity[0], self.background_velocity[1]),
            ),
            ("sprites".into(), self.sprites.len().to_string()),
        ];
        for (k, s) in self.sprites.iter().enumerate() {
            let shape = match s.shape {
                SpriteShape::Rect { width, height } => format!("rect:{width}x{height}"),
                SpriteShape::Disc { radius } => format!("disc:{radius}"),
            };
            out.push((format!("sprite.{k}.shape"), shape));
            out.push((format!("sprite.{k}.start"), format!("{},{}", s.start[0], s.start[1])));
            out.push((format!("sprite.{k}.velocity"), format!("{},{}", s.velocity[0], s.velocity[1])));
            out.push((format!("sprite.{k}.texture_seed"), s.texture_seed.to_string()));
        }
        out
    }
}

/// Rendered frames with exact flows and occlusion maps.
#[derive(Clone, Debug)]
pub struct SynthSequence<T> {
    pub video: VideoSequence<T>,
    pub flows: FlowSet<T>,
    pub masks: MaskSet,
}

pub fn synth_sequence<T: Real>(spec: &SceneSpec) -> Result<SynthSequence<T>> {
    let scene = Scene::new(spec)?;
    let (h, w, n) = (spec.height, spec.width, spec.frames);
    let mut data = Array4::<T>::zeros((n, 3, h, w));
    let mut layers = vec![Array2::<i64>::zeros((h, w)); n];
    for f in 0..n {
        for y in 0..h {
            for x in 0..w {
                let c = scene.colour(f, x as f64, y as f64);
                for ch in 0..3 {
                    data[[f, ch, y, x]] = T::lit(c[ch]);
                }
                layers[f][[y, x]] = scene.layer_at(f, x as f64, y as f64).map_or(-1, |k| k as i64);
            }
        }
    }
    let to_layer = |v: i64| if v < 0 { None } else { Some(v as usize) };
    let mut forward = Vec::with_capacity(n.saturating_sub(1));
    let mut backward = Vec::with_capacity(n.saturating_sub(1));
    let mut mforward = Vec::with_capacity(n.saturating_sub(1));
    let mut mbackward = Vec::with_capacity(n.saturating_sub(1));
    for f in 0..n.saturating_sub(1) {
        let mut fwd = Array3::<T>::zeros((2, h, w));
        let mut bwd = Array3::<T>::zeros((2, h, w));
        let mut mf = Array2::<u8>::zeros((h, w));
        let mut mb = Array2::<u8>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64, y as f64);
                let l0 = to_layer(layers[f][[y, x]]);
                let v = scene.velocity(l0);
                fwd[[0, y, x]] = T::lit(v[0]);
                fwd[[1, y, x]] = T::lit(v[1]);
                let (qx, qy) = (px + v[0], py + v[1]);
                mf[[y, x]] = u8::from(scene.inside(qx, qy) && scene.layer_at(f + 1, qx, qy) == l0);

                let l1 = to_layer(layers[f + 1][[y, x]]);
                let v = scene.velocity(l1);
                bwd[[0, y, x]] = T::lit(-v[0]);
                bwd[[1, y, x]] = T::lit(-v[1]);
                let (qx, qy) = (px - v[0], py - v[1]);
                mb[[y, x]] = u8::from(scene.inside(qx, qy) && scene.layer_at(f, qx, qy) == l1);
            }
        }
        forward.push(FlowField::new(fwd)?);
        backward.push(FlowField::new(bwd)?);
        mforward.push(OcclusionMask::new(mf)?);
        mbackward.push(OcclusionMask::new(mb)?);
    }
    let flows = if n >= 2 {
        FlowSet::new(forward, backward)?
    } else {
        FlowSet::zeros(2, h, w)
    };
    let masks = if n >= 2 {
        MaskSet {
            forward: mforward,
            backward: mbackward,
        }
    } else {
        MaskSet::ones(2, h, w)
    };
    Ok(SynthSequence {
        video: VideoSequence::new(data)?,
        flows,
        masks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationSpec {
    pub blur_sigma: f64,
    pub scale: usize,
    pub noise_sigma: f64,
    pub quant_levels: usize,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            blur_sigma: 1.0,
            scale: 4,
            noise_sigma: 0.02,
            quant_levels: 64,
        }
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=3.0).contains(&self.blur_sigma) {
            return Err(CoreError::Config(format!("blur sigma {} outside [0, 3]", self.blur_sigma)));
        }
        if !(0.0..=0.1).contains(&self.noise_sigma) {
            return Err(CoreError::Config(format!("noise sigma {} outside [0, 0.1]", self.noise_sigma)));
        }
        if self.scale == 0 {
            return Err(CoreError::Config("downscale factor must be >= 1".into()));
        }
        if self.quant_levels < 2 {
            return Err(CoreError::Config("need at least 2 quantisation levels".into()));
        }
        Ok(())
    }
}

/// Mid-rise quantiser: `L` bins of width `1/L`, each mapped to its centre.
pub fn quantize(v: f64, levels: usize) -> f64 {
    let l = levels as f64;
    let bin = (v.clamp(0.0, 1.0) * l).floor().min(l - 1.0);
    (bin + 0.5) / l
}

pub fn degrade_sequence<T: Real>(hr: &VideoSequence<T>, spec: &DegradationSpec, rng: &mut Prng) -> Result<VideoSequence<T>> {
    spec.validate()?;
    if !hr.height().is_multiple_of(spec.scale) || !hr.width().is_multiple_of(spec.scale) {
        return Err(CoreError::InvalidArgument(format!(
            "downscale factor {} does not divide {}x{}",
            spec.scale,
            hr.height(),
            hr.width()
        )));
    }
    let mut frames = Vec::with_capacity(hr.frame_count());
    for i in 0..hr.frame_count() {
        let blurred = gaussian_blur(hr.frame(i), spec.blur_sigma);
        let mut small = area_downsample(blurred.view(), spec.scale)?;
        small.mapv_inplace(|v| {
            let noisy = v.as_f64() + spec.noise_sigma * rng.standard_normal();
            T::lit(quantize(noisy, spec.quant_levels))
        });
        frames.push(small);
    }
    let data = crate::sequence::stack_frames(&frames)?;
    VideoSequence::from_clamped(data)
}
