//! Shared affine + elastic warping of the initial mask and the source image.

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::blur::{convolve_separable, gaussian_kernel};
use super::hull::BlendMask;
use crate::face::Image;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformConfig {
    pub p: f64,
    /// Maximum translation per axis, fraction of the crop size.
    pub max_translate: f32,
    pub max_rotate_deg: f32,
    pub scale: [f32; 2],
    /// Elastic displacement amplitude, fraction of the crop size.
    pub elastic_alpha: f32,
    /// Smoothing of the elastic displacement noise, fraction of the crop size.
    pub elastic_sigma: f32,
}

impl Default for DeformConfig {
    fn default() -> Self {
        Self {
            p: 0.5,
            max_translate: 0.03,
            max_rotate_deg: 5.0,
            scale: [0.97, 1.03],
            elastic_alpha: 0.13,
            elastic_sigma: 0.018,
        }
    }
}

/// Concrete warp shared by mask and source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Warp {
    pub tx: f32,
    pub ty: f32,
    pub rotate_deg: f32,
    pub scale: f32,
    /// Per-pixel displacement `(dx, dy)`, absent for a purely affine warp.
    #[serde(skip)]
    pub elastic: Option<(Array2<f32>, Array2<f32>)>,
}

impl Warp {
    pub fn translation(tx: f32, ty: f32) -> Self {
        Self {
            tx,
            ty,
            rotate_deg: 0.0,
            scale: 1.0,
            elastic: None,
        }
    }

    /// Source coordinate (in pixel-index units) sampled by output pixel `(x, y)`.
    fn source_of(&self, x: usize, y: usize, height: usize, width: usize) -> (f32, f32) {
        let (cx, cy) = ((width as f32 - 1.0) / 2.0, (height as f32 - 1.0) / 2.0);
        let (px, py) = (x as f32 - cx - self.tx, y as f32 - cy - self.ty);
        let theta = -self.rotate_deg.to_radians();
        let (s, c) = theta.sin_cos();
        let mut sx = (c * px - s * py) / self.scale + cx;
        let mut sy = (s * px + c * py) / self.scale + cy;
        if let Some((dx, dy)) = &self.elastic {
            sx += dx[[y, x]];
            sy += dy[[y, x]];
        }
        (sx, sy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeformLog {
    pub applied: bool,
    pub warp: Option<Warp>,
}

/// Nearest-neighbour resampling keeps a binary mask binary; pixels sampled from
/// outside the raster are 0.
pub fn warp_mask(mask: &Array2<f32>, warp: &Warp) -> Array2<f32> {
    let (h, w) = mask.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (sx, sy) = warp.source_of(x, y, h, w);
        let (ix, iy) = (sx.round(), sy.round());
        if ix >= 0.0 && iy >= 0.0 && (ix as usize) < w && (iy as usize) < h {
            mask[[iy as usize, ix as usize]]
        } else {
            0.0
        }
    })
}

/// Bilinear resampling with edge replication.
pub fn warp_image(image: &Image, warp: &Warp) -> Image {
    let (h, w, c) = image.dim();
    let mut out = Image::zeros((h, w, c));
    let at = |yy: isize, xx: isize, ch: usize| {
        image[[
            yy.clamp(0, h as isize - 1) as usize,
            xx.clamp(0, w as isize - 1) as usize,
            ch,
        ]]
    };
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = warp.source_of(x, y, h, w);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let top = at(y0, x0, ch) * (1.0 - fx) + at(y0, x0 + 1, ch) * fx;
                let bottom = at(y0 + 1, x0, ch) * (1.0 - fx) + at(y0 + 1, x0 + 1, ch) * fx;
                out[[y, x, ch]] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

fn sample_warp(height: usize, width: usize, cfg: &DeformConfig, rng: &mut Rng) -> Warp {
    let size = height.min(width) as f32;
    let sym = |rng: &mut Rng, m: f32| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    let tx = sym(rng, cfg.max_translate * size);
    let ty = sym(rng, cfg.max_translate * size);
    let rotate_deg = sym(rng, cfg.max_rotate_deg);
    let scale = if cfg.scale[1] > cfg.scale[0] {
        rng.random_range(cfg.scale[0]..=cfg.scale[1])
    } else {
        cfg.scale[0]
    };
    let elastic = (cfg.elastic_alpha > 0.0).then(|| {
        let taps = gaussian_kernel(cfg.elastic_sigma * size);
        let alpha = cfg.elastic_alpha * size;
        let mut field = || {
            let noise = Array2::from_shape_simple_fn((height, width), || rng.random_range(-1.0f32..=1.0));
            convolve_separable(&noise, &taps).mapv(|v| v * alpha)
        };
        let dx = field();
        let dy = field();
        (dx, dy)
    });
    Warp {
        tx,
        ty,
        rotate_deg,
        scale,
        elastic,
    }
}

/// With probability `cfg.p`, warps mask and source with one shared warp.
pub fn deform_mask_and_source(
    mask: &BlendMask,
    source: &Image,
    cfg: &DeformConfig,
    rng: &mut Rng,
) -> (BlendMask, Image, DeformLog) {
    let coin = rng.random::<f64>() < cfg.p;
    if !coin {
        return (
            mask.clone(),
            source.clone(),
            DeformLog {
                applied: false,
                warp: None,
            },
        );
    }
    let (h, w) = mask.mask.dim();
    let warp = sample_warp(h, w, cfg, rng);
    let warped = BlendMask {
        mask: warp_mask(&mask.mask, &warp),
        hull_variant: mask.hull_variant,
        deformed: true,
    };
    let image = warp_image(source, &warp);
    (
        warped,
        image,
        DeformLog {
            applied: true,
            warp: Some(warp),
        },
    )
}
