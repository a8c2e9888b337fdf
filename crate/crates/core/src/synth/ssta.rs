//! Source-target statistical transforms: color shift, HSV jitter,
//! brightness/contrast, and one of blur or sharpen.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::blur::blur_image;
use crate::face::Image;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SstaConfig {
    /// Per-channel additive shift limit.
    pub rgb_shift: f32,
    /// Hue rotation limit, fraction of the full circle.
    pub hue: f32,
    /// Relative saturation scaling limit.
    pub saturation: f32,
    /// Relative value scaling limit.
    pub value: f32,
    pub brightness: f32,
    pub contrast: f32,
    /// Probability of blurring; sharpening otherwise.
    pub p_blur: f64,
    pub blur_sigma: [f32; 2],
    pub sharpen_amount: [f32; 2],
}

impl Default for SstaConfig {
    fn default() -> Self {
        Self {
            rgb_shift: 20.0 / 255.0,
            hue: 0.03,
            saturation: 0.2,
            value: 0.2,
            brightness: 0.1,
            contrast: 0.1,
            p_blur: 0.5,
            blur_sigma: [0.5, 1.5],
            sharpen_amount: [0.2, 0.6],
        }
    }
}

impl SstaConfig {
    /// Every magnitude zero and an identity blur.
    pub fn disabled() -> Self {
        Self {
            rgb_shift: 0.0,
            hue: 0.0,
            saturation: 0.0,
            value: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            p_blur: 1.0,
            blur_sigma: [0.0, 0.0],
            sharpen_amount: [0.0, 0.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "strength")]
pub enum Filter {
    Blur(f32),
    Sharpen(f32),
}

/// Every drawn parameter, sufficient to replay the transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SstaParams {
    pub rgb_shift: [f32; 3],
    pub hue_shift: f32,
    pub saturation_scale: f32,
    pub value_scale: f32,
    pub brightness: f32,
    pub contrast: f32,
    pub filter: Filter,
}

impl SstaParams {
    pub fn identity() -> Self {
        Self {
            rgb_shift: [0.0; 3],
            hue_shift: 0.0,
            saturation_scale: 1.0,
            value_scale: 1.0,
            brightness: 0.0,
            contrast: 0.0,
            filter: Filter::Blur(0.0),
        }
    }
}

fn symmetric(rng: &mut Rng, limit: f32) -> f32 {
    if limit > 0.0 {
        rng.random_range(-limit..=limit)
    } else {
        0.0
    }
}

fn in_range(rng: &mut Rng, range: [f32; 2]) -> f32 {
    if range[1] > range[0] {
        rng.random_range(range[0]..=range[1])
    } else {
        range[0]
    }
}

pub fn sample_params(cfg: &SstaConfig, rng: &mut Rng) -> SstaParams {
    let rgb_shift = [
        symmetric(rng, cfg.rgb_shift),
        symmetric(rng, cfg.rgb_shift),
        symmetric(rng, cfg.rgb_shift),
    ];
    let hue_shift = symmetric(rng, cfg.hue);
    let saturation_scale = 1.0 + symmetric(rng, cfg.saturation);
    let value_scale = 1.0 + symmetric(rng, cfg.value);
    let brightness = symmetric(rng, cfg.brightness);
    let contrast = symmetric(rng, cfg.contrast);
    let filter = if rng.random::<f64>() < cfg.p_blur {
        Filter::Blur(in_range(rng, cfg.blur_sigma))
    } else {
        Filter::Sharpen(in_range(rng, cfg.sharpen_amount))
    };
    SstaParams {
        rgb_shift,
        hue_shift,
        saturation_scale,
        value_scale,
        brightness,
        contrast,
        filter,
    }
}

pub fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// Hue rotation plus saturation/value scaling.
pub fn hsv_jitter(image: &mut Image, hue_shift: f32, saturation_scale: f32, value_scale: f32) {
    let (h, w, _) = image.dim();
    for y in 0..h {
        for x in 0..w {
            let (hh, s, v) = rgb_to_hsv(image[[y, x, 0]], image[[y, x, 1]], image[[y, x, 2]]);
            let (r, g, b) = hsv_to_rgb(
                hh + hue_shift,
                (s * saturation_scale).clamp(0.0, 1.0),
                (v * value_scale).clamp(0.0, 1.0),
            );
            image[[y, x, 0]] = r;
            image[[y, x, 1]] = g;
            image[[y, x, 2]] = b;
        }
    }
}

/// `x (1 + contrast) + brightness`, clipped.
pub fn brightness_contrast(image: &mut Image, brightness: f32, contrast: f32) {
    image.mapv_inplace(|v| (v * (1.0 + contrast) + brightness).clamp(0.0, 1.0));
}

pub fn apply(image: &Image, params: &SstaParams) -> Image {
    let mut out = image.clone();
    for (ch, shift) in params.rgb_shift.iter().enumerate() {
        if *shift != 0.0 {
            out.index_axis_mut(ndarray::Axis(2), ch)
                .mapv_inplace(|v| (v + shift).clamp(0.0, 1.0));
        }
    }
    if params.hue_shift != 0.0 || params.saturation_scale != 1.0 || params.value_scale != 1.0 {
        hsv_jitter(&mut out, params.hue_shift, params.saturation_scale, params.value_scale);
    }
    if params.brightness != 0.0 || params.contrast != 0.0 {
        brightness_contrast(&mut out, params.brightness, params.contrast);
    }
    match params.filter {
        Filter::Blur(sigma) if sigma > 0.0 => out = blur_image(&out, sigma),
        Filter::Sharpen(amount) if amount > 0.0 => {
            let smooth = blur_image(&out, 1.0);
            ndarray::Zip::from(&mut out)
                .and(&smooth)
                .for_each(|v, &s| *v += amount * (*v - s));
        }
        _ => {}
    }
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    out
}

/// Draws a parameter set and applies it; returns the output and the log.
pub fn ssta(image: &Image, cfg: &SstaConfig, rng: &mut Rng) -> (Image, SstaParams) {
    let params = sample_params(cfg, rng);
    (apply(image, &params), params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use ndarray::Axis;

    fn face() -> Image {
        Image::from_shape_fn((12, 10, 3), |(y, x, c)| ((y * 10 + x) as f32 / 120.0 + c as f32 * 0.1).min(1.0))
    }

    #[test]
    fn disabled_is_identity() {
        let img = face();
        let (out, params) = ssta(&img, &SstaConfig::disabled(), &mut SeedStream::root(1).rng());
        assert_eq!(params, SstaParams::identity());
        assert_eq!(out, img);
    }

    #[test]
    fn red_shift_isolated() {
        let img = face();
        let params = SstaParams {
            rgb_shift: [0.1, 0.0, 0.0],
            ..SstaParams::identity()
        };
        let out = apply(&img, &params);
        for ((y, x, c), v) in out.indexed_iter() {
            if c == 0 {
                assert_eq!(*v, (img[[y, x, 0]] + 0.1).clamp(0.0, 1.0));
            } else {
                assert_eq!(*v, img[[y, x, c]]);
            }
        }
    }

    #[test]
    fn seeded_runs_repeat() {
        let img = face();
        let a = ssta(&img, &SstaConfig::default(), &mut SeedStream::root(9).rng());
        let b = ssta(&img, &SstaConfig::default(), &mut SeedStream::root(9).rng());
        assert_eq!(a, b);
        assert!(a.0.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[(0.2, 0.5, 0.9), (1.0, 0.0, 0.0), (0.3, 0.3, 0.3), (0.9, 0.8, 0.1)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-5 && (g - g2).abs() < 1e-5 && (b - b2).abs() < 1e-5);
        }
    }

    #[test]
    fn exactly_one_filter_per_draw() {
        let stream = SeedStream::root(4);
        let mut blurs = 0;
        for i in 0..400 {
            let p = sample_params(&SstaConfig::default(), &mut stream.index(i).rng());
            if matches!(p.filter, Filter::Blur(_)) {
                blurs += 1;
            }
        }
        assert!((150..=250).contains(&blurs));
        let img = face();
        let sharp = apply(
            &img,
            &SstaParams {
                filter: Filter::Sharpen(0.5),
                ..SstaParams::identity()
            },
        );
        assert_ne!(sharp.index_axis(Axis(2), 0), img.index_axis(Axis(2), 0));
    }
}
