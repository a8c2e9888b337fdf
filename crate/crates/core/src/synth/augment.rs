//! Train-time augmentation applied to genuine samples and RBIs alike.

use image::ImageDecoder;
use jpeg_encoder::{ColorType, Encoder, SamplingFactor};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ssta::{brightness_contrast, hsv_jitter};
use crate::error::{Error, Result};
use crate::face::Image;
use crate::io::rgb8_from;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub p_jpeg: f64,
    pub jpeg_quality: [u8; 2],
    pub p_brightness_contrast: f64,
    pub brightness: f32,
    pub contrast: f32,
    pub p_color: f64,
    pub hue: f32,
    pub saturation: f32,
    pub value: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_jpeg: 0.3,
            jpeg_quality: [60, 100],
            p_brightness_contrast: 0.3,
            brightness: 0.1,
            contrast: 0.1,
            p_color: 0.3,
            hue: 0.02,
            saturation: 0.1,
            value: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            p_jpeg: 0.0,
            p_brightness_contrast: 0.0,
            p_color: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentLog {
    pub jpeg_quality: Option<u8>,
    pub brightness_contrast: Option<(f32, f32)>,
    pub color: Option<(f32, f32, f32)>,
}

/// Encodes to JPEG (4:4:4) at `quality` and decodes back.
pub fn jpeg_round_trip(image: &Image, quality: u8) -> Result<Image> {
    let (h, w, _) = image.dim();
    let rgb = rgb8_from(image);
    let mut bytes = Vec::new();
    let mut encoder = Encoder::new(&mut bytes, quality.clamp(1, 100));
    // No chroma subsampling, so high qualities stay close to lossless.
    encoder.set_sampling_factor(SamplingFactor::R_4_4_4);
    encoder
        .encode(rgb.as_raw(), w as u16, h as u16, ColorType::Rgb)
        .map_err(|e| Error::Data(format!("jpeg encoding failed: {e}")))?;
    let decoder = image::codecs::jpeg::JpegDecoder::new(std::io::Cursor::new(bytes))?;
    let mut raw = vec![0u8; decoder.total_bytes() as usize];
    decoder.read_image(&mut raw)?;
    let data = raw.into_iter().map(|v| v as f32 / 255.0).collect();
    Image::from_shape_vec((h, w, 3), data).map_err(|e| Error::Shape(e.to_string()))
}

fn symmetric(rng: &mut Rng, limit: f32) -> f32 {
    if limit > 0.0 {
        rng.random_range(-limit..=limit)
    } else {
        0.0
    }
}

/// Compression, brightness/contrast and color jitter, each with its own probability.
pub fn train_time_augment(image: &Image, cfg: &AugmentConfig, rng: &mut Rng) -> Result<(Image, AugmentLog)> {
    let mut out = image.clone();
    let mut log = AugmentLog::default();
    if rng.random::<f64>() < cfg.p_brightness_contrast {
        let (b, c) = (symmetric(rng, cfg.brightness), symmetric(rng, cfg.contrast));
        brightness_contrast(&mut out, b, c);
        log.brightness_contrast = Some((b, c));
    }
    if rng.random::<f64>() < cfg.p_color {
        let (h, s, v) = (
            symmetric(rng, cfg.hue),
            1.0 + symmetric(rng, cfg.saturation),
            1.0 + symmetric(rng, cfg.value),
        );
        hsv_jitter(&mut out, h, s, v);
        out.mapv_inplace(|x| x.clamp(0.0, 1.0));
        log.color = Some((h, s, v));
    }
    if rng.random::<f64>() < cfg.p_jpeg {
        let [lo, hi] = cfg.jpeg_quality;
        let q = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        out = jpeg_round_trip(&out, q)?;
        log.jpeg_quality = Some(q);
    }
    Ok((out, log))
}
