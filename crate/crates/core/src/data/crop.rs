//! Margin-expanded face crops resized to the network input.

use image::imageops::{self, FilterType};
use image::Rgb32FImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face::{BBox, Image, Point};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropSpec {
    /// Expansion per side, as a fraction of the box size.
    pub margin: f32,
    /// Side of the square output.
    pub size: usize,
}

impl Default for CropSpec {
    fn default() -> Self {
        Self { margin: 0.125, size: 380 }
    }
}

impl CropSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin >= 0.0) || self.size == 0 {
            return Err(Error::Config(format!(
                "crop margin must be non-negative and size positive, got {} / {}",
                self.margin, self.size
            )));
        }
        Ok(())
    }
}

/// The frame region a crop was taken from; maps points both ways.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropWindow {
    pub region: BBox,
    pub size: usize,
}

impl CropWindow {
    /// Expands `bbox` by the margin and clamps it to a `width x height` frame.
    pub fn new(bbox: &BBox, spec: &CropSpec, width: usize, height: usize) -> Result<Self> {
        spec.validate()?;
        let mx = (spec.margin * bbox.width() as f32).round() as i32;
        let my = (spec.margin * bbox.height() as f32).round() as i32;
        let want = (bbox.x0 - mx, bbox.y0 - my, bbox.x1 + mx, bbox.y1 + my);
        let (w, h) = (width as i32, height as i32);
        let got = (want.0.max(0), want.1.max(0), want.2.min(w), want.3.min(h));
        if got != want {
            log::warn!("crop window {want:?} clamped to the {width}x{height} frame");
        }
        let region = BBox::new(got.0, got.1, got.2, got.3)
            .map_err(|_| Error::Data(format!("face box {bbox:?} lies outside the {width}x{height} frame")))?;
        Ok(Self { region, size: spec.size })
    }

    fn scale(&self) -> (f32, f32) {
        (
            self.size as f32 / self.region.width() as f32,
            self.size as f32 / self.region.height() as f32,
        )
    }

    pub fn to_crop(&self, p: Point) -> Point {
        let (sx, sy) = self.scale();
        Point::new((p.x - self.region.x0 as f32) * sx, (p.y - self.region.y0 as f32) * sy)
    }

    pub fn to_frame(&self, p: Point) -> Point {
        let (sx, sy) = self.scale();
        Point::new(p.x / sx + self.region.x0 as f32, p.y / sy + self.region.y0 as f32)
    }
}

fn to_buffer(image: &Image) -> Rgb32FImage {
    let (h, w, _) = image.dim();
    Rgb32FImage::from_raw(w as u32, h as u32, image.iter().copied().collect()).expect("HxWx3 raster")
}

/// Crops the margin-expanded box, resizes it to `spec.size` squared and maps
/// the landmarks into crop coordinates.
pub fn crop_and_resize(
    frame: &Image,
    bbox: &BBox,
    landmarks: &[Point],
    spec: &CropSpec,
) -> Result<(Image, Vec<Point>, CropWindow)> {
    let (h, w, c) = frame.dim();
    if c != 3 {
        return Err(Error::Shape(format!("frame must be HxWx3, got {h}x{w}x{c}")));
    }
    let window = CropWindow::new(bbox, spec, w, h)?;
    let r = window.region;
    let buffer = to_buffer(frame);
    let region = imageops::crop_imm(&buffer, r.x0 as u32, r.y0 as u32, r.width() as u32, r.height() as u32).to_image();
    let n = spec.size as u32;
    let resized = if region.dimensions() == (n, n) {
        region
    } else {
        imageops::resize(&region, n, n, FilterType::Triangle)
    };
    let image = Image::from_shape_vec((spec.size, spec.size, 3), resized.into_raw())
        .map_err(|e| Error::Shape(e.to_string()))?
        .mapv(|v| v.clamp(0.0, 1.0));
    let bound = spec.size as f32;
    let points = landmarks
        .iter()
        .map(|&p| {
            let q = window.to_crop(p);
            Point::new(q.x.clamp(0.0, bound), q.y.clamp(0.0, bound))
        })
        .collect();
    Ok((image, points, window))
}
