//! Raster and file plumbing.

use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::face::Image;

/// Writes `bytes` to a sibling temp file, then renames it over `path`, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn quantize8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn quantize16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn encode_png(img: DynamicImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn rgb8_from(image: &Image) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
    let (h, w, _) = image.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([quantize8(image[[y, x, 0]]), quantize8(image[[y, x, 1]]), quantize8(image[[y, x, 2]])])
    })
}

/// 8-bit RGB PNG.
pub fn write_rgb8(path: &Path, image: &Image) -> Result<()> {
    write_atomic(path, &encode_png(DynamicImage::ImageRgb8(rgb8_from(image)))?)
}

/// 16-bit RGB PNG.
pub fn write_rgb16(path: &Path, image: &Image) -> Result<()> {
    let (h, w, _) = image.dim();
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([quantize16(image[[y, x, 0]]), quantize16(image[[y, x, 1]]), quantize16(image[[y, x, 2]])])
    });
    write_atomic(path, &encode_png(DynamicImage::ImageRgb16(buf))?)
}

/// 16-bit grayscale PNG of a `[0, 1]` field.
pub fn write_gray16(path: &Path, field: &Array2<f32>) -> Result<()> {
    let (h, w) = field.dim();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([quantize16(field[[y as usize, x as usize]])]));
    write_atomic(path, &encode_png(DynamicImage::ImageLuma16(buf))?)
}

/// Reads any supported raster as RGB in `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<Image> {
    let img = image::open(path)?.into_rgb32f();
    let (w, h) = img.dimensions();
    Array3::from_shape_vec((h as usize, w as usize, 3), img.into_raw()).map_err(|e| Error::Shape(e.to_string()))
}

/// Reads any supported raster as a single `[0, 1]` field.
pub fn read_gray(path: &Path) -> Result<Array2<f32>> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect();
    Array2::from_shape_vec((h as usize, w as usize), data).map_err(|e| Error::Shape(e.to_string()))
}

/// Rounds an image to the 8-bit grid (what an 8-bit PNG round trip yields).
pub fn quantize_image8(image: &Image) -> Image {
    image.mapv(|v| quantize8(v) as f32 / 255.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
