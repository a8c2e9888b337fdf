//! Minimal raster plots: ROC curve and score histogram.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Result;

const SIZE: u32 = 256;
const PAD: u32 = 16;
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const GRAY: Rgb<u8> = Rgb([190, 190, 190]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const BLUE: Rgb<u8> = Rgb([40, 90, 200]);
const RED: Rgb<u8> = Rgb([210, 50, 40]);

fn canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(SIZE, SIZE, WHITE);
    let end = SIZE - PAD;
    line(&mut img, (PAD, end), (end, end), BLACK);
    line(&mut img, (PAD, PAD), (PAD, end), BLACK);
    img
}

/// Maps unit coordinates (origin bottom-left) to pixels.
fn to_px(x: f64, y: f64) -> (u32, u32) {
    let span = (SIZE - 2 * PAD) as f64;
    (
        PAD + (x.clamp(0.0, 1.0) * span).round() as u32,
        SIZE - PAD - (y.clamp(0.0, 1.0) * span).round() as u32,
    )
}

fn line(img: &mut RgbImage, a: (u32, u32), b: (u32, u32), color: Rgb<u8>) {
    let (mut x, mut y) = (a.0 as i64, a.1 as i64);
    let (x1, y1) = (b.0 as i64, b.1 as i64);
    let (dx, dy) = ((x1 - x).abs(), -(y1 - y).abs());
    let (sx, sy) = (if x < x1 { 1 } else { -1 }, if y < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        if (0..SIZE as i64).contains(&x) && (0..SIZE as i64).contains(&y) {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn save(img: RgbImage, path: &Path) -> Result<()> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    crate::io::write_atomic(path, &buf.into_inner())
}

/// ROC curve with the chance diagonal.
pub fn write_roc(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut img = canvas();
    line(&mut img, to_px(0.0, 0.0), to_px(1.0, 1.0), GRAY);
    for w in points.windows(2) {
        line(&mut img, to_px(w[0].0, w[0].1), to_px(w[1].0, w[1].1), BLUE);
    }
    save(img, path)
}

/// Overlaid score histograms: genuine in blue, fake in red, 20 bins over `[0, 1]`.
pub fn write_histogram(path: &Path, scores: &[f64], labels: &[u8]) -> Result<()> {
    const BINS: usize = 20;
    let mut counts = [[0usize; BINS]; 2];
    for (&s, &l) in scores.iter().zip(labels) {
        let bin = ((s.clamp(0.0, 1.0) * BINS as f64) as usize).min(BINS - 1);
        counts[l.min(1) as usize][bin] += 1;
    }
    let peak = counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let mut img = canvas();
    for (class, color) in [(0usize, BLUE), (1, RED)] {
        for (bin, &c) in counts[class].iter().enumerate() {
            let x = (bin as f64 + 0.25 + 0.5 * class as f64) / BINS as f64;
            line(&mut img, to_px(x, 0.0), to_px(x, c as f64 / peak), color);
        }
    }
    save(img, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_are_written() {
        let dir = tempfile::tempdir().unwrap();
        write_roc(&dir.path().join("roc.png"), &[(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)]).unwrap();
        write_histogram(&dir.path().join("h.png"), &[0.1, 0.9, 1.0], &[0, 1, 1]).unwrap();
        let img = image::open(dir.path().join("roc.png")).unwrap();
        assert_eq!((img.width(), img.height()), (SIZE, SIZE));
    }
}
