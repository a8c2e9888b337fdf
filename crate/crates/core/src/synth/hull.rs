//! Landmark hulls and their rasterization into binary masks.

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face::{Point, NUM_LANDMARKS};
use crate::rng::Rng;

/// Landmark index ranges of the 81-point layout.
pub mod layout {
    use std::ops::RangeInclusive;

    pub const JAW: RangeInclusive<usize> = 0..=16;
    pub const BROWS: RangeInclusive<usize> = 17..=26;
    pub const NOSE: RangeInclusive<usize> = 27..=35;
    pub const LOWER_NOSE: RangeInclusive<usize> = 29..=35;
    pub const EYES: RangeInclusive<usize> = 36..=47;
    pub const MOUTH: RangeInclusive<usize> = 48..=67;
    pub const FOREHEAD: RangeInclusive<usize> = 68..=80;
    pub const INNER: RangeInclusive<usize> = 17..=67;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HullVariant {
    /// Convex hull of all 81 landmarks.
    Full,
    /// Jawline plus lower nose.
    LowerFace,
    /// Brows, eyes, nose and mouth.
    Components,
    /// Full hull grown by a random radius.
    Dilated,
}

impl HullVariant {
    pub const ALL: [HullVariant; 4] = [
        HullVariant::Full,
        HullVariant::LowerFace,
        HullVariant::Components,
        HullVariant::Dilated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HullVariant::Full => "full",
            HullVariant::LowerFace => "lower_face",
            HullVariant::Components => "components",
            HullVariant::Dilated => "dilated",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HullConfig {
    /// Variants drawn uniformly.
    pub variants: Vec<HullVariant>,
    /// Dilation radius range as a fraction of `min(H, W)`.
    pub dilation: [f32; 2],
}

impl Default for HullConfig {
    fn default() -> Self {
        Self {
            variants: HullVariant::ALL.to_vec(),
            dilation: [0.02, 0.06],
        }
    }
}

/// Blending mask with the provenance of its support.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendMask {
    pub mask: Array2<f32>,
    pub hull_variant: HullVariant,
    pub deformed: bool,
}

/// Convex hull by Andrew's monotone chain. Collinear points are dropped; the
/// winding direction is unspecified.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.x as f64, p.y as f64)).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts.into_iter().map(|(x, y)| Point::new(x as f32, y as f32)).collect();
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull.into_iter().map(|(x, y)| Point::new(x as f32, y as f32)).collect()
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x as f64 * b.y as f64 - b.x as f64 * a.y as f64
        })
        .sum();
    twice.abs() / 2.0
}

/// Rasterizes a convex polygon: a pixel is set when its center lies inside or on the boundary.
pub fn rasterize_convex(poly: &[Point], height: usize, width: usize) -> Array2<f32> {
    let mut mask = Array2::zeros((height, width));
    if poly.len() < 3 {
        return mask;
    }
    let orientation = signed_area(poly).signum();
    let (mut x_min, mut x_max, mut y_min, mut y_max) = bounds(poly);
    x_min = x_min.floor().max(0.0);
    y_min = y_min.floor().max(0.0);
    x_max = x_max.ceil().min(width as f64);
    y_max = y_max.ceil().min(height as f64);
    for y in y_min as usize..y_max as usize {
        for x in x_min as usize..x_max as usize {
            let c = (x as f64 + 0.5, y as f64 + 0.5);
            if inside_convex(poly, c, orientation) {
                mask[[y, x]] = 1.0;
            }
        }
    }
    mask
}

fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x as f64 * b.y as f64 - b.x as f64 * a.y as f64
        })
        .sum::<f64>()
        / 2.0
}

fn bounds(poly: &[Point]) -> (f64, f64, f64, f64) {
    poly.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(x0, x1, y0, y1), p| {
            (
                x0.min(p.x as f64),
                x1.max(p.x as f64),
                y0.min(p.y as f64),
                y1.max(p.y as f64),
            )
        },
    )
}

fn inside_convex(poly: &[Point], c: (f64, f64), orientation: f64) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let cross = (b.x as f64 - a.x as f64) * (c.1 - a.y as f64)
            - (b.y as f64 - a.y as f64) * (c.0 - a.x as f64);
        cross * orientation >= -1e-9
    })
}

fn distance_to_segment(p: (f64, f64), a: Point, b: Point) -> f64 {
    let (ax, ay, bx, by) = (a.x as f64, a.y as f64, b.x as f64, b.y as f64);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - ax) * dx + (p.1 - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (ax + t * dx, ay + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Rasterizes the Minkowski sum of a convex polygon and a disk of `radius` pixels.
pub fn rasterize_dilated(poly: &[Point], radius: f64, height: usize, width: usize) -> Array2<f32> {
    let mut mask = rasterize_convex(poly, height, width);
    let n = poly.len();
    let (x0, x1, y0, y1) = bounds(poly);
    let xs = ((x0 - radius).floor().max(0.0) as usize)..((x1 + radius).ceil().min(width as f64) as usize);
    let ys = ((y0 - radius).floor().max(0.0) as usize)..((y1 + radius).ceil().min(height as f64) as usize);
    for y in ys {
        for x in xs.clone() {
            if mask[[y, x]] > 0.0 {
                continue;
            }
            let c = (x as f64 + 0.5, y as f64 + 0.5);
            if (0..n).any(|i| distance_to_segment(c, poly[i], poly[(i + 1) % n]) <= radius) {
                mask[[y, x]] = 1.0;
            }
        }
    }
    mask
}

fn select(landmarks: &[Point], ranges: &[std::ops::RangeInclusive<usize>]) -> Vec<Point> {
    ranges
        .iter()
        .flat_map(|r| r.clone().map(|i| landmarks[i]))
        .collect()
}

/// Binary mask of a specific hull variant. `dilation_px` is only used by [`HullVariant::Dilated`].
pub fn hull_mask(
    landmarks: &[Point],
    variant: HullVariant,
    dilation_px: f64,
    height: usize,
    width: usize,
) -> Result<Array2<f32>> {
    if landmarks.len() != NUM_LANDMARKS {
        return Err(Error::Data(format!(
            "hull needs {NUM_LANDMARKS} landmarks, got {}",
            landmarks.len()
        )));
    }
    let points = match variant {
        HullVariant::Full | HullVariant::Dilated => landmarks.to_vec(),
        HullVariant::LowerFace => select(landmarks, &[layout::JAW, layout::LOWER_NOSE]),
        HullVariant::Components => select(landmarks, &[layout::INNER]),
    };
    let hull = convex_hull(&points);
    if polygon_area(&hull) < 1e-6 {
        return Err(Error::Data(format!(
            "degenerate landmarks: {} hull has zero area",
            variant.as_str()
        )));
    }
    let mask = match variant {
        HullVariant::Dilated => rasterize_dilated(&hull, dilation_px, height, width),
        _ => rasterize_convex(&hull, height, width),
    };
    if mask.iter().all(|&v| v == 0.0) {
        return Err(Error::Data(format!(
            "{} hull covers no pixel centers",
            variant.as_str()
        )));
    }
    Ok(mask)
}

/// Initial blending mask: a uniformly drawn hull variant from `cfg.variants`.
pub fn build_hull_mask(
    landmarks: &[Point],
    height: usize,
    width: usize,
    cfg: &HullConfig,
    rng: &mut Rng,
) -> Result<BlendMask> {
    if cfg.variants.is_empty() {
        return Err(Error::Config("hull.variants must not be empty".into()));
    }
    let variant = cfg.variants[rng.random_range(0..cfg.variants.len())];
    let radius_frac = if cfg.dilation[1] > cfg.dilation[0] {
        rng.random_range(cfg.dilation[0]..=cfg.dilation[1])
    } else {
        cfg.dilation[0]
    };
    let radius = radius_frac as f64 * height.min(width) as f64;
    let mask = hull_mask(landmarks, variant, radius, height, width)?;
    Ok(BlendMask {
        mask,
        hull_variant: variant,
        deformed: false,
    })
}
