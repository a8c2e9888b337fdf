//! Face records shared by corpus ingestion and sample synthesis.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of facial landmarks per face (68-point layout plus 13 forehead points).
pub const NUM_LANDMARKS: usize = 81;

/// Color raster, `(height, width, 3)`, channel values in `[0, 1]`.
pub type Image = Array3<f32>;

/// Landmark in pixel coordinates, origin top-left.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f32,
    pub y: f32,
}

impl Point {
    pub const fn new(x: f32, y: f32) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned box `(x0, y0, x1, y1)` in pixels, exclusive of `x1`/`y1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl BBox {
    pub fn new(x0: i32, y0: i32, x1: i32, y1: i32) -> Result<Self> {
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::Data(format!(
                "degenerate bbox ({x0},{y0},{x1},{y1})"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    /// Smallest integer box enclosing `points`, clamped to a `width x height` frame.
    pub fn enclosing(points: &[Point], width: usize, height: usize) -> Result<Self> {
        let fold = |f: fn(f32, f32) -> f32, init: f32, g: fn(&Point) -> f32| points.iter().map(g).fold(init, f);
        let x0 = fold(f32::min, f32::INFINITY, |p| p.x).floor() as i32;
        let y0 = fold(f32::min, f32::INFINITY, |p| p.y).floor() as i32;
        let x1 = fold(f32::max, f32::NEG_INFINITY, |p| p.x).ceil() as i32;
        let y1 = fold(f32::max, f32::NEG_INFINITY, |p| p.y).ceil() as i32;
        Self::new(x0.max(0), y0.max(0), x1.min(width as i32), y1.min(height as i32))
    }

    pub fn width(&self) -> i32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> i64 {
        self.width() as i64 * self.height() as i64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Genuine,
    Fake,
}

impl Label {
    pub fn as_target(self) -> u8 {
        match self {
            Label::Genuine => 0,
            Label::Fake => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Genuine => "genuine",
            Label::Fake => "fake",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "genuine" | "real" | "0" => Ok(Label::Genuine),
            "fake" | "1" => Ok(Label::Fake),
            other => Err(Error::Data(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub video_id: String,
    pub frame_idx: usize,
    pub split: Split,
}

/// A cropped face with its landmarks.
#[derive(Clone, Debug)]
pub struct FaceRecord {
    pub image: Image,
    pub landmarks: Vec<Point>,
    pub bbox: BBox,
    pub label: Label,
    pub provenance: Provenance,
}

impl FaceRecord {
    pub fn new(
        image: Image,
        landmarks: Vec<Point>,
        bbox: BBox,
        label: Label,
        provenance: Provenance,
    ) -> Result<Self> {
        let record = Self {
            image,
            landmarks,
            bbox,
            label,
            provenance,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn height(&self) -> usize {
        self.image.dim().0
    }

    pub fn width(&self) -> usize {
        self.image.dim().1
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.image.dim();
        if c != 3 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "face image must be HxWx3, got {h}x{w}x{c}"
            )));
        }
        if self.landmarks.len() != NUM_LANDMARKS {
            return Err(Error::Data(format!(
                "expected {NUM_LANDMARKS} landmarks, got {}",
                self.landmarks.len()
            )));
        }
        for (i, p) in self.landmarks.iter().enumerate() {
            let inside = p.x.is_finite()
                && p.y.is_finite()
                && (0.0..=w as f32).contains(&p.x)
                && (0.0..=h as f32).contains(&p.y);
            if !inside {
                return Err(Error::Data(format!(
                    "landmark {i} at ({}, {}) outside {w}x{h} image",
                    p.x, p.y
                )));
            }
        }
        if self.bbox.x1 <= self.bbox.x0 || self.bbox.y1 <= self.bbox.y0 {
            return Err(Error::Data("degenerate bbox".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn provenance() -> Provenance {
        Provenance {
            video_id: "v".into(),
            frame_idx: 0,
            split: Split::Train,
        }
    }

    #[test]
    fn rejects_out_of_bounds_landmarks() {
        let mut lm = vec![Point::new(1.0, 1.0); NUM_LANDMARKS];
        lm[5] = Point::new(9.0, 1.0);
        let err = FaceRecord::new(
            Image::zeros((8, 8, 3)),
            lm,
            BBox::new(0, 0, 8, 8).unwrap(),
            Label::Genuine,
            provenance(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("landmark 5"));
    }

    #[test]
    fn rejects_degenerate_bbox() {
        assert!(BBox::new(3, 0, 3, 5).is_err());
        assert!(BBox::new(0, 4, 3, 2).is_err());
    }
}
