//! Face detection and landmark adapters.
//!
//! At desk scale detections come from annotation sidecars: next to each
//! `frame_XXXX.png` sits `frame_XXXX.json` listing face boxes with their 81
//! landmarks, in pixels with the origin at the top-left corner. A frame
//! without a sidecar has no detectable face.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face::{BBox, Point, NUM_LANDMARKS};

/// One detected face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: [i32; 4],
    pub landmarks: Vec<[f32; 2]>,
}

impl Detection {
    pub fn new(bbox: &BBox, landmarks: &[Point]) -> Self {
        Self {
            bbox: [bbox.x0, bbox.y0, bbox.x1, bbox.y1],
            landmarks: landmarks.iter().map(|p| [p.x, p.y]).collect(),
        }
    }

    pub fn bbox(&self) -> Result<BBox> {
        let [x0, y0, x1, y1] = self.bbox;
        BBox::new(x0, y0, x1, y1)
    }

    pub fn points(&self) -> Vec<Point> {
        self.landmarks.iter().map(|&[x, y]| Point::new(x, y)).collect()
    }
}

/// Contents of an annotation sidecar.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub faces: Vec<Detection>,
    /// Manipulation mask image, relative to the sidecar's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

pub trait DetectionAdapter: Send + Sync {
    fn name(&self) -> &str;

    /// Face boxes within the `width x height` frame.
    fn detect(&self, frame: &Path, width: usize, height: usize) -> Result<Vec<BBox>>;

    /// The 81 landmarks of the face in `bbox`.
    fn landmarks(&self, frame: &Path, bbox: &BBox) -> Result<Vec<Point>>;

    /// Manipulation mask of the frame, when the corpus provides one.
    fn manipulation_mask(&self, _frame: &Path) -> Result<Option<Array2<f32>>> {
        Ok(None)
    }
}

pub fn sidecar_path(frame: &Path) -> PathBuf {
    frame.with_extension("json")
}

/// Reads detections from annotation sidecars.
#[derive(Clone, Copy, Debug, Default)]
pub struct SidecarDetector;

impl SidecarDetector {
    pub fn read(&self, frame: &Path) -> Result<Sidecar> {
        let path = sidecar_path(frame);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Sidecar::default()),
            Err(e) => return Err(Error::io(path, e)),
        };
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

impl DetectionAdapter for SidecarDetector {
    fn name(&self) -> &str {
        "sidecar"
    }

    fn detect(&self, frame: &Path, width: usize, height: usize) -> Result<Vec<BBox>> {
        let (w, h) = (width as i32, height as i32);
        let mut boxes = Vec::new();
        for face in self.read(frame)?.faces {
            let [x0, y0, x1, y1] = face.bbox;
            match BBox::new(x0.clamp(0, w), y0.clamp(0, h), x1.clamp(0, w), y1.clamp(0, h)) {
                Ok(b) => boxes.push(b),
                Err(_) => log::warn!("{}: dropping box {:?} outside the frame", frame.display(), face.bbox),
            }
        }
        Ok(boxes)
    }

    fn landmarks(&self, frame: &Path, bbox: &BBox) -> Result<Vec<Point>> {
        let sidecar = self.read(frame)?;
        // Boxes may have been clamped by `detect`; match on the clamped overlap.
        let face = sidecar
            .faces
            .iter()
            .find(|f| {
                let [x0, y0, x1, y1] = f.bbox;
                x0.max(bbox.x0) == bbox.x0 && y0.max(bbox.y0) == bbox.y0 && x1.min(bbox.x1) == bbox.x1 && y1.min(bbox.y1) == bbox.y1
            })
            .ok_or_else(|| Error::Data(format!("{}: no landmarks for box {bbox:?}", frame.display())))?;
        if face.landmarks.len() != NUM_LANDMARKS {
            return Err(Error::Data(format!(
                "{}: expected {NUM_LANDMARKS} landmarks, found {}",
                frame.display(),
                face.landmarks.len()
            )));
        }
        Ok(face.points())
    }

    fn manipulation_mask(&self, frame: &Path) -> Result<Option<Array2<f32>>> {
        match self.read(frame)?.mask {
            Some(name) => {
                let dir = frame.parent().unwrap_or(Path::new("."));
                Ok(Some(crate::io::read_gray(&dir.join(name))?))
            }
            None => Ok(None),
        }
    }
}
