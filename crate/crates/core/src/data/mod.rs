//! Corpus ingestion: frame sampling, detection sidecars, multi-face
//! resolution, face cropping, manifests and the crop cache.

pub mod cache;
pub mod corpus;
pub mod crop;
pub mod detect;
pub mod manifest;
pub mod toy;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face::{BBox, Label, Split};

pub use cache::CropCache;
pub use crop::{crop_and_resize, CropSpec, CropWindow};
pub use detect::{Detection, DetectionAdapter, SidecarDetector};
pub use manifest::{build_manifest, Manifest, ManifestRecord, SplitSpec};

/// Frames drawn per training video.
pub const TRAIN_FRAMES: usize = 20;
/// Frames scored per video under the frame-level protocol.
pub const FRAME_LEVEL_FRAMES: usize = 5;
/// Frames averaged per video under the video-level protocol.
pub const VIDEO_LEVEL_FRAMES: usize = 32;

/// One video (a directory of frames) of a corpus.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VideoEntry {
    pub dataset: String,
    pub video_id: String,
    /// Frame directory, relative to the corpus root.
    pub path: String,
    pub label: Label,
    /// Manipulation tag; the label name when the corpus gives none.
    pub manipulation: String,
    pub split: Split,
    pub frame_count: usize,
}

/// `n` frame indices evenly spaced over `[0, frame_count - 1]`, endpoints
/// included (`round(linspace)`, ties to even). A single frame is the middle one.
/// Videos shorter than `n` yield all of their frames.
pub fn sample_frames(frame_count: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Param("frame sample size must be at least 1".into()));
    }
    if frame_count < n {
        if frame_count > 0 {
            log::warn!("video has {frame_count} frames, fewer than the {n} requested");
        }
        return Ok((0..frame_count).collect());
    }
    if n == 1 {
        return Ok(vec![(frame_count - 1) / 2]);
    }
    let last = (frame_count - 1) as f64;
    Ok((0..n)
        .map(|i| (i as f64 * last / (n - 1) as f64).round_ties_even() as usize)
        .collect())
}

/// Area of the mask covered by `bbox` (soft masks count fractionally).
pub fn mask_intersection(bbox: &BBox, mask: &Array2<f32>) -> f64 {
    let (h, w) = mask.dim();
    let (x0, x1) = (bbox.x0.clamp(0, w as i32) as usize, bbox.x1.clamp(0, w as i32) as usize);
    let (y0, y1) = (bbox.y0.clamp(0, h as i32) as usize, bbox.y1.clamp(0, h as i32) as usize);
    let mut total = 0.0;
    for y in y0..y1 {
        for x in x0..x1 {
            total += mask[[y, x]].clamp(0.0, 1.0) as f64;
        }
    }
    total
}

fn argmax_first(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Index of the face to keep among several detections: the box with the
/// largest intersection with the manipulation mask, or the largest box when
/// no mask is given or the mask misses every box. Ties go to the lowest index.
pub fn resolve_multi_face(boxes: &[BBox], mask: Option<&Array2<f32>>) -> Result<usize> {
    if boxes.is_empty() {
        return Err(Error::NoFace("detector returned no boxes".into()));
    }
    if let Some(mask) = mask {
        let (i, overlap) = argmax_first(boxes.iter().map(|b| mask_intersection(b, mask)));
        if overlap > 0.0 {
            return Ok(i);
        }
        log::warn!("manipulation mask overlaps no detection; keeping the largest box");
    }
    Ok(argmax_first(boxes.iter().map(|b| b.area() as f64)).0)
}
