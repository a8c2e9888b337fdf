//! Content-addressed cache of prepared face crops.
//!
//! Crops are stored as 8-bit PNGs, so a face loaded through the cache and a
//! freshly computed one are both quantized to 8 bits and agree byte for byte.
//! Entries are keyed by the video, frame, source-frame digest, box and crop
//! spec, and written with a temp-file-then-rename so readers never see a
//! partial entry.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::crop::{crop_and_resize, CropSpec, CropWindow};
use super::manifest::ManifestRecord;
use crate::error::{Error, Result};
use crate::face::{BBox, FaceRecord, Point, Provenance};
use crate::io;

/// Environment variable naming the cache root.
pub const CACHE_ENV: &str = "MFRN_CACHE";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CropCache {
    root: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    landmarks: Vec<[f32; 2]>,
    window: CropWindow,
}

impl CropCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// The cache named by `MFRN_CACHE`, if set.
    pub fn from_env() -> Option<Self> {
        std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(Self::new)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn key(record: &ManifestRecord, frame_digest: &str, spec: &CropSpec) -> String {
        let b = record.bbox;
        let canonical = format!(
            "video={}\nframe={}\nsource={frame_digest}\nbbox={},{},{},{}\nmargin={}\nsize={}\n",
            record.video_id, record.frame_idx, b.x0, b.y0, b.x1, b.y1, spec.margin, spec.size
        );
        io::sha256_hex(canonical.as_bytes())
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf) {
        let dir = self.root.join(&key[..2]);
        (dir.join(format!("{key}.png")), dir.join(format!("{key}.json")))
    }
}

fn to_record(record: &ManifestRecord, image: crate::face::Image, landmarks: Vec<Point>, window: &CropWindow) -> Result<FaceRecord> {
    let corner = |x: i32, y: i32| window.to_crop(Point::new(x as f32, y as f32));
    let (a, b) = (corner(record.bbox.x0, record.bbox.y0), corner(record.bbox.x1, record.bbox.y1));
    let size = window.size as i32;
    let bbox = BBox::new(
        (a.x.round() as i32).clamp(0, size - 1),
        (a.y.round() as i32).clamp(0, size - 1),
        (b.x.round() as i32).clamp(1, size),
        (b.y.round() as i32).clamp(1, size),
    )?;
    FaceRecord::new(
        image,
        landmarks,
        bbox,
        record.label,
        Provenance {
            video_id: record.video_id.clone(),
            frame_idx: record.frame_idx,
            split: record.split,
        },
    )
}

/// Loads the face of one manifest row: crop, resize and 8-bit quantization,
/// served from `cache` when an entry exists.
pub fn load_face(root: &Path, record: &ManifestRecord, spec: &CropSpec, cache: Option<&CropCache>) -> Result<FaceRecord> {
    let frame_path = root.join(&record.path);
    let bytes = std::fs::read(&frame_path).map_err(|e| Error::io(&frame_path, e))?;
    let key = cache.map(|_| CropCache::key(record, &io::sha256_hex(&bytes), spec));
    if let (Some(cache), Some(key)) = (cache, key.as_deref()) {
        let (png, json) = cache.paths(key);
        if png.exists() && json.exists() {
            let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
            let entry: Entry = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", json.display())))?;
            let landmarks = entry.landmarks.iter().map(|&[x, y]| Point::new(x, y)).collect();
            return to_record(record, io::read_rgb(&png)?, landmarks, &entry.window);
        }
    }
    let frame = image::load_from_memory(&bytes)?.into_rgb32f();
    let (w, h) = frame.dimensions();
    let frame = crate::face::Image::from_shape_vec((h as usize, w as usize, 3), frame.into_raw())
        .map_err(|e| Error::Shape(e.to_string()))?;
    let (crop, landmarks, window) = crop_and_resize(&frame, &record.bbox, &record.landmarks, spec)?;
    let crop = io::quantize_image8(&crop);
    if let (Some(cache), Some(key)) = (cache, key.as_deref()) {
        let (png, json) = cache.paths(key);
        std::fs::create_dir_all(png.parent().unwrap()).map_err(|e| Error::io(&png, e))?;
        let entry = Entry {
            landmarks: landmarks.iter().map(|p| [p.x, p.y]).collect(),
            window,
        };
        io::write_rgb8(&png, &crop)?;
        io::write_atomic(&json, serde_json::to_string(&entry).expect("serializable").as_bytes())?;
    }
    to_record(record, crop, landmarks, &window)
}
