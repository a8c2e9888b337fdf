//! Corpus manifests.
//!
//! Corpus layout: `<root>/<dataset>/<label>/<video_id>/frame_XXXX.png`, with
//! `<label>` one of `genuine`/`fake`, optionally suffixed with a manipulation
//! name (`fake.swap`), and an annotation sidecar per frame (see
//! [`super::detect`]). A manifest is a CSV of one detected face per frame:
//! `video_id, path, frame_idx, x0, y0, x1, y1, 162 landmark floats, label,
//! dataset, split`. The video list (including videos where no face was found)
//! is written next to it as `<stem>.videos.csv`. Frame indices are positions
//! in the video's sorted frame list.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::detect::DetectionAdapter;
use super::{resolve_multi_face, sample_frames, VideoEntry};
use crate::error::{Error, Result};
use crate::face::{BBox, Label, Point, Split, NUM_LANDMARKS};

/// Video ids per split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        spec.assignments()?;
        Ok(spec)
    }

    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Split of every listed id; an id listed twice is an error.
    pub fn assignments(&self) -> Result<BTreeMap<String, Split>> {
        let mut out = BTreeMap::new();
        for split in Split::ALL {
            for id in self.ids(split) {
                if let Some(prev) = out.insert(id.clone(), split) {
                    return Err(Error::Data(format!(
                        "video `{id}` is assigned to both {} and {}",
                        prev.as_str(),
                        split.as_str()
                    )));
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub video_id: String,
    /// Frame image, relative to the corpus root.
    pub path: String,
    pub frame_idx: usize,
    pub bbox: BBox,
    pub landmarks: Vec<Point>,
    pub label: Label,
    pub dataset: String,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub videos: Vec<VideoEntry>,
    /// Frames or videos skipped during ingestion, one line each.
    pub failures: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ManifestOptions {
    /// Evenly sample this many frames per video; all frames when `None`.
    pub frames_per_video: Option<usize>,
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Frame files `frame_<index>.png` of a video directory, by index.
pub fn list_frames(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut frames = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = file_name(&path);
        let index = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix(".png"))
            .and_then(|s| s.parse::<usize>().ok());
        if let Some(i) = index {
            frames.push((i, path));
        }
    }
    frames.sort();
    Ok(frames)
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn check_field(name: &str, value: &str) -> Result<()> {
    if value.is_empty() || value.contains([',', '"', '\n', '\r']) {
        return Err(Error::Data(format!("{name} `{value}` is empty or contains CSV delimiters")));
    }
    Ok(())
}

/// Walks the corpus, detects one face per sampled frame and assigns splits.
/// Videos absent from the split spec are skipped; ordering is by dataset,
/// label, video id and frame index, so unchanged corpora give identical manifests.
pub fn build_manifest(
    root: &Path,
    split: &SplitSpec,
    detector: &dyn DetectionAdapter,
    options: ManifestOptions,
) -> Result<Manifest> {
    let assignments = split.assignments()?;
    let mut manifest = Manifest::default();
    let mut seen = BTreeSet::new();
    for dataset_dir in sorted_dirs(root)? {
        let dataset = file_name(&dataset_dir);
        for label_dir in sorted_dirs(&dataset_dir)? {
            let label_name = file_name(&label_dir);
            let (label_str, manipulation) = match label_name.split_once('.') {
                Some((l, m)) => (l.to_string(), m.to_string()),
                None => (label_name.clone(), label_name.clone()),
            };
            let label = match Label::parse(&label_str) {
                Ok(l) => l,
                Err(_) => {
                    log::warn!("ignoring {}: not a label directory", label_dir.display());
                    continue;
                }
            };
            for video_dir in sorted_dirs(&label_dir)? {
                let video_id = file_name(&video_dir);
                let Some(&video_split) = assignments.get(&video_id) else {
                    log::warn!("video `{video_id}` is not in the split spec; skipped");
                    continue;
                };
                check_field("video id", &video_id)?;
                check_field("dataset", &dataset)?;
                if !seen.insert(video_id.clone()) {
                    return Err(Error::Data(format!("video id `{video_id}` appears twice in the corpus")));
                }
                let frames = match list_frames(&video_dir) {
                    Ok(f) => f,
                    Err(e) => {
                        log::warn!("skipping video `{video_id}`: {e}");
                        manifest.failures.push(format!("{video_id}: {e}"));
                        continue;
                    }
                };
                manifest.videos.push(VideoEntry {
                    dataset: dataset.clone(),
                    video_id: video_id.clone(),
                    path: relative(root, &video_dir),
                    label,
                    manipulation: manipulation.clone(),
                    split: video_split,
                    frame_count: frames.len(),
                });
                let picks = match options.frames_per_video {
                    Some(n) => sample_frames(frames.len(), n)?,
                    None => (0..frames.len()).collect(),
                };
                for frame_idx in picks {
                    let (_, path) = &frames[frame_idx];
                    match detect_one(detector, path) {
                        Ok((bbox, landmarks)) => manifest.records.push(ManifestRecord {
                            video_id: video_id.clone(),
                            path: relative(root, path),
                            frame_idx,
                            bbox,
                            landmarks,
                            label,
                            dataset: dataset.clone(),
                            split: video_split,
                        }),
                        Err(e) => {
                            log::info!("{video_id} frame {frame_idx}: {e}");
                            manifest.failures.push(format!("{video_id}/{frame_idx}: {e}"));
                        }
                    }
                }
            }
        }
    }
    for id in assignments.keys().filter(|id| !seen.contains(*id)) {
        log::warn!("split spec lists `{id}`, which is not in the corpus");
    }
    Ok(manifest)
}

fn detect_one(detector: &dyn DetectionAdapter, path: &Path) -> Result<(BBox, Vec<Point>)> {
    let (w, h) = image::image_dimensions(path)?;
    let boxes = detector.detect(path, w as usize, h as usize)?;
    let mask = if boxes.len() > 1 { detector.manipulation_mask(path)? } else { None };
    let bbox = boxes[resolve_multi_face(&boxes, mask.as_ref())?];
    let landmarks = detector.landmarks(path, &bbox)?;
    Ok((bbox, landmarks))
}

fn header() -> Vec<String> {
    let mut h: Vec<String> = ["video_id", "path", "frame_idx", "x0", "y0", "x1", "y1"].map(String::from).to_vec();
    for i in 0..NUM_LANDMARKS {
        h.push(format!("l{i}_x"));
        h.push(format!("l{i}_y"));
    }
    h.extend(["label", "dataset", "split"].map(String::from));
    h
}

fn parse<T: std::str::FromStr>(field: &str, what: &str) -> Result<T> {
    field.parse().map_err(|_| Error::Data(format!("bad {what} `{field}` in manifest")))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

impl Manifest {
    pub fn videos_path(path: &Path) -> PathBuf {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        path.with_file_name(format!("{stem}.videos.csv"))
    }

    pub fn to_csv(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Data(e.to_string());
        w.write_record(header()).map_err(io)?;
        for r in &self.records {
            let mut row = vec![
                r.video_id.clone(),
                r.path.clone(),
                r.frame_idx.to_string(),
                r.bbox.x0.to_string(),
                r.bbox.y0.to_string(),
                r.bbox.x1.to_string(),
                r.bbox.y1.to_string(),
            ];
            for p in &r.landmarks {
                row.push(p.x.to_string());
                row.push(p.y.to_string());
            }
            row.extend([r.label.as_str().to_string(), r.dataset.clone(), r.split.as_str().to_string()]);
            w.write_record(&row).map_err(io)?;
        }
        let manifest = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for v in &self.videos {
            w.serialize(v).map_err(io)?;
        }
        let videos = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok((manifest, videos))
    }

    /// Writes the manifest and its video list atomically.
    pub fn write(&self, path: &Path) -> Result<()> {
        let (manifest, videos) = self.to_csv()?;
        crate::io::write_atomic(&Self::videos_path(path), &videos)?;
        crate::io::write_atomic(path, &manifest)
    }

    /// Reads a manifest, re-checking split disjointness.
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| csv_err(path, e))?;
            let n = 7 + 2 * NUM_LANDMARKS + 3;
            if row.len() != n {
                return Err(Error::Data(format!("manifest row has {} fields, expected {n}", row.len())));
            }
            let landmarks = (0..NUM_LANDMARKS)
                .map(|i| Ok(Point::new(parse(&row[7 + 2 * i], "x")?, parse(&row[8 + 2 * i], "y")?)))
                .collect::<Result<Vec<_>>>()?;
            records.push(ManifestRecord {
                video_id: row[0].to_string(),
                path: row[1].to_string(),
                frame_idx: parse(&row[2], "frame index")?,
                bbox: BBox::new(parse(&row[3], "x0")?, parse(&row[4], "y0")?, parse(&row[5], "x1")?, parse(&row[6], "y1")?)?,
                landmarks,
                label: Label::parse(&row[n - 3])?,
                dataset: row[n - 2].to_string(),
                split: Split::parse(&row[n - 1])?,
            });
        }
        let videos_path = Self::videos_path(path);
        let videos = if videos_path.exists() {
            let mut reader = csv::Reader::from_path(&videos_path).map_err(|e| csv_err(&videos_path, e))?;
            reader
                .deserialize()
                .collect::<std::result::Result<Vec<VideoEntry>, _>>()
                .map_err(|e| csv_err(&videos_path, e))?
        } else {
            Vec::new()
        };
        let manifest = Self {
            records,
            videos,
            failures: Vec::new(),
        };
        manifest.check_disjoint()?;
        Ok(manifest)
    }

    /// No video id may carry two splits.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut splits: BTreeMap<&str, Split> = BTreeMap::new();
        let pairs = self
            .records
            .iter()
            .map(|r| (r.video_id.as_str(), r.split))
            .chain(self.videos.iter().map(|v| (v.video_id.as_str(), v.split)));
        for (id, split) in pairs {
            if let Some(prev) = splits.insert(id, split) {
                if prev != split {
                    return Err(Error::Data(format!("video `{id}` appears in both {} and {}", prev.as_str(), split.as_str())));
                }
            }
        }
        Ok(())
    }

    pub fn video_counts(&self) -> BTreeMap<Split, usize> {
        let mut out = BTreeMap::new();
        for v in &self.videos {
            *out.entry(v.split).or_insert(0) += 1;
        }
        out
    }

    pub fn filter_split(&self, split: Split) -> Self {
        Self {
            records: self.records.iter().filter(|r| r.split == split).cloned().collect(),
            videos: self.videos.iter().filter(|v| v.split == split).cloned().collect(),
            failures: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_ids_across_splits_are_rejected() {
        let spec = SplitSpec {
            train: vec!["a".into(), "b".into()],
            val: vec![],
            test: vec!["b".into()],
        };
        assert!(matches!(spec.assignments(), Err(Error::Data(_))));
    }

    #[test]
    fn manifest_csv_round_trips() {
        let record = ManifestRecord {
            video_id: "v1".into(),
            path: "ds/genuine/v1/frame_0003.png".into(),
            frame_idx: 3,
            bbox: BBox::new(1, 2, 30, 40).unwrap(),
            landmarks: (0..NUM_LANDMARKS).map(|i| Point::new(i as f32 * 0.25, 0.1 + i as f32)).collect(),
            label: Label::Genuine,
            dataset: "ds".into(),
            split: Split::Test,
        };
        let manifest = Manifest {
            records: vec![record],
            videos: vec![VideoEntry {
                dataset: "ds".into(),
                video_id: "v1".into(),
                path: "ds/genuine/v1".into(),
                label: Label::Genuine,
                manipulation: "genuine".into(),
                split: Split::Test,
                frame_count: 8,
            }],
            failures: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        manifest.write(&path).unwrap();
        assert_eq!(Manifest::read(&path).unwrap(), manifest);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap().split(',').count(), 7 + 162 + 3);
    }

    #[test]
    fn conflicting_rows_fail_at_load() {
        let mut m = Manifest::default();
        for split in [Split::Train, Split::Test] {
            m.videos.push(VideoEntry {
                dataset: "d".into(),
                video_id: "same".into(),
                path: "p".into(),
                label: Label::Fake,
                manipulation: "fake".into(),
                split,
                frame_count: 1,
            });
        }
        assert!(m.check_disjoint().is_err());
    }
}
