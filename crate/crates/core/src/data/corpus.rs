//! Procedural toy corpus in the on-disk corpus layout.
//!
//! Genuine videos are clips of a toy face; fake videos are the same kind of
//! clip with every frame replaced by a reconstructed blended image. Each frame
//! gets an annotation sidecar, fake frames a manipulation mask. Failures can
//! be injected: frames without a sidecar, videos with no detectable face at
//! all, and decoy second detections.

use std::path::Path;

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::detect::{sidecar_path, Detection, Sidecar};
use super::manifest::SplitSpec;
use super::toy::ToyFace;
use crate::error::{Error, Result};
use crate::face::{BBox, Label, Point, Provenance, Split, NUM_LANDMARKS};
use crate::io;
use crate::rng::SeedStream;
use crate::synth::adapter::ReconstructorAdapter;
use crate::synth::{generate_rbi, SynthConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyCorpusConfig {
    pub dataset: String,
    /// Videos per label.
    pub videos: usize,
    /// Videos per label assigned to train, val and test, in order.
    pub split: [usize; 3],
    pub frames_per_video: usize,
    pub frame_size: usize,
    /// Probability that a frame has no annotation.
    pub p_missing_face: f64,
    /// Probability that a frame carries an extra, smaller decoy detection.
    pub p_decoy: f64,
    /// Test videos per label whose frames have no annotations at all.
    pub faceless_videos: usize,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            dataset: "toy".into(),
            videos: 10,
            split: [6, 2, 2],
            frames_per_video: 8,
            frame_size: 80,
            p_missing_face: 0.0,
            p_decoy: 0.0,
            faceless_videos: 0,
        }
    }
}

impl ToyCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.split.iter().sum::<usize>() != self.videos {
            return Err(Error::Config(format!("split {:?} does not add up to {} videos", self.split, self.videos)));
        }
        if self.faceless_videos > self.split[2] {
            return Err(Error::Config("faceless videos must fit in the test split".into()));
        }
        if self.frame_size % 8 != 0 || self.frame_size < 32 {
            return Err(Error::Config(format!("frame size {} must be a multiple of 8, at least 32", self.frame_size)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpusSummary {
    pub videos: usize,
    pub frames: usize,
    pub missing_faces: usize,
    pub decoys: usize,
    pub split: SplitSpec,
}

fn upsample2(field: &Array2<f32>, h: usize, w: usize) -> Array2<f32> {
    Array2::from_shape_fn((h, w), |(y, x)| field[[y / 2, x / 2]])
}

fn decoy(size: usize, rng: &mut crate::rng::Rng) -> Detection {
    let side = (size / 6).max(4) as i32;
    let x0 = rng.random_range(0..(size as i32 - side));
    let bbox = BBox::new(x0, 0, x0 + side, side).expect("positive side");
    let landmarks: Vec<Point> = (0..NUM_LANDMARKS)
        .map(|i| Point::new(x0 as f32 + (i % 9) as f32 * side as f32 / 9.0, (i / 9) as f32 * side as f32 / 9.0))
        .collect();
    Detection::new(&bbox, &landmarks)
}

/// Writes a toy corpus under `root` plus `root/split.json`.
pub fn write_toy_corpus(
    root: &Path,
    cfg: &ToyCorpusConfig,
    adapter: &dyn ReconstructorAdapter,
    synth: &SynthConfig,
    seed: SeedStream,
) -> Result<ToyCorpusSummary> {
    cfg.validate()?;
    let size = cfg.frame_size;
    let mut summary = ToyCorpusSummary::default();
    for label in [Label::Genuine, Label::Fake] {
        let stream = seed.child(label.as_str());
        for v in 0..cfg.videos {
            let split = match v {
                v if v < cfg.split[0] => Split::Train,
                v if v < cfg.split[0] + cfg.split[1] => Split::Val,
                _ => Split::Test,
            };
            let faceless = split == Split::Test && cfg.videos - v <= cfg.faceless_videos;
            let prefix = if label == Label::Genuine { "real" } else { "fake" };
            let video_id = format!("{prefix}{v:03}");
            let dir = root.join(&cfg.dataset).join(label.as_str()).join(&video_id);
            let vs = stream.index(v as u64);
            let identity = ToyFace::sample(&mut vs.child("identity").rng());
            let mut rng = vs.child("annotations").rng();
            for t in 0..cfg.frames_per_video {
                let face = identity.frame(t);
                let provenance = Provenance {
                    video_id: video_id.clone(),
                    frame_idx: t,
                    split,
                };
                let record = face.record(size, provenance)?;
                let frame_path = dir.join(format!("frame_{t:04}.png"));
                let mut sidecar = Sidecar {
                    faces: vec![Detection::new(&record.bbox, &record.landmarks)],
                    mask: None,
                };
                let image = if label == Label::Fake {
                    let sample = generate_rbi(&record, adapter, synth, &vs.child("rbi").index(t as u64))?;
                    let mask_name = format!("frame_{t:04}_mask.png");
                    io::write_gray16(&dir.join(&mask_name), &upsample2(&sample.mask_target, size, size))?;
                    sidecar.mask = Some(mask_name);
                    sample.image
                } else {
                    record.image
                };
                io::write_rgb8(&frame_path, &image)?;
                summary.frames += 1;
                let missing = rng.random::<f64>() < cfg.p_missing_face;
                let with_decoy = rng.random::<f64>() < cfg.p_decoy;
                if faceless || missing {
                    summary.missing_faces += 1;
                    continue;
                }
                if with_decoy {
                    sidecar.faces.push(decoy(size, &mut rng));
                    summary.decoys += 1;
                }
                let json = serde_json::to_string(&sidecar).expect("serializable");
                io::write_atomic(&sidecar_path(&frame_path), json.as_bytes())?;
            }
            summary.videos += 1;
            match split {
                Split::Train => summary.split.train.push(video_id),
                Split::Val => summary.split.val.push(video_id),
                Split::Test => summary.split.test.push(video_id),
            }
        }
    }
    let json = serde_json::to_string_pretty(&summary.split).expect("serializable");
    io::write_atomic(&root.join("split.json"), json.as_bytes())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::detect::SidecarDetector;
    use crate::data::manifest::{build_manifest, ManifestOptions};
    use crate::synth::adapter::IdentityAdapter;

    fn small() -> ToyCorpusConfig {
        ToyCorpusConfig {
            videos: 3,
            split: [1, 1, 1],
            frames_per_video: 3,
            frame_size: 48,
            ..Default::default()
        }
    }

    #[test]
    fn corpus_manifest_counts_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let summary = write_toy_corpus(dir.path(), &small(), &IdentityAdapter, &SynthConfig::default(), SeedStream::root(1)).unwrap();
        assert_eq!((summary.videos, summary.frames), (6, 18));
        let spec = SplitSpec::load(&dir.path().join("split.json")).unwrap();
        let m = build_manifest(dir.path(), &spec, &SidecarDetector, ManifestOptions::default()).unwrap();
        assert_eq!(m.records.len(), 18);
        assert_eq!(m.video_counts().values().copied().collect::<Vec<_>>(), vec![2, 2, 2]);
        let again = build_manifest(dir.path(), &spec, &SidecarDetector, ManifestOptions::default()).unwrap();
        assert_eq!(m.to_csv().unwrap(), again.to_csv().unwrap());
        assert!(m.records.iter().filter(|r| r.label == Label::Fake).count() == 9);
    }

    #[test]
    fn decoys_resolve_to_the_face() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ToyCorpusConfig {
            p_decoy: 1.0,
            ..small()
        };
        write_toy_corpus(dir.path(), &cfg, &IdentityAdapter, &SynthConfig::default(), SeedStream::root(2)).unwrap();
        let spec = SplitSpec::load(&dir.path().join("split.json")).unwrap();
        let m = build_manifest(dir.path(), &spec, &SidecarDetector, ManifestOptions::default()).unwrap();
        assert_eq!(m.records.len(), 18);
        assert!(m.records.iter().all(|r| r.bbox.area() > (48 / 6) * (48 / 6)));
    }
}
