//! Evaluation protocols, AUC reports, the λ sweep and prediction overlays.

pub mod auc;
pub mod plot;
pub mod sweep;
pub mod visualize;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::cache::{load_face, CropCache};
use crate::data::crop::CropSpec;
use crate::data::manifest::{Manifest, ManifestRecord};
use crate::data::{sample_frames, FRAME_LEVEL_FRAMES, VIDEO_LEVEL_FRAMES};
use crate::error::{Error, Result};
use crate::face::{FaceRecord, Image, Label};
use crate::model::{images_to_tensor, Mfrn, Mode};

pub use auc::{auc, pairwise_auc, roc_curve};

/// Score of a video none of whose sampled frames yielded a face.
pub const NO_FACE_SCORE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Frame,
    Video,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub unit_id: String,
    pub video_id: String,
    /// Frame index for frame rows.
    pub frame_idx: Option<usize>,
    pub granularity: Granularity,
    pub score: f64,
    pub label: u8,
    pub dataset: String,
    pub manipulation: String,
    /// Frames that contributed to the score.
    pub frames_used: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    /// Sorts by (video id, frame index) and checks the table invariants.
    pub fn finalize(mut self) -> Result<Self> {
        self.rows.sort_by(|a, b| (&a.video_id, a.frame_idx, a.granularity).cmp(&(&b.video_id, b.frame_idx, b.granularity)));
        let mut seen = BTreeSet::new();
        for r in &self.rows {
            if !r.score.is_finite() || !(0.0..=1.0).contains(&r.score) {
                return Err(Error::Numeric(format!("{}: score {} outside [0, 1]", r.unit_id, r.score)));
            }
            if r.label > 1 {
                return Err(Error::Data(format!("{}: label {} is not binary", r.unit_id, r.label)));
            }
            if !seen.insert((r.granularity, r.unit_id.clone())) {
                return Err(Error::Data(format!("duplicate unit `{}`", r.unit_id)));
            }
        }
        Ok(self)
    }

    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.score).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.label).collect()
    }
}

/// Scores face crops with the fake-class probability.
pub trait FrameScorer {
    fn score(&self, faces: &[&Image]) -> Result<Vec<f64>>;
}

/// Batched inference with a trained network.
pub struct ModelScorer<'a> {
    pub model: &'a Mfrn,
    pub batch: usize,
}

impl FrameScorer for ModelScorer<'_> {
    fn score(&self, faces: &[&Image]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(faces.len());
        for chunk in faces.chunks(self.batch.max(1)) {
            let x = images_to_tensor(chunk, self.model.dtype())?;
            let p = self.model.forward(&x, Mode::Eval)?.p_fake;
            out.extend(p.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?);
        }
        if let Some(bad) = out.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("model produced score {bad}")));
        }
        Ok(out)
    }
}

/// Where face crops come from.
pub struct FaceSource<'a> {
    pub root: &'a Path,
    pub crop: CropSpec,
    pub cache: Option<&'a CropCache>,
}

impl FaceSource<'_> {
    fn load(&self, record: &ManifestRecord) -> Option<FaceRecord> {
        match load_face(self.root, record, &self.crop, self.cache) {
            Ok(face) => Some(face),
            Err(e) => {
                log::warn!("{} frame {}: {e}", record.video_id, record.frame_idx);
                None
            }
        }
    }
}

fn label_of(label: Label) -> u8 {
    label.as_target()
}

/// Sampled frames of every video that have a usable face, in video order.
pub(crate) fn sampled_faces(
    manifest: &Manifest,
    source: &FaceSource,
    frames: usize,
) -> Result<Vec<(usize, Vec<(usize, FaceRecord)>)>> {
    let mut by_frame: BTreeMap<(&str, usize), &ManifestRecord> = BTreeMap::new();
    for r in &manifest.records {
        by_frame.insert((r.video_id.as_str(), r.frame_idx), r);
    }
    let mut out = Vec::new();
    for (vi, video) in manifest.videos.iter().enumerate() {
        let mut faces = Vec::new();
        for idx in sample_frames(video.frame_count, frames)? {
            match by_frame.get(&(video.video_id.as_str(), idx)) {
                Some(record) => {
                    if let Some(face) = source.load(record) {
                        faces.push((idx, face));
                    }
                }
                None => log::info!("{} frame {idx}: no face extracted", video.video_id),
            }
        }
        out.push((vi, faces));
    }
    Ok(out)
}

fn score_faces(scorer: &dyn FrameScorer, faces: &[(usize, FaceRecord)]) -> Result<Vec<f64>> {
    if faces.is_empty() {
        return Ok(Vec::new());
    }
    let images: Vec<&Image> = faces.iter().map(|(_, f)| &f.image).collect();
    let scores = scorer.score(&images)?;
    if scores.len() != images.len() {
        return Err(Error::Shape(format!("scorer returned {} scores for {} faces", scores.len(), images.len())));
    }
    Ok(scores)
}

/// Frame-level protocol: `frames` evenly sampled frames per video, each its
/// own unit; frames without a face are skipped.
pub fn frame_level_eval(manifest: &Manifest, source: &FaceSource, scorer: &dyn FrameScorer, frames: usize) -> Result<ScoreTable> {
    let mut table = ScoreTable::default();
    for (vi, faces) in sampled_faces(manifest, source, frames)? {
        let video = &manifest.videos[vi];
        for ((idx, _), score) in faces.iter().zip(score_faces(scorer, &faces)?) {
            table.rows.push(ScoreRow {
                unit_id: format!("{}/{idx:04}", video.video_id),
                video_id: video.video_id.clone(),
                frame_idx: Some(*idx),
                granularity: Granularity::Frame,
                score,
                label: label_of(video.label),
                dataset: video.dataset.clone(),
                manipulation: video.manipulation.clone(),
                frames_used: 1,
            });
        }
    }
    table.finalize()
}

/// Mean of the available frame scores, or [`NO_FACE_SCORE`] when there are none.
pub fn aggregate_video(frame_scores: &[f64]) -> f64 {
    if frame_scores.is_empty() {
        NO_FACE_SCORE
    } else {
        frame_scores.iter().sum::<f64>() / frame_scores.len() as f64
    }
}

/// Video-level protocol: the mean score over `frames` evenly sampled frames.
pub fn video_level_eval(manifest: &Manifest, source: &FaceSource, scorer: &dyn FrameScorer, frames: usize) -> Result<ScoreTable> {
    let mut table = ScoreTable::default();
    for (vi, faces) in sampled_faces(manifest, source, frames)? {
        let video = &manifest.videos[vi];
        let scores = score_faces(scorer, &faces)?;
        table.rows.push(ScoreRow {
            unit_id: video.video_id.clone(),
            video_id: video.video_id.clone(),
            frame_idx: None,
            granularity: Granularity::Video,
            score: aggregate_video(&scores),
            label: label_of(video.label),
            dataset: video.dataset.clone(),
            manipulation: video.manipulation.clone(),
            frames_used: scores.len(),
        });
    }
    table.finalize()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Frame,
    Video,
}

impl Protocol {
    pub fn default_frames(self) -> usize {
        match self {
            Protocol::Frame => FRAME_LEVEL_FRAMES,
            Protocol::Video => VIDEO_LEVEL_FRAMES,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "frame" => Ok(Protocol::Frame),
            "video" => Ok(Protocol::Video),
            other => Err(Error::Config(format!("unknown protocol `{other}`"))),
        }
    }

    pub fn run(self, manifest: &Manifest, source: &FaceSource, scorer: &dyn FrameScorer, frames: usize) -> Result<ScoreTable> {
        match self {
            Protocol::Frame => frame_level_eval(manifest, source, scorer, frames),
            Protocol::Video => video_level_eval(manifest, source, scorer, frames),
        }
    }
}

/// AUC of one evaluation cell; `auc` is absent when the metric is undefined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucCell {
    pub dataset: String,
    pub manipulation: String,
    pub auc: Option<f64>,
    pub error: Option<String>,
    pub positives: usize,
    pub negatives: usize,
}

fn cell(dataset: &str, manipulation: &str, rows: &[&ScoreRow]) -> AucCell {
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let (auc, error) = match auc::auc(&scores, &labels) {
        Ok(a) => (Some(a), None),
        Err(e) => (None, Some(e.to_string())),
    };
    AucCell {
        dataset: dataset.into(),
        manipulation: manipulation.into(),
        auc,
        error,
        positives,
        negatives: labels.len() - positives,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub frames_per_video: usize,
    pub fingerprint: String,
    pub seed: u64,
    /// One cell per (dataset, manipulation): that manipulation's fakes against the dataset's genuine units.
    pub cells: Vec<AucCell>,
    /// One cell per dataset over all of its units.
    pub pooled: Vec<AucCell>,
    pub units: usize,
}

impl EvalReport {
    pub fn new(table: &ScoreTable, protocol: Protocol, frames_per_video: usize, fingerprint: &str, seed: u64) -> Self {
        let datasets: BTreeSet<&str> = table.rows.iter().map(|r| r.dataset.as_str()).collect();
        let mut cells = Vec::new();
        let mut pooled = Vec::new();
        for ds in datasets {
            let rows: Vec<&ScoreRow> = table.rows.iter().filter(|r| r.dataset == ds).collect();
            let manipulations: BTreeSet<&str> =
                rows.iter().filter(|r| r.label == 1).map(|r| r.manipulation.as_str()).collect();
            for m in manipulations {
                let subset: Vec<&ScoreRow> = rows.iter().copied().filter(|r| r.label == 0 || r.manipulation == m).collect();
                cells.push(cell(ds, m, &subset));
            }
            pooled.push(cell(ds, "all", &rows));
        }
        Self {
            protocol,
            frames_per_video,
            fingerprint: fingerprint.into(),
            seed,
            cells,
            pooled,
            units: table.rows.len(),
        }
    }

    /// Human-readable aligned table.
    pub fn render_table(&self) -> String {
        let mut out = format!("{:<16} {:<16} {:>8} {:>6} {:>6}\n", "dataset", "manipulation", "AUC", "pos", "neg");
        for c in self.cells.iter().chain(&self.pooled) {
            let auc = c.auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "undef".into());
            out.push_str(&format!(
                "{:<16} {:<16} {:>8} {:>6} {:>6}\n",
                c.dataset, c.manipulation, auc, c.positives, c.negatives
            ));
        }
        out
    }

    /// Writes `report.json`, `report.csv` (the score table), `report.txt` and the plots.
    pub fn write(&self, dir: &Path, table: &ScoreTable) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(self).expect("serializable");
        crate::io::write_atomic(&dir.join("report.json"), json.as_bytes())?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["unit_id", "granularity", "score", "label", "dataset", "manipulation", "frames_used"])
            .map_err(|e| Error::Data(e.to_string()))?;
        for r in &table.rows {
            let g = match r.granularity {
                Granularity::Frame => "frame",
                Granularity::Video => "video",
            };
            w.write_record([
                r.unit_id.as_str(),
                g,
                &r.score.to_string(),
                &r.label.to_string(),
                &r.dataset,
                &r.manipulation,
                &r.frames_used.to_string(),
            ])
            .map_err(|e| Error::Data(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        crate::io::write_atomic(&dir.join("report.csv"), &bytes)?;
        crate::io::write_atomic(&dir.join("report.txt"), self.render_table().as_bytes())?;
        let (scores, labels) = (table.scores(), table.labels());
        if let Ok(points) = roc_curve(&scores, &labels) {
            plot::write_roc(&dir.join("roc.png"), &points)?;
        }
        plot::write_histogram(&dir.join("scores.png"), &scores, &labels)?;
        Ok(())
    }
}

/// Scores labeled images directly (no manifest) and returns their AUC.
pub fn labeled_auc(scorer: &dyn FrameScorer, images: &[(Image, u8)]) -> Result<f64> {
    let refs: Vec<&Image> = images.iter().map(|(i, _)| i).collect();
    let scores = scorer.score(&refs)?;
    let labels: Vec<u8> = images.iter().map(|(_, l)| *l).collect();
    auc::auc(&scores, &labels)
}
