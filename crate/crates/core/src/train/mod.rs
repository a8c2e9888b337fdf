//! Training: paired genuine/RBI batches, SAM steps, constraint projection,
//! per-step logs and per-epoch checkpoints.
//!
//! Every random draw of step `k` comes from streams derived from
//! `(seed, epoch, batch index, slot)`, so a run resumed from a checkpoint
//! replays exactly the batches an uninterrupted run would have seen.

pub mod sam;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::manifest::Manifest;
use crate::error::{Error, Result};
use crate::eval::FaceSource;
use crate::face::{FaceRecord, Image, Label, Split};
use crate::losses::{LossBreakdown, LossTerms, LossWeights};
use crate::model::checkpoint::{Checkpoint, TrainerState};
use crate::model::{fields_to_tensor, images_to_tensor, Mfrn, Mode, ModelConfig};
use crate::rng::SeedStream;
use crate::synth::adapter::ReconstructorAdapter;
use crate::synth::augment::{train_time_augment, AugmentConfig};
use crate::synth::{generate_rbi, genuine_sample, BlendedSample, SynthConfig};
pub use sam::{sam_step, MomentumSgd};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Samples per batch: half genuine, half RBI.
    pub batch: usize,
    pub epochs: u64,
    /// SAM neighborhood radius.
    pub rho: f64,
    pub momentum: f64,
    pub loss: LossWeights,
    /// Set from the run-level seed.
    #[serde(skip)]
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Steps per epoch; by default one pass over the face pool.
    pub steps_per_epoch: Option<u64>,
    /// Extra checkpoint every this many steps.
    pub checkpoint_every: Option<u64>,
    /// Threads synthesizing the samples of a batch; set from the run-level
    /// worker count. Does not change the samples.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 32,
            epochs: 80,
            rho: 0.05,
            momentum: 0.9,
            loss: LossWeights::BEST,
            seed: 0,
            augment: AugmentConfig::default(),
            steps_per_epoch: None,
            checkpoint_every: None,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch < 2 || self.batch % 2 != 0 {
            return Err(Error::Config(format!("batch {} must be a positive even number", self.batch)));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(Error::Config(format!("SAM radius must be non-negative, got {}", self.rho)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.steps_per_epoch == Some(0) || self.checkpoint_every == Some(0) {
            return Err(Error::Config("step counts must be positive".into()));
        }
        self.loss.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    #[serde(rename = "L_m")]
    pub l_m: f64,
    #[serde(rename = "L_e")]
    pub l_e: f64,
    #[serde(rename = "L_cls")]
    pub l_cls: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

/// A training batch: genuine samples first, then their RBIs.
pub struct Batch {
    pub samples: Vec<BlendedSample>,
    pub seed: u64,
}

/// Paired genuine and RBI samples of one face.
fn make_pair(
    face: &FaceRecord,
    adapter: &dyn ReconstructorAdapter,
    synth: &SynthConfig,
    augment: &AugmentConfig,
    stream: SeedStream,
) -> Result<(BlendedSample, BlendedSample)> {
    let mut genuine = genuine_sample(face);
    let mut fake = None;
    let mut last_err = None;
    for attempt in 0..4u64 {
        match generate_rbi(face, adapter, synth, &stream.child("rbi").index(attempt)) {
            Ok(s) => {
                fake = Some(s);
                break;
            }
            Err(e @ Error::Data(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    let mut fake = fake.ok_or_else(|| last_err.expect("at least one attempt"))?;
    genuine.image = train_time_augment(&genuine.image, augment, &mut stream.child("augment-genuine").rng())?.0;
    fake.image = train_time_augment(&fake.image, augment, &mut stream.child("augment-fake").rng())?.0;
    Ok((genuine, fake))
}

/// Genuine faces of a manifest: `frames` evenly sampled frames per genuine
/// video, cropped by `source`.
pub fn genuine_faces(manifest: &Manifest, source: &FaceSource, frames: usize) -> Result<Vec<FaceRecord>> {
    let mut genuine = manifest.clone();
    genuine.videos.retain(|v| v.label == Label::Genuine);
    let pool: Vec<FaceRecord> = crate::eval::sampled_faces(&genuine, source, frames)?
        .into_iter()
        .flat_map(|(_, faces)| faces.into_iter().map(|(_, f)| f))
        .collect();
    if pool.is_empty() {
        return Err(Error::Data("manifest has no usable genuine faces".into()));
    }
    Ok(pool)
}

/// Genuine faces of the manifest's train split.
pub fn manifest_pool(manifest: &Manifest, source: &FaceSource, frames: usize) -> Result<Vec<FaceRecord>> {
    genuine_faces(&manifest.filter_split(Split::Train), source, frames)
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    synth: SynthConfig,
    model: Mfrn,
    optimizer: MomentumSgd,
    state: TrainerState,
    pool: &'a [FaceRecord],
    adapter: &'a dyn ReconstructorAdapter,
    fingerprint: String,
    out_dir: Option<PathBuf>,
    validation: Option<Vec<(Image, u8)>>,
    log: Vec<StepRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: TrainConfig,
        model_cfg: &ModelConfig,
        synth: SynthConfig,
        pool: &'a [FaceRecord],
        adapter: &'a dyn ReconstructorAdapter,
        fingerprint: &str,
    ) -> Result<Self> {
        cfg.validate()?;
        synth.validate()?;
        let s = model_cfg.input_size;
        if pool.is_empty() {
            return Err(Error::Data("training pool is empty".into()));
        }
        if let Some(face) = pool.iter().find(|f| f.image.dim() != (s, s, 3)) {
            return Err(Error::Shape(format!(
                "face {} is {:?}, the model expects {s}x{s}",
                face.provenance.video_id,
                face.image.dim()
            )));
        }
        let model = Mfrn::new(model_cfg, SeedStream::root(cfg.seed))?;
        let optimizer = MomentumSgd::new(cfg.lr, cfg.momentum)?;
        let state = TrainerState {
            seed: cfg.seed,
            ..Default::default()
        };
        Ok(Self {
            cfg,
            synth,
            model,
            optimizer,
            state,
            pool,
            adapter,
            fingerprint: fingerprint.into(),
            out_dir: None,
            validation: None,
            log: Vec::new(),
        })
    }

    /// Continues from a checkpoint: weights, normalization statistics,
    /// momentum buffers and step counters.
    pub fn resume(mut self, checkpoint: &Checkpoint) -> Result<Self> {
        if checkpoint.model_config != *self.model.config() {
            return Err(Error::Checkpoint("checkpoint was written for a different model config".into()));
        }
        if checkpoint.trainer.seed != self.cfg.seed {
            log::warn!(
                "resuming a run seeded {} with seed {}",
                checkpoint.trainer.seed,
                self.cfg.seed
            );
        }
        checkpoint.restore_into(&self.model)?;
        self.optimizer.load_state(checkpoint.optimizer.clone());
        self.state = TrainerState {
            tag: None,
            ..checkpoint.trainer.clone()
        };
        Ok(self)
    }

    /// Writes logs and checkpoints under `dir`.
    pub fn with_output(mut self, dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.out_dir = Some(dir.to_path_buf());
        Ok(self)
    }

    /// Scores these labeled images after every epoch and keeps the best AUC.
    pub fn with_validation(mut self, images: Vec<(Image, u8)>) -> Self {
        self.validation = Some(images);
        self
    }

    pub fn model(&self) -> &Mfrn {
        &self.model
    }

    pub fn into_model(self) -> Mfrn {
        self.model
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn log(&self) -> &[StepRecord] {
        &self.log
    }

    pub fn optimizer(&self) -> &MomentumSgd {
        &self.optimizer
    }

    pub fn pairs_per_batch(&self) -> usize {
        self.cfg.batch / 2
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.cfg
            .steps_per_epoch
            .unwrap_or((self.pool.len() / self.pairs_per_batch()).max(1) as u64)
    }

    fn root(&self) -> SeedStream {
        SeedStream::root(self.cfg.seed).child("train")
    }

    /// Batch `index` of `epoch`.
    pub fn make_batch(&self, epoch: u64, index: u64) -> Result<Batch> {
        let mut order: Vec<usize> = (0..self.pool.len()).collect();
        order.shuffle(&mut self.root().child("order").index(epoch).rng());
        let stream = self.root().child("batch").index(epoch).index(index);
        let pairs = self.pairs_per_batch();
        let faces: Vec<&FaceRecord> = (0..pairs)
            .map(|j| &self.pool[order[(index as usize * pairs + j) % order.len()]])
            .collect();
        let build = |j: usize| make_pair(faces[j], self.adapter, &self.synth, &self.cfg.augment, stream.index(j as u64));
        let workers = self.cfg.workers.clamp(1, pairs);
        let built: Vec<Result<(BlendedSample, BlendedSample)>> = if workers == 1 {
            (0..pairs).map(build).collect()
        } else {
            let mut slots: Vec<Option<Result<(BlendedSample, BlendedSample)>>> = (0..pairs).map(|_| None).collect();
            std::thread::scope(|scope| {
                for (w, chunk) in slots.chunks_mut(pairs.div_ceil(workers)).enumerate() {
                    let build = &build;
                    let start = w * pairs.div_ceil(workers);
                    scope.spawn(move || {
                        for (k, slot) in chunk.iter_mut().enumerate() {
                            *slot = Some(build(start + k));
                        }
                    });
                }
            });
            slots.into_iter().map(|s| s.expect("every slot filled")).collect()
        };
        let mut genuine = Vec::with_capacity(pairs);
        let mut fakes = Vec::with_capacity(pairs);
        for pair in built {
            let (g, f) = pair?;
            genuine.push(g);
            fakes.push(f);
        }
        genuine.extend(fakes);
        Ok(Batch {
            samples: genuine,
            seed: stream.id(),
        })
    }

    fn dump_failure(&self, epoch: u64, index: u64, seed: u64, err: &Error) {
        let Some(dir) = &self.out_dir else { return };
        let dump = serde_json::json!({
            "step": self.state.step,
            "epoch": epoch,
            "batch_index": index,
            "batch_seed": seed,
            "root_seed": self.cfg.seed,
            "error": err.to_string(),
        });
        if let Err(e) = crate::io::write_atomic(&dir.join("failure.json"), dump.to_string().as_bytes()) {
            log::error!("could not write failure dump: {e}");
        }
    }

    /// One optimization step at the current position.
    pub fn step(&mut self) -> Result<StepRecord> {
        let spe = self.steps_per_epoch();
        let epoch = self.state.epoch;
        let index = self.state.step - epoch * spe;
        let batch = self.make_batch(epoch, index)?;
        let dtype = self.model.dtype();
        let images: Vec<&Image> = batch.samples.iter().map(|s| &s.image).collect();
        let x = images_to_tensor(&images, dtype)?;
        let edge_t = fields_to_tensor(&batch.samples.iter().map(|s| &s.edge_target).collect::<Vec<_>>(), dtype)?;
        let map_t = fields_to_tensor(&batch.samples.iter().map(|s| &s.mask_target).collect::<Vec<_>>(), dtype)?;
        let labels: Vec<f32> = batch.samples.iter().map(|s| s.label as f32).collect();
        let weights = self.cfg.loss;
        let model = &self.model;
        let outcome = sam_step(model.params().params(), &mut self.optimizer, self.cfg.rho, |first| {
            let out = model.forward(&x, Mode::Train { track_stats: first })?;
            let terms = LossTerms::compute(&out.edge, &out.map, &out.p_fake, &edge_t, &map_t, &labels)?;
            let breakdown: Option<LossBreakdown> = if first { Some(terms.breakdown(&weights)?) } else { None };
            Ok((terms.total(&weights)?, breakdown))
        });
        let outcome = match outcome {
            Ok(o) => o,
            Err(e @ Error::Numeric(_)) => {
                self.dump_failure(epoch, index, batch.seed, &e);
                return Err(Error::Numeric(format!(
                    "step {} (epoch {epoch}, batch {index}, batch seed {:#018x}): {e}",
                    self.state.step, batch.seed
                )));
            }
            Err(e) => return Err(e),
        };
        self.model.project_constraints()?;
        let b = outcome.extra.expect("first pass reports its breakdown");
        let record = StepRecord {
            step: self.state.step,
            epoch,
            l_m: b.map,
            l_e: b.edge,
            l_cls: b.cls,
            l: b.total,
            grad_norm: outcome.grad_norm,
            lr: self.cfg.lr,
        };
        self.state.step += 1;
        if self.state.step % spe == 0 {
            self.state.epoch += 1;
        }
        if let Some(dir) = &self.out_dir {
            let path = dir.join("train_log.jsonl");
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{}", serde_json::to_string(&record).expect("serializable")).map_err(|e| Error::io(&path, e))?;
        }
        self.log.push(record.clone());
        Ok(record)
    }

    pub fn checkpoint(&self, tag: Option<&str>) -> Result<Checkpoint> {
        let trainer = TrainerState {
            tag: tag.map(String::from),
            ..self.state.clone()
        };
        Checkpoint::capture(&self.model, self.optimizer.state(), &self.fingerprint, trainer)
    }

    fn save(&self, name: &str, tag: Option<&str>) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.out_dir else { return Ok(None) };
        let path = dir.join(name);
        self.checkpoint(tag)?.save(&path)?;
        Ok(Some(path))
    }

    fn end_of_epoch(&mut self) -> Result<()> {
        if let Some(images) = &self.validation {
            let scorer = crate::eval::ModelScorer {
                model: &self.model,
                batch: 16,
            };
            match crate::eval::labeled_auc(&scorer, images) {
                Ok(auc) => {
                    log::info!("epoch {}: validation AUC {auc:.4}", self.state.epoch);
                    if self.state.best_metric.is_none_or(|b| auc > b) {
                        self.state.best_metric = Some(auc);
                    }
                }
                Err(e) => log::warn!("validation failed: {e}"),
            }
        }
        self.save(&format!("epoch_{:04}.safetensors", self.state.epoch), None)?;
        Ok(())
    }

    /// Trains until `epochs` are complete; a zero-epoch run only writes the
    /// initial checkpoint. Returns the path of the last checkpoint written.
    pub fn run(&mut self) -> Result<Option<PathBuf>> {
        if self.cfg.epochs == 0 {
            return self.save("initial.safetensors", Some("initial"));
        }
        while self.state.epoch < self.cfg.epochs {
            let epoch = self.state.epoch;
            self.step()?;
            if let Some(every) = self.cfg.checkpoint_every {
                if self.state.step % every == 0 {
                    self.save(&format!("step_{:08}.safetensors", self.state.step), None)?;
                }
            }
            if self.state.epoch != epoch {
                self.end_of_epoch()?;
            }
        }
        self.save("final.safetensors", Some("final"))
    }

    /// Runs `n` steps without epoch bookkeeping beyond the counters.
    pub fn run_steps(&mut self, n: u64) -> Result<()> {
        for _ in 0..n {
            self.step()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::adapter::IdentityAdapter;

    fn toy_pool(n: usize, size: usize, seed: u64) -> Vec<FaceRecord> {
        crate::desk::toy_faces(n, size, "toy", crate::face::Split::Train, &SeedStream::root(seed)).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            batch: 4,
            epochs: 1,
            lr: 0.01,
            augment: AugmentConfig::disabled(),
            ..Default::default()
        }
    }

    #[test]
    fn batches_pair_genuine_with_rbi_and_repeat() {
        let pool = toy_pool(4, 64, 1);
        let t = Trainer::new(small_cfg(), &ModelConfig::miniature(), SynthConfig::default(), &pool, &IdentityAdapter, "fp").unwrap();
        let a = t.make_batch(0, 1).unwrap();
        let b = t.make_batch(0, 1).unwrap();
        let labels: Vec<u8> = a.samples.iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![0, 0, 1, 1]);
        assert_eq!(a.samples[0].meta.face_id, a.samples[2].meta.face_id);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.image, y.image);
        }
    }

    #[test]
    fn worker_count_does_not_change_samples() {
        let pool = toy_pool(6, 64, 2);
        let mut cfg = small_cfg();
        cfg.batch = 6;
        let one = Trainer::new(cfg.clone(), &ModelConfig::miniature(), SynthConfig::default(), &pool, &IdentityAdapter, "fp").unwrap();
        cfg.workers = 3;
        let three = Trainer::new(cfg, &ModelConfig::miniature(), SynthConfig::default(), &pool, &IdentityAdapter, "fp").unwrap();
        let (a, b) = (one.make_batch(2, 0).unwrap(), three.make_batch(2, 0).unwrap());
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.mask_target, y.mask_target);
        }
    }

    #[test]
    fn zero_epochs_write_only_the_initial_checkpoint() {
        let pool = toy_pool(2, 64, 3);
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig { epochs: 0, ..small_cfg() };
        let mut t = Trainer::new(cfg, &ModelConfig::miniature(), SynthConfig::default(), &pool, &IdentityAdapter, "fp")
            .unwrap()
            .with_output(dir.path())
            .unwrap();
        let path = t.run().unwrap().unwrap();
        let names: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["initial.safetensors".to_string()]);
        let ckpt = Checkpoint::load(&path, Some("fp"), false).unwrap();
        assert_eq!(ckpt.trainer.step, 0);
        assert_eq!(ckpt.trainer.tag.as_deref(), Some("initial"));
    }

    #[test]
    fn one_epoch_logs_and_checkpoints() {
        let pool = toy_pool(4, 64, 4);
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(small_cfg(), &ModelConfig::miniature(), SynthConfig::default(), &pool, &IdentityAdapter, "fp")
            .unwrap()
            .with_output(dir.path())
            .unwrap();
        t.run().unwrap();
        assert_eq!(t.log().len(), 2);
        assert!(dir.path().join("epoch_0001.safetensors").exists());
        let fin = Checkpoint::load(&dir.path().join("final.safetensors"), None, false).unwrap();
        assert_eq!(fin.trainer.tag.as_deref(), Some("final"));
        let lines = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
        let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
        for key in ["step", "L_m", "L_e", "L_cls", "L", "grad_norm", "lr"] {
            assert!(first.get(key).is_some(), "{key}");
        }
        let (c, off) = crate::model::bayar::constraint_state(t.model().noise_kernel()).unwrap();
        assert_eq!(c, -1.0);
        assert!((off - 1.0).abs() < 1e-6);
    }

    #[test]
    fn resumed_run_replays_the_same_losses() {
        let pool = toy_pool(4, 64, 5);
        let cfg = TrainConfig { epochs: 2, ..small_cfg() };
        let mk = || Trainer::new(cfg.clone(), &ModelConfig::miniature(), SynthConfig::default(), &pool, &IdentityAdapter, "fp").unwrap();
        let mut straight = mk();
        straight.run_steps(4).unwrap();

        let mut first = mk();
        first.run_steps(3).unwrap();
        let ckpt = first.checkpoint(None).unwrap();
        let mut resumed = mk().resume(&ckpt).unwrap();
        resumed.run_steps(1).unwrap();

        let tail = &straight.log()[3];
        let got = &resumed.log()[0];
        assert_eq!((got.step, got.epoch), (3, 1));
        assert_eq!(got.l, tail.l);
        assert_eq!(got.grad_norm, tail.grad_norm);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            TrainConfig { batch: 3, ..small_cfg() },
            TrainConfig { lr: 0.0, ..small_cfg() },
            TrainConfig { rho: -0.1, ..small_cfg() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }
}
