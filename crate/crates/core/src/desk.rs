//! Desk-scale runs on procedural faces: face pools, the reconstructor used
//! for them, and a train-then-score cycle shared by the sweep and the CLI.

use std::path::Path;

use crate::config::{AdapterKind, RunConfig};
use crate::data::toy::ToyFace;
use crate::error::{Error, Result};
use crate::eval::{labeled_auc, ModelScorer};
use crate::face::{FaceRecord, Image, Provenance, Split};
use crate::losses::LossWeights;
use crate::model::Mfrn;
use crate::rng::SeedStream;
use crate::synth::adapter::{load_external, ConvAutoencoder, IdentityAdapter, ReconstructorAdapter};
use crate::synth::{generate_rbi, genuine_sample, SynthConfig};
use crate::train::Trainer;

/// `n` random toy faces rendered at `size`, identified as `<prefix>NNNN`.
pub fn toy_faces(n: usize, size: usize, prefix: &str, split: Split, stream: &SeedStream) -> Result<Vec<FaceRecord>> {
    (0..n)
        .map(|i| {
            let face = ToyFace::sample(&mut stream.index(i as u64).rng());
            face.record(
                size,
                Provenance {
                    video_id: format!("{prefix}{i:04}"),
                    frame_idx: 0,
                    split,
                },
            )
        })
        .collect()
}

/// The reconstructor named by the config. An autoencoder without stored
/// weights is fitted to `faces` and, when a path is configured, saved there.
pub fn build_adapter(cfg: &RunConfig, faces: &[FaceRecord], stream: &SeedStream) -> Result<Box<dyn ReconstructorAdapter>> {
    let a = &cfg.adapter;
    Ok(match a.kind {
        AdapterKind::Identity => Box::new(IdentityAdapter),
        AdapterKind::External => Box::new(load_external(Path::new(&a.path))?),
        AdapterKind::Autoencoder => {
            let path = Path::new(&a.path);
            if !a.path.is_empty() && path.is_file() {
                Box::new(ConvAutoencoder::load(path, "autoencoder")?)
            } else {
                let mut ae = ConvAutoencoder::new(&a.autoencoder, stream.child("init"))?;
                let images: Vec<Image> = faces.iter().map(|f| f.image.clone()).collect();
                let losses = ae.train(&images, &a.training, stream.child("fit"))?;
                log::info!(
                    "autoencoder fitted: reconstruction error {:.5} -> {:.5}",
                    losses.first().copied().unwrap_or(f64::NAN),
                    losses.last().copied().unwrap_or(f64::NAN)
                );
                if !a.path.is_empty() {
                    ae.save(path)?;
                }
                Box::new(ae)
            }
        }
    })
}

/// One genuine and one RBI image per face.
pub fn labeled_pairs(
    faces: &[FaceRecord],
    adapter: &dyn ReconstructorAdapter,
    synth: &SynthConfig,
    stream: &SeedStream,
) -> Result<Vec<(Image, u8)>> {
    let mut out = Vec::with_capacity(2 * faces.len());
    for (i, face) in faces.iter().enumerate() {
        out.push((genuine_sample(face).image, 0));
        out.push((generate_rbi(face, adapter, synth, &stream.index(i as u64))?.image, 1));
    }
    Ok(out)
}

/// Faces, adapter and held-out set of a desk run.
pub struct DeskSetup {
    pub train: Vec<FaceRecord>,
    pub test: Vec<(Image, u8)>,
    pub adapter: Box<dyn ReconstructorAdapter>,
}

impl DeskSetup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let root = SeedStream::root(cfg.seed).child("desk");
        let size = cfg.model.input_size;
        let train = toy_faces(cfg.desk.train_faces, size, "train", Split::Train, &root.child("train-faces"))?;
        let test_faces = toy_faces(cfg.desk.test_faces, size, "test", Split::Test, &root.child("test-faces"))?;
        if train.is_empty() || test_faces.is_empty() {
            return Err(Error::Config("desk.train_faces and desk.test_faces must be positive".into()));
        }
        let adapter = build_adapter(cfg, &train, &root.child("adapter"))?;
        let test = labeled_pairs(&test_faces, adapter.as_ref(), &cfg.synth, &root.child("test-rbi"))?;
        Ok(Self { train, test, adapter })
    }

    /// Trains with `weights` and returns the model and its held-out AUC.
    pub fn train_and_score(&self, cfg: &RunConfig, weights: LossWeights, out_dir: Option<&Path>) -> Result<(Mfrn, f64)> {
        let train_cfg = crate::train::TrainConfig {
            loss: weights,
            ..cfg.train_config()
        };
        let mut trainer = Trainer::new(
            train_cfg,
            &cfg.model,
            cfg.synth.clone(),
            &self.train,
            self.adapter.as_ref(),
            &cfg.fingerprint(),
        )?;
        if let Some(dir) = out_dir {
            trainer = trainer.with_output(dir)?;
        }
        trainer.run()?;
        let model = trainer.into_model();
        let auc = labeled_auc(
            &ModelScorer {
                model: &model,
                batch: cfg.eval.batch,
            },
            &self.test,
        )?;
        Ok((model, auc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pools_are_reproducible_and_sized() {
        let s = SeedStream::root(4);
        let a = toy_faces(3, 64, "t", Split::Train, &s).unwrap();
        let b = toy_faces(3, 64, "t", Split::Train, &s).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a[2].image, b[2].image);
        assert_eq!(a[0].image.dim(), (64, 64, 3));
        assert_ne!(a[0].image, a[1].image);
    }

    #[test]
    fn tiny_desk_cycle_runs() {
        let cfg = RunConfig::resolve(
            None,
            &[
                "variant=miniature",
                "adapter.kind=identity",
                "desk.train_faces=4",
                "desk.test_faces=3",
                "train.batch=4",
                "train.epochs=1",
                "train.augment.p_jpeg=0",
            ]
            .map(String::from),
        )
        .unwrap();
        let desk = DeskSetup::new(&cfg).unwrap();
        assert_eq!(desk.test.len(), 6);
        let (_, auc) = desk.train_and_score(&cfg, LossWeights::BEST, None).unwrap();
        assert!((0.0..=1.0).contains(&auc));
    }
}
