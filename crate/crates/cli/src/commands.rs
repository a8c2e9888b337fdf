//! Command implementations: resolve the config, run the bound module,
//! write the resolved config next to the outputs.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mfrn::config::RunConfig;
use mfrn::data::cache::CropCache;
use mfrn::data::corpus::write_toy_corpus;
use mfrn::data::detect::SidecarDetector;
use mfrn::data::manifest::{build_manifest, Manifest, ManifestOptions, SplitSpec};
use mfrn::desk::{build_adapter, labeled_pairs, toy_faces, DeskSetup};
use mfrn::eval::sweep::lambda_sweep;
use mfrn::eval::visualize::visualize;
use mfrn::eval::{EvalReport, FaceSource, ModelScorer};
use mfrn::face::{FaceRecord, Image, Label, Split};
use mfrn::losses::LossWeights;
use mfrn::model::checkpoint::Checkpoint;
use mfrn::model::Mfrn;
use mfrn::rng::SeedStream;
use mfrn::synth::shard::synthesize_shards;
use mfrn::train::{genuine_faces, manifest_pool, Trainer};
use mfrn::{Error, Result};

use crate::{Cli, Command, ConfigCommand, FaceInput, Outcome};

fn resolve(cli: &Cli, extra: &[String]) -> Result<RunConfig> {
    let mut sets = cli.global.set.clone();
    if let Some(seed) = cli.global.seed {
        sets.push(format!("seed={seed}"));
    }
    if let Some(w) = cli.global.workers {
        sets.push(format!("workers={w}"));
    }
    sets.extend_from_slice(extra);
    RunConfig::resolve(cli.global.config.as_deref(), &sets)
}

/// `<parent>/<fingerprint prefix>-<unix seconds>`.
fn run_dir(parent: &Path, cfg: &RunConfig) -> PathBuf {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    parent.join(format!("{}-{secs}", &cfg.fingerprint()[..12]))
}

fn manifest_root(manifest: &Path, root: Option<&PathBuf>) -> PathBuf {
    root.cloned()
        .unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn source<'a>(root: &'a Path, cfg: &RunConfig, cache: Option<&'a CropCache>) -> FaceSource<'a> {
    FaceSource {
        root,
        crop: cfg.crop,
        cache,
    }
}

/// Genuine faces for synthesis or training.
fn input_faces(input: &FaceInput, cfg: &RunConfig, cache: Option<&CropCache>) -> Result<Vec<FaceRecord>> {
    match (&input.manifest, input.toy) {
        (Some(path), _) => {
            let manifest = Manifest::read(path)?;
            let root = manifest_root(path, input.root.as_ref());
            manifest_pool(&manifest, &source(&root, cfg, cache), cfg.data.train_frames)
        }
        (None, Some(n)) => {
            let stream = SeedStream::root(cfg.seed).child("cli-faces");
            toy_faces(n, cfg.model.input_size, "toy", Split::Train, &stream)
        }
        (None, None) => Err(Error::Config("pass --manifest or --toy".into())),
    }
}

fn load_model(path: &Path, cfg: &RunConfig) -> Result<Mfrn> {
    let ckpt = Checkpoint::load(path, None, false)?;
    if ckpt.model_config != cfg.model {
        log::warn!("using the network shape stored in {}, not the configured one", path.display());
    }
    ckpt.into_model()
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let cache = CropCache::from_env();
    match &cli.command {
        Command::Config(ConfigCommand::Show) => {
            print!("{}", resolve(cli, &[])?.annotated());
            Ok(Outcome::Success)
        }
        Command::ToyCorpus { out } => {
            let cfg = resolve(cli, &[])?;
            let stream = SeedStream::root(cfg.seed).child("toy-corpus");
            let faces = toy_faces(64, cfg.corpus.frame_size, "fit", Split::Train, &stream.child("adapter-faces"))?;
            let adapter = build_adapter(&cfg, &faces, &stream.child("adapter"))?;
            let summary = write_toy_corpus(out, &cfg.corpus, adapter.as_ref(), &cfg.synth, stream.child("corpus"))?;
            cfg.write_resolved(out)?;
            println!(
                "{} videos, {} frames ({} without a face, {} with a decoy) in {}",
                summary.videos,
                summary.frames,
                summary.missing_faces,
                summary.decoys,
                out.display()
            );
            Ok(Outcome::Success)
        }
        Command::Manifest { root, split, out, frames } => {
            let cfg = resolve(cli, &[])?;
            let spec = SplitSpec::load(split)?;
            let manifest = build_manifest(
                root,
                &spec,
                &SidecarDetector,
                ManifestOptions {
                    frames_per_video: *frames,
                },
            )?;
            manifest.write(out)?;
            if let Some(dir) = out.parent() {
                cfg.write_resolved(dir)?;
            }
            println!(
                "{} records from {} videos, {} frames without a usable face",
                manifest.records.len(),
                manifest.videos.len(),
                manifest.failures.len()
            );
            Ok(Outcome::Success)
        }
        Command::Synth { out, input, shard_size } => {
            let cfg = resolve(cli, &[])?;
            let faces = input_faces(input, &cfg, cache.as_ref())?;
            let stream = SeedStream::root(cfg.seed);
            let adapter = build_adapter(&cfg, &faces, &stream.child("adapter"))?;
            let summary = synthesize_shards(&faces, adapter.as_ref(), &cfg.synth, &stream, out, *shard_size, cfg.workers)?;
            cfg.write_resolved(out)?;
            println!("{} of {} samples in {} shards", summary.written, summary.requested, summary.shards);
            Ok(if summary.failures.is_empty() {
                Outcome::Success
            } else {
                Outcome::Partial
            })
        }
        Command::Train {
            out,
            input,
            resume,
            force,
            rho,
        } => {
            let extra: Vec<String> = rho.iter().map(|r| format!("train.rho={r}")).collect();
            let cfg = resolve(cli, &extra)?;
            let input = match (&input.manifest, input.toy) {
                (None, None) => FaceInput {
                    toy: Some(cfg.desk.train_faces),
                    ..input.clone()
                },
                _ => input.clone(),
            };
            let faces = input_faces(&input, &cfg, cache.as_ref())?;
            let stream = SeedStream::root(cfg.seed);
            let adapter = build_adapter(&cfg, &faces, &stream.child("adapter"))?;
            let fingerprint = cfg.fingerprint();
            let mut trainer = Trainer::new(cfg.train_config(), &cfg.model, cfg.synth.clone(), &faces, adapter.as_ref(), &fingerprint)?
                .with_output(out)?;
            if let Some(path) = resume {
                trainer = trainer.resume(&Checkpoint::load(path, Some(&fingerprint), *force)?)?;
            }
            if let Some(path) = &input.manifest {
                let manifest = Manifest::read(path)?.filter_split(Split::Val);
                let root = manifest_root(path, input.root.as_ref());
                if let Ok(val) = genuine_faces(&manifest, &source(&root, &cfg, cache.as_ref()), cfg.data.train_frames) {
                    let pairs = labeled_pairs(&val, adapter.as_ref(), &cfg.synth, &stream.child("validation"))?;
                    trainer = trainer.with_validation(pairs);
                }
            }
            cfg.write_resolved(out)?;
            let last = trainer.run()?;
            if let Some(last) = last {
                println!("{} steps; last checkpoint {}", trainer.state().step, last.display());
            }
            Ok(Outcome::Success)
        }
        Command::Eval {
            checkpoint,
            manifest,
            root,
            out,
            protocol,
            frames,
            split,
        } => {
            let mut extra = Vec::new();
            if let Some(p) = protocol {
                extra.push(format!("eval.protocol={p}"));
            }
            if let Some(f) = frames {
                extra.push(format!("eval.frames={f}"));
            }
            let cfg = resolve(cli, &extra)?;
            let split = Split::parse(split)?;
            let model = load_model(checkpoint, &cfg)?;
            let root = manifest_root(manifest, root.as_ref());
            let manifest = Manifest::read(manifest)?.filter_split(split);
            if manifest.videos.is_empty() {
                return Err(Error::Data(format!("manifest has no {} videos", split.as_str())));
            }
            let scorer = ModelScorer {
                model: &model,
                batch: cfg.eval.batch,
            };
            let n = cfg.eval.frames();
            let table = cfg.eval.protocol.run(&manifest, &source(&root, &cfg, cache.as_ref()), &scorer, n)?;
            let report = EvalReport::new(&table, cfg.eval.protocol, n, &cfg.fingerprint(), cfg.seed);
            let dir = run_dir(out, &cfg);
            report.write(&dir, &table)?;
            cfg.write_resolved(&dir)?;
            print!("{}", report.render_table());
            println!("report in {}", dir.display());
            let undefined = report.cells.iter().chain(&report.pooled).any(|c| c.auc.is_none());
            Ok(if undefined { Outcome::Partial } else { Outcome::Success })
        }
        Command::Sweep { out } => {
            let cfg = resolve(cli, &[])?;
            let dir = run_dir(out, &cfg);
            cfg.write_resolved(&dir)?;
            let desk = DeskSetup::new(&cfg)?;
            let grid: Vec<LossWeights> = cfg
                .sweep
                .grid
                .iter()
                .map(|&[lambda1, lambda2]| LossWeights { lambda1, lambda2 })
                .collect();
            let report = lambda_sweep(&grid, |w| {
                let cell = dir.join(format!("cell_{}_{}", w.lambda1, w.lambda2));
                desk.train_and_score(&cfg, *w, Some(&cell)).map(|(_, auc)| auc)
            });
            let json = serde_json::to_string_pretty(&report).expect("serializable");
            mfrn::io::write_atomic(&dir.join("sweep.json"), json.as_bytes())?;
            mfrn::io::write_atomic(&dir.join("sweep.txt"), report.render_table().as_bytes())?;
            print!("{}", report.render_table());
            println!("report in {}", dir.display());
            match report.best {
                None => Err(Error::Numeric("every sweep cell failed".into())),
                Some(_) if report.cells.iter().any(|c| c.error.is_some()) => Ok(Outcome::Partial),
                Some(_) => Ok(Outcome::Success),
            }
        }
        Command::Visualize {
            checkpoint,
            out,
            input,
            limit,
        } => {
            let cfg = resolve(cli, &[])?;
            let model = load_model(checkpoint, &cfg)?;
            let samples = panel_inputs(input, &cfg, cache.as_ref(), *limit, model.config().input_size)?;
            let infos = visualize(&model, &samples, out)?;
            cfg.write_resolved(out)?;
            println!("{} panels in {}", infos.len(), out.display());
            Ok(Outcome::Success)
        }
    }
}

/// Named images for panels: manifest faces, or procedural genuine faces and their RBIs.
fn panel_inputs(
    input: &FaceInput,
    cfg: &RunConfig,
    cache: Option<&CropCache>,
    limit: usize,
    size: usize,
) -> Result<Vec<(String, Image)>> {
    match (&input.manifest, input.toy) {
        (Some(path), _) => {
            let manifest = Manifest::read(path)?;
            let root = manifest_root(path, input.root.as_ref());
            let crop = mfrn::data::crop::CropSpec { size, ..cfg.crop };
            let mut out = Vec::new();
            for r in manifest.records.iter().take(limit) {
                let face = mfrn::data::cache::load_face(&root, r, &crop, cache)?;
                let tag = if r.label == Label::Genuine { "genuine" } else { "fake" };
                out.push((format!("{tag}_{}_{:04}", r.video_id, r.frame_idx), face.image));
            }
            Ok(out)
        }
        (None, toy) => {
            let n = toy.unwrap_or(limit / 2).max(1);
            let stream = SeedStream::root(cfg.seed).child("panels");
            let faces = toy_faces(n, size, "panel", Split::Test, &stream.child("faces"))?;
            let adapter = build_adapter(cfg, &faces, &stream.child("adapter"))?;
            let pairs = labeled_pairs(&faces, adapter.as_ref(), &cfg.synth, &stream.child("rbi"))?;
            Ok(pairs
                .into_iter()
                .enumerate()
                .take(limit)
                .map(|(i, (img, label))| {
                    let tag = if label == 0 { "genuine" } else { "rbi" };
                    (format!("{tag}_{:04}", i / 2), img)
                })
                .collect())
        }
    }
}
