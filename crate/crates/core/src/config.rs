//! Layered run configuration: built-in defaults, then a TOML file, then
//! `key.path=value` overrides. The fingerprint hashes the canonical
//! `key = value` listing of the resolved configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::corpus::ToyCorpusConfig;
use crate::data::crop::CropSpec;
use crate::data::TRAIN_FRAMES;
use crate::error::{Error, Result};
use crate::eval::sweep::ABLATION_GRID;
use crate::eval::Protocol;
use crate::model::ModelConfig;
use crate::synth::adapter::{AutoencoderConfig, AutoencoderTraining};
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

/// File name of the resolved configuration written next to every output.
pub const RESOLVED_NAME: &str = "config.resolved.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Reference,
    Miniature,
}

impl Variant {
    pub fn model(self) -> ModelConfig {
        match self {
            Variant::Reference => ModelConfig::reference(),
            Variant::Miniature => ModelConfig::miniature(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Identity,
    Autoencoder,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub kind: AdapterKind,
    /// Weights for `external`; for `autoencoder`, reused when present and
    /// written after training otherwise.
    pub path: String,
    pub autoencoder: AutoencoderConfig,
    pub training: AutoencoderTraining,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            kind: AdapterKind::Autoencoder,
            path: String::new(),
            autoencoder: AutoencoderConfig::default(),
            training: AutoencoderTraining::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Frames sampled per training video.
    pub train_frames: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_frames: TRAIN_FRAMES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub protocol: Protocol,
    /// Frames per video; 0 picks the protocol default.
    pub frames: usize,
    pub batch: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Frame,
            frames: 0,
            batch: 16,
        }
    }
}

impl EvalConfig {
    pub fn frames(&self) -> usize {
        if self.frames == 0 {
            self.protocol.default_frames()
        } else {
            self.frames
        }
    }
}

/// Procedural faces used when no manifest is given, and by the sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskConfig {
    pub train_faces: usize,
    /// Held-out faces; each contributes one genuine and one RBI image.
    pub test_faces: usize,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            train_faces: 200,
            test_faces: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// `[λ1, λ2]` rows.
    pub grid: Vec<[f64; 2]>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            grid: ABLATION_GRID.iter().map(|&(a, b)| [a, b]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    /// Picks the defaults of the `model` table.
    pub variant: Variant,
    pub model: ModelConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub crop: CropSpec,
    pub eval: EvalConfig,
    pub adapter: AdapterConfig,
    pub corpus: ToyCorpusConfig,
    pub desk: DeskConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_variant(Variant::Reference)
    }
}

impl RunConfig {
    pub fn for_variant(variant: Variant) -> Self {
        let model = variant.model();
        let crop = CropSpec {
            size: model.input_size,
            ..CropSpec::default()
        };
        Self {
            seed: 0,
            workers: 1,
            variant,
            model,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            crop,
            eval: EvalConfig::default(),
            adapter: AdapterConfig::default(),
            corpus: ToyCorpusConfig::default(),
            desk: DeskConfig::default(),
            sweep: SweepConfig::default(),
        }
    }

    /// Defaults, then `file`, then each `key.path=value` override in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut layer = Table::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let table: Table = text
                .parse()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut layer, table);
        }
        for o in overrides {
            let (key, value) = parse_override(o)?;
            set_path(&mut layer, &key, value)?;
        }
        let variant = match layer.get("variant") {
            Some(v) => Variant::deserialize(v.clone()).map_err(|e| Error::Config(format!("variant: {e}")))?,
            None => Variant::Reference,
        };
        let Value::Table(mut base) = Value::try_from(Self::for_variant(variant)).expect("serializable") else {
            unreachable!("config serializes to a table")
        };
        merge(&mut base, layer);
        let cfg = Self::deserialize(Value::Table(base)).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.synth.validate()?;
        self.train_config().validate()?;
        self.crop.validate()?;
        self.corpus.validate()?;
        if self.crop.size != self.model.input_size {
            return Err(Error::Config(format!(
                "crop.size ({}) must equal model.input_size ({})",
                self.crop.size, self.model.input_size
            )));
        }
        if self.workers == 0 || self.eval.batch == 0 || self.data.train_frames == 0 {
            return Err(Error::Config("workers, eval.batch and data.train_frames must be positive".into()));
        }
        if self.sweep.grid.is_empty() {
            return Err(Error::Config("sweep.grid is empty".into()));
        }
        if self.adapter.kind == AdapterKind::External && self.adapter.path.is_empty() {
            return Err(Error::Config("adapter.kind = \"external\" needs adapter.path".into()));
        }
        Ok(())
    }

    /// Training settings with the run-level seed and worker count applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            workers: self.workers,
            ..self.train.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable")
    }

    /// Sorted `key = value` lines, one per leaf.
    pub fn canonical_lines(&self) -> Vec<(String, String)> {
        let value = Value::try_from(self).expect("serializable");
        let mut out = Vec::new();
        flatten("", &value, &mut out);
        out.sort();
        out
    }

    pub fn fingerprint(&self) -> String {
        let text: String = self
            .canonical_lines()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        crate::io::sha256_hex(text.as_bytes())
    }

    /// Listing of every key with a note on where its default comes from.
    pub fn annotated(&self) -> String {
        let mut out = format!("# fingerprint {}\n", self.fingerprint());
        let lines = self.canonical_lines();
        let width = lines.iter().map(|(k, v)| k.len() + v.len() + 3).max().unwrap_or(0);
        for (k, v) in &lines {
            let entry = format!("{k} = {v}");
            out.push_str(&format!("{entry:<width$}  # {}\n", provenance(k)));
        }
        out
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let text = format!("# fingerprint {}\n{}", self.fingerprint(), self.to_toml());
        crate::io::write_atomic(&dir.join(RESOLVED_NAME), text.as_bytes())
    }
}

fn merge(base: &mut Table, layer: Table) {
    for (k, v) in layer {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(l)) => merge(b, l),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Splits `a.b.c=value`; the value is read as TOML, falling back to a bare string.
pub fn parse_override(text: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{text}` is not key=value")))?;
    let key: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if key.iter().any(String::is_empty) {
        return Err(Error::Config(format!("override `{text}` has an empty key segment")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key, value))
}

fn set_path(table: &mut Table, key: &[String], value: Value) -> Result<()> {
    let (last, parents) = key.split_last().expect("non-empty key");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::Config(format!("`{}` is not a table", key.join(".")))),
        };
    }
    cur.insert(last.clone(), value);
    Ok(())
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    match value {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        Value::Array(items) if items.iter().any(|v| v.is_table()) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), v, out);
            }
        }
        other => out.push((prefix.to_string(), render(other))),
    }
}

/// Platform-independent text for a leaf: shortest round-trip floats, quoted strings.
fn render(value: &Value) -> String {
    match value {
        Value::String(s) => format!("{s:?}"),
        Value::Integer(i) => i.to_string(),
        Value::Float(f) => {
            let s = f.to_string();
            if s.contains(['.', 'e', 'i', 'N']) {
                s
            } else {
                format!("{s}.0")
            }
        }
        Value::Boolean(b) => b.to_string(),
        Value::Datetime(d) => d.to_string(),
        Value::Array(items) => format!("[{}]", items.iter().map(render).collect::<Vec<_>>().join(", ")),
        Value::Table(_) => unreachable!("tables are flattened"),
    }
}

/// Longest-prefix notes: `published` values are stated with the method,
/// `chosen` values fill gaps, `plumbing` values only affect tooling.
const PROVENANCE: &[(&str, &str)] = &[
    ("seed", "plumbing: root of every random stream"),
    ("workers", "plumbing: parallel sample synthesis; results do not depend on it"),
    ("variant", "chosen: reference = published network size, miniature = desk-scale"),
    ("model", "chosen: layer widths not stated beyond the pyramid"),
    ("model.input_size", "published: 380x380 face crops (reference variant)"),
    ("model.channels", "published: pyramid channels summing to 720 (reference variant)"),
    ("model.norm", "chosen: batch statistics, as in the backbone family"),
    ("model.precision", "plumbing"),
    ("synth", "chosen: not stated"),
    ("synth.latent_noise.p", "published: background noise with probability 0.5"),
    ("synth.latent_noise.sigma", "published: noise standard deviation in [0.1, 0.3]"),
    ("synth.roles", "published: source = reconstruction, target = original; randomizing is an extension"),
    ("synth.roles.p_augment_source", "published: transforms applied to either image with equal chance"),
    ("synth.ssta", "chosen: transform kinds published, magnitudes not"),
    ("synth.hull", "chosen: hull family of the blending lineage"),
    ("synth.deform.p", "published: shared affine + elastic deformation with probability 0.5"),
    ("synth.deform", "chosen: bounds from the blending lineage"),
    ("synth.blur_sigma", "chosen: mask blur strength not stated"),
    ("synth.alpha", "published: blend strength in [0.5, 1], drawn uniformly (chosen)"),
    ("train", "chosen: not stated"),
    ("train.lr", "published: learning rate 0.001"),
    ("train.batch", "published: batch size 32"),
    ("train.epochs", "published: 80 epochs"),
    ("train.rho", "chosen: common SAM radius"),
    ("train.momentum", "chosen: base update rule of SAM not stated"),
    ("train.loss", "published: best cell of the loss-weight ablation"),
    ("train.augment", "chosen: JPEG, brightness-contrast and colour jitter are published, rates are not"),
    ("train.steps_per_epoch", "plumbing: one pass over the face pool when absent"),
    ("train.checkpoint_every", "plumbing"),
    ("data.train_frames", "published: 20 frames per training video"),
    ("crop.margin", "chosen: crop margin not stated"),
    ("crop.size", "published: 380x380 crops; follows model.input_size"),
    ("eval.protocol", "published: frame level with 5 frames, video level with 32 frames"),
    ("eval.frames", "published: 0 = protocol default (5 or 32)"),
    ("eval.batch", "plumbing"),
    ("adapter", "chosen: stand-in for the unavailable pretrained face-swap generator"),
    ("corpus", "plumbing: procedural desk corpus"),
    ("desk", "plumbing: procedural desk faces"),
    ("sweep.grid", "published: the seven rows of the loss-weight ablation"),
];

pub fn provenance(key: &str) -> &'static str {
    PROVENANCE
        .iter()
        .filter(|(p, _)| key == *p || key.starts_with(&format!("{p}.")) || key.starts_with(&format!("{p}[")))
        .max_by_key(|(p, _)| p.len())
        .map(|(_, note)| *note)
        .unwrap_or("plumbing")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sets(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn defaults_hold_the_published_settings() {
        let cfg = RunConfig::resolve(None, &[]).unwrap();
        assert_eq!(cfg.train.lr, 1e-3);
        assert_eq!(cfg.train.batch, 32);
        assert_eq!(cfg.train.epochs, 80);
        assert_eq!(cfg.model.input_size, 380);
        assert_eq!(cfg.crop.size, 380);
        assert_eq!(cfg.sweep.grid.len(), 7);
        assert_eq!(cfg.data.train_frames, 20);
    }

    #[test]
    fn layers_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(&file, "seed = 3\nvariant = \"miniature\"\n[train]\nlr = 0.01\nrho = 0.1\n").unwrap();
        let cfg = RunConfig::resolve(Some(&file), &sets(&["train.rho=0", "eval.protocol=video"])).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.model, ModelConfig::miniature());
        assert_eq!(cfg.crop.size, 64);
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.train.rho, 0.0);
        assert_eq!(cfg.eval.protocol, Protocol::Video);
        assert_eq!(cfg.eval.frames(), 32);
        assert_eq!(cfg.train_config().seed, 3);
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let a = RunConfig::resolve(None, &sets(&["train.lr=0.002"])).unwrap();
        let b = RunConfig::resolve(None, &sets(&["train.lr=2e-3"])).unwrap();
        let c = RunConfig::resolve(None, &sets(&["train.lr=0.003"])).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn resolved_file_reproduces_the_config() {
        let cfg = RunConfig::resolve(None, &sets(&["variant=miniature", "seed=9", "synth.alpha=[0.6, 0.9]"])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        cfg.write_resolved(dir.path()).unwrap();
        let again = RunConfig::resolve(Some(&dir.path().join(RESOLVED_NAME)), &[]).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.fingerprint(), cfg.fingerprint());
    }

    #[test]
    fn bad_inputs_are_config_errors() {
        for o in [
            "train.nope=1",
            "train.batch=3",
            "noequals",
            "variant=huge",
            "crop.size=100",
            "train.lr.x=1",
        ] {
            assert!(matches!(RunConfig::resolve(None, &sets(&[o])), Err(Error::Config(_))), "{o}");
        }
    }

    #[test]
    fn every_key_is_annotated() {
        let cfg = RunConfig::default();
        let text = cfg.annotated();
        assert_eq!(text.lines().count(), cfg.canonical_lines().len() + 1);
        assert!(text.contains("published: learning rate 0.001"));
        assert!(text.lines().skip(1).all(|l| l.contains("  # ")));
    }
}
