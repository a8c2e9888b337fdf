//! Versioned checkpoint archive.
//!
//! A single safetensors file. Tensors are namespaced `param/`, `buffer/` and
//! `optim/`; the header metadata carries the format version, the resolved
//! config fingerprint, the model config and the trainer state (step counters
//! and the root seed from which every RNG stream is re-derived).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype as StDtype, TensorView};
use serde::{Deserialize, Serialize};

use super::{bayar, Mfrn, ModelConfig, NOISE_KERNEL};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Trainer bookkeeping restored on resume.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub step: u64,
    pub epoch: u64,
    pub seed: u64,
    pub best_metric: Option<f64>,
    pub tag: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub model_config: ModelConfig,
    pub trainer: TrainerState,
    pub params: BTreeMap<String, Tensor>,
    pub buffers: BTreeMap<String, Tensor>,
    pub optimizer: BTreeMap<String, Tensor>,
}

fn tensor_bytes(t: &Tensor) -> Result<(StDtype, Vec<u8>)> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F32 => (
            StDtype::F32,
            flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        DType::F64 => (
            StDtype::F64,
            flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    })
}

fn tensor_from_view(view: &TensorView) -> Result<Tensor> {
    let shape = view.shape().to_vec();
    let data = view.data();
    let t = match view.dtype() {
        StDtype::F32 => {
            let v: Vec<f32> = data.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        StDtype::F64 => {
            let v: Vec<f64> = data.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        other => return Err(Error::Checkpoint(format!("unsupported stored dtype {other:?}"))),
    };
    Ok(t)
}

/// Writes named tensors plus string metadata as one safetensors file.
pub fn save_tensors(path: &Path, tensors: &BTreeMap<String, Tensor>, meta: HashMap<String, String>) -> Result<()> {
    let owned = tensors
        .iter()
        .map(|(k, t)| {
            let (dt, bytes) = tensor_bytes(t)?;
            Ok((k.clone(), dt, t.dims().to_vec(), bytes))
        })
        .collect::<Result<Vec<_>>>()?;
    let views = owned
        .iter()
        .map(|(name, dt, shape, bytes)| {
            TensorView::new(*dt, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let bytes = safetensors::serialize(views, Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))?;
    crate::io::write_atomic(path, &bytes)
}

/// Reads a safetensors file written by [`save_tensors`].
pub fn load_tensors(path: &Path) -> Result<(BTreeMap<String, Tensor>, HashMap<String, String>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let meta = header.metadata().clone().unwrap_or_default();
    let st = safetensors::SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let tensors = st
        .tensors()
        .into_iter()
        .map(|(name, view)| Ok((name, tensor_from_view(&view)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok((tensors, meta))
}

impl Checkpoint {
    /// Snapshot of a model plus optimizer state.
    pub fn capture(
        model: &Mfrn,
        optimizer: &BTreeMap<String, Tensor>,
        fingerprint: &str,
        trainer: TrainerState,
    ) -> Result<Self> {
        let snapshot = |m: &BTreeMap<String, candle_core::Var>| -> Result<BTreeMap<String, Tensor>> {
            m.iter()
                .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
                .collect()
        };
        Ok(Self {
            fingerprint: fingerprint.to_string(),
            model_config: model.config().clone(),
            trainer,
            params: snapshot(model.params().params())?,
            buffers: snapshot(model.params().buffers())?,
            optimizer: optimizer
                .iter()
                .map(|(k, v)| Ok((k.clone(), v.copy()?)))
                .collect::<Result<_>>()?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = BTreeMap::new();
        for (ns, map) in [("param", &self.params), ("buffer", &self.buffers), ("optim", &self.optimizer)] {
            for (k, t) in map {
                tensors.insert(format!("{ns}/{k}"), t.clone());
            }
        }
        let mut meta = HashMap::new();
        meta.insert("format_version".to_string(), FORMAT_VERSION.to_string());
        meta.insert("fingerprint".to_string(), self.fingerprint.clone());
        meta.insert(
            "model_config".to_string(),
            serde_json::to_string(&self.model_config).map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
        meta.insert(
            "trainer".to_string(),
            serde_json::to_string(&self.trainer).map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
        save_tensors(path, &tensors, meta)
    }

    /// Loads an archive. A fingerprint mismatch is an error unless `force`.
    pub fn load(path: &Path, expected_fingerprint: Option<&str>, force: bool) -> Result<Self> {
        let (tensors, meta) = load_tensors(path)?;
        let get = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("archive metadata lacks `{k}`")))
        };
        let version: u32 = get("format_version")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad format_version".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let fingerprint = get("fingerprint")?;
        if let Some(expected) = expected_fingerprint {
            if expected != fingerprint {
                if force {
                    log::warn!("loading checkpoint with fingerprint {fingerprint}, config is {expected}");
                } else {
                    return Err(Error::Checkpoint(format!(
                        "fingerprint mismatch: checkpoint {fingerprint}, config {expected}"
                    )));
                }
            }
        }
        let model_config: ModelConfig =
            serde_json::from_str(&get("model_config")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let trainer: TrainerState =
            serde_json::from_str(&get("trainer")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut ckpt = Self {
            fingerprint,
            model_config,
            trainer,
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
            optimizer: BTreeMap::new(),
        };
        for (name, t) in tensors {
            let (ns, key) = name
                .split_once('/')
                .ok_or_else(|| Error::Checkpoint(format!("unnamespaced tensor `{name}`")))?;
            let map = match ns {
                "param" => &mut ckpt.params,
                "buffer" => &mut ckpt.buffers,
                "optim" => &mut ckpt.optimizer,
                other => return Err(Error::Checkpoint(format!("unknown namespace `{other}`"))),
            };
            map.insert(key.to_string(), t);
        }
        Ok(ckpt)
    }

    /// Writes parameters and buffers into `model`, checking names and shapes.
    pub fn restore_into(&self, model: &Mfrn) -> Result<()> {
        let store = model.params();
        for (registry, stored, what) in [
            (store.params(), &self.params, "parameter"),
            (store.buffers(), &self.buffers, "buffer"),
        ] {
            if registry.len() != stored.len() {
                return Err(Error::Checkpoint(format!(
                    "{what} count differs: model {}, checkpoint {}",
                    registry.len(),
                    stored.len()
                )));
            }
            for (k, var) in registry {
                let t = stored
                    .get(k)
                    .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks {what} `{k}`")))?;
                if t.dims() != var.dims() {
                    return Err(Error::Checkpoint(format!(
                        "{what} `{k}` has shape {:?}, model expects {:?}",
                        t.dims(),
                        var.dims()
                    )));
                }
                var.set(&t.to_dtype(var.dtype())?)?;
            }
        }
        let (center, off) = bayar::constraint_state(store.get(NOISE_KERNEL).unwrap().as_tensor())?;
        if center != -1.0 || (off - 1.0).abs() > 1e-4 {
            return Err(Error::Checkpoint("stored noise kernel violates its constraint".into()));
        }
        Ok(())
    }

    /// Builds a model from the stored config and restores every tensor.
    pub fn into_model(&self) -> Result<Mfrn> {
        let model = Mfrn::new(&self.model_config, crate::rng::SeedStream::root(self.trainer.seed))?;
        self.restore_into(&model)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;
    use crate::rng::SeedStream;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = Mfrn::new(&ModelConfig::miniature(), SeedStream::root(3)).unwrap();
        let x = Tensor::rand(0f32, 1.0, (2, 3, 64, 64), &Device::Cpu).unwrap();
        model.forward(&x, Mode::TRAIN).unwrap();
        let mut optim = BTreeMap::new();
        optim.insert("momentum/a".to_string(), Tensor::new(&[1.5f32, -2.0], &Device::Cpu).unwrap());
        let trainer = TrainerState {
            step: 17,
            epoch: 2,
            seed: 3,
            ..Default::default()
        };
        Checkpoint::capture(&model, &optim, "abc", trainer.clone()).unwrap().save(&path).unwrap();

        let loaded = Checkpoint::load(&path, Some("abc"), false).unwrap();
        assert_eq!(loaded.trainer, trainer);
        let other = Mfrn::new(&ModelConfig::miniature(), SeedStream::root(99)).unwrap();
        loaded.restore_into(&other).unwrap();
        for (k, v) in model.params().params() {
            let a = v.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let b = other.params().get(k).unwrap().as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(a, b, "{k}");
        }
        let ya = model.forward(&x, Mode::Eval).unwrap().p_fake.to_vec1::<f32>().unwrap();
        let yb = other.forward(&x, Mode::Eval).unwrap().p_fake.to_vec1::<f32>().unwrap();
        assert_eq!(ya, yb);
        assert_eq!(
            loaded.optimizer["momentum/a"].to_vec1::<f32>().unwrap(),
            vec![1.5, -2.0]
        );
    }

    #[test]
    fn fingerprint_mismatch_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = Mfrn::new(&ModelConfig::miniature(), SeedStream::root(3)).unwrap();
        Checkpoint::capture(&model, &BTreeMap::new(), "abc", TrainerState::default())
            .unwrap()
            .save(&path)
            .unwrap();
        assert!(matches!(Checkpoint::load(&path, Some("xyz"), false), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::load(&path, Some("xyz"), true).is_ok());
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(Checkpoint::load(&path, None, false).is_err());
    }
}
