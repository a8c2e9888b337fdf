//! Reconstructors: encode a face into identity and background latents, decode back.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face::Image;
use crate::model::checkpoint::{load_tensors, save_tensors};
use crate::model::layers::{sigmoid, Conv2d, ParamStore, UpConv};
use crate::model::images_to_tensor;
use crate::rng::SeedStream;

/// Identity and background embeddings of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPair {
    pub id_vec: Vec<f32>,
    pub bg_vec: Vec<f32>,
    /// Spatial size of the encoded image.
    pub height: usize,
    pub width: usize,
}

impl LatentPair {
    pub fn is_finite(&self) -> bool {
        self.id_vec.iter().chain(&self.bg_vec).all(|v| v.is_finite())
    }
}

/// A disentangling reconstructor. `decode(encode(x))` has the shape of `x`.
pub trait ReconstructorAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn encode(&self, image: &Image) -> Result<LatentPair>;
    fn decode(&self, latent: &LatentPair) -> Result<Image>;
}

fn check_face_shape(adapter: &str, image: &Image) -> Result<(usize, usize)> {
    let (h, w, c) = image.dim();
    if c != 3 || h == 0 || w == 0 {
        return Err(Error::Shape(format!(
            "adapter `{adapter}` needs an HxWx3 face, got {h}x{w}x{c}"
        )));
    }
    Ok((h, w))
}

/// Splits the flattened raster into two halves; decoding reassembles it exactly.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityAdapter;

impl ReconstructorAdapter for IdentityAdapter {
    fn name(&self) -> &str {
        "identity"
    }

    fn encode(&self, image: &Image) -> Result<LatentPair> {
        let (height, width) = check_face_shape(self.name(), image)?;
        let flat: Vec<f32> = image.iter().copied().collect();
        let (id, bg) = flat.split_at(flat.len() / 2);
        Ok(LatentPair {
            id_vec: id.to_vec(),
            bg_vec: bg.to_vec(),
            height,
            width,
        })
    }

    fn decode(&self, latent: &LatentPair) -> Result<Image> {
        let data: Vec<f32> = latent.id_vec.iter().chain(&latent.bg_vec).copied().collect();
        Image::from_shape_vec((latent.height, latent.width, 3), data).map_err(|e| Error::Adapter {
            adapter: self.name().into(),
            reason: e.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    /// Latent channels per half (identity / background).
    pub latent_channels: usize,
    /// Channel width of the first encoder stage.
    pub width: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            latent_channels: 4,
            width: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderTraining {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for AutoencoderTraining {
    fn default() -> Self {
        Self {
            steps: 300,
            batch: 8,
            lr: 3e-3,
        }
    }
}

const ARCHITECTURE: &str = "conv-autoencoder-v1";

/// Three stride-2 convolutions down to an `H/8 x W/8` latent whose channels
/// are split into identity and background halves, mirrored by three
/// transposed convolutions.
#[derive(Debug)]
pub struct ConvAutoencoder {
    name: String,
    config: AutoencoderConfig,
    store: ParamStore,
    enc: [Conv2d; 3],
    dec: [UpConv; 3],
}

impl ConvAutoencoder {
    pub fn new(config: &AutoencoderConfig, seed: SeedStream) -> Result<Self> {
        if config.latent_channels == 0 || config.width == 0 {
            return Err(Error::Config("autoencoder widths must be positive".into()));
        }
        let mut store = ParamStore::new(DType::F32);
        let mut rng = seed.child("autoencoder-init").rng();
        let (w, l) = (config.width, config.latent_channels);
        let mut s = store.scope("ae", &mut rng);
        let enc = [
            Conv2d::new(&mut s.sub("enc1"), 3, w, 3, 2, 1)?,
            Conv2d::new(&mut s.sub("enc2"), w, 2 * w, 3, 2, 1)?,
            Conv2d::new(&mut s.sub("enc3"), 2 * w, 2 * l, 3, 2, 1)?,
        ];
        let dec = [
            UpConv::new(&mut s.sub("dec1"), 2 * l, 2 * w)?,
            UpConv::new(&mut s.sub("dec2"), 2 * w, w)?,
            UpConv::new(&mut s.sub("dec3"), w, 3)?,
        ];
        Ok(Self {
            name: "toy-autoencoder".into(),
            config: config.clone(),
            store,
            enc,
            dec,
        })
    }

    pub fn config(&self) -> &AutoencoderConfig {
        &self.config
    }

    fn encode_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.enc[0].forward(x)?.relu()?;
        let h = self.enc[1].forward(&h)?.relu()?;
        self.enc[2].forward(&h)
    }

    fn decode_tensor(&self, z: &Tensor) -> Result<Tensor> {
        let h = self.dec[0].forward(z)?.relu()?;
        let h = self.dec[1].forward(&h)?.relu()?;
        sigmoid(&self.dec[2].forward(&h)?)
    }

    fn check_size(&self, h: usize, w: usize) -> Result<()> {
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::Shape(format!(
                "adapter `{}` needs sides divisible by 8, got {h}x{w}",
                self.name
            )));
        }
        Ok(())
    }

    /// Fits the autoencoder to `images` by mean squared reconstruction error.
    pub fn train(&mut self, images: &[Image], cfg: &AutoencoderTraining, seed: SeedStream) -> Result<Vec<f64>> {
        let first = images
            .first()
            .ok_or_else(|| Error::Data("no images to fit the autoencoder on".into()))?;
        let (h, w, _) = first.dim();
        self.check_size(h, w)?;
        let vars = self.store.params().values().cloned().collect();
        let mut opt = AdamW::new(
            vars,
            ParamsAdamW {
                lr: cfg.lr,
                weight_decay: 0.0,
                ..Default::default()
            },
        )?;
        let mut rng = seed.child("autoencoder-train").rng();
        let mut losses = Vec::with_capacity(cfg.steps);
        for _ in 0..cfg.steps {
            let batch: Vec<&Image> = (0..cfg.batch.max(1))
                .map(|_| &images[rng.random_range(0..images.len())])
                .collect();
            let x = images_to_tensor(&batch, DType::F32)?;
            let y = self.decode_tensor(&self.encode_tensor(&x)?)?;
            let loss = (y - &x)?.sqr()?.mean_all()?;
            opt.backward_step(&loss)?;
            losses.push(loss.to_scalar::<f32>()? as f64);
        }
        Ok(losses)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: BTreeMap<String, Tensor> = self
            .store
            .params()
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        let mut meta = HashMap::new();
        meta.insert("architecture".into(), ARCHITECTURE.into());
        meta.insert(
            "config".into(),
            serde_json::to_string(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
        save_tensors(path, &tensors, meta)
    }

    /// Loads weights written by [`ConvAutoencoder::save`]; failures name the adapter.
    pub fn load(path: &Path, name: &str) -> Result<Self> {
        let fail = |reason: String| Error::Adapter {
            adapter: name.to_string(),
            reason,
        };
        let (tensors, meta) = load_tensors(path).map_err(|e| fail(e.to_string()))?;
        if meta.get("architecture").map(String::as_str) != Some(ARCHITECTURE) {
            return Err(fail(format!("{} is not a {ARCHITECTURE} model", path.display())));
        }
        let config: AutoencoderConfig = meta
            .get("config")
            .and_then(|c| serde_json::from_str(c).ok())
            .ok_or_else(|| fail("missing or invalid config metadata".into()))?;
        let mut model = Self::new(&config, SeedStream::root(0)).map_err(|e| fail(e.to_string()))?;
        model.name = name.to_string();
        if tensors.len() != model.store.params().len() {
            return Err(fail("weight count does not match the architecture".into()));
        }
        for (k, var) in model.store.params() {
            let t = tensors.get(k).ok_or_else(|| fail(format!("missing weight `{k}`")))?;
            if t.dims() != var.dims() {
                return Err(fail(format!("weight `{k}` has shape {:?}, expected {:?}", t.dims(), var.dims())));
            }
            var.set(&t.to_dtype(DType::F32)?)?;
        }
        Ok(model)
    }
}

impl ReconstructorAdapter for ConvAutoencoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn encode(&self, image: &Image) -> Result<LatentPair> {
        let (height, width) = check_face_shape(&self.name, image)?;
        self.check_size(height, width)?;
        let z = self.encode_tensor(&images_to_tensor(&[image], DType::F32)?)?;
        let l = self.config.latent_channels;
        let half = |start: usize| -> Result<Vec<f32>> { Ok(z.narrow(1, start, l)?.flatten_all()?.to_vec1()?) };
        Ok(LatentPair {
            id_vec: half(0)?,
            bg_vec: half(l)?,
            height,
            width,
        })
    }

    fn decode(&self, latent: &LatentPair) -> Result<Image> {
        self.check_size(latent.height, latent.width)?;
        let l = self.config.latent_channels;
        let (h, w) = (latent.height / 8, latent.width / 8);
        if latent.id_vec.len() != l * h * w || latent.bg_vec.len() != l * h * w {
            return Err(Error::Adapter {
                adapter: self.name.clone(),
                reason: "latent length does not match the image size".into(),
            });
        }
        let id = Tensor::from_slice(&latent.id_vec, (1, l, h, w), &Device::Cpu)?;
        let bg = Tensor::from_slice(&latent.bg_vec, (1, l, h, w), &Device::Cpu)?;
        let y = self.decode_tensor(&Tensor::cat(&[id, bg], 1)?)?;
        let data: Vec<f32> = y.squeeze(0)?.permute((1, 2, 0))?.flatten_all()?.to_vec1()?;
        Image::from_shape_vec((latent.height, latent.width, 3), data).map_err(|e| Error::Shape(e.to_string()))
    }
}

/// A user-supplied serialized reconstructor. Any loading problem surfaces as
/// an adapter error naming the file.
pub fn load_external(path: &Path) -> Result<ConvAutoencoder> {
    let name = format!("external:{}", path.display());
    if !path.is_file() {
        return Err(Error::Adapter {
            adapter: name,
            reason: "model file not found".into(),
        });
    }
    ConvAutoencoder::load(path, &name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toy::ToyFace;

    #[test]
    fn identity_round_trip_is_exact() {
        let img = ToyFace::canonical().render(16);
        let a = IdentityAdapter;
        let z = a.encode(&img).unwrap();
        assert_eq!(z.id_vec.len() + z.bg_vec.len(), 16 * 16 * 3);
        assert_eq!(a.decode(&z).unwrap(), img);
    }

    #[test]
    fn autoencoder_is_deterministic_and_shape_preserving() {
        let faces: Vec<Image> = (0..4)
            .map(|i| ToyFace::sample(&mut SeedStream::root(i).rng()).render(8))
            .collect();
        let run = || {
            let mut ae = ConvAutoencoder::new(&AutoencoderConfig::default(), SeedStream::root(1)).unwrap();
            ae.train(&faces, &AutoencoderTraining { steps: 3, batch: 2, lr: 1e-3 }, SeedStream::root(1))
                .unwrap();
            ae.decode(&ae.encode(&faces[0]).unwrap()).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.dim(), (8, 8, 3));
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        let bytes = |x: &Image| x.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>();
        assert_eq!(bytes(&a), bytes(&b));
    }

    #[test]
    fn autoencoder_learns_and_round_trips_through_disk() {
        let faces: Vec<Image> = (0..16)
            .map(|i| ToyFace::sample(&mut SeedStream::root(i).rng()).render(32))
            .collect();
        let mut ae = ConvAutoencoder::new(&AutoencoderConfig::default(), SeedStream::root(1)).unwrap();
        let losses = ae
            .train(&faces, &AutoencoderTraining { steps: 60, batch: 4, lr: 3e-3 }, SeedStream::root(1))
            .unwrap();
        assert!(losses.last().unwrap() < &(losses[0] * 0.5), "{losses:?}");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.safetensors");
        ae.save(&path).unwrap();
        let loaded = load_external(&path).unwrap();
        let z = ae.encode(&faces[0]).unwrap();
        assert_eq!(ae.decode(&z).unwrap(), loaded.decode(&z).unwrap());
    }

    #[test]
    fn bad_external_model_is_an_adapter_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.safetensors");
        assert!(matches!(load_external(&missing), Err(Error::Adapter { .. })));
        let junk = dir.path().join("junk.safetensors");
        std::fs::write(&junk, b"garbage").unwrap();
        match load_external(&junk) {
            Err(Error::Adapter { adapter, .. }) => assert!(adapter.contains("junk")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_face_input_is_a_shape_error() {
        let ae = ConvAutoencoder::new(&AutoencoderConfig::default(), SeedStream::root(0)).unwrap();
        let odd = Image::zeros((12, 12, 3));
        assert!(matches!(ae.encode(&odd), Err(Error::Shape(_))));
        let gray = Image::zeros((8, 8, 1));
        assert!(matches!(IdentityAdapter.encode(&gray), Err(Error::Shape(_))));
    }
}
