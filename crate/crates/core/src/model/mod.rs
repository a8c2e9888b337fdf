//! The multi-scale feature reconstruction network.
//!
//! An RGB backbone and a noise backbone (fed by the constrained noise
//! extractor) produce five-scale pyramids. Sobel blocks turn each RGB scale into
//! edge features that drive the boundary head; fusion blocks merge RGB, edge
//! and noise features scale by scale into `F_f`, which feeds the map decoder
//! and the classifier.

pub mod backbone;
pub mod bam;
pub mod bayar;
pub mod checkpoint;
pub mod ffb;
pub mod heads;
pub mod layers;
pub mod sobel;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face::Image;
use crate::rng::SeedStream;
use backbone::{scale_sizes, Backbone, FeaturePyramid, SCALES};
use bayar::NoiseExtractor;
use ffb::FusionBlock;
use heads::{class_probabilities, ClsHead, EdgeHead, MapHead};
pub use layers::{Mode, NormPolicy, ParamStore};
use sobel::SobelBlock;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_size: usize,
    pub channels: [usize; SCALES],
    pub edge_mid: usize,
    pub map_taper: [usize; 3],
    pub cls_mid: usize,
    pub bam_reduction: usize,
    pub bam_dilation: usize,
    pub norm: NormPolicy,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl ModelConfig {
    /// Full-size configuration: 380x380 input, pyramid channels summing to 720.
    pub fn reference() -> Self {
        Self {
            input_size: 380,
            channels: [24, 32, 56, 160, 448],
            edge_mid: 64,
            map_taper: [160, 56, 32],
            cls_mid: 256,
            bam_reduction: 16,
            bam_dilation: 4,
            norm: NormPolicy::Batch,
            precision: Precision::F32,
        }
    }

    /// Desk-scale configuration used for tests and toy training.
    pub fn miniature() -> Self {
        Self {
            input_size: 64,
            channels: [4, 4, 8, 8, 16],
            edge_mid: 8,
            map_taper: [8, 8, 4],
            cls_mid: 16,
            bam_reduction: 2,
            bam_dilation: 4,
            norm: NormPolicy::Batch,
            precision: Precision::F32,
        }
    }

    pub fn edge_channels(&self) -> usize {
        self.channels.iter().sum()
    }

    pub fn fused_channels(&self) -> usize {
        2 * self.channels[SCALES - 1]
    }

    pub fn scale_sizes(&self) -> [usize; SCALES] {
        scale_sizes(self.input_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size < 32 || self.input_size % 2 != 0 {
            return Err(Error::Config(format!(
                "input size {} must be even and at least 32",
                self.input_size
            )));
        }
        if self.channels.contains(&0) || self.map_taper.contains(&0) || self.edge_mid == 0 || self.cls_mid == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }
}

/// Network predictions for a batch.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// `(n, 1, S/2, S/2)` in (0, 1).
    pub edge: Tensor,
    /// `(n, 1, S/2, S/2)` in (0, 1).
    pub map: Tensor,
    /// `(n, 2)` class logits, index 1 = fake.
    pub logits: Tensor,
    /// `(n,)` fake-class probability.
    pub p_fake: Tensor,
    /// Fusion feature `F_f`, `(n, 2 C_5, S/32, S/32)`.
    pub fused: Tensor,
    /// Channel count of the concatenated edge features.
    pub edge_concat_channels: usize,
}

#[derive(Debug)]
pub struct Mfrn {
    config: ModelConfig,
    store: ParamStore,
    noise: NoiseExtractor,
    rgb_backbone: Backbone,
    noise_backbone: Backbone,
    sobel: Vec<SobelBlock>,
    edge_head: EdgeHead,
    fusion: Vec<FusionBlock>,
    map_head: MapHead,
    cls_head: ClsHead,
}

pub const NOISE_KERNEL: &str = "noise.kernel";

impl Mfrn {
    /// Builds a freshly initialized network; all initial values derive from `seed`.
    pub fn new(config: &ModelConfig, seed: SeedStream) -> Result<Self> {
        config.validate()?;
        let dtype = config.precision.dtype();
        let mut store = ParamStore::new(dtype);
        let mut rng = seed.child("model-init").rng();
        let c = config.channels;

        let noise = NoiseExtractor::new(&mut store.scope("noise", &mut rng))?;
        let rgb_backbone = Backbone::new(&mut store.scope("rgb_backbone", &mut rng), 3, &c, config.norm)?;
        let noise_backbone = Backbone::new(&mut store.scope("noise_backbone", &mut rng), 1, &c, config.norm)?;
        let sobel = (0..SCALES)
            .map(|i| SobelBlock::new(&mut store.scope(&format!("sobel{}", i + 1), &mut rng), c[i], config.norm, dtype))
            .collect::<Result<Vec<_>>>()?;
        let edge_head = EdgeHead::new(&mut store.scope("edge_head", &mut rng), config.edge_channels(), config.edge_mid)?;
        let fusion = (0..SCALES)
            .map(|i| {
                FusionBlock::new(
                    &mut store.scope(&format!("ffb{}", i + 1), &mut rng),
                    c[i],
                    (i > 0).then(|| 2 * c[i - 1]),
                    config.bam_reduction,
                    config.bam_dilation,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let map_head = MapHead::new(&mut store.scope("map_head", &mut rng), config.fused_channels(), &config.map_taper)?;
        let cls_head = ClsHead::new(&mut store.scope("cls_head", &mut rng), config.fused_channels(), config.cls_mid)?;

        let model = Self {
            config: config.clone(),
            store,
            noise,
            rgb_backbone,
            noise_backbone,
            sobel,
            edge_head,
            fusion,
            map_head,
            cls_head,
        };
        model.project_constraints()?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Re-applies the noise-kernel constraint and restores the fixed gradient filters.
    pub fn project_constraints(&self) -> Result<()> {
        let var = self
            .store
            .get(NOISE_KERNEL)
            .ok_or_else(|| Error::Shape("noise kernel missing from registry".into()))?;
        bayar::project_var(var)?;
        let canonical = sobel::sobel_kernel(self.dtype(), &Device::Cpu)?;
        for block in &self.sobel {
            let diff = (block.kernel() - &canonical)?.abs()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if diff != 0.0 {
                return Err(Error::Numeric("fixed gradient filter was modified".into()));
            }
        }
        Ok(())
    }

    pub fn noise_kernel(&self) -> &Tensor {
        &self.noise.kernel
    }

    pub fn sobel_kernels(&self) -> Vec<&Tensor> {
        self.sobel.iter().map(|b| b.kernel()).collect()
    }

    pub fn noise_map(&self, input: &Tensor) -> Result<Tensor> {
        self.noise.forward(input)
    }

    pub fn rgb_pyramid(&self, input: &Tensor, mode: Mode) -> Result<FeaturePyramid> {
        self.rgb_backbone.forward(input, mode)
    }

    /// `input`: `(n, 3, S, S)` in `[0, 1]`.
    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<ModelOutput> {
        let (_, c, h, w) = input.dims4()?;
        let s = self.config.input_size;
        if c != 3 || h != s || w != s {
            return Err(Error::Shape(format!(
                "expected (n, 3, {s}, {s}) input, got {:?}",
                input.dims()
            )));
        }
        let input = input.to_dtype(self.dtype())?;
        let noise = self.noise.forward(&input)?;
        let rgb = self.rgb_backbone.forward(&input, mode)?;
        let noise_feats = self.noise_backbone.forward(&noise, mode)?;
        let edges = rgb
            .0
            .iter()
            .zip(&self.sobel)
            .map(|(f, block)| block.forward(f, mode))
            .collect::<Result<Vec<_>>>()?;

        let sizes = self.config.scale_sizes();
        let concat = self.edge_head.concat(&edges, sizes[0], sizes[0])?;
        let edge = self.edge_head.forward(&concat)?;

        let mut prev: Option<Tensor> = None;
        for (i, block) in self.fusion.iter().enumerate() {
            let out = block.forward(&rgb.0[i], &edges[i], &noise_feats.0[i], prev.as_ref())?;
            prev = Some(out);
        }
        let fused = prev.expect("five fusion blocks");
        let map = self.map_head.forward(&fused, &[sizes[3], sizes[2], sizes[1], sizes[0]])?;
        let logits = self.cls_head.forward(&fused)?;
        let p_fake = class_probabilities(&logits)?.narrow(1, 1, 1)?.squeeze(1)?;
        Ok(ModelOutput {
            edge,
            map,
            logits,
            p_fake,
            fused,
            edge_concat_channels: concat.dim(1)?,
        })
    }

    /// Parameter names of one backbone (prefix `rgb_backbone` or `noise_backbone`).
    pub fn backbone_params(&self, prefix: &str) -> Vec<(&String, &candle_core::Var)> {
        self.store
            .params()
            .iter()
            .filter(|(k, _)| k.starts_with(&format!("{prefix}.")))
            .collect()
    }
}

/// Stacks `(h, w, 3)` rasters into an `(n, 3, h, w)` tensor.
pub fn images_to_tensor(images: &[&Image], dtype: DType) -> Result<Tensor> {
    let (h, w, _) = images
        .first()
        .ok_or_else(|| Error::Shape("empty image batch".into()))?
        .dim();
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.dim() != (h, w, 3) {
            return Err(Error::Shape(format!("batch mixes {:?} and {:?}", (h, w, 3), img.dim())));
        }
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data.push(img[[y, x, c]]);
                }
            }
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Stacks `(h, w)` fields into an `(n, 1, h, w)` tensor.
pub fn fields_to_tensor(fields: &[&ndarray::Array2<f32>], dtype: DType) -> Result<Tensor> {
    let (h, w) = fields
        .first()
        .ok_or_else(|| Error::Shape("empty field batch".into()))?
        .dim();
    let mut data = Vec::with_capacity(fields.len() * h * w);
    for f in fields {
        if f.dim() != (h, w) {
            return Err(Error::Shape("field batch has mixed sizes".into()));
        }
        data.extend(f.iter().copied());
    }
    Ok(Tensor::from_vec(data, (fields.len(), 1, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Extracts sample `i` of an `(n, 1, h, w)` tensor as an `(h, w)` field.
pub fn tensor_to_field(t: &Tensor, i: usize) -> Result<ndarray::Array2<f32>> {
    let (_, _, h, w) = t.dims4()?;
    let v: Vec<f32> = t.get(i)?.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
    ndarray::Array2::from_shape_vec((h, w), v).map_err(|e| Error::Shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn miniature_output_contract() {
        let cfg = ModelConfig::miniature();
        let model = Mfrn::new(&cfg, SeedStream::root(0)).unwrap();
        let x = Tensor::rand(0f32, 1.0, (2, 3, 64, 64), &Device::Cpu).unwrap();
        let out = model.forward(&x, Mode::TRAIN).unwrap();
        assert_eq!(out.edge.dims(), &[2, 1, 32, 32]);
        assert_eq!(out.map.dims(), &[2, 1, 32, 32]);
        assert_eq!(out.p_fake.dims(), &[2]);
        assert_eq!(out.fused.dims(), &[2, 32, 2, 2]);
        assert_eq!(out.edge_concat_channels, 40);
        for t in [&out.edge, &out.map, &out.p_fake] {
            let v = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert!(v.iter().all(|p| p.is_finite() && *p > 0.0 && *p < 1.0));
        }
    }

    #[test]
    fn zero_input_is_finite_at_every_scale() {
        let model = Mfrn::new(&ModelConfig::miniature(), SeedStream::root(0)).unwrap();
        let x = Tensor::zeros((1, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        let pyr = model.rgb_pyramid(&x, Mode::Eval).unwrap();
        let sizes = ModelConfig::miniature().scale_sizes();
        for (i, f) in pyr.0.iter().enumerate() {
            assert_eq!(f.dims()[2], sizes[i]);
            let v = f.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert!(v.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn inference_is_deterministic_and_seeded_init_repeats() {
        let cfg = ModelConfig::miniature();
        let a = Mfrn::new(&cfg, SeedStream::root(4)).unwrap();
        let b = Mfrn::new(&cfg, SeedStream::root(4)).unwrap();
        let x = Tensor::rand(0f32, 1.0, (1, 3, 64, 64), &Device::Cpu).unwrap();
        let pa = a.forward(&x, Mode::Eval).unwrap().map.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let pa2 = a.forward(&x, Mode::Eval).unwrap().map.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let pb = b.forward(&x, Mode::Eval).unwrap().map.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(pa, pa2);
        assert_eq!(pa, pb);
    }

    #[test]
    fn backbones_share_no_parameters() {
        let model = Mfrn::new(&ModelConfig::miniature(), SeedStream::root(0)).unwrap();
        let rgb = model.backbone_params("rgb_backbone");
        let noise = model.backbone_params("noise_backbone");
        assert!(!rgb.is_empty() && !noise.is_empty());
        let rgb_ids: HashSet<_> = rgb.iter().map(|(_, v)| v.as_tensor().id()).collect();
        assert!(noise.iter().all(|(_, v)| !rgb_ids.contains(&v.as_tensor().id())));
        // First noise-branch convolution takes one channel.
        let first = model.params().get("noise_backbone.stage1.down.weight").unwrap();
        assert_eq!(first.dims(), &[4, 1, 3, 3]);
    }

    #[test]
    fn constraint_holds_at_initialization() {
        let model = Mfrn::new(&ModelConfig::miniature(), SeedStream::root(9)).unwrap();
        let (center, off) = bayar::constraint_state(model.noise_kernel()).unwrap();
        assert_eq!(center, -1.0);
        assert!((off - 1.0).abs() < 1e-6);
    }

    #[test]
    fn invalid_sizes_are_rejected() {
        let mut cfg = ModelConfig::miniature();
        cfg.input_size = 30;
        assert!(Mfrn::new(&cfg, SeedStream::root(0)).is_err());
        cfg.input_size = 65;
        assert!(Mfrn::new(&cfg, SeedStream::root(0)).is_err());
        let model = Mfrn::new(&ModelConfig::miniature(), SeedStream::root(0)).unwrap();
        let x = Tensor::zeros((1, 3, 32, 32), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(model.forward(&x, Mode::Eval), Err(Error::Shape(_))));
    }
}
