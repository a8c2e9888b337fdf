//! Reconstructed blended image (RBI) synthesis.
//!
//! A genuine face is reconstructed through an identity/background
//! reconstructor, one of the two images receives statistical transforms, a
//! landmark hull mask is deformed together with the source, blurred, and the
//! source is blended onto the target. The blending mask and its boundary
//! `E = 4 M (1 - M)` become the supervision targets.

pub mod adapter;
pub mod augment;
pub mod blend;
pub mod blur;
pub mod deform;
pub mod hull;
pub mod latent;
pub mod shard;
pub mod ssta;

use std::path::Path;

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face::{FaceRecord, Image, Label};
use crate::rng::{Rng, SeedStream};
use adapter::ReconstructorAdapter;
use deform::{DeformConfig, DeformLog};
use hull::{HullConfig, HullVariant};
use latent::{LatentNoiseConfig, NoiseLog};
use ssta::{SstaConfig, SstaParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoleConfig {
    /// Draw the source/target roles at random instead of source = reconstruction.
    pub randomize: bool,
    /// Probability that the source (rather than the target) gets the statistical transforms.
    pub p_augment_source: f64,
}

impl Default for RoleConfig {
    fn default() -> Self {
        Self {
            randomize: false,
            p_augment_source: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub latent_noise: LatentNoiseConfig,
    pub roles: RoleConfig,
    pub ssta: SstaConfig,
    pub hull: HullConfig,
    pub deform: DeformConfig,
    /// Mask blur standard deviation range, pixels.
    pub blur_sigma: [f32; 2],
    /// Blend strength range; must lie within `[0.5, 1]`.
    pub alpha: [f32; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            latent_noise: LatentNoiseConfig::default(),
            roles: RoleConfig::default(),
            ssta: SstaConfig::default(),
            hull: HullConfig::default(),
            deform: DeformConfig::default(),
            blur_sigma: [1.0, 4.0],
            alpha: [0.5, 1.0],
        }
    }
}

impl SynthConfig {
    /// Every random stage collapsed: no latent noise, no transforms, full hull,
    /// no deformation, no blur, `α = 1`.
    pub fn degenerate() -> Self {
        Self {
            latent_noise: LatentNoiseConfig { p: 0.0, ..Default::default() },
            roles: RoleConfig::default(),
            ssta: SstaConfig::disabled(),
            hull: HullConfig {
                variants: vec![HullVariant::Full],
                ..Default::default()
            },
            deform: DeformConfig { p: 0.0, ..Default::default() },
            blur_sigma: [0.0, 0.0],
            alpha: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.alpha;
        if !(0.5..=1.0).contains(&lo) || !(0.5..=1.0).contains(&hi) || lo > hi {
            return Err(Error::Config(format!("synth.alpha must be a sub-range of [0.5, 1], got {:?}", self.alpha)));
        }
        if self.blur_sigma[0] < 0.0 || self.blur_sigma[0] > self.blur_sigma[1] {
            return Err(Error::Config(format!("invalid synth.blur_sigma {:?}", self.blur_sigma)));
        }
        if self.hull.variants.is_empty() {
            return Err(Error::Config("synth.hull.variants must not be empty".into()));
        }
        for p in [self.latent_noise.p, self.roles.p_augment_source, self.deform.p, self.ssta.p_blur] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentedSide {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleLog {
    /// Whether the source derives from the reconstruction.
    pub source_is_reconstruction: bool,
    pub augmented: AugmentedSide,
    pub ssta: SstaParams,
}

/// Everything drawn while generating one sample.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub face_id: String,
    /// Identifier of the per-sample seed stream.
    pub seed: u64,
    pub alpha: Option<f32>,
    pub blur_sigma: Option<f32>,
    pub hull_variant: Option<HullVariant>,
    pub latent_noise: Option<NoiseLog>,
    pub roles: Option<RoleLog>,
    pub deform: Option<DeformLog>,
}

/// One training unit: image, half-resolution targets and label.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendedSample {
    pub image: Image,
    /// Blending mask at half resolution.
    pub mask_target: Array2<f32>,
    /// Blending edge at half resolution.
    pub edge_target: Array2<f32>,
    /// 0 genuine, 1 fake.
    pub label: u8,
    pub meta: SampleMeta,
}

fn draw(rng: &mut Rng, range: [f32; 2]) -> f32 {
    if range[1] > range[0] {
        rng.random_range(range[0]..=range[1])
    } else {
        range[0]
    }
}

fn face_id(face: &FaceRecord) -> String {
    format!("{}_{:04}", face.provenance.video_id, face.provenance.frame_idx)
}

/// Reconstruction of a genuine face, optionally with a perturbed background latent.
pub fn reconstruct(
    face: &FaceRecord,
    adapter: &dyn ReconstructorAdapter,
    noise: &LatentNoiseConfig,
    rng: &mut Rng,
) -> Result<(Image, NoiseLog)> {
    if face.label != Label::Genuine {
        return Err(Error::Data(format!("{} is not a genuine face", face_id(face))));
    }
    let mut latent = adapter.encode(&face.image)?;
    if !latent.is_finite() {
        return Err(Error::Adapter {
            adapter: adapter.name().into(),
            reason: "encoder produced non-finite latents".into(),
        });
    }
    let (bg, log) = latent::inject_bg_noise(&latent.bg_vec, noise, rng);
    latent.bg_vec = bg;
    let out = adapter.decode(&latent)?;
    if out.dim() != face.image.dim() {
        return Err(Error::Adapter {
            adapter: adapter.name().into(),
            reason: format!("decoded {:?} from a {:?} face", out.dim(), face.image.dim()),
        });
    }
    Ok((out.mapv(|v| v.clamp(0.0, 1.0)), log))
}

/// Source and target images; the statistical transforms hit exactly one of them.
pub fn assign_source_target(
    genuine: &Image,
    reconstructed: &Image,
    ssta_cfg: &SstaConfig,
    roles: &RoleConfig,
    rng: &mut Rng,
) -> Result<(Image, Image, RoleLog)> {
    if genuine.dim() != reconstructed.dim() {
        return Err(Error::Shape(format!(
            "genuine {:?} and reconstruction {:?} differ",
            genuine.dim(),
            reconstructed.dim()
        )));
    }
    let source_is_reconstruction = !roles.randomize || rng.random::<bool>();
    let (source, target) = if source_is_reconstruction {
        (reconstructed, genuine)
    } else {
        (genuine, reconstructed)
    };
    let augment_source = rng.random::<f64>() < roles.p_augment_source;
    let (augmented, params) = ssta::ssta(if augment_source { source } else { target }, ssta_cfg, rng);
    let (s, t, side) = if augment_source {
        (augmented, target.clone(), AugmentedSide::Source)
    } else {
        (source.clone(), augmented, AugmentedSide::Target)
    };
    Ok((
        s,
        t,
        RoleLog {
            source_is_reconstruction,
            augmented: side,
            ssta: params,
        },
    ))
}

/// Full RBI pipeline for one genuine face. Every stage draws from its own
/// labeled child of `stream`, so the stages' coins are independent.
pub fn generate_rbi(
    face: &FaceRecord,
    adapter: &dyn ReconstructorAdapter,
    cfg: &SynthConfig,
    stream: &SeedStream,
) -> Result<BlendedSample> {
    cfg.validate()?;
    face.validate()?;
    let (h, w, _) = face.image.dim();
    let (reconstructed, noise_log) =
        reconstruct(face, adapter, &cfg.latent_noise, &mut stream.child("reconstruct").rng())?;
    let (source, target, role_log) =
        assign_source_target(&face.image, &reconstructed, &cfg.ssta, &cfg.roles, &mut stream.child("roles").rng())?;
    let initial = hull::build_hull_mask(&face.landmarks, h, w, &cfg.hull, &mut stream.child("hull").rng())?;
    let (deformed, source, deform_log) =
        deform::deform_mask_and_source(&initial, &source, &cfg.deform, &mut stream.child("deform").rng());
    let mut rng = stream.child("blend").rng();
    let sigma = draw(&mut rng, cfg.blur_sigma);
    let alpha = draw(&mut rng, cfg.alpha);
    let mask = blur::blur_mask(&deformed.mask, sigma);
    let image = blend::blend(&source, &target, &mask, alpha)?;
    let edge = blend::edge_from_mask(&mask);
    let mask_target = blend::downsample2(&mask);
    if !mask_target.iter().any(|&v| v > 0.0) {
        return Err(Error::Data(format!("{}: blending mask left the image", face_id(face))));
    }
    Ok(BlendedSample {
        image,
        mask_target,
        edge_target: blend::downsample2(&edge),
        label: 1,
        meta: SampleMeta {
            face_id: face_id(face),
            seed: stream.id(),
            alpha: Some(alpha),
            blur_sigma: Some(sigma),
            hull_variant: Some(deformed.hull_variant),
            latent_noise: Some(noise_log),
            roles: Some(role_log),
            deform: Some(deform_log),
        },
    })
}

/// A genuine face as a training unit: all-zero targets.
pub fn genuine_sample(face: &FaceRecord) -> BlendedSample {
    let (h, w, _) = face.image.dim();
    let half = ((h + 1) / 2, (w + 1) / 2);
    BlendedSample {
        image: face.image.clone(),
        mask_target: Array2::zeros(half),
        edge_target: Array2::zeros(half),
        label: 0,
        meta: SampleMeta {
            face_id: face_id(face),
            ..Default::default()
        },
    }
}

#[derive(Serialize)]
struct ShardRecord<'a> {
    id: &'a str,
    label: u8,
    image: String,
    mask: String,
    edge: String,
    meta: &'a SampleMeta,
}

/// Writes `<id>.png` (16-bit), `<id>_mask.png`, `<id>_edge.png` and `<id>.json`.
pub fn write_sample(dir: &Path, id: &str, sample: &BlendedSample) -> Result<()> {
    let name = |suffix: &str| format!("{id}{suffix}.png");
    crate::io::write_rgb16(&dir.join(name("")), &sample.image)?;
    crate::io::write_gray16(&dir.join(name("_mask")), &sample.mask_target)?;
    crate::io::write_gray16(&dir.join(name("_edge")), &sample.edge_target)?;
    let record = ShardRecord {
        id,
        label: sample.label,
        image: name(""),
        mask: name("_mask"),
        edge: name("_edge"),
        meta: &sample.meta,
    };
    let json = serde_json::to_vec_pretty(&record).map_err(|e| Error::Data(e.to_string()))?;
    crate::io::write_atomic(&dir.join(format!("{id}.json")), &json)
}

/// Reads back a sample written by [`write_sample`] (rasters quantized to 16 bits).
pub fn read_sample(dir: &Path, id: &str) -> Result<BlendedSample> {
    let path = dir.join(format!("{id}.json"));
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Data(e.to_string()))?;
    let meta: SampleMeta =
        serde_json::from_value(value["meta"].clone()).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let label = value["label"].as_u64().ok_or_else(|| Error::Data("shard record lacks a label".into()))? as u8;
    Ok(BlendedSample {
        image: crate::io::read_rgb(&dir.join(format!("{id}.png")))?,
        mask_target: crate::io::read_gray(&dir.join(format!("{id}_mask.png")))?,
        edge_target: crate::io::read_gray(&dir.join(format!("{id}_edge.png")))?,
        label,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::adapter::IdentityAdapter;
    use super::*;
    use crate::data::toy::ToyFace;
    use crate::face::{BBox, Provenance, Split};

    fn face(seed: u64, size: usize) -> FaceRecord {
        let toy = ToyFace::sample(&mut SeedStream::root(seed).rng());
        FaceRecord::new(
            toy.render(size),
            toy.landmarks(size),
            BBox::new(0, 0, size as i32, size as i32).unwrap(),
            Label::Genuine,
            Provenance {
                video_id: format!("v{seed}"),
                frame_idx: 0,
                split: Split::Train,
            },
        )
        .unwrap()
    }

    #[test]
    fn identity_reconstruction_without_noise_is_exact() {
        let f = face(1, 32);
        let cfg = LatentNoiseConfig { p: 0.0, ..Default::default() };
        let (out, log) = reconstruct(&f, &IdentityAdapter, &cfg, &mut SeedStream::root(0).rng()).unwrap();
        assert_eq!(out, f.image);
        assert!(!log.applied);
        // Zero sigma equals the plain round trip even when the coin fires.
        let cfg = LatentNoiseConfig { p: 1.0, sigma: [0.0, 0.0] };
        let (out, log) = reconstruct(&f, &IdentityAdapter, &cfg, &mut SeedStream::root(0).rng()).unwrap();
        assert_eq!(out, f.image);
        assert!(log.applied);
    }

    #[test]
    fn fake_faces_are_not_reconstructed() {
        let mut f = face(1, 16);
        f.label = Label::Fake;
        assert!(reconstruct(&f, &IdentityAdapter, &LatentNoiseConfig::default(), &mut SeedStream::root(0).rng()).is_err());
    }

    #[test]
    fn roles_without_transforms_are_reconstruction_over_genuine() {
        let g = ToyFace::canonical().render(16);
        let r = g.mapv(|v| v * 0.5);
        let (s, t, log) =
            assign_source_target(&g, &r, &SstaConfig::disabled(), &RoleConfig::default(), &mut SeedStream::root(0).rng())
                .unwrap();
        assert_eq!((s, t), (r, g));
        assert!(log.source_is_reconstruction);
    }

    #[test]
    fn forced_source_augmentation_leaves_target_untouched() {
        let g = ToyFace::sample(&mut SeedStream::root(2).rng()).render(16);
        let r = g.mapv(|v| v * 0.9);
        let roles = RoleConfig { p_augment_source: 1.0, ..Default::default() };
        let (s, t, log) = assign_source_target(&g, &r, &SstaConfig::default(), &roles, &mut SeedStream::root(3).rng()).unwrap();
        assert_eq!(t, g);
        assert_ne!(s, r);
        assert_eq!(log.augmented, AugmentedSide::Source);
        assert!(assign_source_target(&g, &Image::zeros((8, 8, 3)), &SstaConfig::default(), &roles, &mut SeedStream::root(3).rng()).is_err());
    }

    #[test]
    fn augmented_side_is_a_fair_coin() {
        let g = Image::zeros((2, 2, 3));
        let stream = SeedStream::root(5);
        let n = 10_000;
        let sources = (0..n)
            .filter(|&i| {
                let (_, _, log) = assign_source_target(&g, &g, &SstaConfig::disabled(), &RoleConfig::default(), &mut stream.index(i).rng()).unwrap();
                log.augmented == AugmentedSide::Source
            })
            .count();
        let frac = sources as f64 / n as f64;
        assert!((0.48..=0.52).contains(&frac), "{frac}");
    }

    #[test]
    fn degenerate_pipeline_returns_the_input() {
        let f = face(3, 32);
        let s = generate_rbi(&f, &IdentityAdapter, &SynthConfig::degenerate(), &SeedStream::root(0)).unwrap();
        let worst = s.image.iter().zip(f.image.iter()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(worst <= 1e-6);
        let hull = hull::hull_mask(&f.landmarks, HullVariant::Full, 0.0, 32, 32).unwrap();
        assert_eq!(s.mask_target, blend::downsample2(&hull));
        assert_eq!(s.label, 1);
    }

    #[test]
    fn generation_is_deterministic_and_fake_targets_are_nonzero() {
        let f = face(4, 32);
        let a = generate_rbi(&f, &IdentityAdapter, &SynthConfig::default(), &SeedStream::root(7)).unwrap();
        let b = generate_rbi(&f, &IdentityAdapter, &SynthConfig::default(), &SeedStream::root(7)).unwrap();
        assert_eq!(a, b);
        assert!(a.mask_target.iter().any(|&v| v > 0.0));
        assert_eq!(a.mask_target.dim(), (16, 16));
        assert!(a.image.iter().all(|v| (0.0..=1.0).contains(v)));
        let g = genuine_sample(&f);
        assert!(g.mask_target.iter().chain(g.edge_target.iter()).all(|&v| v == 0.0));
        assert_eq!(g.label, 0);
    }

    #[test]
    fn alpha_is_uniform_over_its_range() {
        let f = face(6, 16);
        let root = SeedStream::root(8);
        let mut alphas: Vec<f64> = (0..1000)
            .map(|i| {
                generate_rbi(&f, &IdentityAdapter, &SynthConfig::default(), &root.index(i))
                    .unwrap()
                    .meta
                    .alpha
                    .unwrap() as f64
            })
            .collect();
        alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = alphas.len() as f64;
        let ks = alphas
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let cdf = (a - 0.5) / 0.5;
                (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.05, "KS statistic {ks}");
    }

    #[test]
    fn shards_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = face(9, 32);
        let s = generate_rbi(&f, &IdentityAdapter, &SynthConfig::default(), &SeedStream::root(1)).unwrap();
        write_sample(dir.path(), "s0", &s).unwrap();
        let back = read_sample(dir.path(), "s0").unwrap();
        // The elastic displacement field is not serialized; everything else is.
        assert_eq!(serde_json::to_value(&back.meta).unwrap(), serde_json::to_value(&s.meta).unwrap());
        assert_eq!(back.label, 1);
        assert!(back.image.iter().zip(s.image.iter()).all(|(a, b)| (a - b).abs() < 1e-4));
        assert!(back.mask_target.iter().zip(s.mask_target.iter()).all(|(a, b)| (a - b).abs() < 1e-4));
    }

    #[test]
    fn invalid_alpha_range_is_rejected() {
        let cfg = SynthConfig { alpha: [0.3, 1.0], ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
