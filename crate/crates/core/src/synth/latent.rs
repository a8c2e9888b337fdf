//! Background-latent perturbation applied before decoding.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentNoiseConfig {
    pub p: f64,
    /// Range of the noise standard deviation, drawn uniformly.
    pub sigma: [f32; 2],
}

impl Default for LatentNoiseConfig {
    fn default() -> Self {
        Self {
            p: 0.5,
            sigma: [0.1, 0.3],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseLog {
    pub applied: bool,
    pub sigma: Option<f32>,
}

/// With probability `cfg.p`, adds elementwise `N(0, σ²)` noise with `σ ~ U(cfg.sigma)`.
pub fn inject_bg_noise(bg: &[f32], cfg: &LatentNoiseConfig, rng: &mut Rng) -> (Vec<f32>, NoiseLog) {
    if rng.random::<f64>() >= cfg.p {
        return (bg.to_vec(), NoiseLog::default());
    }
    let sigma = if cfg.sigma[1] > cfg.sigma[0] {
        rng.random_range(cfg.sigma[0]..=cfg.sigma[1])
    } else {
        cfg.sigma[0]
    };
    let out = if sigma > 0.0 {
        let normal = Normal::new(0.0f32, sigma).expect("finite sigma");
        bg.iter().map(|&v| v + normal.sample(rng)).collect()
    } else {
        bg.to_vec()
    };
    (
        out,
        NoiseLog {
            applied: true,
            sigma: Some(sigma),
        },
    )
}
