//! Supervision: pixelwise BCE on the edge and map predictions, BCE on the
//! fake-class probability, and their weighted sum.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

/// `λ1` scales the map loss, `λ2` the edge loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::BEST
    }
}

impl LossWeights {
    /// Best cell of the λ ablation.
    pub const BEST: Self = Self { lambda1: 50.0, lambda2: 100.0 };
    /// The alternative stated in the implementation details.
    pub const SWAPPED: Self = Self { lambda1: 100.0, lambda2: 50.0 };

    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        let w = Self { lambda1, lambda2 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda1) || !ok(self.lambda2) {
            return Err(Error::Param(format!(
                "loss weights must be finite and non-negative, got ({}, {})",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "best" | "50/100" => Ok(Self::BEST),
            "swapped" | "100/50" => Ok(Self::SWAPPED),
            other => Err(Error::Config(format!("unknown loss preset `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub map: f64,
    pub edge: f64,
    pub cls: f64,
    pub total: f64,
}

/// Scalar weighted sum `λ1 L_m + λ2 L_e + L_cls`.
pub fn total_loss(map: f64, edge: f64, cls: f64, weights: &LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    Ok(LossBreakdown {
        map,
        edge,
        cls,
        total: weights.lambda1 * map + weights.lambda2 * edge + cls,
    })
}

fn bce(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let p = pred.clamp(EPS, 1.0 - EPS)?;
    let t = target.to_dtype(p.dtype())?;
    let pos = (&t * p.log()?)?;
    let neg = ((1.0 - &t)? * (1.0 - &p)?.log()?)?;
    Ok((pos + neg)?.neg()?)
}

/// Pixelwise BCE averaged over the `H/2 x W/2` pixels of each sample, then over the batch.
pub fn pixel_bce(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} differ",
            pred.dims(),
            target.dims()
        )));
    }
    let n = pred.dim(0)?;
    Ok(bce(pred, target)?.reshape((n, ()))?.mean(1)?.mean(0)?)
}

/// Boundary loss between the predicted and target blending edge.
pub fn edge_loss(edge_pred: &Tensor, edge_target: &Tensor) -> Result<Tensor> {
    pixel_bce(edge_pred, edge_target)
}

/// Manipulation-map loss.
pub fn map_loss(map_pred: &Tensor, map_target: &Tensor) -> Result<Tensor> {
    pixel_bce(map_pred, map_target)
}

/// BCE of the fake-class probability `(n,)` against binary labels, batch mean.
pub fn cls_loss(p_fake: &Tensor, labels: &[f32]) -> Result<Tensor> {
    if let Some(bad) = labels.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::Param(format!("classification label {bad} is not binary")));
    }
    if p_fake.dims() != [labels.len()] {
        return Err(Error::Shape(format!(
            "{} labels for probabilities of shape {:?}",
            labels.len(),
            p_fake.dims()
        )));
    }
    let t = Tensor::from_slice(labels, labels.len(), p_fake.device())?;
    Ok(bce(p_fake, &t)?.mean(0)?)
}

/// Differentiable loss terms of one batch.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub map: Tensor,
    pub edge: Tensor,
    pub cls: Tensor,
}

impl LossTerms {
    pub fn compute(
        edge_pred: &Tensor,
        map_pred: &Tensor,
        p_fake: &Tensor,
        edge_target: &Tensor,
        map_target: &Tensor,
        labels: &[f32],
    ) -> Result<Self> {
        Ok(Self {
            map: map_loss(map_pred, map_target)?,
            edge: edge_loss(edge_pred, edge_target)?,
            cls: cls_loss(p_fake, labels)?,
        })
    }

    /// The weighted total as a differentiable scalar.
    pub fn total(&self, weights: &LossWeights) -> Result<Tensor> {
        weights.validate()?;
        Ok(((&self.map * weights.lambda1)? + (&self.edge * weights.lambda2)? + &self.cls)?)
    }

    pub fn breakdown(&self, weights: &LossWeights) -> Result<LossBreakdown> {
        let s = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
        total_loss(s(&self.map)?, s(&self.edge)?, s(&self.cls)?, weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use rand::Rng as _;

    fn full(v: f64, shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::full(v, shape, &Device::Cpu).unwrap()
    }

    fn scalar(t: Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn edge_loss_closed_forms() {
        let s = (2, 1, 4, 4);
        assert!(scalar(edge_loss(&full(1.0, s), &full(1.0, s)).unwrap()) < 1e-6);
        let ln2 = std::f64::consts::LN_2;
        assert!((scalar(edge_loss(&full(0.5, s), &full(1.0, s)).unwrap()) - ln2).abs() < 1e-12);
        assert!((scalar(edge_loss(&full(0.5, s), &full(0.5, s)).unwrap()) - ln2).abs() < 1e-12);
    }

    #[test]
    fn map_loss_closed_forms() {
        let s = (1, 1, 3, 3);
        assert!(scalar(map_loss(&full(EPS, s), &full(0.0, s)).unwrap()) < 1e-6);
        let got = scalar(map_loss(&full(0.9, s), &full(0.0, s)).unwrap());
        assert!((got - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn map_loss_matches_scalar_loop() {
        let mut rng = crate::rng::SeedStream::root(11).rng();
        let p: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
        let t: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut oracle = 0.0;
        for (&pi, &ti) in p.iter().zip(&t) {
            let pi = pi.clamp(EPS, 1.0 - EPS);
            oracle -= ti * pi.ln() + (1.0 - ti) * (1.0 - pi).ln();
        }
        oracle /= 16.0;
        let pt = Tensor::from_vec(p, (1, 1, 4, 4), &Device::Cpu).unwrap();
        let tt = Tensor::from_vec(t, (1, 1, 4, 4), &Device::Cpu).unwrap();
        assert!((scalar(map_loss(&pt, &tt).unwrap()) - oracle).abs() < 1e-9);
    }

    #[test]
    fn cls_loss_closed_forms_and_label_check() {
        let p = |v: f64| Tensor::new(&[v], &Device::Cpu).unwrap();
        assert!(scalar(cls_loss(&p(1.0 - EPS), &[1.0]).unwrap()) < 1e-6);
        assert!((scalar(cls_loss(&p(0.5), &[1.0]).unwrap()) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((scalar(cls_loss(&p(0.25), &[0.0]).unwrap()) - 0.287682).abs() < 1e-6);
        assert!(matches!(cls_loss(&p(0.5), &[0.5]), Err(Error::Param(_))));
    }

    #[test]
    fn total_is_exact_weighted_sum() {
        let b = total_loss(0.1, 0.2, 0.3, &LossWeights::BEST).unwrap();
        assert!((b.total - 25.3).abs() < 1e-12);
        let zero = LossWeights::new(0.0, 0.0).unwrap();
        assert_eq!(total_loss(0.1, 0.2, 0.3, &zero).unwrap().total, 0.3);
        assert!(LossWeights::new(-1.0, 0.0).is_err());
        assert!(total_loss(0.1, 0.2, 0.3, &LossWeights { lambda1: -1.0, lambda2: 1.0 }).is_err());
        assert_eq!(LossWeights::default(), LossWeights::new(50.0, 100.0).unwrap());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(matches!(
            edge_loss(&full(0.5, (1, 1, 4, 4)), &full(0.5, (1, 1, 4, 3))),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn batch_loss_is_mean_of_sample_losses() {
        let mut rng = crate::rng::SeedStream::root(2).rng();
        let v: Vec<f64> = (0..3 * 25).map(|_| rng.random_range(0.01..0.99)).collect();
        let t: Vec<f64> = (0..3 * 25).map(|_| rng.random_range(0.0..1.0)).collect();
        let pb = Tensor::from_vec(v, (3, 1, 5, 5), &Device::Cpu).unwrap();
        let tb = Tensor::from_vec(t, (3, 1, 5, 5), &Device::Cpu).unwrap();
        let batch = scalar(edge_loss(&pb, &tb).unwrap());
        let mean = (0..3)
            .map(|i| scalar(edge_loss(&pb.narrow(0, i, 1).unwrap(), &tb.narrow(0, i, 1).unwrap()).unwrap()))
            .sum::<f64>()
            / 3.0;
        assert!((batch - mean).abs() < 1e-9);
    }

    #[test]
    fn bce_is_stationary_at_the_soft_target() {
        for &target in &[0.2f64, 0.5, 0.8] {
            let f = |p: f64| -(target * p.ln() + (1.0 - target) * (1.0 - p).ln());
            let h = 1e-6;
            let slope = (f(target + h) - f(target - h)) / (2.0 * h);
            assert!(slope.abs() < 1e-6);
            let t = Tensor::new(&[target], &Device::Cpu).unwrap().reshape((1, 1, 1, 1)).unwrap();
            let var = candle_core::Var::from_tensor(&t).unwrap();
            let grads = pixel_bce(var.as_tensor(), &t).unwrap().backward().unwrap();
            assert!(grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()[0].abs() < 1e-9);
        }
    }
}
