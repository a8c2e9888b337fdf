use candle_core::{Tensor, D};

use super::layers::{sigmoid, Conv2d, Linear, Scope};
use crate::error::{Error, Result};

/// Bottleneck attention: an additive channel + spatial pre-gate `A`, applied
/// as `F * (1 + sigmoid(A))`.
#[derive(Clone, Debug)]
pub struct Bam {
    channel_in: Linear,
    channel_out: Linear,
    spatial_reduce: Conv2d,
    spatial_dilated: [Conv2d; 2],
    spatial_out: Conv2d,
}

impl Bam {
    pub fn new(scope: &mut Scope, channels: usize, reduction: usize, dilation: usize) -> Result<Self> {
        if reduction == 0 || channels < reduction {
            return Err(Error::Config(format!(
                "attention needs channels >= reduction, got {channels} < {reduction}"
            )));
        }
        let hidden = channels / reduction;
        Ok(Self {
            channel_in: Linear::new(&mut scope.sub("channel_in"), channels, hidden)?,
            channel_out: Linear::new(&mut scope.sub("channel_out"), hidden, channels)?,
            spatial_reduce: Conv2d::new(&mut scope.sub("spatial_reduce"), channels, hidden, 1, 1, 0)?,
            spatial_dilated: [
                Conv2d::dilated(&mut scope.sub("spatial_dilated1"), hidden, hidden, 3, 1, dilation, dilation)?,
                Conv2d::dilated(&mut scope.sub("spatial_dilated2"), hidden, hidden, 3, 1, dilation, dilation)?,
            ],
            spatial_out: Conv2d::new(&mut scope.sub("spatial_out"), hidden, 1, 1, 1, 0)?,
        })
    }

    /// The additive pre-gate `A`, broadcast to the input's shape.
    pub fn pre_gate(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, _, _) = x.dims4()?;
        let pooled = x.mean(D::Minus1)?.mean(D::Minus1)?;
        let channel = self
            .channel_out
            .forward(&self.channel_in.forward(&pooled)?.relu()?)?
            .reshape((n, c, 1, 1))?;
        let mut s = self.spatial_reduce.forward(x)?.relu()?;
        for conv in &self.spatial_dilated {
            s = conv.forward(&s)?.relu()?;
        }
        let spatial = self.spatial_out.forward(&s)?;
        Ok(channel.broadcast_add(&spatial)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let gate = sigmoid(&self.pre_gate(x)?)?;
        Ok((x * (gate + 1.0)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::layers::ParamStore;
    use crate::rng::SeedStream;
    use candle_core::{DType, Device};

    fn bam(c: usize, r: usize) -> (ParamStore, Result<Bam>) {
        let mut store = ParamStore::new(DType::F32);
        let mut rng = SeedStream::root(1).rng();
        let b = Bam::new(&mut store.scope("bam", &mut rng), c, r, 4);
        (store, b)
    }

    /// Zero both output projections and put `value` into the channel bias.
    fn saturate(store: &ParamStore, value: f32) {
        for name in ["bam.channel_out.weight", "bam.spatial_out.weight", "bam.spatial_out.bias"] {
            let v = store.get(name).unwrap();
            v.set(&v.zeros_like().unwrap()).unwrap();
        }
        let b = store.get("bam.channel_out.bias").unwrap();
        b.set(&(b.ones_like().unwrap() * value as f64).unwrap()).unwrap();
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f32 {
        (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap()
    }

    #[test]
    fn negative_saturation_is_identity() {
        let (store, b) = bam(32, 16);
        let b = b.unwrap();
        saturate(&store, -1e4);
        let x = Tensor::randn(0f32, 1.0, (2, 32, 6, 6), &Device::Cpu).unwrap();
        assert!(max_diff(&b.forward(&x).unwrap(), &x) < 1e-6);
    }

    #[test]
    fn positive_saturation_doubles() {
        let (store, b) = bam(32, 16);
        let b = b.unwrap();
        saturate(&store, 1e4);
        let x = Tensor::randn(0f32, 1.0, (2, 32, 6, 6), &Device::Cpu).unwrap();
        assert!(max_diff(&b.forward(&x).unwrap(), &(&x * 2.0).unwrap()) < 1e-5);
    }

    #[test]
    fn shape_is_preserved() {
        for &(c, h, w) in &[(16, 1, 1), (32, 5, 7), (48, 12, 12)] {
            let (_s, b) = bam(c, 16);
            let x = Tensor::randn(0f32, 1.0, (3, c, h, w), &Device::Cpu).unwrap();
            assert_eq!(b.unwrap().forward(&x).unwrap().dims(), x.dims());
        }
    }

    #[test]
    fn too_few_channels_is_a_construction_error() {
        let (_s, b) = bam(8, 16);
        assert!(matches!(b, Err(Error::Config(_))));
    }
}
