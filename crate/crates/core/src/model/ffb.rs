use candle_core::Tensor;

use super::bam::Bam;
use super::layers::{Conv2d, Scope};
use crate::error::{Error, Result};

/// Feature fusion block at one scale.
///
/// `w = Conv(ReLU(Conv(BAM(Cat(F_rgb + F_e, F_n)))))`, then
/// `out = ReLU(w + AlignConv(prev))` where `AlignConv` is a stride-2 3x3
/// convolution bringing the previous scale's output to this scale.
#[derive(Clone, Debug)]
pub struct FusionBlock {
    attention: Bam,
    conv1: Conv2d,
    conv2: Conv2d,
    align: Option<Conv2d>,
}

impl FusionBlock {
    pub fn new(
        scope: &mut Scope,
        channels: usize,
        prev_channels: Option<usize>,
        reduction: usize,
        dilation: usize,
    ) -> Result<Self> {
        let fused = 2 * channels;
        Ok(Self {
            attention: Bam::new(&mut scope.sub("bam"), fused, reduction, dilation)?,
            conv1: Conv2d::new(&mut scope.sub("conv1"), fused, fused, 3, 1, 1)?,
            conv2: Conv2d::new(&mut scope.sub("conv2"), fused, fused, 3, 1, 1)?,
            align: prev_channels
                .map(|p| Conv2d::new(&mut scope.sub("align"), p, fused, 3, 2, 1))
                .transpose()?,
        })
    }

    pub fn forward(&self, rgb: &Tensor, edge: &Tensor, noise: &Tensor, prev: Option<&Tensor>) -> Result<Tensor> {
        self.forward_with(rgb, edge, noise, prev, true)
    }

    /// `attention = false` skips the attention unit entirely.
    pub fn forward_with(
        &self,
        rgb: &Tensor,
        edge: &Tensor,
        noise: &Tensor,
        prev: Option<&Tensor>,
        attention: bool,
    ) -> Result<Tensor> {
        if rgb.dims() != edge.dims() || rgb.dims() != noise.dims() {
            return Err(Error::Shape(format!(
                "fusion inputs disagree: rgb {:?}, edge {:?}, noise {:?}",
                rgb.dims(),
                edge.dims(),
                noise.dims()
            )));
        }
        let cat = Tensor::cat(&[&(rgb + edge)?, noise], 1)?;
        let attended = if attention { self.attention.forward(&cat)? } else { cat };
        let weighted = self.conv2.forward(&self.conv1.forward(&attended)?.relu()?)?;
        let out = match (prev, &self.align) {
            (Some(p), Some(align)) => {
                let aligned = align.forward(p)?;
                if aligned.dims() != weighted.dims() {
                    return Err(Error::Shape(format!(
                        "propagated feature {:?} does not align with {:?}",
                        aligned.dims(),
                        weighted.dims()
                    )));
                }
                (weighted + aligned)?
            }
            (None, None) => weighted,
            (Some(_), None) => return Err(Error::Shape("first fusion block takes no propagated input".into())),
            (None, Some(_)) => return Err(Error::Shape("fusion block expects a propagated input".into())),
        };
        Ok(out.relu()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::layers::ParamStore;
    use crate::rng::SeedStream;
    use candle_core::{DType, Device};

    fn rand(shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::randn(0f32, 1.0, shape, &Device::Cpu).unwrap()
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f32 {
        (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap()
    }

    #[test]
    fn first_block_has_no_propagation() {
        let mut store = ParamStore::new(DType::F32);
        let mut rng = SeedStream::root(2).rng();
        let b = FusionBlock::new(&mut store.scope("ffb1", &mut rng), 8, None, 4, 4).unwrap();
        let (r, e, n) = (rand((1, 8, 6, 6)), rand((1, 8, 6, 6)), rand((1, 8, 6, 6)));
        let out = b.forward(&r, &e, &n, None).unwrap();
        assert_eq!(out.dims(), &[1, 16, 6, 6]);
        assert!(out.min_all().unwrap().to_scalar::<f32>().unwrap() >= 0.0);
        assert!(b.forward(&r, &e, &n, Some(&out)).is_err());
    }

    #[test]
    fn propagation_aligns_odd_sizes() {
        let mut store = ParamStore::new(DType::F32);
        let mut rng = SeedStream::root(2).rng();
        let b = FusionBlock::new(&mut store.scope("ffb2", &mut rng), 8, Some(12), 4, 4).unwrap();
        let prev = rand((2, 12, 95, 95));
        let x = rand((2, 8, 48, 48));
        assert_eq!(b.forward(&x, &x, &x, Some(&prev)).unwrap().dims(), &[2, 16, 48, 48]);
        let bad = rand((2, 12, 90, 90));
        assert!(matches!(b.forward(&x, &x, &x, Some(&bad)), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_noise_and_prev_depend_only_on_rgb_plus_edge() {
        let mut store = ParamStore::new(DType::F32);
        let mut rng = SeedStream::root(2).rng();
        let b = FusionBlock::new(&mut store.scope("ffb", &mut rng), 8, Some(8), 4, 4).unwrap();
        let zeros = Tensor::zeros((1, 8, 6, 6), DType::F32, &Device::Cpu).unwrap();
        let prev_zero = Tensor::zeros((1, 8, 12, 12), DType::F32, &Device::Cpu).unwrap();
        let (r, e) = (rand((1, 8, 6, 6)), rand((1, 8, 6, 6)));
        let a = b.forward(&r, &e, &zeros, Some(&prev_zero)).unwrap();
        // Any split of the same sum gives the same output.
        let sum = (&r + &e).unwrap();
        let c = b.forward(&sum, &zeros, &zeros, Some(&prev_zero)).unwrap();
        assert!(max_diff(&a, &c) < 1e-5);
    }
}
