use candle_core::{DType, Device, Tensor};

use super::layers::{sigmoid, Conv2d, Mode, Norm, NormPolicy, Scope};
use crate::error::Result;

/// Horizontal and vertical first-derivative kernels, `(2, 1, 3, 3)`.
pub const SOBEL_TAPS: [[f32; 9]; 2] = [
    [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0],
    [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0],
];

pub fn sobel_kernel(dtype: DType, device: &Device) -> Result<Tensor> {
    let taps: Vec<f32> = SOBEL_TAPS.iter().flatten().copied().collect();
    Ok(Tensor::from_vec(taps, (2, 1, 3, 3), device)?.to_dtype(dtype)?)
}

/// Edge-gated feature refinement:
/// `F_e = Conv1x1(F * sigmoid(Norm(|G_x F| + |G_y F|)))`.
///
/// The gradient kernels are constants outside the parameter registry, so no
/// optimizer ever sees them.
#[derive(Clone, Debug)]
pub struct SobelBlock {
    kernel: Tensor,
    norm: Norm,
    integrate: Conv2d,
}

impl SobelBlock {
    pub fn new(scope: &mut Scope, channels: usize, norm: NormPolicy, dtype: DType) -> Result<Self> {
        Ok(Self {
            kernel: sobel_kernel(dtype, &Device::Cpu)?,
            norm: Norm::new(&mut scope.sub("norm"), channels, norm)?,
            integrate: Conv2d::new(&mut scope.sub("integrate"), channels, channels, 1, 1, 0)?,
        })
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    /// Per-channel gradient magnitude `|G_x F| + |G_y F|` with replicated borders.
    pub fn gradient(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let planes = x
            .reshape((n * c, 1, h, w))?
            .pad_with_same(2, 1, 1)?
            .pad_with_same(3, 1, 1)?;
        let g = planes.conv2d(&self.kernel, 0, 1, 1, 1)?.abs()?.sum(1)?;
        Ok(g.reshape((n, c, h, w))?)
    }

    pub fn gate(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        sigmoid(&self.norm.forward(&self.gradient(x)?, mode)?)
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let gated = (x * self.gate(x, mode)?)?;
        self.integrate.forward(&gated)
    }
}
