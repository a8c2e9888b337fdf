//! Constrained high-pass noise extractor.
//!
//! The 5x5 kernel keeps its center at -1 and its 24 off-center taps summing to
//! 1, so it annihilates locally constant content and passes prediction residuals.

use candle_core::{Tensor, Var};

use super::layers::Scope;
use crate::error::Result;

pub const KERNEL: usize = 5;
const CENTER: usize = KERNEL * KERNEL / 2;

/// Luma weights used for the grayscale conversion.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Projects 25 taps (row-major) onto the constraint set.
///
/// The center becomes -1 and the off-center taps are divided by their sum. If
/// that sum is zero the off-center taps are reset to 1/24 each.
pub fn bayar_project(kernel: &[f64; 25]) -> ([f64; 25], bool) {
    let off_sum: f64 = kernel
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != CENTER)
        .map(|(_, v)| v)
        .sum();
    let mut out = [0.0; 25];
    let reset = off_sum == 0.0 || !off_sum.is_finite();
    for (i, v) in out.iter_mut().enumerate() {
        *v = if i == CENTER {
            -1.0
        } else if reset {
            1.0 / 24.0
        } else {
            kernel[i] / off_sum
        };
    }
    (out, reset)
}

#[derive(Clone, Debug)]
pub struct NoiseExtractor {
    pub kernel: Tensor,
}

impl NoiseExtractor {
    pub const PARAM: &'static str = "kernel";

    pub fn new(scope: &mut Scope) -> Result<Self> {
        let kernel = scope.uniform(Self::PARAM, &[1, 1, KERNEL, KERNEL], 1.0)?;
        Ok(Self { kernel })
    }

    /// `image`: `(n, 3, h, w)` in `[0, 1]`; returns `(n, 1, h, w)`. Borders are
    /// replicated so constant regions map to zero everywhere.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let r = KERNEL / 2;
        let gray = grayscale(image)?.pad_with_same(2, r, r)?.pad_with_same(3, r, r)?;
        Ok(gray.conv2d(&self.kernel, 0, 1, 1, 1)?)
    }
}

pub fn grayscale(image: &Tensor) -> Result<Tensor> {
    let w = Tensor::new(&[LUMA[0], LUMA[1], LUMA[2]], image.device())?
        .to_dtype(image.dtype())?
        .reshape((1, 3, 1, 1))?;
    Ok(image.broadcast_mul(&w)?.sum_keepdim(1)?)
}

/// Re-projects a kernel variable in place. Returns `true` when the degenerate
/// reset branch was taken.
pub fn project_var(var: &Var) -> Result<bool> {
    let dtype = var.dtype();
    let flat: Vec<f64> = var.as_tensor().flatten_all()?.to_dtype(candle_core::DType::F64)?.to_vec1()?;
    let taps: [f64; 25] = flat
        .try_into()
        .map_err(|_| crate::error::Error::Shape("noise kernel must have 25 taps".into()))?;
    let (projected, reset) = bayar_project(&taps);
    if reset {
        log::warn!("noise kernel off-center taps summed to zero; reset to 1/24");
    }
    let t = Tensor::from_vec(projected.to_vec(), var.shape(), var.device())?.to_dtype(dtype)?;
    var.set(&t)?;
    Ok(reset)
}

/// Center tap and off-center sum of a kernel tensor.
pub fn constraint_state(kernel: &Tensor) -> Result<(f64, f64)> {
    let flat: Vec<f64> = kernel.flatten_all()?.to_dtype(candle_core::DType::F64)?.to_vec1()?;
    let off: f64 = flat
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != CENTER)
        .map(|(_, v)| v)
        .sum();
    Ok((flat[CENTER], off))
}
