//! Staged downsampling backbone producing a five-scale feature pyramid.
//!
//! Each stage halves the spatial size (ceil division) with a stride-2 3x3
//! convolution followed by a residual 3x3 refinement; scale `i` therefore has
//! size `ceil(S / 2^i)` and `channels[i - 1]` channels.

use candle_core::Tensor;

use super::layers::{Conv2d, Mode, Norm, NormPolicy, Scope};
use crate::error::Result;

pub const SCALES: usize = 5;

#[derive(Clone, Debug)]
struct Stage {
    down: Conv2d,
    down_norm: Norm,
    refine: Conv2d,
    refine_norm: Norm,
}

impl Stage {
    fn new(scope: &mut Scope, c_in: usize, c_out: usize, norm: NormPolicy) -> Result<Self> {
        Ok(Self {
            down: Conv2d::new(&mut scope.sub("down"), c_in, c_out, 3, 2, 1)?,
            down_norm: Norm::new(&mut scope.sub("down_norm"), c_out, norm)?,
            refine: Conv2d::new(&mut scope.sub("refine"), c_out, c_out, 3, 1, 1)?,
            refine_norm: Norm::new(&mut scope.sub("refine_norm"), c_out, norm)?,
        })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = self.down_norm.forward(&self.down.forward(x)?, mode)?.silu()?;
        let r = self.refine_norm.forward(&self.refine.forward(&y)?, mode)?.silu()?;
        Ok((y + r)?)
    }
}

/// Per-scale maps `F^1..F^5`, finest first.
#[derive(Clone, Debug)]
pub struct FeaturePyramid(pub Vec<Tensor>);

impl FeaturePyramid {
    pub fn scale(&self, i: usize) -> &Tensor {
        &self.0[i - 1]
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    stages: Vec<Stage>,
}

impl Backbone {
    pub fn new(scope: &mut Scope, in_channels: usize, channels: &[usize; SCALES], norm: NormPolicy) -> Result<Self> {
        let mut stages = Vec::with_capacity(SCALES);
        let mut c_in = in_channels;
        for (i, &c) in channels.iter().enumerate() {
            stages.push(Stage::new(&mut scope.sub(&format!("stage{}", i + 1)), c_in, c, norm)?);
            c_in = c;
        }
        Ok(Self { stages })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<FeaturePyramid> {
        let mut maps = Vec::with_capacity(SCALES);
        let mut h = x.clone();
        for stage in &self.stages {
            h = stage.forward(&h, mode)?;
            maps.push(h.clone());
        }
        Ok(FeaturePyramid(maps))
    }
}

/// Spatial sizes of the five scales for an input of side `size`.
pub fn scale_sizes(size: usize) -> [usize; SCALES] {
    let mut out = [0; SCALES];
    let mut s = size;
    for o in out.iter_mut() {
        s = s.div_ceil(2);
        *o = s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Output size of a k=3, s=2, p=1 convolution, traced independently.
    fn conv_out(n: usize) -> usize {
        (n + 2 - 3) / 2 + 1
    }

    #[test]
    fn stride_schedule_for_reference_input() {
        assert_eq!(scale_sizes(380), [190, 95, 48, 24, 12]);
        let mut n = 380;
        for expected in scale_sizes(380) {
            n = conv_out(n);
            assert_eq!(n, expected);
        }
    }

    #[test]
    fn reference_channels_sum() {
        let c = [24usize, 32, 56, 160, 448];
        assert_eq!(c.iter().sum::<usize>(), 720);
    }
}
