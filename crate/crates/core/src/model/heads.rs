use candle_core::{Tensor, D};

use super::layers::{center_crop, resize_bilinear, sigmoid, Conv2d, Linear, Scope, UpConv};
use crate::error::{Error, Result};

/// Boundary prediction from the multi-scale edge features.
#[derive(Clone, Debug)]
pub struct EdgeHead {
    in_channels: usize,
    conv1: Conv2d,
    conv2: Conv2d,
    project: Conv2d,
}

impl EdgeHead {
    pub fn new(scope: &mut Scope, in_channels: usize, mid: usize) -> Result<Self> {
        if in_channels == 0 || mid == 0 {
            return Err(Error::Config("edge head channels must be positive".into()));
        }
        Ok(Self {
            in_channels,
            conv1: Conv2d::new(&mut scope.sub("conv1"), in_channels, mid, 3, 1, 1)?,
            conv2: Conv2d::new(&mut scope.sub("conv2"), mid, mid, 3, 1, 1)?,
            project: Conv2d::new(&mut scope.sub("project"), mid, 1, 1, 1, 0)?,
        })
    }

    /// Upsamples every edge feature to `(out_h, out_w)` and concatenates them.
    pub fn concat(&self, features: &[Tensor], out_h: usize, out_w: usize) -> Result<Tensor> {
        let up = features
            .iter()
            .map(|f| resize_bilinear(f, out_h, out_w))
            .collect::<Result<Vec<_>>>()?;
        let cat = Tensor::cat(&up, 1)?;
        if cat.dim(1)? != self.in_channels {
            return Err(Error::Shape(format!(
                "edge features carry {} channels, head built for {}",
                cat.dim(1)?,
                self.in_channels
            )));
        }
        Ok(cat)
    }

    pub fn forward(&self, concat: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(concat)?.relu()?;
        let h = self.conv2.forward(&h)?.relu()?;
        sigmoid(&self.project.forward(&h)?)
    }
}

/// Manipulation-map decoder: four stride-2 transposed convolutions (kernel 4),
/// each center-cropped to the matching pyramid size.
#[derive(Clone, Debug)]
pub struct MapHead {
    stages: Vec<UpConv>,
}

impl MapHead {
    /// `taper`: channel counts after the first three stages; the last stage emits 1.
    pub fn new(scope: &mut Scope, in_channels: usize, taper: &[usize; 3]) -> Result<Self> {
        let chans = [in_channels, taper[0], taper[1], taper[2], 1];
        let stages = (0..4)
            .map(|i| UpConv::new(&mut scope.sub(&format!("up{}", i + 1)), chans[i], chans[i + 1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { stages })
    }

    /// `targets`: spatial sizes after each stage, coarsest first (scales 4, 3, 2, 1).
    pub fn forward(&self, fused: &Tensor, targets: &[usize; 4]) -> Result<Tensor> {
        let mut h = fused.clone();
        for (i, (stage, &t)) in self.stages.iter().zip(targets).enumerate() {
            h = center_crop(&stage.forward(&h)?, t, t)?;
            if i + 1 < self.stages.len() {
                h = h.relu()?;
            }
        }
        sigmoid(&h)
    }
}

/// Authenticity classification: conv reduction, global pooling, dense layer, two logits.
#[derive(Clone, Debug)]
pub struct ClsHead {
    reduce: Conv2d,
    dense: Linear,
}

impl ClsHead {
    pub fn new(scope: &mut Scope, in_channels: usize, mid: usize) -> Result<Self> {
        Ok(Self {
            reduce: Conv2d::new(&mut scope.sub("reduce"), in_channels, mid, 1, 1, 0)?,
            dense: Linear::new(&mut scope.sub("dense"), mid, 2)?,
        })
    }

    /// Returns the `(n, 2)` logits.
    pub fn forward(&self, fused: &Tensor) -> Result<Tensor> {
        let h = self.reduce.forward(fused)?.relu()?;
        let pooled = h.mean(D::Minus1)?.mean(D::Minus1)?;
        self.dense.forward(&pooled)
    }
}

/// Normalized class probabilities from logits `(n, 2)`.
pub fn class_probabilities(logits: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(logits, D::Minus1)?)
}
