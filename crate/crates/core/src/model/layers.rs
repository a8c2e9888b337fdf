//! Parameter registry and the small set of layers the networks are built from.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Whether a forward pass is part of training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are refreshed when `track_stats`.
    Train { track_stats: bool },
    /// Running statistics.
    Eval,
}

impl Mode {
    pub const TRAIN: Mode = Mode::Train { track_stats: true };
}

/// Named trainable parameters plus non-trainable buffers, kept in sorted order
/// so that iteration (norms, checkpoints) is deterministic.
#[derive(Debug)]
pub struct ParamStore {
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Var> {
        &self.buffers
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params.get(name)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    fn insert(&mut self, name: String, data: Vec<f32>, shape: &[usize], trainable: bool) -> Result<Tensor> {
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let tensor = var.as_tensor().clone();
        let map = if trainable { &mut self.params } else { &mut self.buffers };
        if map.insert(name.clone(), var).is_some() {
            return Err(Error::Config(format!("parameter `{name}` registered twice")));
        }
        Ok(tensor)
    }

    pub fn scope<'a>(&'a mut self, prefix: &str, rng: &'a mut Rng) -> Scope<'a> {
        Scope {
            store: self,
            prefix: prefix.to_string(),
            rng,
        }
    }
}

/// Registers parameters under a name prefix, drawing initial values from `rng`.
pub struct Scope<'a> {
    store: &'a mut ParamStore,
    prefix: String,
    rng: &'a mut Rng,
}

impl Scope<'_> {
    pub fn sub(&mut self, name: &str) -> Scope<'_> {
        Scope {
            prefix: format!("{}.{}", self.prefix, name),
            store: self.store,
            rng: self.rng,
        }
    }

    fn name(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_string()
        } else {
            format!("{}.{}", self.prefix, leaf)
        }
    }

    pub fn rng(&mut self) -> &mut Rng {
        self.rng
    }

    /// Kaiming-normal initialization for ReLU-family activations.
    pub fn kaiming(&mut self, leaf: &str, shape: &[usize], fan_in: usize) -> Result<Tensor> {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(self.rng) as f32).collect();
        let name = self.name(leaf);
        self.store.insert(name, data, shape, true)
    }

    pub fn uniform(&mut self, leaf: &str, shape: &[usize], bound: f32) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| if bound > 0.0 { self.rng.random_range(-bound..=bound) } else { 0.0 })
            .collect();
        let name = self.name(leaf);
        self.store.insert(name, data, shape, true)
    }

    pub fn constant(&mut self, leaf: &str, shape: &[usize], value: f32) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let name = self.name(leaf);
        self.store.insert(name, vec![value; n], shape, true)
    }

    pub fn buffer(&mut self, leaf: &str, shape: &[usize], value: f32) -> Result<Var> {
        let n: usize = shape.iter().product();
        let name = self.name(leaf);
        self.store.insert(name.clone(), vec![value; n], shape, false)?;
        Ok(self.store.buffers[&name].clone())
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Conv2d {
    pub fn new(scope: &mut Scope, c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize) -> Result<Self> {
        Self::dilated(scope, c_in, c_out, k, stride, padding, 1)
    }

    pub fn dilated(
        scope: &mut Scope,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Self> {
        let weight = scope.kaiming("weight", &[c_out, c_in, k, k], c_in * k * k)?;
        let bias = Some(scope.constant("bias", &[c_out], 0.0)?);
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
            dilation,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, self.dilation, 1)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?,
            None => y,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }
}

/// Stride-2 transposed convolution with kernel 4 and padding 1: doubles the spatial size.
#[derive(Clone, Debug)]
pub struct UpConv {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl UpConv {
    pub fn new(scope: &mut Scope, c_in: usize, c_out: usize) -> Result<Self> {
        let weight = scope.kaiming("weight", &[c_in, c_out, 4, 4], c_in * 4)?;
        let bias = scope.constant("bias", &[c_out], 0.0)?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(&self.weight, 1, 0, 2, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, self.bias.dim(0)?, 1, 1))?)?)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(scope: &mut Scope, c_in: usize, c_out: usize) -> Result<Self> {
        let bound = 1.0 / (c_in as f32).sqrt();
        let weight = scope.uniform("weight", &[c_out, c_in], bound)?;
        let bias = scope.constant("bias", &[c_out], 0.0)?;
        Ok(Self { weight, bias })
    }

    /// `x`: `(batch, c_in)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

/// Per-channel statistics normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPolicy {
    /// Statistics over batch and space, running estimates at inference.
    Batch,
    /// Statistics over space per sample; identical in training and inference.
    Instance,
}

#[derive(Clone, Debug)]
pub struct Norm {
    policy: NormPolicy,
    pub gamma: Tensor,
    pub beta: Tensor,
    running_mean: Var,
    running_var: Var,
    eps: f64,
    momentum: f64,
}

impl Norm {
    pub fn new(scope: &mut Scope, channels: usize, policy: NormPolicy) -> Result<Self> {
        Ok(Self {
            policy,
            gamma: scope.constant("gamma", &[channels], 1.0)?,
            beta: scope.constant("beta", &[channels], 0.0)?,
            running_mean: scope.buffer("running_mean", &[channels], 0.0)?,
            running_var: scope.buffer("running_var", &[channels], 1.0)?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let c = x.dim(1)?;
        let (mean, var) = match (self.policy, mode) {
            (NormPolicy::Instance, _) => {
                let mean = x.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?;
                let var = x.broadcast_sub(&mean)?.sqr()?.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?;
                (mean, var)
            }
            (NormPolicy::Batch, Mode::Train { track_stats }) => {
                let mean = x.mean_keepdim(3)?.mean_keepdim(2)?.mean_keepdim(0)?;
                let var = x
                    .broadcast_sub(&mean)?
                    .sqr()?
                    .mean_keepdim(3)?
                    .mean_keepdim(2)?
                    .mean_keepdim(0)?;
                if track_stats {
                    let (n, _, h, w) = x.dims4()?;
                    let count = (n * h * w) as f64;
                    let unbiased = if count > 1.0 {
                        (var.detach().flatten_all()? * (count / (count - 1.0)))?
                    } else {
                        var.detach().flatten_all()?
                    };
                    let m = self.momentum;
                    let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))?
                        + (mean.detach().flatten_all()? * m)?)?;
                    let new_var = ((self.running_var.as_tensor() * (1.0 - m))? + (unbiased * m)?)?;
                    self.running_mean.set(&new_mean)?;
                    self.running_var.set(&new_var)?;
                }
                (mean, var)
            }
            (NormPolicy::Batch, Mode::Eval) => (
                self.running_mean.as_tensor().reshape((1, c, 1, 1))?,
                self.running_var.as_tensor().reshape((1, c, 1, 1))?,
            ),
        };
        let normed = x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.gamma.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1, 1))?)?)
    }
}

/// Interpolation matrix `(out, in)` for 1-D linear resampling with half-pixel
/// centers (align-corners false).
pub fn linear_resize_matrix(n_in: usize, n_out: usize) -> Vec<f32> {
    let mut m = vec![0.0f32; n_out * n_in];
    let scale = n_in as f64 / n_out as f64;
    for o in 0..n_out {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        let f = (src - i0 as f64) as f32;
        m[o * n_in + i0] += 1.0 - f;
        m[o * n_in + i1] += f;
    }
    m
}

/// Bilinear resize of `(n, c, h, w)` to `(n, c, out_h, out_w)`, expressed as
/// two matrix products so that it is differentiable. Both products are plain
/// 2-D matmuls: candle's backward pass through broadcast batched matmuls is wrong.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let dev = x.device();
    let rw = Tensor::from_vec(linear_resize_matrix(w, out_w), (out_w, w), dev)?.to_dtype(x.dtype())?;
    let rh = Tensor::from_vec(linear_resize_matrix(h, out_h), (out_h, h), dev)?.to_dtype(x.dtype())?;
    // (n c h, w) x (w, out_w) -> (n c h, out_w)
    let y = x.reshape((n * c * h, w))?.matmul(&rw.t()?)?;
    // (n c out_w, h) x (h, out_h) -> (n c out_w, out_h)
    let y = y.reshape((n * c, h, out_w))?.transpose(1, 2)?.contiguous()?.reshape((n * c * out_w, h))?;
    let y = y.matmul(&rh.t()?)?;
    Ok(y.reshape((n, c, out_w, out_h))?.transpose(2, 3)?.contiguous()?)
}

/// Center crop of the spatial dimensions.
pub fn center_crop(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if out_h > h || out_w > w {
        return Err(Error::Shape(format!(
            "cannot crop {h}x{w} to {out_h}x{out_w}"
        )));
    }
    Ok(x.narrow(2, (h - out_h) / 2, out_h)?
        .narrow(3, (w - out_w) / 2, out_w)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}
