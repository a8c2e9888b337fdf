//! Sharpness-aware minimization around a momentum gradient-descent base rule.

use std::collections::BTreeMap;

use candle_core::{backprop::GradStore, DType, Tensor, Var};

use crate::error::{Error, Result};

/// Heavy-ball momentum: `b <- μ b + g`, `w <- w - lr b`, with `b` starting at `g`.
#[derive(Clone, Debug)]
pub struct MomentumSgd {
    pub lr: f64,
    pub momentum: f64,
    buffers: BTreeMap<String, Tensor>,
}

impl MomentumSgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) || !(0.0..1.0).contains(&momentum) {
            return Err(Error::Param(format!("invalid optimizer settings lr={lr}, momentum={momentum}")));
        }
        Ok(Self {
            lr,
            momentum,
            buffers: BTreeMap::new(),
        })
    }

    /// Momentum buffers, keyed by parameter name.
    pub fn state(&self) -> &BTreeMap<String, Tensor> {
        &self.buffers
    }

    pub fn load_state(&mut self, state: BTreeMap<String, Tensor>) {
        self.buffers = state;
    }

    pub fn step(&mut self, params: &BTreeMap<String, Var>, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in params {
            let Some(g) = grads.get(name) else { continue };
            let buf = match self.buffers.get(name) {
                Some(b) if self.momentum > 0.0 => ((b * self.momentum)? + g)?,
                _ => g.clone(),
            };
            var.set(&(var.as_tensor() - (&buf * self.lr)?)?)?;
            if self.momentum > 0.0 {
                self.buffers.insert(name.clone(), buf);
            }
        }
        Ok(())
    }
}

/// Gradients of `loss` for every parameter that receives one.
pub fn collect_grads(loss: &Tensor, params: &BTreeMap<String, Var>) -> Result<BTreeMap<String, Tensor>> {
    let store: GradStore = loss.backward()?;
    Ok(params
        .iter()
        .filter_map(|(k, v)| store.get(v.as_tensor()).map(|g| (k.clone(), g.detach())))
        .collect())
}

/// Global L2 norm over all gradients.
pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> Result<f64> {
    let mut total = 0.0;
    for g in grads.values() {
        total += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
    }
    Ok(total.sqrt())
}

/// What a SAM step observed at the unperturbed weights.
#[derive(Clone, Debug)]
pub struct SamOutcome<T> {
    pub loss: f64,
    pub grad_norm: f64,
    /// Whatever the first loss evaluation returned alongside the loss.
    pub extra: T,
    pub perturbed: bool,
}

/// One two-phase step. `loss_fn(first)` evaluates the loss at the current
/// weights; `first` is false for the evaluation at the perturbed point.
///
/// Phase one takes `g` at `w` and moves to `w + ρ g / ‖g‖`; phase two takes the
/// gradient there, restores `w` exactly and lets the base rule apply it. With
/// `ρ = 0` or `g = 0` the step is a plain base-rule step on `g`.
pub fn sam_step<T>(
    params: &BTreeMap<String, Var>,
    optimizer: &mut MomentumSgd,
    rho: f64,
    mut loss_fn: impl FnMut(bool) -> Result<(Tensor, T)>,
) -> Result<SamOutcome<T>> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::Param(format!("SAM radius must be non-negative, got {rho}")));
    }
    let (loss, extra) = loss_fn(true)?;
    let loss_value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !loss_value.is_finite() {
        return Err(Error::Numeric(format!("loss is {loss_value}")));
    }
    let grads = collect_grads(&loss, params)?;
    let grad_norm = global_norm(&grads)?;
    if !grad_norm.is_finite() {
        return Err(Error::Numeric(format!("gradient norm is {grad_norm}")));
    }
    if rho == 0.0 || grad_norm == 0.0 {
        optimizer.step(params, &grads)?;
        return Ok(SamOutcome {
            loss: loss_value,
            grad_norm,
            extra,
            perturbed: false,
        });
    }
    let scale = rho / grad_norm;
    let mut saved = Vec::with_capacity(grads.len());
    for (name, g) in &grads {
        let var = &params[name];
        let original = var.as_tensor().copy()?;
        var.set(&(&original + (g * scale)?)?)?;
        saved.push((var, original));
    }
    let second = loss_fn(false).and_then(|(loss, _)| collect_grads(&loss, params));
    for (var, original) in saved {
        var.set(&original)?;
    }
    let second = second?;
    if !global_norm(&second)?.is_finite() {
        return Err(Error::Numeric("perturbed gradient is not finite".into()));
    }
    optimizer.step(params, &second)?;
    Ok(SamOutcome {
        loss: loss_value,
        grad_norm,
        extra,
        perturbed: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn scalar_var(v: f64) -> BTreeMap<String, Var> {
        BTreeMap::from([("w".to_string(), Var::new(&[v], &Device::Cpu).unwrap())])
    }

    fn w(params: &BTreeMap<String, Var>) -> f64 {
        params["w"].as_tensor().to_vec1::<f64>().unwrap()[0]
    }

    fn square(params: &BTreeMap<String, Var>) -> Result<(Tensor, ())> {
        Ok((params["w"].as_tensor().sqr()?.sum_all()?, ()))
    }

    #[test]
    fn quadratic_hand_trace() {
        let params = scalar_var(1.0);
        let mut opt = MomentumSgd::new(0.1, 0.0).unwrap();
        let mut seen = Vec::new();
        let out = sam_step(&params, &mut opt, 0.5, |_| {
            seen.push(w(&params));
            square(&params)
        })
        .unwrap();
        assert_eq!(seen, vec![1.0, 1.5]);
        assert_eq!(out.grad_norm, 2.0);
        assert!((w(&params) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn zero_radius_is_a_plain_step() {
        let a = scalar_var(0.8);
        let b = scalar_var(0.8);
        let mut oa = MomentumSgd::new(0.05, 0.9).unwrap();
        let mut ob = MomentumSgd::new(0.05, 0.9).unwrap();
        for _ in 0..20 {
            sam_step(&a, &mut oa, 0.0, |_| square(&a)).unwrap();
            let (loss, _) = square(&b).unwrap();
            ob.step(&b, &collect_grads(&loss, &b).unwrap()).unwrap();
            assert_eq!(w(&a).to_bits(), w(&b).to_bits());
        }
    }

    #[test]
    fn zero_gradient_skips_the_perturbation() {
        let params = scalar_var(0.0);
        let mut opt = MomentumSgd::new(0.1, 0.0).unwrap();
        let out = sam_step(&params, &mut opt, 0.5, |_| square(&params)).unwrap();
        assert!(!out.perturbed);
        assert_eq!(w(&params), 0.0);
    }

    #[test]
    fn momentum_accumulates() {
        let params = scalar_var(1.0);
        let mut opt = MomentumSgd::new(0.1, 0.9).unwrap();
        let g = BTreeMap::from([("w".to_string(), Tensor::new(&[1.0f64], &Device::Cpu).unwrap())]);
        opt.step(&params, &g).unwrap();
        opt.step(&params, &g).unwrap();
        // 1 - 0.1 * 1 - 0.1 * 1.9
        assert!((w(&params) - 0.71).abs() < 1e-12);
    }

    #[test]
    fn non_finite_loss_is_a_numeric_error() {
        let params = scalar_var(1.0);
        let mut opt = MomentumSgd::new(0.1, 0.0).unwrap();
        let r = sam_step(&params, &mut opt, 0.5, |_| Ok(((params["w"].as_tensor() * f64::NAN)?.sum_all()?, ())));
        assert!(matches!(r, Err(Error::Numeric(_))));
        assert_eq!(w(&params), 1.0);
    }
}
