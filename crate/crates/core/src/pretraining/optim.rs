//! AdamW with decoupled weight decay, the learning-rate schedule and global
//! gradient-norm clipping.

use crate::error::{CofError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// Fails with the first parameter whose gradient holds a NaN or infinity.
pub fn check_finite<T: Scalar>(grads: &[Option<&Tensor<T>>], names: &[String]) -> Result<()> {
    for (i, g) in grads.iter().enumerate() {
        if g.is_some_and(|g| !g.is_finite()) {
            return Err(CofError::NonFiniteGradient {
                param: i,
                name: names.get(i).cloned().unwrap_or_default(),
            });
        }
    }
    Ok(())
}

/// One AdamW update at learning rate `lr`.
///
/// `grads[i]` is the gradient of `params[i]`; `None` means zero. The whole
/// step is rejected before any parameter changes if a gradient is not
/// finite.
pub fn adamw_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Option<&Tensor<T>>],
    names: &[String],
    state: &mut AdamState<T>,
    config: &AdamWConfig,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(CofError::Usage(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(CofError::Shape {
                    op: "adamw_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        if state.m[i].shape() != p.shape() {
            return Err(CofError::Shape {
                op: "adamw_step",
                left: p.shape().to_vec(),
                right: state.m[i].shape().to_vec(),
            });
        }
    }
    check_finite(grads, names)?;

    state.step += 1;
    let t = state.step as i32;
    let b1 = T::of(config.beta1);
    let b2 = T::of(config.beta2);
    let one = T::one();
    let c1 = one - T::of(config.beta1.powi(t));
    let c2 = one - T::of(config.beta2.powi(t));
    let lr_t = T::of(lr);
    let decay = one - T::of(lr * config.weight_decay);
    let eps = T::of(config.eps);
    for (i, p) in params.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = grads[i].map(|g| g.data());
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            let gk = g.map_or(T::zero(), |g| g[k]);
            m[k] = b1 * m[k] + (one - b1) * gk;
            v[k] = b2 * v[k] + (one - b2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *w = *w * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Global L2 norm of all gradients.
pub fn global_norm<T: Scalar>(grads: &[Option<&Tensor<T>>]) -> T {
    grads
        .iter()
        .flatten()
        .map(|g| g.norm_sq())
        .fold(T::zero(), |a, b| a + b)
        .sqrt()
}

/// Scales gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> T {
    let norm = global_norm(&grads.iter().map(Some).collect::<Vec<_>>());
    let max = T::of(max_norm);
    if norm > max {
        let s = max / (norm + T::of(1e-6));
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// Linear warmup over the first `warmup_fraction` of `total_steps`, then
/// linear decay to zero. `step` counts from 0.
pub fn learning_rate(peak: f64, step: usize, total_steps: usize, warmup_fraction: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let warmup = ((warmup_fraction * total_steps as f64).ceil() as usize).min(total_steps);
    if step < warmup {
        peak * (step + 1) as f64 / warmup as f64
    } else {
        let remaining = (total_steps - step.min(total_steps)) as f64;
        peak * remaining / (total_steps - warmup).max(1) as f64
    }
}
