use crate::error::{Error, Result};
use crate::nn::{ParamGroup, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One AdamW update of a flat array with its moment buffers. `step` is the
/// 1-based step count used for bias correction.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<S: Scalar>(
    param: &mut [S],
    grad: &[S],
    m: &mut [S],
    v: &mut [S],
    step: u64,
    lr: f64,
    weight_decay: f64,
    hp: AdamWConfig,
) {
    let (b1, b2) = (S::of(hp.beta1), S::of(hp.beta2));
    let c1 = S::of(1.0 - hp.beta1.powf(step as f64));
    let c2 = S::of(1.0 - hp.beta2.powf(step as f64));
    let (lr, wd, eps) = (S::of(lr), S::of(weight_decay), S::of(hp.eps));
    let one = S::one();
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        let p = param[i];
        param[i] = p - lr * (m_hat / (v_hat.sqrt() + eps)) - lr * wd * p;
    }
}

/// AdamW over a [`ParamStore`], keeping one pair of moment buffers per
/// parameter.
#[derive(Clone, Debug)]
pub struct AdamW<S: Scalar> {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(store: &ParamStore<S>, config: AdamWConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect()
        };
        AdamW {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies the stored gradients. Encoder parameters are skipped unless
    /// `train_encoders` is set, so frozen weights are not even decayed.
    pub fn step(
        &mut self,
        store: &mut ParamStore<S>,
        lr: f64,
        weight_decay: f64,
        train_encoders: bool,
    ) -> Result<()> {
        if let Some(p) = store.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient in {} at step {}",
                p.name,
                self.step + 1
            )));
        }
        self.step += 1;
        for (i, p) in store.iter_mut().enumerate() {
            if p.group == ParamGroup::Encoder && !train_encoders {
                continue;
            }
            adamw_update(
                p.value.data_mut(),
                p.grad.data(),
                self.m[i].data_mut(),
                self.v[i].data_mut(),
                self.step,
                lr,
                weight_decay,
                self.config,
            );
            if !p.value.is_finite() {
                return Err(Error::Training(format!(
                    "{} became non-finite at step {} (learning rate {lr})",
                    p.name, self.step
                )));
            }
        }
        Ok(())
    }
}

/// Cosine annealing restarted every `period` steps.
pub fn cosine_warm_restart_lr(step: u64, lr_max: f64, lr_min: f64, period: u64) -> f64 {
    let s = (step % period.max(1)) as f64;
    lr_min
        + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * s / period.max(1) as f64).cos())
}

/// Global L2 norm of all gradients.
pub fn grad_norm<S: Scalar>(store: &ParamStore<S>) -> f64 {
    store
        .iter()
        .flat_map(|p| p.grad.data().iter())
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_grad_norm<S: Scalar>(store: &mut ParamStore<S>, max_norm: f64) -> f64 {
    let norm = grad_norm(store);
    if norm > max_norm && norm.is_finite() {
        let k = S::of(max_norm / norm);
        for p in store.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= k);
        }
    }
    norm
}
