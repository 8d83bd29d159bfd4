use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::invalid(format!(
                "epsilon must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// First and second moments for every entry of a [`ParamStore`], in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Result<Self> {
        let zeros = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        })
    }

    fn check(&self, store: &ParamStore<T>) -> Result<()> {
        if self.m.len() != store.len() || self.v.len() != store.len() {
            return Err(Error::invalid(format!(
                "optimizer state covers {} tensors, model has {}",
                self.m.len(),
                store.len()
            )));
        }
        for ((_, p), (m, v)) in store.iter().zip(self.m.iter().zip(&self.v)) {
            if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "moments for '{}' do not match {:?}",
                        p.name,
                        p.value.shape()
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update from the gradients accumulated in `store`.
/// Nothing is modified when any gradient is non-finite.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    state.check(store)?;
    for (_, p) in store.iter() {
        if p.trainable {
            if let Some(pos) = p.grad.data().iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of '{}' at offset {pos} is {}; step aborted",
                    p.name,
                    p.grad.data()[pos]
                )));
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (c1, c2) = (T::one() - b1, T::one() - b2);
    let bias1 = T::one() / (T::one() - T::of(cfg.beta1.powi(t)));
    let bias2 = T::one() / (T::one() - T::of(cfg.beta2.powi(t)));
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let k = id.index();
        let p = store.get_mut(id);
        if !p.trainable {
            continue;
        }
        // frozen columns take a zero gradient
        let free: Option<Vec<bool>> = (!p.frozen_columns.is_empty())
            .then(|| (0..p.value.numel()).map(|i| p.is_free(i)).collect());
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        let grad = p.grad.data();
        let value = p.value.data_mut();
        for i in 0..value.len() {
            let g = match &free {
                Some(f) if !f[i] => T::zero(),
                _ => grad[i],
            };
            m[i] = b1 * m[i] + c1 * g;
            v[i] = b2 * v[i] + c2 * g * g;
            let mhat = m[i] * bias1;
            let vhat = v[i] * bias2;
            let delta = lr * mhat / (vhat.sqrt() + eps);
            // a zero step must not turn -0.0 into +0.0
            if delta != T::zero() {
                value[i] -= delta;
            }
        }
    }
    Ok(())
}
