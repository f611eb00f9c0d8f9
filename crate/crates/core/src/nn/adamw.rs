use super::params::Parameters;
use super::tensor::{NnError, Tensor};
use crate::scalar::Scalar;

/// Adam with decoupled weight decay:
///
/// ```text
/// m ← β1·m + (1−β1)·g
/// v ← β2·v + (1−β2)·g²
/// w ← w − lr·( m̂/(√v̂ + ε) + wd·w )
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T> {
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new<P: Parameters<T>>(params: &P) -> Self {
        let zeros: Vec<Tensor<T>> = params.tensors().into_iter().map(Tensor::zeros_like).collect();
        Self { first_moment: zeros.clone(), second_moment: zeros, step: 0 }
    }
}

/// Applies one update to `params` in place.
pub fn adamw_step<T: Scalar, P: Parameters<T>>(
    opt: &AdamW,
    params: &mut P,
    grads: &P,
    state: &mut AdamWState<T>,
) -> Result<(), NnError> {
    let grads = grads.tensors();
    let weights = params.tensors_mut();
    if grads.len() != weights.len() || state.first_moment.len() != weights.len() {
        return Err(NnError::Shape("optimizer state does not match parameters".into()));
    }
    for ((w, g), (m, v)) in weights.iter().zip(&grads).zip(state.first_moment.iter().zip(&state.second_moment)) {
        if w.shape() != g.shape() || w.shape() != m.shape() || w.shape() != v.shape() {
            return Err(NnError::Shape(format!("parameter {:?} vs gradient {:?}", w.shape(), g.shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::of(opt.beta1);
    let b2 = T::of(opt.beta2);
    let one = T::one();
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    let lr = T::of(opt.learning_rate);
    let wd = T::of(opt.weight_decay);
    let eps = T::of(opt.eps);
    for (((w, g), m), v) in weights
        .into_iter()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        for (((wi, &gi), mi), vi) in w
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *wi = *wi - lr * (mhat / (vhat.sqrt() + eps) + wd * *wi);
        }
    }
    Ok(())
}
