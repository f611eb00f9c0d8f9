//! Pooling, the regression head and the loss.

use super::linear::Linear;
use super::params::Parameters;
use super::tensor::{shape_err, NnError, Tensor};
use crate::scalar::Scalar;
use rand::Rng;

/// Mean of the rows whose mask entry is 1.
pub fn mean_pool<T: Scalar>(x: &Tensor<T>, mask: &[u8]) -> Result<Tensor<T>, NnError> {
    if mask.len() != x.rows() {
        return shape_err(format!("mask of {} for {} rows", mask.len(), x.rows()));
    }
    let count = mask.iter().filter(|m| **m != 0).count();
    if count == 0 {
        return Err(NnError::EmptyPool);
    }
    let mut out = vec![T::zero(); x.cols()];
    for (r, _) in mask.iter().enumerate().filter(|(_, m)| **m != 0) {
        for (o, &v) in out.iter_mut().zip(x.row(r)) {
            *o += v;
        }
    }
    let inv = T::one() / T::of(count as f64);
    out.iter_mut().for_each(|o| *o *= inv);
    Ok(Tensor::vector(out))
}

/// Gradient of [`mean_pool`] with respect to its input.
pub fn mean_pool_backward<T: Scalar>(dv: &Tensor<T>, mask: &[u8]) -> Tensor<T> {
    let count = mask.iter().filter(|m| **m != 0).count().max(1);
    let inv = T::one() / T::of(count as f64);
    let mut dx = Tensor::zeros(&[mask.len(), dv.len()]);
    for (r, _) in mask.iter().enumerate().filter(|(_, m)| **m != 0) {
        for (o, &g) in dx.row_mut(r).iter_mut().zip(dv.data()) {
            *o = g * inv;
        }
    }
    dx
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Two-layer regression head: `sigmoid(relu(v·W1 + b1)·W2 + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    /// d × d
    pub hidden: Linear<T>,
    /// d × 1
    pub output: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct MlpTrace<T> {
    input: Tensor<T>,
    pre: Tensor<T>,
    act: Tensor<T>,
    pub logit: T,
    pub output: T,
}

impl<T: Scalar> MlpParams<T> {
    pub fn zeros(d: usize) -> Self {
        Self { hidden: Linear::zeros(d, d), output: Linear::zeros(d, 1) }
    }

    pub fn init<R: Rng>(rng: &mut R, d: usize) -> Self {
        Self { hidden: Linear::init(rng, d, d), output: Linear::init(rng, d, 1) }
    }

    pub fn forward_traced(&self, v: &Tensor<T>) -> Result<MlpTrace<T>, NnError> {
        let d = self.hidden.input_dim();
        if v.len() != d || self.output.output_dim() != 1 || self.output.input_dim() != self.hidden.output_dim() {
            return shape_err(format!("head expects a {d}-vector and d×d, d×1 layers; got input of {}", v.len()));
        }
        let input = Tensor::from_vec(&[1, d], v.data().to_vec())?;
        let pre = self.hidden.forward(&input)?;
        let mut act = pre.clone();
        act.data_mut().iter_mut().for_each(|h| *h = h.max(T::zero()));
        let logit = self.output.forward(&act)?.data()[0];
        Ok(MlpTrace { input, pre, act, logit, output: sigmoid(logit) })
    }

    pub fn forward(&self, v: &Tensor<T>) -> Result<T, NnError> {
        self.forward_traced(v).map(|t| t.output)
    }

    /// Accumulates into `grads` and returns `dL/dv` given `dL/dŷ`.
    pub fn backward(&self, trace: &MlpTrace<T>, dout: T, grads: &mut MlpParams<T>) -> Result<Tensor<T>, NnError> {
        let dlogit = dout * trace.output * (T::one() - trace.output);
        let dz = Tensor::from_vec(&[1, 1], vec![dlogit])?;
        let mut dact = self.output.backward(&trace.act, &dz, &mut grads.output)?;
        for (g, &p) in dact.data_mut().iter_mut().zip(trace.pre.data()) {
            if p <= T::zero() {
                *g = T::zero();
            }
        }
        let dinput = self.hidden.backward(&trace.input, &dact, &mut grads.hidden)?;
        Ok(Tensor::vector(dinput.into_data()))
    }
}

impl<T: Scalar> Parameters<T> for MlpParams<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> =
            self.hidden.named_tensors().into_iter().map(|(n, t)| (format!("hidden.{n}"), t)).collect();
        out.extend(self.output.named_tensors().into_iter().map(|(n, t)| (format!("output.{n}"), t)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.hidden.tensors_mut();
        out.extend(self.output.tensors_mut());
        out
    }
}

/// `sigmoid(layer2(relu(layer1(v))))`.
pub fn mlp_sigmoid_forward<T: Scalar>(v: &Tensor<T>, params: &MlpParams<T>) -> Result<T, NnError> {
    params.forward(v)
}

/// `(1/n) Σ (ŷ − y)²`.
pub fn mse_loss<T: Scalar>(preds: &[T], labels: &[T]) -> Result<T, NnError> {
    if preds.len() != labels.len() {
        return shape_err(format!("{} predictions for {} labels", preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return shape_err("empty batch");
    }
    let sum: T = preds.iter().zip(labels).map(|(&p, &y)| (p - y) * (p - y)).sum();
    Ok(sum / T::of(preds.len() as f64))
}

/// `∂MSE/∂ŷᵢ = 2(ŷᵢ − yᵢ)/n`.
pub fn mse_grad<T: Scalar>(preds: &[T], labels: &[T]) -> Result<Vec<T>, NnError> {
    if preds.len() != labels.len() || preds.is_empty() {
        return shape_err(format!("{} predictions for {} labels", preds.len(), labels.len()));
    }
    let k = T::of(2.0 / preds.len() as f64);
    Ok(preds.iter().zip(labels).map(|(&p, &y)| k * (p - y)).collect())
}
