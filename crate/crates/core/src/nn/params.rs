use super::tensor::{NnError, Tensor};
use crate::scalar::Scalar;
use rand::Rng;

/// A fixed, ordered collection of trainable tensors.
///
/// Gradient containers reuse the parameter type: `grads.tensors()[i]` is the
/// gradient of `params.tensors()[i]`.
pub trait Parameters<T: Scalar> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn tensors(&self) -> Vec<&Tensor<T>> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn zero_(&mut self) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = T::zero());
        }
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.zero_();
        z
    }

    /// `self += other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self) -> Result<(), NnError>
    where
        Self: Sized,
    {
        let src = other.tensors();
        let dst = self.tensors_mut();
        if src.len() != dst.len() {
            return Err(NnError::Shape("parameter sets differ".into()));
        }
        for (d, s) in dst.into_iter().zip(src) {
            d.add_assign(s)?;
        }
        Ok(())
    }

    fn scale_(&mut self, k: T) {
        for t in self.tensors_mut() {
            t.scale(k);
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

impl<T: Scalar> Parameters<T> for Tensor<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("value".into(), self)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![self]
    }
}

/// Uniform Glorot initialisation with bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}
