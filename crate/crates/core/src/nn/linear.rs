use super::params::{glorot, Parameters};
use super::tensor::{NnError, Tensor};
use crate::scalar::Scalar;
use rand::Rng;

/// Affine map `x·W + b` applied to each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// in × out
    pub weight: Tensor<T>,
    /// out
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Tensor::zeros(&[input, output]), bias: Tensor::zeros(&[output]) }
    }

    pub fn init<R: Rng>(rng: &mut R, input: usize, output: usize) -> Self {
        Self { weight: glorot(rng, &[input, output], input, output), bias: Tensor::zeros(&[output]) }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    /// `x` is n × in.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut y = x.matmul(&self.weight)?;
        y.add_row_vector(&self.bias)?;
        Ok(y)
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grads: &mut Linear<T>) -> Result<Tensor<T>, NnError> {
        grads.weight.add_assign(&x.matmul_tn(dy)?)?;
        grads.bias.add_assign(&dy.sum_rows())?;
        dy.matmul_nt(&self.weight)
    }
}

impl<T: Scalar> Parameters<T> for Linear<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
