use crate::scalar::Scalar;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("mean pooling over an all-zero mask")]
    EmptyPool,
    #[error("state error: {0}")]
    State(String),
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T, NnError> {
    Err(NnError::Shape(msg.into()))
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!("shape {shape:?} needs {n} values, got {}", data.len()));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros(&other.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Rows of a matrix (first dimension).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Columns of a matrix (last dimension), 1 for a vector.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[self.shape.len() - 1]
        } else {
            1
        }
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn require_matrix(&self, what: &str) -> Result<(usize, usize), NnError> {
        if self.shape.len() != 2 {
            return shape_err(format!("{what}: expected a matrix, got shape {:?}", self.shape));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// `self (m×k) · other (k×n)`.
    pub fn matmul(&self, other: &Self) -> Result<Self, NnError> {
        let (m, k) = self.require_matrix("matmul lhs")?;
        let (k2, n) = other.require_matrix("matmul rhs")?;
        if k != k2 {
            return shape_err(format!("matmul {m}x{k} by {k2}x{n}"));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Self { shape: vec![m, n], data: out })
    }

    /// `selfᵀ · other` where `self` is k×m and `other` is k×n, result m×n.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self, NnError> {
        let (k, m) = self.require_matrix("matmul_tn lhs")?;
        let (k2, n) = other.require_matrix("matmul_tn rhs")?;
        if k != k2 {
            return shape_err(format!("matmul_tn {k}x{m}ᵀ by {k2}x{n}"));
        }
        let mut out = vec![T::zero(); m * n];
        for p in 0..k {
            let arow = &self.data[p * m..(p + 1) * m];
            let brow = &other.data[p * n..(p + 1) * n];
            for (i, &a) in arow.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Self { shape: vec![m, n], data: out })
    }

    /// `self (m×k) · otherᵀ` where `other` is n×k, result m×n.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self, NnError> {
        let (m, k) = self.require_matrix("matmul_nt lhs")?;
        let (n, k2) = other.require_matrix("matmul_nt rhs")?;
        if k != k2 {
            return shape_err(format!("matmul_nt {m}x{k} by ({n}x{k2})ᵀ"));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &other.data[j * k..(j + 1) * k];
                let mut s = T::zero();
                for (&a, &b) in arow.iter().zip(brow) {
                    s += a * b;
                }
                out[i * n + j] = s;
            }
        }
        Ok(Self { shape: vec![m, n], data: out })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), NnError> {
        if self.shape != other.shape {
            return shape_err(format!("add {:?} and {:?}", self.shape, other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, NnError> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn scale(&mut self, k: T) {
        for x in &mut self.data {
            *x *= k;
        }
    }

    /// Adds `bias` (length = cols) to every row.
    pub fn add_row_vector(&mut self, bias: &Self) -> Result<(), NnError> {
        let c = self.cols();
        if bias.len() != c {
            return shape_err(format!("bias of {} for {c} columns", bias.len()));
        }
        for r in 0..self.rows() {
            for (x, &b) in self.row_mut(r).iter_mut().zip(bias.data()) {
                *x += b;
            }
        }
        Ok(())
    }

    /// Column sums of a matrix, as a vector.
    pub fn sum_rows(&self) -> Self {
        let c = self.cols();
        let mut out = vec![T::zero(); c];
        for r in 0..self.rows() {
            for (o, &x) in out.iter_mut().zip(self.row(r)) {
                *o += x;
            }
        }
        Self { shape: vec![c], data: out }
    }

    /// Copies the listed rows into a new matrix.
    pub fn gather_rows(&self, idx: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { shape: vec![idx.len(), c], data }
    }

    /// Writes `rows` into the listed rows of a zero matrix with `total` rows.
    pub fn scatter_rows(rows: &Self, idx: &[usize], total: usize) -> Self {
        let c = rows.cols();
        let mut out = Self::zeros(&[total, c]);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(rows.row(k));
        }
        out
    }

    /// Stacks matrices with equal column counts along the row axis.
    pub fn concat_rows(parts: &[&Self]) -> Result<Self, NnError> {
        let Some(first) = parts.first() else {
            return shape_err("concat of nothing");
        };
        let c = first.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols() != c || p.shape.len() != 2 {
                return shape_err(format!("concat {:?} onto {c} columns", p.shape));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Ok(Self { shape: vec![rows, c], data })
    }

    /// Copies rows `start..start+len`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Self {
        let c = self.cols();
        Self { shape: vec![len, c], data: self.data[start * c..(start + len) * c].to_vec() }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// Converts element type through `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|x| U::of(x.as_f64())).collect() }
    }
}
