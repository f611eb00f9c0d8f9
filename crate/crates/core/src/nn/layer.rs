//! Post-norm transformer encoder layer with an explicit backward pass.
//!
//! ```text
//! Z1 = X + MultiHead(X)·Wo        Y1 = LN1(Z1)
//! Z2 = Y1 + relu(Y1·W1 + b1)·W2 + b2   Y = LN2(Z2)
//! ```
//!
//! Padded key positions are excluded from every softmax and padded output
//! rows are zero. The computation only touches unmasked rows: they are
//! gathered into a compact matrix, processed, and scattered back, which is
//! exactly equivalent to additive `-inf` masking of the padded keys.

use super::linear::Linear;
use super::params::{glorot, Parameters};
use super::tensor::{shape_err, NnError, Tensor};
use crate::scalar::Scalar;
use rand::Rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayerParams<T> {
    pub heads: usize,
    /// d × d; columns `h·d_h .. (h+1)·d_h` are the projection of head `h`.
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
    pub ln1_scale: Tensor<T>,
    pub ln1_shift: Tensor<T>,
    pub ln2_scale: Tensor<T>,
    pub ln2_shift: Tensor<T>,
}

impl<T: Scalar> TransformerLayerParams<T> {
    pub fn init<R: Rng>(rng: &mut R, d: usize, heads: usize) -> Result<Self, NnError> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return shape_err(format!("hidden size {d} not divisible by {heads} heads"));
        }
        let dh = d / heads;
        Ok(Self {
            heads,
            wq: glorot(rng, &[d, d], d, dh),
            wk: glorot(rng, &[d, d], d, dh),
            wv: glorot(rng, &[d, d], d, dh),
            wo: glorot(rng, &[d, d], d, d),
            ffn_in: Linear::init(rng, d, 4 * d),
            ffn_out: Linear::init(rng, 4 * d, d),
            ln1_scale: Tensor::filled(&[d], T::one()),
            ln1_shift: Tensor::zeros(&[d]),
            ln2_scale: Tensor::filled(&[d], T::one()),
            ln2_shift: Tensor::zeros(&[d]),
        })
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    fn check(&self) -> Result<(), NnError> {
        let d = self.dim();
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return shape_err(format!("hidden size {d} not divisible by {} heads", self.heads));
        }
        for w in [&self.wq, &self.wk, &self.wv, &self.wo] {
            if w.shape() != [d, d] {
                return shape_err(format!("projection shape {:?}, expected [{d}, {d}]", w.shape()));
            }
        }
        if self.ffn_in.weight.shape() != [d, 4 * d] || self.ffn_out.weight.shape() != [4 * d, d] {
            return shape_err("feed-forward weights do not match hidden size");
        }
        Ok(())
    }

    /// Forward pass without recording.
    pub fn forward(&self, x: &Tensor<T>, mask: &[u8]) -> Result<Tensor<T>, NnError> {
        self.forward_traced(x, mask).map(|(y, _)| y)
    }

    pub fn forward_traced(&self, x: &Tensor<T>, mask: &[u8]) -> Result<(Tensor<T>, LayerTrace<T>), NnError> {
        self.check()?;
        let d = self.dim();
        if x.shape().len() != 2 || x.cols() != d {
            return shape_err(format!("layer input {:?}, expected [L, {d}]", x.shape()));
        }
        if mask.len() != x.rows() {
            return shape_err(format!("mask of {} for {} rows", mask.len(), x.rows()));
        }
        if !x.is_finite() {
            return Err(NnError::Numeric("non-finite layer input".into()));
        }
        let idx: Vec<usize> = mask.iter().enumerate().filter(|(_, m)| **m != 0).map(|(i, _)| i).collect();
        let total = x.rows();
        let xc = x.gather_rows(&idx);
        let n = idx.len();

        let q = xc.matmul(&self.wq)?;
        let k = xc.matmul(&self.wk)?;
        let v = xc.matmul(&self.wv)?;
        let (o, probs) = attention(&q, &k, &v, self.heads);
        let a = o.matmul(&self.wo)?;
        let z1 = xc.add(&a)?;
        let ln1 = layer_norm(&z1, &self.ln1_scale, &self.ln1_shift);
        let hpre = self.ffn_in.forward(&ln1.y)?;
        let mut hact = hpre.clone();
        hact.data_mut().iter_mut().for_each(|h| *h = h.max(T::zero()));
        let f = self.ffn_out.forward(&hact)?;
        let z2 = ln1.y.add(&f)?;
        let ln2 = layer_norm(&z2, &self.ln2_scale, &self.ln2_shift);

        let out = Tensor::scatter_rows(&ln2.y, &idx, total);
        if !out.is_finite() {
            return Err(NnError::Numeric("non-finite layer output".into()));
        }
        let trace = LayerTrace { idx, total, n, x: xc, q, k, v, probs, o, ln1, hpre, hact, ln2 };
        Ok((out, trace))
    }

    /// Back-propagates `dy` (L × d, rows outside the mask are ignored),
    /// accumulating into `grads`. Returns `dL/dX` (L × d) when requested.
    pub fn backward(
        &self,
        trace: &LayerTrace<T>,
        dy: &Tensor<T>,
        grads: &mut TransformerLayerParams<T>,
        want_input_grad: bool,
    ) -> Result<Option<Tensor<T>>, NnError> {
        if dy.shape() != [trace.total, self.dim()] {
            return shape_err(format!("upstream gradient {:?}, expected [{}, {}]", dy.shape(), trace.total, self.dim()));
        }
        if trace.n == 0 {
            return Ok(want_input_grad.then(|| Tensor::zeros(&[trace.total, self.dim()])));
        }
        let dyc = dy.gather_rows(&trace.idx);

        // LN2 and the feed-forward residual.
        let dz2 = layer_norm_backward(&trace.ln2, &self.ln2_scale, &dyc, &mut grads.ln2_scale, &mut grads.ln2_shift);
        let mut dy1 = dz2.clone();
        let mut dhact = self.ffn_out.backward(&trace.hact, &dz2, &mut grads.ffn_out)?;
        for (g, &h) in dhact.data_mut().iter_mut().zip(trace.hpre.data()) {
            if h <= T::zero() {
                *g = T::zero();
            }
        }
        dy1.add_assign(&self.ffn_in.backward(&trace.ln1.y, &dhact, &mut grads.ffn_in)?)?;

        // LN1 and the attention residual.
        let dz1 = layer_norm_backward(&trace.ln1, &self.ln1_scale, &dy1, &mut grads.ln1_scale, &mut grads.ln1_shift);
        grads.wo.add_assign(&trace.o.matmul_tn(&dz1)?)?;
        let do_ = dz1.matmul_nt(&self.wo)?;
        let (dq, dk, dv) = attention_backward(trace, &do_, self.heads);
        grads.wq.add_assign(&trace.x.matmul_tn(&dq)?)?;
        grads.wk.add_assign(&trace.x.matmul_tn(&dk)?)?;
        grads.wv.add_assign(&trace.x.matmul_tn(&dv)?)?;

        if !want_input_grad {
            return Ok(None);
        }
        let mut dx = dz1;
        dx.add_assign(&dq.matmul_nt(&self.wq)?)?;
        dx.add_assign(&dk.matmul_nt(&self.wk)?)?;
        dx.add_assign(&dv.matmul_nt(&self.wv)?)?;
        Ok(Some(Tensor::scatter_rows(&dx, &trace.idx, trace.total)))
    }
}

impl<T: Scalar> Parameters<T> for TransformerLayerParams<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("wq".into(), &self.wq),
            ("wk".into(), &self.wk),
            ("wv".into(), &self.wv),
            ("wo".into(), &self.wo),
            ("ffn_in.weight".into(), &self.ffn_in.weight),
            ("ffn_in.bias".into(), &self.ffn_in.bias),
            ("ffn_out.weight".into(), &self.ffn_out.weight),
            ("ffn_out.bias".into(), &self.ffn_out.bias),
            ("ln1.scale".into(), &self.ln1_scale),
            ("ln1.shift".into(), &self.ln1_shift),
            ("ln2.scale".into(), &self.ln2_scale),
            ("ln2.shift".into(), &self.ln2_shift),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.ffn_in.weight,
            &mut self.ffn_in.bias,
            &mut self.ffn_out.weight,
            &mut self.ffn_out.bias,
            &mut self.ln1_scale,
            &mut self.ln1_shift,
            &mut self.ln2_scale,
            &mut self.ln2_shift,
        ]
    }
}

/// Free-function form of [`TransformerLayerParams::forward`].
pub fn transformer_layer_forward<T: Scalar>(
    x: &Tensor<T>,
    mask: &[u8],
    params: &TransformerLayerParams<T>,
) -> Result<Tensor<T>, NnError> {
    params.forward(x, mask)
}

/// Values recorded by a forward pass, over the compacted (unmasked) rows.
#[derive(Debug, Clone)]
pub struct LayerTrace<T> {
    idx: Vec<usize>,
    total: usize,
    n: usize,
    x: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    /// Per head, n × n row-stochastic attention weights.
    probs: Vec<Vec<T>>,
    o: Tensor<T>,
    ln1: NormTrace<T>,
    hpre: Tensor<T>,
    hact: Tensor<T>,
    ln2: NormTrace<T>,
}

#[derive(Debug, Clone)]
struct NormTrace<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    y: Tensor<T>,
}

fn layer_norm<T: Scalar>(z: &Tensor<T>, scale: &Tensor<T>, shift: &Tensor<T>) -> NormTrace<T> {
    let (n, d) = (z.rows(), z.cols());
    let dd = T::of(d as f64);
    let eps = T::of(LAYER_NORM_EPS);
    let mut xhat = Tensor::zeros(&[n, d]);
    let mut y = Tensor::zeros(&[n, d]);
    let mut inv_std = Vec::with_capacity(n);
    for r in 0..n {
        let row = z.row(r);
        let mean = row.iter().copied().sum::<T>() / dd;
        let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / dd;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        for c in 0..d {
            let xh = (row[c] - mean) * is;
            xhat.set(r, c, xh);
            y.set(r, c, xh * scale.data()[c] + shift.data()[c]);
        }
    }
    NormTrace { xhat, inv_std, y }
}

fn layer_norm_backward<T: Scalar>(
    trace: &NormTrace<T>,
    scale: &Tensor<T>,
    dy: &Tensor<T>,
    dscale: &mut Tensor<T>,
    dshift: &mut Tensor<T>,
) -> Tensor<T> {
    let (n, d) = (dy.rows(), dy.cols());
    let dd = T::of(d as f64);
    let mut dz = Tensor::zeros(&[n, d]);
    for r in 0..n {
        let xh = trace.xhat.row(r);
        let g = dy.row(r);
        let mut sum_dxh = T::zero();
        let mut sum_dxh_xh = T::zero();
        for c in 0..d {
            dscale.data_mut()[c] += g[c] * xh[c];
            dshift.data_mut()[c] += g[c];
            let dxh = g[c] * scale.data()[c];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[c];
        }
        let is = trace.inv_std[r];
        for c in 0..d {
            let dxh = g[c] * scale.data()[c];
            dz.set(r, c, is / dd * (dd * dxh - sum_dxh - xh[c] * sum_dxh_xh));
        }
    }
    dz
}

fn attention<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, heads: usize) -> (Tensor<T>, Vec<Vec<T>>) {
    let (n, d) = (q.rows(), q.cols());
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut o = Tensor::zeros(&[n, d]);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let off = h * dh;
        let mut p = vec![T::zero(); n * n];
        for i in 0..n {
            let qi = &q.row(i)[off..off + dh];
            let prow = &mut p[i * n..(i + 1) * n];
            let mut max = T::neg_infinity();
            for (j, pj) in prow.iter_mut().enumerate() {
                let kj = &k.row(j)[off..off + dh];
                let mut s = T::zero();
                for t in 0..dh {
                    s += qi[t] * kj[t];
                }
                *pj = s * scale;
                max = max.max(*pj);
            }
            let mut z = T::zero();
            for pj in prow.iter_mut() {
                *pj = (*pj - max).exp();
                z += *pj;
            }
            for pj in prow.iter_mut() {
                *pj /= z;
            }
            let orow = &mut o.row_mut(i)[off..off + dh];
            for (j, &pij) in prow.iter().enumerate() {
                let vj = &v.row(j)[off..off + dh];
                for t in 0..dh {
                    orow[t] += pij * vj[t];
                }
            }
        }
        probs.push(p);
    }
    (o, probs)
}

fn attention_backward<T: Scalar>(trace: &LayerTrace<T>, do_: &Tensor<T>, heads: usize) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let n = trace.n;
    let d = do_.cols();
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut dq = Tensor::zeros(&[n, d]);
    let mut dk = Tensor::zeros(&[n, d]);
    let mut dv = Tensor::zeros(&[n, d]);
    let mut dp = vec![T::zero(); n];
    for h in 0..heads {
        let off = h * dh;
        let p = &trace.probs[h];
        for i in 0..n {
            let doi = &do_.row(i)[off..off + dh];
            let prow = &p[i * n..(i + 1) * n];
            // dP_ij = dO_i · V_j ; dV_j += P_ij dO_i
            let mut dot = T::zero();
            for j in 0..n {
                let vj = &trace.v.row(j)[off..off + dh];
                let mut s = T::zero();
                for t in 0..dh {
                    s += doi[t] * vj[t];
                }
                dp[j] = s;
                dot += s * prow[j];
                let dvj = &mut dv.row_mut(j)[off..off + dh];
                for t in 0..dh {
                    dvj[t] += prow[j] * doi[t];
                }
            }
            // softmax backward, then the scaled dot product
            for j in 0..n {
                let ds = prow[j] * (dp[j] - dot) * scale;
                if ds == T::zero() {
                    continue;
                }
                let kj = &trace.k.row(j)[off..off + dh];
                let qi = &trace.q.row(i)[off..off + dh];
                let dqi = &mut dq.row_mut(i)[off..off + dh];
                for t in 0..dh {
                    dqi[t] += ds * kj[t];
                }
                let dkj = &mut dk.row_mut(j)[off..off + dh];
                for t in 0..dh {
                    dkj[t] += ds * qi[t];
                }
            }
        }
    }
    (dq, dk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(&[rows, cols], data).unwrap()
    }

    #[test]
    fn shape_preserved_and_padding_zeroed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = TransformerLayerParams::<f64>::init(&mut rng, 8, 2).unwrap();
        let x = random(&mut rng, 6, 8);
        let y = p.forward(&x, &[1, 1, 1, 1, 0, 0]).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.row(4).iter().chain(y.row(5)).all(|v| *v == 0.0));
        assert!(y.row(0).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn identical_rows_stay_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = TransformerLayerParams::<f64>::init(&mut rng, 8, 2).unwrap();
        let r = random(&mut rng, 1, 8);
        let x = Tensor::concat_rows(&[&r, &r, &r, &r]).unwrap();
        let y = p.forward(&x, &[1; 4]).unwrap();
        for i in 1..4 {
            for c in 0..8 {
                assert!((y.at(i, c) - y.at(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn padded_inputs_do_not_leak() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = TransformerLayerParams::<f64>::init(&mut rng, 8, 2).unwrap();
        let mut x = random(&mut rng, 5, 8);
        let mask = [1, 1, 1, 0, 0];
        let a = p.forward(&x, &mask).unwrap();
        x.row_mut(3).iter_mut().for_each(|v| *v = 1e3);
        let b = p.forward(&x, &mask).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_and_numeric_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(TransformerLayerParams::<f64>::init(&mut rng, 10, 4).is_err());
        let p = TransformerLayerParams::<f64>::init(&mut rng, 8, 2).unwrap();
        assert!(matches!(p.forward(&random(&mut rng, 3, 4), &[1; 3]), Err(NnError::Shape(_))));
        assert!(matches!(p.forward(&random(&mut rng, 3, 8), &[1; 2]), Err(NnError::Shape(_))));
        let mut x = random(&mut rng, 3, 8);
        x.set(0, 0, f64::NAN);
        assert!(matches!(p.forward(&x, &[1; 3]), Err(NnError::Numeric(_))));
    }
}
