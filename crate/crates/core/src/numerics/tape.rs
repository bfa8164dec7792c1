//! Reverse-mode gradient tape.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and [`Tape::backward`] only has to walk it once in
//! reverse. Inputs that do not require gradients (constants, frozen
//! weights) are never visited on the way back.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::linalg::{matmul_into, Transpose};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    MeanRows(Var),
    Gather(Var, Vec<usize>),
    SparseLinear {
        x: Var,
        in_cols: usize,
        out_cols: usize,
        entries: Vec<(usize, usize, f64)>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        pad: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        pad: usize,
    },
    Film {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    Sum(Var),
    WeightedSqErr {
        x: Var,
        target: Vec<f64>,
        weights: Vec<f64>,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass.
///
/// Tapes are single-threaded scratch objects: build one per training step,
/// call [`backward`](Tape::backward), read the gradients and drop it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does not
    /// participate in gradient flow.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn row_vector_len(t: &Tensor, what: &str) -> Result<usize> {
    match t.shape() {
        [n] | [1, n] => Ok(*n),
        other => Err(Error::shape(format!(
            "{what}: expected a vector, got {:?}",
            other
        ))),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant input: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Inputs registered with [`Tape::leaf`], in creation order.
    pub fn trainable_leaves(&self) -> Vec<Var> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.requires_grad && matches!(n.op, Op::Leaf))
            .map(|(i, _)| Var(i))
            .collect()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dims differ: {m}x{k} * {k2}x{n}"
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(
            m,
            k,
            n,
            self.value(a).data(),
            Transpose::No,
            self.value(b).data(),
            Transpose::No,
            0.0,
            &mut out,
        )?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `x[m×n] + b[n]`, the bias added to every row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, n) = self.value(x).dims2()?;
        if row_vector_len(self.value(b), "add_bias")? != n {
            return Err(Error::shape("add_bias: bias width mismatch"));
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            row.iter_mut().zip(bias).for_each(|(o, b)| *o += b);
        }
        let value = Tensor::new(self.value(x).shape(), out)?;
        let rg = self.any_grad(&[x, b]);
        Ok(self.push(value, Op::AddBias(x, b), rg))
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        check_same(self.value(a), self.value(b), "elementwise op")?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let value = Tensor::new(self.value(a).shape(), out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Hadamard(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let src = self.value(x);
        let value = Tensor::new(src.shape(), src.data().iter().map(|v| v * c).collect())
            .expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let value = Tensor::new(src.shape(), src.data().iter().map(|v| v.max(0.0)).collect())
            .expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    /// Layer normalization over the last dimension of a matrix, with learned
    /// per-feature scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if row_vector_len(self.value(gamma), "layer_norm gamma")? != n
            || row_vector_len(self.value(beta), "layer_norm beta")? != n
        {
            return Err(Error::shape("layer_norm: affine width mismatch"));
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut normalized = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                normalized[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(&[m, n], out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n.max(1)).take(m) {
            softmax_in_place(row);
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::SoftmaxRows(x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                out[c * m + r] = src[r * n + c];
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(&[n, m], out)?, Op::Transpose(x), rg))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::usage("concat_rows needs at least one input"))?;
        let (_, n) = self.value(*first).dims2()?;
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            let (r, c) = self.value(*p).dims2()?;
            if c != n {
                return Err(Error::shape(format!(
                    "concat_rows: column counts {n} and {c} differ"
                )));
            }
            rows += r;
            out.extend_from_slice(self.value(*p).data());
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::new(&[rows, n], out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Concatenates matrices with equal row counts along the last dimension.
    pub fn concat_last_dim(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::usage("concat_last_dim needs at least one input"))?;
        let (m, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = self.value(*p).dims2()?;
            if r != m {
                return Err(Error::shape(format!(
                    "concat_last_dim: row counts {m} and {r} differ"
                )));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for (p, w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if start + len > m {
            return Err(Error::shape(format!(
                "slice_rows {start}..{} out of {m} rows",
                start + len
            )));
        }
        let out = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(&[len, n], out)?, Op::SliceRows(x, start), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if start + len > n {
            return Err(Error::shape(format!(
                "slice_cols {start}..{} out of {n} columns",
                start + len
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(&[m, len], out)?, Op::SliceCols(x, start), rg))
    }

    /// Mean over the token (row) axis: `[m×n] -> [1×n]`.
    pub fn mean_pool_tokens(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if m == 0 {
            return Err(Error::usage("mean_pool_tokens over zero rows"));
        }
        let mut out = vec![0.0; n];
        for row in self.value(x).data().chunks(n) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(&[1, n], out)?, Op::MeanRows(x), rg))
    }

    /// `out[i] = x[index[i]]` (flat indices), reshaped to `shape`.
    ///
    /// Covers patch extraction, permutations and other index shuffles.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        if let Some(bad) = index.iter().find(|i| **i >= src.len()) {
            return Err(Error::shape(format!(
                "gather index {bad} out of {} values",
                src.len()
            )));
        }
        let out = index.iter().map(|i| src[*i]).collect();
        let value = Tensor::new(shape, out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Gather(x, index), rg))
    }

    /// Fixed sparse linear map along the last axis:
    /// `out[r, o] = sum over entries (o, i, c) of c * x[r, i]`.
    pub fn sparse_linear(
        &mut self,
        x: Var,
        out_cols: usize,
        entries: Vec<(usize, usize, f64)>,
    ) -> Result<Var> {
        let (m, in_cols) = self.value(x).dims2()?;
        if entries.iter().any(|(o, i, _)| *o >= out_cols || *i >= in_cols) {
            return Err(Error::shape("sparse_linear entry out of range"));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; m * out_cols];
        for r in 0..m {
            let xr = &src[r * in_cols..(r + 1) * in_cols];
            let or = &mut out[r * out_cols..(r + 1) * out_cols];
            for (o, i, c) in &entries {
                or[*o] += c * xr[*i];
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::new(&[m, out_cols], out)?,
            Op::SparseLinear {
                x,
                in_cols,
                out_cols,
                entries,
            },
            rg,
        ))
    }

    /// 1-D cross-correlation: `x[C_in×L]`, `w[C_out×C_in×K]`, `b[C_out]`,
    /// zero padding `pad` on both ends, stride 1.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let (cin, len) = self.value(x).dims2()?;
        let (cout, wcin, k) = match self.value(w).shape() {
            [o, i, k] => (*o, *i, *k),
            other => return Err(Error::shape(format!("conv1d kernel shape {:?}", other))),
        };
        if wcin != cin {
            return Err(Error::shape("conv1d: channel mismatch"));
        }
        if row_vector_len(self.value(b), "conv1d bias")? != cout {
            return Err(Error::shape("conv1d: bias length mismatch"));
        }
        if k == 0 || k > len + 2 * pad {
            return Err(Error::shape(format!(
                "conv1d: kernel {k} larger than padded input {}",
                len + 2 * pad
            )));
        }
        let lout = len + 2 * pad - k + 1;
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = self.value(b).data();
        let mut out = vec![0.0; cout * lout];
        for o in 0..cout {
            let orow = &mut out[o * lout..(o + 1) * lout];
            orow.iter_mut().for_each(|v| *v = bs[o]);
            for c in 0..cin {
                let xrow = &xs[c * len..(c + 1) * len];
                for kk in 0..k {
                    let wv = ws[(o * cin + c) * k + kk];
                    for (t, ov) in orow.iter_mut().enumerate() {
                        let src = t + kk;
                        if src >= pad && src - pad < len {
                            *ov += wv * xrow[src - pad];
                        }
                    }
                }
            }
        }
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(
            Tensor::new(&[cout, lout], out)?,
            Op::Conv1d { x, w, b, pad },
            rg,
        ))
    }

    /// 2-D cross-correlation: `x[C_in×H×W]`, `w[C_out×C_in×K×K]`,
    /// `b[C_out]`, zero padding `pad` on every side, stride 1.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let (cin, h, wd) = match self.value(x).shape() {
            [c, h, w] => (*c, *h, *w),
            other => return Err(Error::shape(format!("conv2d input shape {:?}", other))),
        };
        let (cout, k) = match self.value(w).shape() {
            [o, i, k1, k2] if *i == cin && k1 == k2 => (*o, *k1),
            other => return Err(Error::shape(format!("conv2d kernel shape {:?}", other))),
        };
        if row_vector_len(self.value(b), "conv2d bias")? != cout {
            return Err(Error::shape("conv2d: bias length mismatch"));
        }
        if k == 0 || k > h + 2 * pad || k > wd + 2 * pad {
            return Err(Error::shape("conv2d: kernel larger than padded input"));
        }
        let ho = h + 2 * pad - k + 1;
        let wo = wd + 2 * pad - k + 1;
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = self.value(b).data();
        let mut out = vec![0.0; cout * ho * wo];
        for o in 0..cout {
            let oplane = &mut out[o * ho * wo..(o + 1) * ho * wo];
            oplane.iter_mut().for_each(|v| *v = bs[o]);
            for c in 0..cin {
                let xplane = &xs[c * h * wd..(c + 1) * h * wd];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = ws[((o * cin + c) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for y in 0..ho {
                            let sy = y + ky;
                            if sy < pad || sy - pad >= h {
                                continue;
                            }
                            let xrow = &xplane[(sy - pad) * wd..(sy - pad + 1) * wd];
                            let orow = &mut oplane[y * wo..(y + 1) * wo];
                            for (xo, ov) in orow.iter_mut().enumerate() {
                                let sx = xo + kx;
                                if sx >= pad && sx - pad < wd {
                                    *ov += wv * xrow[sx - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(
            Tensor::new(&[cout, ho, wo], out)?,
            Op::Conv2d { x, w, b, pad },
            rg,
        ))
    }

    /// Feature-wise affine modulation `gamma ⊙ x + beta`, with `gamma` and
    /// `beta` (`[1×n]`) applied to every row of `x[m×n]`.
    pub fn film(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (_, n) = self.value(x).dims2()?;
        if row_vector_len(self.value(gamma), "film gamma")? != n
            || row_vector_len(self.value(beta), "film beta")? != n
        {
            return Err(Error::shape(format!(
                "film: modulation widths do not match activation width {n}"
            )));
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            for c in 0..n {
                row[c] = g[c] * row[c] + b[c];
            }
        }
        let value = Tensor::new(self.value(x).shape(), out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(value, Op::Film { x, gamma, beta }, rg))
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `sum_i w_i (x_i - t_i)^2` with constant target and weights.
    pub fn weighted_sq_err(&mut self, x: Var, target: Vec<f64>, weights: Vec<f64>) -> Result<Var> {
        let xs = self.value(x).data();
        if target.len() != xs.len() || weights.len() != xs.len() {
            return Err(Error::shape("weighted_sq_err: length mismatch"));
        }
        let s = xs
            .iter()
            .zip(&target)
            .zip(&weights)
            .map(|((x, t), w)| w * (x - t) * (x - t))
            .sum();
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSqErr { x, target, weights },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Backpropagates from a scalar `loss`.
    ///
    /// Every node that requires gradients ends up with a buffer, zero-filled
    /// when the loss does not depend on it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && grads[idx].is_none() {
                grads[idx] = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let (_, n) = self.value(*b).dims2()?;
                if let Some(ga) = self.grad_slot(grads, *a) {
                    matmul_into(m, n, k, g, Transpose::No, self.value(*b).data(), Transpose::Yes, 1.0, ga)?;
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    matmul_into(k, m, n, self.value(*a).data(), Transpose::Yes, g, Transpose::No, 1.0, gb)?;
                }
            }
            Op::AddBias(x, b) => {
                let n = self.value(*b).len();
                if let Some(gx) = self.grad_slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, d)| *a += d);
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, d)| *a += d);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, d)| *x += d);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, d)| *x -= d);
                }
            }
            Op::Hadamard(a, b) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    let bv = self.value(*b).data();
                    for ((x, d), y) in ga.iter_mut().zip(g).zip(bv) {
                        *x += d * y;
                    }
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    let av = self.value(*a).data();
                    for ((x, d), y) in gb.iter_mut().zip(g).zip(av) {
                        *x += d * y;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, d)| *a += c * d);
                }
            }
            Op::Relu(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let y = node.value.data();
                    for ((a, d), y) in gx.iter_mut().zip(g).zip(y) {
                        if *y > 0.0 {
                            *a += d;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let (m, n) = self.value(*x).dims2()?;
                if let Some(gb) = self.grad_slot(grads, *beta) {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, d)| *a += d);
                    }
                }
                if let Some(gg) = self.grad_slot(grads, *gamma) {
                    for (row, h) in g.chunks(n).zip(normalized.chunks(n)) {
                        for c in 0..n {
                            gg[c] += row[c] * h[c];
                        }
                    }
                }
                let gamma_v = self.value(*gamma).data().to_vec();
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let nf = n as f64;
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &normalized[r * n..(r + 1) * n];
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for c in 0..n {
                            let d = gr[c] * gamma_v[c];
                            sum_d += d;
                            sum_dh += d * hr[c];
                        }
                        let scale = inv_std[r] / nf;
                        for c in 0..n {
                            let d = gr[c] * gamma_v[c];
                            gx[r * n + c] += scale * (nf * d - sum_d - hr[c] * sum_dh);
                        }
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let (_, n) = node.value.dims2()?;
                    let y = node.value.data();
                    for ((gxr, gr), yr) in gx.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            gxr[c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let (m, n) = self.value(*x).dims2()?;
                    for r in 0..m {
                        for c in 0..n {
                            gx[r * n + c] += g[c * m + r];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if let Some(gp) = self.grad_slot(grads, *p) {
                        gp.iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(a, d)| *a += d);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, n) = node.value.dims2()?;
                let mut col = 0;
                for p in parts {
                    let (_, w) = self.value(*p).dims2()?;
                    if let Some(gp) = self.grad_slot(grads, *p) {
                        for r in 0..m {
                            for c in 0..w {
                                gp[r * w + c] += g[r * n + col + c];
                            }
                        }
                    }
                    col += w;
                }
            }
            Op::SliceRows(x, start) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let (_, n) = self.value(*x).dims2()?;
                    gx[start * n..start * n + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, d)| *a += d);
                }
            }
            Op::SliceCols(x, start) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let (m, n) = self.value(*x).dims2()?;
                    let (_, len) = node.value.dims2()?;
                    for r in 0..m {
                        for c in 0..len {
                            gx[r * n + start + c] += g[r * len + c];
                        }
                    }
                }
            }
            Op::MeanRows(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let (m, n) = self.value(*x).dims2()?;
                    let inv = 1.0 / m as f64;
                    for row in gx.chunks_mut(n) {
                        row.iter_mut().zip(g).for_each(|(a, d)| *a += d * inv);
                    }
                }
            }
            Op::Gather(x, index) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for (i, d) in index.iter().zip(g) {
                        gx[*i] += d;
                    }
                }
            }
            Op::SparseLinear {
                x,
                in_cols,
                out_cols,
                entries,
            } => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for (gxr, gr) in gx.chunks_mut(*in_cols).zip(g.chunks(*out_cols)) {
                        for (o, i, c) in entries {
                            gxr[*i] += c * gr[*o];
                        }
                    }
                }
            }
            Op::Conv1d { x, w, b, pad } => self.conv1d_backward(*x, *w, *b, *pad, g, grads)?,
            Op::Conv2d { x, w, b, pad } => self.conv2d_backward(*x, *w, *b, *pad, g, grads)?,
            Op::Film { x, gamma, beta } => {
                let (_, n) = self.value(*x).dims2()?;
                if let Some(gb) = self.grad_slot(grads, *beta) {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, d)| *a += d);
                    }
                }
                if let Some(gg) = self.grad_slot(grads, *gamma) {
                    let xv = self.value(*x).data();
                    for (row, xr) in g.chunks(n).zip(xv.chunks(n)) {
                        for c in 0..n {
                            gg[c] += row[c] * xr[c];
                        }
                    }
                }
                let gamma_v = self.value(*gamma).data().to_vec();
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for (gxr, row) in gx.chunks_mut(n).zip(g.chunks(n)) {
                        for c in 0..n {
                            gxr[c] += row[c] * gamma_v[c];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::WeightedSqErr { x, target, weights } => {
                let xv = self.value(*x).data().to_vec();
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for i in 0..xv.len() {
                        gx[i] += g[0] * 2.0 * weights[i] * (xv[i] - target[i]);
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, d)| *a += d);
                }
            }
        }
        Ok(())
    }

    fn conv1d_backward(
        &self,
        x: Var,
        w: Var,
        b: Var,
        pad: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let (cin, len) = self.value(x).dims2()?;
        let shape = self.value(w).shape().to_vec();
        let (cout, k) = (shape[0], shape[2]);
        let lout = len + 2 * pad - k + 1;
        if let Some(gb) = self.grad_slot(grads, b) {
            for o in 0..cout {
                gb[o] += g[o * lout..(o + 1) * lout].iter().sum::<f64>();
            }
        }
        let xs = self.value(x).data().to_vec();
        if let Some(gw) = self.grad_slot(grads, w) {
            for o in 0..cout {
                let grow = &g[o * lout..(o + 1) * lout];
                for c in 0..cin {
                    let xrow = &xs[c * len..(c + 1) * len];
                    for kk in 0..k {
                        let mut acc = 0.0;
                        for (t, d) in grow.iter().enumerate() {
                            let src = t + kk;
                            if src >= pad && src - pad < len {
                                acc += d * xrow[src - pad];
                            }
                        }
                        gw[(o * cin + c) * k + kk] += acc;
                    }
                }
            }
        }
        let ws = self.value(w).data().to_vec();
        if let Some(gx) = self.grad_slot(grads, x) {
            for o in 0..cout {
                let grow = &g[o * lout..(o + 1) * lout];
                for c in 0..cin {
                    for kk in 0..k {
                        let wv = ws[(o * cin + c) * k + kk];
                        for (t, d) in grow.iter().enumerate() {
                            let src = t + kk;
                            if src >= pad && src - pad < len {
                                gx[c * len + src - pad] += d * wv;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn conv2d_backward(
        &self,
        x: Var,
        w: Var,
        b: Var,
        pad: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let xshape = self.value(x).shape().to_vec();
        let (cin, h, wd) = (xshape[0], xshape[1], xshape[2]);
        let wshape = self.value(w).shape().to_vec();
        let (cout, k) = (wshape[0], wshape[2]);
        let ho = h + 2 * pad - k + 1;
        let wo = wd + 2 * pad - k + 1;
        let plane = ho * wo;
        if let Some(gb) = self.grad_slot(grads, b) {
            for o in 0..cout {
                gb[o] += g[o * plane..(o + 1) * plane].iter().sum::<f64>();
            }
        }
        // Visits every (output pixel, kernel tap) pair whose source pixel is
        // inside the unpadded input.
        let for_taps = |f: &mut dyn FnMut(usize, usize, usize)| {
            for ky in 0..k {
                for kx in 0..k {
                    for y in 0..ho {
                        let sy = y + ky;
                        if sy < pad || sy - pad >= h {
                            continue;
                        }
                        for xo in 0..wo {
                            let sx = xo + kx;
                            if sx < pad || sx - pad >= wd {
                                continue;
                            }
                            f(ky * k + kx, y * wo + xo, (sy - pad) * wd + (sx - pad));
                        }
                    }
                }
            }
        };
        let xs = self.value(x).data().to_vec();
        if let Some(gw) = self.grad_slot(grads, w) {
            for o in 0..cout {
                let gplane = &g[o * plane..(o + 1) * plane];
                for c in 0..cin {
                    let xplane = &xs[c * h * wd..(c + 1) * h * wd];
                    let base = (o * cin + c) * k * k;
                    for_taps(&mut |tap, op, ip| {
                        gw[base + tap] += gplane[op] * xplane[ip];
                    });
                }
            }
        }
        let ws = self.value(w).data().to_vec();
        if let Some(gx) = self.grad_slot(grads, x) {
            for o in 0..cout {
                let gplane = &g[o * plane..(o + 1) * plane];
                for c in 0..cin {
                    let base = (o * cin + c) * k * k;
                    let gxplane = &mut gx[c * h * wd..(c + 1) * h * wd];
                    for_taps(&mut |tap, op, ip| {
                        gxplane[ip] += gplane[op] * ws[base + tap];
                    });
                }
            }
        }
        Ok(())
    }
}

/// Numerically stable softmax of one row, in place.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
