//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of a forward pass as a node holding its
//! value. [`Graph::backward`] then walks the tape in reverse and returns the
//! gradient of a scalar output with respect to every parameter leaf and every
//! leaf created with [`Graph::variable`].
//!
//! Parameter leaves borrow their values from a [`ParamStore`], so building a
//! graph never copies weights.

use std::borrow::Cow;
use std::collections::HashMap;

use super::param::{ParamId, ParamStore};
use super::tensor::{gemm, MatRef, Tensor};
use crate::error::{MrtError, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

type CustomBackward<'a> = Box<dyn Fn(&Tensor, &Tensor, &Tensor) -> Tensor + 'a>;

enum Op<'a> {
    Leaf,
    Param {
        store: u64,
        id: ParamId,
    },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Relu(Var),
    Square(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    SumAll(Var),
    Custom {
        x: Var,
        backward: CustomBackward<'a>,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op<'a>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    params: Vec<(u64, ParamId, Tensor)>,
    leaves: HashMap<Var, Tensor>,
}

impl Gradients {
    /// Gradients belonging to the store with the given tag.
    pub fn for_store(&self, tag: u64) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter(move |(t, _, _)| *t == tag)
            .map(|(_, id, g)| (*id, g))
    }

    pub fn param(&self, store: &ParamStore, id: ParamId) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(t, i, _)| *t == store.tag() && *i == id)
            .map(|(_, _, g)| g)
    }

    /// Gradient with respect to a leaf created by [`Graph::variable`].
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.leaves.get(&var)
    }
}

/// A recorded forward computation.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    param_nodes: HashMap<(u64, ParamId), Var>,
    frozen: Vec<u64>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            frozen: Vec::new(),
        }
    }

    /// Parameters of `store` become constants in this graph: no gradient is
    /// propagated into them.
    pub fn freeze(&mut self, store: &ParamStore) {
        self.frozen.push(store.tag());
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op<'a>, requires_grad: bool) -> Var {
        self.push_cow(Cow::Owned(value), op, requires_grad)
    }

    fn push_cow(&mut self, value: Cow<'a, Tensor>, op: Op<'a>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Borrowed constant input.
    pub fn input_ref(&mut self, value: &'a Tensor) -> Var {
        self.push_cow(Cow::Borrowed(value), Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        let key = (store.tag(), id);
        if let Some(&v) = self.param_nodes.get(&key) {
            return v;
        }
        let trainable = !self.frozen.contains(&store.tag());
        let op = if trainable {
            Op::Param {
                store: store.tag(),
                id,
            }
        } else {
            Op::Leaf
        };
        let v = self.push_cow(Cow::Borrowed(store.value(id)), op, trainable);
        self.param_nodes.insert(key, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Adds a length-`cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.len() != xv.cols() {
            return Err(MrtError::dim("add_row", xv.shape(), rv.shape()));
        }
        let mut out = xv.clone();
        let r = rv.data();
        for chunk in out.data_mut().chunks_mut(r.len()) {
            for (o, b) in chunk.iter_mut().zip(r) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(out, Op::AddRow(x, row), rg))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v + s);
        let rg = self.rg(x);
        self.push(out, Op::AddScalar(x), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).scale(s);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        let rg = self.rg(x);
        self.push(out, Op::Square(x), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = self.value(x).softmax_rows();
        let rg = self.rg(x);
        self.push(out, Op::SoftmaxRows(x), rg)
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gamma * xhat + beta`. The epsilon sits inside the square root.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.len() != d || bv.len() != d {
            return Err(MrtError::dim("layer_norm", xv.shape(), gv.shape()));
        }
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut out = vec![0.0; xv.len()];
        for (r, row) in xv.data().chunks(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = gv.data()[c] * h + bv.data()[c];
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        if len == 0 || start + len > cols {
            return Err(MrtError::invalid(format!(
                "column slice {start}..{} out of range for {:?}",
                start + len,
                xv.shape()
            )));
        }
        let rows = xv.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(vec![rows, len], out),
            Op::SliceCols { x, start },
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        if len == 0 || start + len > rows {
            return Err(MrtError::invalid(format!(
                "row slice {start}..{} out of range for {:?}",
                start + len,
                xv.shape()
            )));
        }
        let out = xv.data()[start * cols..(start + len) * cols].to_vec();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(vec![len, cols], out),
            Op::SliceRows { x, start },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| MrtError::invalid("concat of zero tensors"))?;
        let rows = self.value(*first).rows();
        if let Some(bad) = parts.iter().find(|p| self.value(**p).rows() != rows) {
            return Err(MrtError::dim(
                "concat_cols",
                self.shape(*first),
                self.shape(*bad),
            ));
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], out),
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| MrtError::invalid("concat of zero tensors"))?;
        let cols = self.value(*first).cols();
        if let Some(bad) = parts.iter().find(|p| self.value(**p).cols() != cols) {
            return Err(MrtError::dim(
                "concat_rows",
                self.shape(*first),
                self.shape(*bad),
            ));
        }
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.value(*p).data());
        }
        let rows = out.len() / cols;
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(
            Tensor::from_parts(vec![rows, cols], out),
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Unary op with a caller-supplied forward value and vector-Jacobian
    /// product `backward(input, output, grad_output) -> grad_input`.
    pub fn custom_unary(
        &mut self,
        x: Var,
        forward: impl Fn(&Tensor) -> Tensor,
        backward: impl Fn(&Tensor, &Tensor, &Tensor) -> Tensor + 'a,
    ) -> Var {
        let out = forward(self.value(x));
        let rg = self.rg(x);
        self.push(
            out,
            Op::Custom {
                x,
                backward: Box::new(backward),
            },
            rg,
        )
    }

    /// Reverse pass from a one-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(MrtError::invalid(format!(
                "backward requires a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::ones(self.shape(output).to_vec()));
        let mut result = Gradients::default();

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    result.leaves.insert(Var(i), gy);
                }
                Op::Param { store, id } => result.params.push((*store, *id, gy)),
                op => self.propagate(op, &node.value, &gy, &mut grads),
            }
        }
        Ok(result)
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut Tensor> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(self.shape(v).to_vec())))
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if let Some(g) = self.grad_buf(grads, v) {
            f(g.data_mut());
        }
    }

    fn acc_add(&self, grads: &mut [Option<Tensor>], v: Var, delta: &[f64], sign: f64) {
        self.acc(grads, v, |g| {
            for (a, b) in g.iter_mut().zip(delta) {
                *a += sign * b;
            }
        });
    }

    fn propagate(&self, op: &Op<'a>, y: &Tensor, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let g = gy.data();
        match op {
            Op::Leaf | Op::Param { .. } => unreachable!(),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                self.acc(grads, *a, |ga| {
                    gemm(
                        m,
                        n,
                        k,
                        MatRef::normal(g, n),
                        MatRef::transposed(bv.data(), n),
                        ga,
                        true,
                    )
                });
                self.acc(grads, *b, |gb| {
                    gemm(
                        k,
                        m,
                        n,
                        MatRef::transposed(av.data(), k),
                        MatRef::normal(g, n),
                        gb,
                        true,
                    )
                });
            }
            Op::Transpose(a) => {
                let gt = gy.transpose().expect("matrix");
                self.acc_add(grads, *a, gt.data(), 1.0);
            }
            Op::Add(a, b) => {
                self.acc_add(grads, *a, g, 1.0);
                self.acc_add(grads, *b, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.acc_add(grads, *a, g, 1.0);
                self.acc_add(grads, *b, g, -1.0);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                self.acc(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            Op::AddRow(x, row) => {
                self.acc_add(grads, *x, g, 1.0);
                self.acc(grads, *row, |gr| {
                    let n = gr.len();
                    for chunk in g.chunks(n) {
                        for (a, b) in gr.iter_mut().zip(chunk) {
                            *a += b;
                        }
                    }
                });
            }
            Op::AddScalar(x) => self.acc_add(grads, *x, g, 1.0),
            Op::Scale(x, s) => self.acc_add(grads, *x, g, *s),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        if xv[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                });
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += 2.0 * xv[i] * g[i];
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let cols = y.cols();
                self.acc(grads, *x, |gx| {
                    for ((gxr, yr), gr) in gx
                        .chunks_mut(cols)
                        .zip(y.data().chunks(cols))
                        .zip(g.chunks(cols))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            gxr[c] += yr[c] * (gr[c] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = y.cols();
                let gamma_v = self.value(*gamma).data();
                self.acc(grads, *gamma, |gg| {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for c in 0..d {
                            gg[c] += gr[c] * hr[c];
                        }
                    }
                });
                self.acc(grads, *beta, |gb| {
                    for gr in g.chunks(d) {
                        for c in 0..d {
                            gb[c] += gr[c];
                        }
                    }
                });
                self.acc(grads, *x, |gx| {
                    let n = d as f64;
                    for (r, ((gxr, gr), hr)) in gx
                        .chunks_mut(d)
                        .zip(g.chunks(d))
                        .zip(xhat.chunks(d))
                        .enumerate()
                    {
                        let mut sum_gh = 0.0;
                        let mut sum_gh_h = 0.0;
                        for c in 0..d {
                            let gh = gr[c] * gamma_v[c];
                            sum_gh += gh;
                            sum_gh_h += gh * hr[c];
                        }
                        let scale = inv_std[r] / n;
                        for c in 0..d {
                            let gh = gr[c] * gamma_v[c];
                            gxr[c] += scale * (n * gh - sum_gh - hr[c] * sum_gh_h);
                        }
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let cols = self.value(*x).cols();
                let len = y.cols();
                self.acc(grads, *x, |gx| {
                    for (r, gr) in g.chunks(len).enumerate() {
                        let base = r * cols + start;
                        for c in 0..len {
                            gx[base + c] += gr[c];
                        }
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let cols = y.cols();
                self.acc(grads, *x, |gx| {
                    let base = start * cols;
                    for (i, v) in g.iter().enumerate() {
                        gx[base + i] += v;
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = y.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    self.acc(grads, *p, |gp| {
                        for (r, gpr) in gp.chunks_mut(w).enumerate() {
                            let src = &g[r * total + offset..r * total + offset + w];
                            for (a, b) in gpr.iter_mut().zip(src) {
                                *a += b;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    self.acc_add(grads, *p, &g[offset..offset + n], 1.0);
                    offset += n;
                }
            }
            Op::Reshape(x) => self.acc_add(grads, *x, g, 1.0),
            Op::SumAll(x) => {
                let s = g[0];
                self.acc(grads, *x, |gx| gx.iter_mut().for_each(|v| *v += s));
            }
            Op::Custom { x, backward } => {
                let gx = backward(self.value(*x), y, gy);
                self.acc_add(grads, *x, gx.data(), 1.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_gradients_by_hand() {
        let mut g = Graph::new();
        let a = g.variable(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = g.variable(t(&[vec![5.0], vec![6.0]]));
        let c = g.matmul(a, b).unwrap();
        let s = g.sum_all(c);
        let grads = g.backward(s).unwrap();
        // d/dA sum(AB) = 1 · Bᵀ, d/dB = Aᵀ · 1
        assert_eq!(grads.wrt(a).unwrap().data(), &[5.0, 6.0, 5.0, 6.0]);
        assert_eq!(grads.wrt(b).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.input(Tensor::scalar(2.0));
        let b = g.variable(Tensor::scalar(3.0));
        let p = g.mul(a, b).unwrap();
        let grads = g.backward(p).unwrap();
        assert!(grads.wrt(a).is_none());
        assert_eq!(grads.wrt(b).unwrap().data(), &[2.0]);
    }

    #[test]
    fn frozen_store_is_constant() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(4.0)).unwrap();
        let mut g = Graph::new();
        g.freeze(&store);
        let w = g.param(&store, id);
        let sq = g.square(w);
        assert_eq!(g.scalar(sq), 16.0);
        let grads = g.backward(sq).unwrap();
        assert!(grads.param(&store, id).is_none());
    }

    #[test]
    fn shared_param_accumulates() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(3.0)).unwrap();
        let mut g = Graph::new();
        let w1 = g.param(&store, id);
        let w2 = g.param(&store, id);
        assert_eq!(w1, w2);
        let p = g.mul(w1, w2).unwrap();
        let grads = g.backward(p).unwrap();
        assert_eq!(grads.param(&store, id).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let a = g.variable(Tensor::zeros([2, 2]));
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn layer_norm_constant_row_collapses_to_beta() {
        let mut g = Graph::new();
        let x = g.input(t(&[vec![3.0; 4]]));
        let gamma = g.input(Tensor::ones([4]));
        let beta = g.input(Tensor::zeros([4]));
        let y = g.layer_norm(x, gamma, beta).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));

        let x = g.input(t(&[vec![1.0, -2.0, 0.5, 7.0]]));
        let gamma = g.input(Tensor::zeros([4]));
        let beta = g.input(Tensor::new([4], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let y = g.layer_norm(x, gamma, beta).unwrap();
        assert_eq!(g.value(y).data(), &[0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn layer_norm_moments() {
        let mut g = Graph::new();
        let row: Vec<f64> = (0..16)
            .map(|i| ((i * 7919) % 23) as f64 * 3.7 - 30.0)
            .collect();
        let x = g.input(Tensor::new([1, 16], row).unwrap());
        let gamma = g.input(Tensor::ones([16]));
        let beta = g.input(Tensor::zeros([16]));
        let y = g.layer_norm(x, gamma, beta).unwrap();
        let v = g.value(y).data();
        let mean = v.iter().sum::<f64>() / 16.0;
        let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-6, "{var}");
    }
}
