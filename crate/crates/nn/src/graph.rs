//! Dynamic reverse-mode autodiff tape.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so reverse index order is a valid topological order for
//! backpropagation.

use crate::error::{shape_err, NnError, Result};
use crate::gemm::{gemm, Mat};
use crate::kernels::conv::{self, ConvShape};
use crate::kernels::recurrent::{self, GruCache, LstmCache, SeqShape};
use crate::kernels::{col_sum_into, sigmoid};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    TransposeLast2(Var),
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    },
    Lstm {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        cache: LstmCache,
    },
    Gru {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b_ih: Var,
        b_hh: Var,
        cache: GruCache,
    },
    SplitHeads(Var, usize),
    MergeHeads(Var, usize),
    Mse(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    per_node: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.per_node[v.0].as_ref()
    }

    /// Gradient for every parameter in `store`, zero where the loss does not depend on it.
    /// A parameter inserted into the graph several times has its gradients summed.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        for &(id, v) in &self.params {
            if let Some(g) = &self.per_node[v.0] {
                out[id.index()].add_assign(g);
            }
        }
        out
    }
}

fn dims3(t: &Tensor) -> (usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2])
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant leaf; gradients with respect to it are still recorded.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Constant leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return shape_err("add", va.shape(), vb.shape());
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// Broadcasts a 1-D `bias` over the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.ndim() != 1 || vx.last_dim() != vb.len() {
            return shape_err("add_bias", vx.shape(), vb.shape());
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_exact_mut(vb.len()) {
            for (o, b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(out, Op::AddBias(x, bias), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let vx = self.value(x);
        let out = Tensor::from_parts(vx.shape().to_vec(), vx.data().iter().map(|v| v * c).collect());
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, c), ng)
    }

    /// `x[..., K] @ w[K, N]`; leading axes of `x` are treated as rows.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        if vw.ndim() != 2 || vx.last_dim() != vw.shape()[0] {
            return shape_err("matmul", vx.shape(), vw.shape());
        }
        let (k, n) = (vw.shape()[0], vw.shape()[1]);
        let m = vx.len() / k;
        let mut data = vec![0.0; m * n];
        gemm(m, k, n, Mat::rm(vx.data(), k), Mat::rm(vw.data(), n), 0.0, &mut data, n);
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(Tensor::from_parts(shape, data), Op::MatMul(x, w), ng))
    }

    /// `a[B, M, K] @ b[B, K, N]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ndim() != 3 || vb.ndim() != 3 || va.shape()[0] != vb.shape()[0] || va.shape()[2] != vb.shape()[1] {
            return shape_err("batch_matmul", va.shape(), vb.shape());
        }
        let (bs, m, k) = dims3(va);
        let n = vb.shape()[2];
        let mut data = vec![0.0; bs * m * n];
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                Mat::rm(&va.data()[i * m * k..], k),
                Mat::rm(&vb.data()[i * k * n..], n),
                0.0,
                &mut data[i * m * n..],
                n,
            );
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(vec![bs, m, n], data), Op::BatchMatMul(a, b), ng))
    }

    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.ndim() < 2 {
            return shape_err("transpose_last2", vx.shape(), &[]);
        }
        let nd = vx.ndim();
        let (r, c) = (vx.shape()[nd - 2], vx.shape()[nd - 1]);
        let data = transpose_blocks(vx.data(), r, c);
        let mut shape = vx.shape().to_vec();
        shape.swap(nd - 2, nd - 1);
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(shape, data), Op::TransposeLast2(x), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let vx = self.value(x);
        let out = Tensor::from_parts(vx.shape().to_vec(), vx.data().iter().map(|&v| f(v)).collect());
        let ng = self.ng(x);
        self.push(out, op, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let d = vx.last_dim();
        let mut data = vx.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        let ng = self.ng(x);
        self.push(out, Op::Softmax(x), ng)
    }

    /// Layer normalization over the last axis with learned `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = vx.last_dim();
        if vg.shape() != [d] || vb.shape() != [d] {
            return shape_err("layer_norm", vx.shape(), vg.shape());
        }
        let rows = vx.len() / d;
        let mut xhat = vec![0.0; vx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; vx.len()];
        for r in 0..rows {
            let row = &vx.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * vg.data()[j] + vb.data()[j];
            }
        }
        let out = Tensor::from_parts(vx.shape().to_vec(), out);
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    fn conv_shape(&self, x: Var, w: Var, stride: usize, padding: usize, transpose: bool) -> Result<ConvShape> {
        let (vx, vw) = (self.value(x), self.value(w));
        if vx.ndim() != 3 || vw.ndim() != 3 || vx.shape()[1] != vw.shape()[if transpose { 0 } else { 1 }] {
            return shape_err(if transpose { "conv_transpose1d" } else { "conv1d" }, vx.shape(), vw.shape());
        }
        if stride == 0 {
            return Err(NnError::Param("stride must be at least 1".into()));
        }
        let (batch, c_in, len_in) = dims3(vx);
        let (c_out, k) = if transpose {
            (vw.shape()[1], vw.shape()[2])
        } else {
            (vw.shape()[0], vw.shape()[2])
        };
        Ok(ConvShape {
            batch,
            c_in,
            c_out,
            len_in,
            len_out: 0,
            k,
            stride,
            padding,
        })
    }

    /// x `[B, Cin, L]`, w `[Cout, Cin, k]`, b `[Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let mut s = self.conv_shape(x, w, stride, padding, false)?;
        if self.value(b).shape() != [s.c_out] {
            return shape_err("conv1d bias", self.value(w).shape(), self.value(b).shape());
        }
        s.len_out = conv::conv_out_len(s.len_in, s.k, stride, padding)
            .ok_or_else(|| NnError::Shape {
                op: "conv1d",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(w).shape().to_vec(),
            })?;
        let out = conv::conv1d_forward(self.value(x).data(), self.value(w).data(), self.value(b).data(), &s);
        let t = Tensor::from_parts(vec![s.batch, s.c_out, s.len_out], out);
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(
            t,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            },
            ng,
        ))
    }

    /// x `[B, Cin, L]`, w `[Cin, Cout, k]`, b `[Cout]`.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let mut s = self.conv_shape(x, w, stride, padding, true)?;
        if self.value(b).shape() != [s.c_out] {
            return shape_err("conv_transpose1d bias", self.value(w).shape(), self.value(b).shape());
        }
        if output_padding >= stride {
            return Err(NnError::Param(format!(
                "output padding {output_padding} must be smaller than stride {stride}"
            )));
        }
        s.len_out = conv::conv_transpose_out_len(s.len_in, s.k, stride, padding, output_padding)
            .ok_or_else(|| NnError::Shape {
                op: "conv_transpose1d",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(w).shape().to_vec(),
            })?;
        let out = conv::conv_transpose1d_forward(self.value(x).data(), self.value(w).data(), self.value(b).data(), &s);
        let t = Tensor::from_parts(vec![s.batch, s.c_out, s.len_out], out);
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(
            t,
            Op::ConvTranspose1d {
                x,
                w,
                b,
                stride,
                padding,
            },
            ng,
        ))
    }

    fn seq_shape(&self, op: &'static str, x: Var, w_ih: Var, w_hh: Var, gates: usize) -> Result<SeqShape> {
        let (vx, wi, wh) = (self.value(x), self.value(w_ih), self.value(w_hh));
        if vx.ndim() != 3 || wi.ndim() != 2 || wh.ndim() != 2 {
            return shape_err(op, vx.shape(), wi.shape());
        }
        let (batch, steps, input) = dims3(vx);
        let hidden = wh.shape()[0];
        if wi.shape() != [input, gates * hidden] || wh.shape() != [hidden, gates * hidden] {
            return shape_err(op, wi.shape(), wh.shape());
        }
        Ok(SeqShape {
            batch,
            steps,
            input,
            hidden,
        })
    }

    /// LSTM over x `[B, T, F]`; w_ih `[F, 4H]`, w_hh `[H, 4H]`, b `[4H]`. Returns `[B, T, H]`.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, b: Var) -> Result<Var> {
        let s = self.seq_shape("lstm", x, w_ih, w_hh, 4)?;
        if self.value(b).shape() != [4 * s.hidden] {
            return shape_err("lstm bias", self.value(w_hh).shape(), self.value(b).shape());
        }
        let (hs, cache) = recurrent::lstm_forward(
            self.value(x).data(),
            self.value(w_ih).data(),
            self.value(w_hh).data(),
            self.value(b).data(),
            s,
        );
        let t = Tensor::from_parts(vec![s.batch, s.steps, s.hidden], hs);
        let ng = self.ng(x) || self.ng(w_ih) || self.ng(w_hh) || self.ng(b);
        Ok(self.push(
            t,
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                b,
                cache,
            },
            ng,
        ))
    }

    /// GRU over x `[B, T, F]`; w_ih `[F, 3H]`, w_hh `[H, 3H]`, biases `[3H]`. Returns `[B, T, H]`.
    pub fn gru(&mut self, x: Var, w_ih: Var, w_hh: Var, b_ih: Var, b_hh: Var) -> Result<Var> {
        let s = self.seq_shape("gru", x, w_ih, w_hh, 3)?;
        if self.value(b_ih).shape() != [3 * s.hidden] || self.value(b_hh).shape() != [3 * s.hidden] {
            return shape_err("gru bias", self.value(b_ih).shape(), self.value(b_hh).shape());
        }
        let (hs, cache) = recurrent::gru_forward(
            self.value(x).data(),
            self.value(w_ih).data(),
            self.value(w_hh).data(),
            self.value(b_ih).data(),
            self.value(b_hh).data(),
            s,
        );
        let t = Tensor::from_parts(vec![s.batch, s.steps, s.hidden], hs);
        let ng = self.ng(x) || self.ng(w_ih) || self.ng(w_hh) || self.ng(b_ih) || self.ng(b_hh);
        Ok(self.push(
            t,
            Op::Gru {
                x,
                w_ih,
                w_hh,
                b_ih,
                b_hh,
                cache,
            },
            ng,
        ))
    }

    /// `[B, T, heads * d]` -> `[B * heads, T, d]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let vx = self.value(x);
        if vx.ndim() != 3 || heads == 0 || !vx.shape()[2].is_multiple_of(heads) {
            return shape_err("split_heads", vx.shape(), &[heads]);
        }
        let (b, t, e) = dims3(vx);
        let d = e / heads;
        let mut out = vec![0.0; vx.len()];
        permute_heads(vx.data(), &mut out, b, t, heads, d, false);
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![b * heads, t, d], out), Op::SplitHeads(x, heads), ng))
    }

    /// Inverse of [`Graph::split_heads`].
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let vx = self.value(x);
        if vx.ndim() != 3 || heads == 0 || !vx.shape()[0].is_multiple_of(heads) {
            return shape_err("merge_heads", vx.shape(), &[heads]);
        }
        let (bh, t, d) = dims3(vx);
        let b = bh / heads;
        let mut out = vec![0.0; vx.len()];
        permute_heads(vx.data(), &mut out, b, t, heads, d, true);
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![b, t, heads * d], out), Op::MergeHeads(x, heads), ng))
    }

    /// Mean over all elements of `(pred - target)^2`.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let vp = self.value(pred);
        if vp.shape() != target.shape() {
            return shape_err("mse_loss", vp.shape(), target.shape());
        }
        let n = vp.len() as f64;
        let loss = vp
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let ng = self.ng(pred);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(pred, target.clone()), ng))
    }

    /// Backpropagates from a scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NnError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));
        let mut params = Vec::new();
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if let Op::Param(id) = node.op {
                params.push((id, Var(idx)));
            }
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        params.reverse();
        Ok(Gradients {
            per_node: grads,
            params,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, data: Vec<f64>) {
        if !self.ng(v) {
            return;
        }
        let shape = self.value(v).shape().to_vec();
        let t = Tensor::from_parts(shape, data);
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot => *slot = Some(t),
        }
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, gd.to_vec());
                if self.ng(*b) {
                    let n = self.value(*b).len();
                    let mut db = vec![0.0; n];
                    col_sum_into(gd, n, &mut db);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, gd.iter().map(|v| v * c).collect()),
            Op::MatMul(x, w) => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (k, n) = (vw.shape()[0], vw.shape()[1]);
                let m = vx.len() / k;
                if self.ng(*x) {
                    let mut dx = vec![0.0; m * k];
                    gemm(m, n, k, Mat::rm(gd, n), Mat::rm_t(vw.data(), n), 0.0, &mut dx, k);
                    self.accumulate(grads, *x, dx);
                }
                if self.ng(*w) {
                    let mut dw = vec![0.0; k * n];
                    gemm(k, m, n, Mat::rm_t(vx.data(), k), Mat::rm(gd, n), 0.0, &mut dw, n);
                    self.accumulate(grads, *w, dw);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (bs, m, k) = dims3(va);
                let n = vb.shape()[2];
                if self.ng(*a) {
                    let mut da = vec![0.0; bs * m * k];
                    for i in 0..bs {
                        gemm(
                            m,
                            n,
                            k,
                            Mat::rm(&gd[i * m * n..], n),
                            Mat::rm_t(&vb.data()[i * k * n..], n),
                            0.0,
                            &mut da[i * m * k..],
                            k,
                        );
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; bs * k * n];
                    for i in 0..bs {
                        gemm(
                            k,
                            m,
                            n,
                            Mat::rm_t(&va.data()[i * m * k..], k),
                            Mat::rm(&gd[i * m * n..], n),
                            0.0,
                            &mut db[i * k * n..],
                            n,
                        );
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::TransposeLast2(x) => {
                let s = node.value.shape();
                let nd = s.len();
                self.accumulate(grads, *x, transpose_blocks(gd, s[nd - 2], s[nd - 1]));
            }
            Op::Reshape(x) => self.accumulate(grads, *x, gd.to_vec()),
            Op::Relu(x) => {
                let vx = self.value(*x).data();
                let d = gd.iter().zip(vx).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let d = node.value.last_dim();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks_exact(d).zip(gd.chunks_exact(d)).zip(dx.chunks_exact_mut(d)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = node.value.last_dim();
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut dx = vec![0.0; xhat.len()];
                for (r, is) in inv_std.iter().enumerate() {
                    let gr = &gd[r * d..(r + 1) * d];
                    let xr = &xhat[r * d..(r + 1) * d];
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..d {
                        dgamma[j] += gr[j] * xr[j];
                        dbeta[j] += gr[j];
                        let dxh = gr[j] * gam[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xr[j];
                    }
                    let inv_d = 1.0 / d as f64;
                    for j in 0..d {
                        let dxh = gr[j] * gam[j];
                        dx[r * d + j] = is * (dxh - inv_d * sum_dxh - xr[j] * inv_d * sum_dxh_xh);
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let s = ConvShape {
                    batch: vx.shape()[0],
                    c_in: vx.shape()[1],
                    c_out: vw.shape()[0],
                    len_in: vx.shape()[2],
                    len_out: node.value.shape()[2],
                    k: vw.shape()[2],
                    stride: *stride,
                    padding: *padding,
                };
                let r = conv::conv1d_backward(vx.data(), vw.data(), gd, &s, self.ng(*x));
                if let Some(dx) = r.dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, r.dw);
                self.accumulate(grads, *b, r.db);
            }
            Op::ConvTranspose1d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let s = ConvShape {
                    batch: vx.shape()[0],
                    c_in: vx.shape()[1],
                    c_out: vw.shape()[1],
                    len_in: vx.shape()[2],
                    len_out: node.value.shape()[2],
                    k: vw.shape()[2],
                    stride: *stride,
                    padding: *padding,
                };
                let r = conv::conv_transpose1d_backward(vx.data(), vw.data(), gd, &s, self.ng(*x));
                if let Some(dx) = r.dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, r.dw);
                self.accumulate(grads, *b, r.db);
            }
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                b,
                cache,
            } => {
                let s = self.seq_shape("lstm", *x, *w_ih, *w_hh, 4).expect("validated in forward");
                let r = recurrent::lstm_backward(
                    self.value(*x).data(),
                    self.value(*w_ih).data(),
                    self.value(*w_hh).data(),
                    node.value.data(),
                    cache,
                    gd,
                    s,
                    self.ng(*x),
                );
                if let Some(dx) = r.dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w_ih, r.dw_ih);
                self.accumulate(grads, *w_hh, r.dw_hh);
                self.accumulate(grads, *b, r.db_ih);
            }
            Op::Gru {
                x,
                w_ih,
                w_hh,
                b_ih,
                b_hh,
                cache,
            } => {
                let s = self.seq_shape("gru", *x, *w_ih, *w_hh, 3).expect("validated in forward");
                let r = recurrent::gru_backward(
                    self.value(*x).data(),
                    self.value(*w_ih).data(),
                    self.value(*w_hh).data(),
                    node.value.data(),
                    cache,
                    gd,
                    s,
                    self.ng(*x),
                );
                if let Some(dx) = r.dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w_ih, r.dw_ih);
                self.accumulate(grads, *w_hh, r.dw_hh);
                self.accumulate(grads, *b_ih, r.db_ih);
                self.accumulate(grads, *b_hh, r.db_hh);
            }
            Op::SplitHeads(x, heads) => {
                let (bh, t, d) = dims3(&node.value);
                let mut dx = vec![0.0; gd.len()];
                permute_heads(gd, &mut dx, bh / heads, t, *heads, d, true);
                self.accumulate(grads, *x, dx);
            }
            Op::MergeHeads(x, heads) => {
                let (b, t, e) = dims3(&node.value);
                let mut dx = vec![0.0; gd.len()];
                permute_heads(gd, &mut dx, b, t, *heads, e / heads, false);
                self.accumulate(grads, *x, dx);
            }
            Op::Mse(pred, target) => {
                let vp = self.value(*pred).data();
                let scale = 2.0 * gd[0] / vp.len() as f64;
                let d = vp.iter().zip(target.data()).map(|(p, t)| scale * (p - t)).collect();
                self.accumulate(grads, *pred, d);
            }
        }
    }
}

/// Transposes each trailing `[r, c]` block of `data`.
fn transpose_blocks(data: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks_exact(r * c).zip(out.chunks_exact_mut(r * c)) {
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}

/// `[B, T, H, d] <-> [B, H, T, d]`; `merge` selects the direction.
fn permute_heads(src: &[f64], dst: &mut [f64], b: usize, t: usize, heads: usize, d: usize, merge: bool) {
    for n in 0..b {
        for s in 0..t {
            for h in 0..heads {
                let packed = ((n * t + s) * heads + h) * d;
                let split = ((n * heads + h) * t + s) * d;
                let (from, to) = if merge { (split, packed) } else { (packed, split) };
                dst[to..to + d].copy_from_slice(&src[from..from + d]);
            }
        }
    }
}
