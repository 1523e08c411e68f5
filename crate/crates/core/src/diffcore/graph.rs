//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the tape
//! visits every node after all of its consumers.

use std::sync::Arc;

use super::{gemm, DiffError, ParamId, ParamStore, Result, Tensor};
use crate::mesh::{SparseMatrix, SpiralIndexSet};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Elu {
        x: usize,
    },
    Gather {
        x: usize,
        spirals: Arc<SpiralIndexSet>,
    },
    SpiralConv {
        x: usize,
        w: usize,
        b: usize,
        spirals: Arc<SpiralIndexSet>,
    },
    Sparse {
        x: usize,
        map: Arc<SparseMatrix>,
    },
    Reshape {
        x: usize,
    },
    Reparam {
        mu: usize,
        log_var: usize,
        eps: Tensor,
    },
    /// Scalar whose local gradients were computed alongside its value.
    Scalar {
        inputs: Vec<(usize, Tensor)>,
    },
    WeightedSum {
        terms: Vec<(usize, f64)>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, idx: usize) -> bool {
        self.nodes[idx].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by the last [`Graph::backward`], if the node
    /// takes part in it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// Affine map over the trailing dimension: `[.., in] → [.., out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 2 || xv.last_dim() != wv.shape()[0] || xv.shape().is_empty() {
            return Err(DiffError::Shape(format!(
                "linear: input {:?} incompatible with weight {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        let (k, n) = (wv.shape()[0], wv.shape()[1]);
        if let Some(b) = b {
            if self.value(b).shape() != [n] {
                return Err(DiffError::Shape(format!(
                    "linear: bias {:?} incompatible with weight {:?}",
                    self.value(b).shape(),
                    wv.shape()
                )));
            }
        }
        let m = xv.len() / k;
        let mut out = vec![0.0; m * n];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(bias);
            }
        }
        gemm(m, k, n, xv.data(), (k, 1), wv.data(), (n, 1), 1.0, &mut out);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let needs = self.needs(x.0) || self.needs(w.0) || b.is_some_and(|b| self.needs(b.0));
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
            },
            needs,
        ))
    }

    /// Exponential linear unit with α = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { v.exp_m1() })
            .collect();
        let value = Tensor::new(xv.shape(), data).expect("same shape");
        let needs = self.needs(x.0);
        self.push(value, Op::Elu { x: x.0 }, needs)
    }

    /// Concatenates each vertex's spiral neighbourhood: `[B, N, C] → [B, N, L·C]`.
    /// Padding entries gather zeros.
    pub fn gather_spiral(&mut self, x: Var, spirals: &Arc<SpiralIndexSet>) -> Result<Var> {
        let xv = self.value(x);
        let n = spirals.num_vertices();
        if xv.shape().len() != 3 || xv.shape()[1] != n {
            return Err(DiffError::Shape(format!(
                "gather_spiral: features {:?} do not match a spiral set over {n} vertices",
                xv.shape()
            )));
        }
        let (batch, c) = (xv.shape()[0], xv.shape()[2]);
        let l = spirals.length();
        let pad = spirals.pad_marker();
        let src = xv.data();
        let mut out = vec![0.0; batch * n * l * c];
        for b in 0..batch {
            let xb = &src[b * n * c..(b + 1) * n * c];
            let ob = &mut out[b * n * l * c..(b + 1) * n * l * c];
            for (v, orow) in ob.chunks_exact_mut(l * c).enumerate() {
                for (slot, &idx) in orow.chunks_exact_mut(c).zip(spirals.row(v)) {
                    if idx != pad {
                        slot.copy_from_slice(&xb[idx * c..(idx + 1) * c]);
                    }
                }
            }
        }
        let needs = self.needs(x.0);
        Ok(self.push(
            Tensor::new(&[batch, n, l * c], out)?,
            Op::Gather {
                x: x.0,
                spirals: Arc::clone(spirals),
            },
            needs,
        ))
    }

    /// Spiral convolution `linear(gather_spiral(x), w, b)` without
    /// materializing the gathered tensor.
    pub fn spiral_conv(&mut self, x: Var, spirals: &Arc<SpiralIndexSet>, w: Var, b: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = spirals.num_vertices();
        if xv.shape().len() != 3 || xv.shape()[1] != n {
            return Err(DiffError::Shape(format!(
                "spiral_conv: features {:?} do not match a spiral set over {n} vertices",
                xv.shape()
            )));
        }
        let (batch, c) = (xv.shape()[0], xv.shape()[2]);
        let k = spirals.length() * c;
        let wv = self.value(w);
        if wv.shape().len() != 2 || wv.shape()[0] != k || self.value(b).shape() != [wv.shape()[1]] {
            return Err(DiffError::Shape(format!(
                "spiral_conv: gathered width {k} incompatible with weight {:?} and bias {:?}",
                wv.shape(),
                self.value(b).shape()
            )));
        }
        let cout = wv.shape()[1];
        let rows = batch * n;
        let mut out = vec![0.0; rows * cout];
        for row in out.chunks_exact_mut(cout) {
            row.copy_from_slice(self.value(b).data());
        }
        let mut scratch = vec![0.0; CONV_BLOCK.min(rows) * k];
        for r0 in (0..rows).step_by(CONV_BLOCK) {
            let r1 = (r0 + CONV_BLOCK).min(rows);
            gather_rows(xv.data(), spirals, c, r0, r1, &mut scratch);
            gemm(r1 - r0, k, cout, &scratch, (k, 1), wv.data(), (cout, 1), 1.0, &mut out[r0 * cout..r1 * cout]);
        }
        let needs = self.needs(x.0) || self.needs(w.0) || self.needs(b.0);
        Ok(self.push(
            Tensor::new(&[batch, n, cout], out)?,
            Op::SpiralConv {
                x: x.0,
                w: w.0,
                b: b.0,
                spirals: Arc::clone(spirals),
            },
            needs,
        ))
    }

    /// Applies a vertex map to every batch item: `[B, N, C] → [B, M, C]`.
    pub fn sparse_apply(&mut self, map: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 3 || xv.shape()[1] != map.cols() {
            return Err(DiffError::Shape(format!(
                "sparse_apply: features {:?} incompatible with map {}x{}",
                xv.shape(),
                map.rows(),
                map.cols()
            )));
        }
        let (batch, n, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let m = map.rows();
        let mut out = vec![0.0; batch * m * c];
        for b in 0..batch {
            map.apply_features(
                &xv.data()[b * n * c..(b + 1) * n * c],
                c,
                &mut out[b * m * c..(b + 1) * m * c],
            );
        }
        let needs = self.needs(x.0);
        Ok(self.push(
            Tensor::new(&[batch, m, c], out)?,
            Op::Sparse {
                x: x.0,
                map: Arc::clone(map),
            },
            needs,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let needs = self.needs(x.0);
        Ok(self.push(value, Op::Reshape { x: x.0 }, needs))
    }

    /// `z = mu + exp(log_var / 2) · eps`; `eps` is held constant.
    pub fn reparameterize(&mut self, mu: Var, log_var: Var, eps: Tensor) -> Result<Var> {
        let (m, lv) = (self.value(mu), self.value(log_var));
        if m.shape() != lv.shape() || m.shape() != eps.shape() {
            return Err(DiffError::Shape(format!(
                "reparameterize: mu {:?}, log_var {:?}, eps {:?}",
                m.shape(),
                lv.shape(),
                eps.shape()
            )));
        }
        let data = m
            .data()
            .iter()
            .zip(lv.data())
            .zip(eps.data())
            .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
            .collect();
        let value = Tensor::new(m.shape(), data)?;
        let needs = self.needs(mu.0) || self.needs(log_var.0);
        Ok(self.push(
            value,
            Op::Reparam {
                mu: mu.0,
                log_var: log_var.0,
                eps,
            },
            needs,
        ))
    }

    /// Records a scalar computed outside the graph together with its
    /// gradient with respect to each input.
    pub fn scalar_fn(&mut self, value: f64, inputs: Vec<(Var, Tensor)>) -> Result<Var> {
        for (v, g) in &inputs {
            if self.value(*v).shape() != g.shape() {
                return Err(DiffError::Shape(format!(
                    "scalar_fn: gradient {:?} for input {:?}",
                    g.shape(),
                    self.value(*v).shape()
                )));
            }
        }
        let needs = inputs.iter().any(|(v, _)| self.needs(v.0));
        Ok(self.push(
            Tensor::scalar(value),
            Op::Scalar {
                inputs: inputs.into_iter().map(|(v, g)| (v.0, g)).collect(),
            },
            needs,
        ))
    }

    /// `Σ coef · term` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, c) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(DiffError::Shape(format!(
                    "weighted_sum: term has shape {:?}, expected a scalar",
                    t.shape()
                )));
            }
            total += c * t.item();
        }
        let needs = terms.iter().any(|(v, _)| self.needs(v.0));
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSum {
                terms: terms.iter().map(|&(v, c)| (v.0, c)).collect(),
            },
            needs,
        ))
    }

    fn accumulate(&mut self, idx: usize, grad: Tensor) {
        match &mut self.grads[idx] {
            Some(g) => g.add_assign(&grad),
            slot @ None => *slot = Some(grad),
        }
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(DiffError::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            let contributions = self.node_backward(idx, &g);
            self.grads[idx] = Some(g);
            for (input, grad) in contributions {
                self.accumulate(input, grad);
            }
        }
        Ok(())
    }

    fn node_backward(&self, idx: usize, g: &Tensor) -> Vec<(usize, Tensor)> {
        let node = &self.nodes[idx];
        let mut out = Vec::new();
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (&self.nodes[*x].value, &self.nodes[*w].value);
                let (k, n) = (wv.shape()[0], wv.shape()[1]);
                let m = xv.len() / k;
                if self.needs(*x) {
                    let mut gx = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), (n, 1), wv.data(), (1, n), 0.0, &mut gx);
                    out.push((*x, Tensor::new(xv.shape(), gx).unwrap()));
                }
                if self.needs(*w) {
                    let mut gw = vec![0.0; k * n];
                    gemm(k, m, n, xv.data(), (1, k), g.data(), (n, 1), 0.0, &mut gw);
                    out.push((*w, Tensor::new(&[k, n], gw).unwrap()));
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let mut gb = vec![0.0; n];
                        for row in g.data().chunks_exact(n) {
                            for (acc, v) in gb.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        out.push((*b, Tensor::new(&[n], gb).unwrap()));
                    }
                }
            }
            Op::Elu { x } => {
                let data = node
                    .value
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&y, &gy)| if y > 0.0 { gy } else { gy * (y + 1.0) })
                    .collect();
                out.push((*x, Tensor::new(g.shape(), data).unwrap()));
            }
            Op::Gather { x, spirals } => {
                let xv = &self.nodes[*x].value;
                let (batch, n, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let l = spirals.length();
                let pad = spirals.pad_marker();
                let mut gx = vec![0.0; xv.len()];
                for b in 0..batch {
                    let gb = &g.data()[b * n * l * c..(b + 1) * n * l * c];
                    let dst = &mut gx[b * n * c..(b + 1) * n * c];
                    for (v, grow) in gb.chunks_exact(l * c).enumerate() {
                        for (slot, &idx) in grow.chunks_exact(c).zip(spirals.row(v)) {
                            if idx != pad {
                                for (d, s) in dst[idx * c..(idx + 1) * c].iter_mut().zip(slot) {
                                    *d += s;
                                }
                            }
                        }
                    }
                }
                out.push((*x, Tensor::new(xv.shape(), gx).unwrap()));
            }
            Op::SpiralConv { x, w, b, spirals } => {
                let (xv, wv) = (&self.nodes[*x].value, &self.nodes[*w].value);
                let c = xv.shape()[2];
                let (k, cout) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.shape()[0] * xv.shape()[1];
                let mut gx = self.needs(*x).then(|| vec![0.0; xv.len()]);
                let mut gw = self.needs(*w).then(|| vec![0.0; k * cout]);
                let mut scratch = vec![0.0; CONV_BLOCK.min(rows) * k];
                for r0 in (0..rows).step_by(CONV_BLOCK) {
                    let r1 = (r0 + CONV_BLOCK).min(rows);
                    let g_block = &g.data()[r0 * cout..r1 * cout];
                    if let Some(gw) = gw.as_mut() {
                        gather_rows(xv.data(), spirals, c, r0, r1, &mut scratch);
                        gemm(k, r1 - r0, cout, &scratch, (1, k), g_block, (cout, 1), 1.0, gw);
                    }
                    if let Some(gx) = gx.as_mut() {
                        gemm(r1 - r0, cout, k, g_block, (cout, 1), wv.data(), (1, cout), 0.0, &mut scratch);
                        scatter_rows(&scratch, spirals, c, r0, r1, gx);
                    }
                }
                if let Some(gx) = gx {
                    out.push((*x, Tensor::new(xv.shape(), gx).unwrap()));
                }
                if let Some(gw) = gw {
                    out.push((*w, Tensor::new(&[k, cout], gw).unwrap()));
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; cout];
                    for row in g.data().chunks_exact(cout) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    out.push((*b, Tensor::new(&[cout], gb).unwrap()));
                }
            }
            Op::Sparse { x, map } => {
                let xv = &self.nodes[*x].value;
                let (batch, n, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let m = map.rows();
                let mut gx = vec![0.0; xv.len()];
                for b in 0..batch {
                    map.apply_transpose_features(
                        &g.data()[b * m * c..(b + 1) * m * c],
                        c,
                        &mut gx[b * n * c..(b + 1) * n * c],
                    );
                }
                out.push((*x, Tensor::new(xv.shape(), gx).unwrap()));
            }
            Op::Reshape { x } => {
                let shape = self.nodes[*x].value.shape();
                out.push((*x, g.clone().reshaped(shape).unwrap()));
            }
            Op::Reparam { mu, log_var, eps } => {
                if self.needs(*mu) {
                    out.push((*mu, g.clone()));
                }
                if self.needs(*log_var) {
                    let lv = &self.nodes[*log_var].value;
                    let data = g
                        .data()
                        .iter()
                        .zip(lv.data())
                        .zip(eps.data())
                        .map(|((&gz, &lv), &e)| gz * 0.5 * (0.5 * lv).exp() * e)
                        .collect();
                    out.push((*log_var, Tensor::new(g.shape(), data).unwrap()));
                }
            }
            Op::Scalar { inputs } => {
                let up = g.item();
                for (input, local) in inputs {
                    if self.needs(*input) {
                        let data = local.data().iter().map(|v| v * up).collect();
                        out.push((*input, Tensor::new(local.shape(), data).unwrap()));
                    }
                }
            }
            Op::WeightedSum { terms } => {
                let up = g.item();
                for &(input, c) in terms {
                    if self.needs(input) {
                        let shape = self.nodes[input].value.shape();
                        out.push((input, Tensor::full(shape, c * up)));
                    }
                }
            }
        }
        out
    }

    /// Adds the gradients of every parameter node into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (node, grad) in self.nodes.iter().zip(&self.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, grad) {
                store.accumulate_grad(*id, g);
            }
        }
    }
}

/// Rows of the fused spiral convolution processed per block.
const CONV_BLOCK: usize = 256;

/// Gathers flattened rows `r0..r1` (row = batch · N + vertex) into `dst`.
fn gather_rows(x: &[f64], spirals: &SpiralIndexSet, c: usize, r0: usize, r1: usize, dst: &mut [f64]) {
    let n = spirals.num_vertices();
    let l = spirals.length();
    let pad = spirals.pad_marker();
    for (r, drow) in (r0..r1).zip(dst.chunks_exact_mut(l * c)) {
        let (b, v) = (r / n, r % n);
        let xb = &x[b * n * c..(b + 1) * n * c];
        for (slot, &idx) in drow.chunks_exact_mut(c).zip(spirals.row(v)) {
            if idx == pad {
                slot.fill(0.0);
            } else {
                slot.copy_from_slice(&xb[idx * c..(idx + 1) * c]);
            }
        }
    }
}

/// Adjoint of [`gather_rows`]: accumulates `src` rows into `gx`.
fn scatter_rows(src: &[f64], spirals: &SpiralIndexSet, c: usize, r0: usize, r1: usize, gx: &mut [f64]) {
    let n = spirals.num_vertices();
    let l = spirals.length();
    let pad = spirals.pad_marker();
    for (r, srow) in (r0..r1).zip(src.chunks_exact(l * c)) {
        let (b, v) = (r / n, r % n);
        let gb = &mut gx[b * n * c..(b + 1) * n * c];
        for (slot, &idx) in srow.chunks_exact(c).zip(spirals.row(v)) {
            if idx != pad {
                for (d, s) in gb[idx * c..(idx + 1) * c].iter_mut().zip(slot) {
                    *d += s;
                }
            }
        }
    }
}
