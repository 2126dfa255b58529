//! Reverse-mode gradient tape.
//!
//! Every operation appends a node holding its value and enough saved state
//! to run its backward rule. [`Tape::backward`] walks the nodes in reverse
//! creation order, so gradient accumulation order is fixed by the forward
//! program.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::ops::{self, Adjacency};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    /// `a [n x k] * b [k x m]`
    MatMul(Var, Var),
    /// `a [n x k] * v [k] -> [n]`
    MatVec(Var, Var),
    /// `x [n x m] + b [m]` broadcast over rows
    AddRow(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Elu(Var),
    Attention {
        z: Var,
        s_src: Var,
        s_dst: Var,
        adj: Arc<Adjacency>,
        slope: f64,
        alpha: Vec<f64>,
        pre: Vec<f64>,
    },
    /// `base` with `base[r, col..col + w] = src[r, ..]` for every listed row
    Substitute {
        base: Var,
        src: Var,
        rows: Arc<[usize]>,
        col: usize,
    },
    MeanRows(Var),
    Mse {
        pred: Var,
        target: Vec<f64>,
        weight: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every tape node that requires
/// them.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

fn add_into(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input (parameter or probed input).
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.cols() != bv.shape()[0] {
            return Err(Error::invalid(format!(
                "matmul shapes {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (n, k, m) = (av.rows(), av.cols(), bv.shape()[1]);
        let out = Tensor::matrix(n, m, ops::matmul(av.data(), bv.data(), n, k, m))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn matvec(&mut self, a: Var, v: Var) -> Result<Var> {
        let (av, vv) = (self.value(a), self.value(v));
        if av.cols() != vv.len() {
            return Err(Error::invalid(format!(
                "matvec shapes {:?} x {:?}",
                av.shape(),
                vv.shape()
            )));
        }
        let (n, k) = (av.rows(), av.cols());
        let out = Tensor::vector(ops::matmul(av.data(), vv.data(), n, k, 1));
        let rg = self.needs(a) || self.needs(v);
        Ok(self.push(out, Op::MatVec(a, v), rg))
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let m = xv.cols();
        if bv.len() != m {
            return Err(Error::invalid(format!(
                "row bias of {} entries for width {m}",
                bv.len()
            )));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(m) {
            row.iter_mut().zip(bv.data()).for_each(|(v, b)| *v += b);
        }
        let rg = self.needs(x) || self.needs(b);
        Ok(self.push(out, Op::AddRow(x, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::invalid(format!(
                "add shapes {:?} + {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * s).collect();
        let out = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| ops::elu(v)).collect();
        let out = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(x);
        self.push(out, Op::Elu(x), rg)
    }

    /// See [`ops::attention_forward`]. `z` is `N x d`, scores are length `N`.
    pub fn attention(
        &mut self,
        z: Var,
        s_src: Var,
        s_dst: Var,
        adj: &Arc<Adjacency>,
        slope: f64,
    ) -> Result<Var> {
        let zv = self.value(z);
        let n = adj.num_nodes();
        if zv.rows() != n || self.value(s_src).len() != n || self.value(s_dst).len() != n {
            return Err(Error::invalid(format!(
                "attention over {n} nodes given features {:?}",
                zv.shape()
            )));
        }
        let width = zv.cols();
        let (out, alpha, pre) = ops::attention_forward(
            zv.data(),
            width,
            self.value(s_src).data(),
            self.value(s_dst).data(),
            adj,
            slope,
        );
        let out = Tensor::matrix(n, width, out)?;
        let rg = self.needs(z) || self.needs(s_src) || self.needs(s_dst);
        Ok(self.push(
            out,
            Op::Attention {
                z,
                s_src,
                s_dst,
                adj: Arc::clone(adj),
                slope,
                alpha,
                pre,
            },
            rg,
        ))
    }

    pub fn substitute(&mut self, base: Var, src: Var, rows: Arc<[usize]>, col: usize) -> Result<Var> {
        let (bv, sv) = (self.value(base), self.value(src));
        let (n, m, w) = (bv.rows(), bv.cols(), sv.cols());
        if sv.rows() != n || col + w > m || rows.iter().any(|&r| r >= n) {
            return Err(Error::invalid(format!(
                "cannot substitute {:?} into {:?} at column {col}",
                sv.shape(),
                bv.shape()
            )));
        }
        let mut out = bv.clone();
        for &r in rows.iter() {
            out.data_mut()[r * m + col..r * m + col + w].copy_from_slice(sv.row(r));
        }
        let rg = self.needs(base) || self.needs(src);
        Ok(self.push(out, Op::Substitute { base, src, rows, col }, rg))
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, m) = (xv.rows(), xv.cols());
        let mut acc = vec![0.0; m];
        for row in xv.data().chunks(m) {
            acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        let inv = 1.0 / n as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        let out = Tensor::matrix(1, m, acc).expect("sized");
        let rg = self.needs(x);
        self.push(out, Op::MeanRows(x), rg)
    }

    pub fn mse(&mut self, pred: Var, target: &[f64], weight: &[f64]) -> Result<Var> {
        let loss = ops::masked_mse(self.value(pred).data(), target, weight)?;
        let rg = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.to_vec(),
                weight: weight.to_vec(),
            },
            rg,
        ))
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.shape()[1]);
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], n * k, |da| ops::matmul_grad_a(g, bv.data(), n, k, m, da));
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], k * m, |db| ops::matmul_grad_b(av.data(), g, n, k, m, db));
                }
            }
            Op::MatVec(a, v) => {
                let (av, vv) = (self.value(*a), self.value(*v));
                let (n, k) = (av.rows(), av.cols());
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], n * k, |da| ops::matmul_grad_a(g, vv.data(), n, k, 1, da));
                }
                if self.needs(*v) {
                    accumulate(&mut grads[v.0], k, |dv| ops::matmul_grad_b(av.data(), g, n, k, 1, dv));
                }
            }
            Op::AddRow(x, b) => {
                if self.needs(*x) {
                    add_into(&mut grads[x.0], g);
                }
                if self.needs(*b) {
                    let m = self.value(*b).len();
                    accumulate(&mut grads[b.0], m, |db| {
                        for row in g.chunks(m) {
                            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if self.needs(*b) {
                    add_into(&mut grads[b.0], g);
                }
            }
            Op::Scale(x, s) => {
                if self.needs(*x) {
                    let n = g.len();
                    accumulate(&mut grads[x.0], n, |dx| {
                        dx.iter_mut().zip(g).for_each(|(d, v)| *d += s * v)
                    });
                }
            }
            Op::Elu(x) => {
                if self.needs(*x) {
                    let xv = self.value(*x).data();
                    let yv = node.value.data();
                    accumulate(&mut grads[x.0], g.len(), |dx| {
                        for i in 0..dx.len() {
                            dx[i] += g[i] * ops::elu_grad_from_output(xv[i], yv[i]);
                        }
                    });
                }
            }
            Op::Attention {
                z,
                s_src,
                s_dst,
                adj,
                slope,
                alpha,
                pre,
            } => {
                let zv = self.value(*z);
                let ag = ops::attention_backward(g, zv.data(), zv.cols(), alpha, pre, adj, *slope);
                if self.needs(*z) {
                    add_into(&mut grads[z.0], &ag.dz);
                }
                if self.needs(*s_src) {
                    add_into(&mut grads[s_src.0], &ag.ds_src);
                }
                if self.needs(*s_dst) {
                    add_into(&mut grads[s_dst.0], &ag.ds_dst);
                }
            }
            Op::Substitute { base, src, rows, col } => {
                let m = node.value.cols();
                let w = self.value(*src).cols();
                if self.needs(*base) {
                    let mut gb = g.to_vec();
                    for &r in rows.iter() {
                        gb[r * m + col..r * m + col + w].fill(0.0);
                    }
                    add_into(&mut grads[base.0], &gb);
                }
                if self.needs(*src) {
                    let n = self.value(*src).rows();
                    accumulate(&mut grads[src.0], n * w, |ds| {
                        for &r in rows.iter() {
                            for c in 0..w {
                                ds[r * w + c] += g[r * m + col + c];
                            }
                        }
                    });
                }
            }
            Op::MeanRows(x) => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let (n, m) = (xv.rows(), xv.cols());
                    let inv = 1.0 / n as f64;
                    accumulate(&mut grads[x.0], n * m, |dx| {
                        for row in dx.chunks_mut(m) {
                            row.iter_mut().zip(g).for_each(|(d, v)| *d += v * inv);
                        }
                    });
                }
            }
            Op::Mse { pred, target, weight } => {
                if self.needs(*pred) {
                    let count: f64 = weight.iter().sum();
                    let pv = self.value(*pred).data();
                    accumulate(&mut grads[pred.0], pv.len(), |dp| {
                        if count == 0.0 {
                            return;
                        }
                        let s = 2.0 * g[0] / count;
                        for i in 0..dp.len() {
                            if weight[i] != 0.0 {
                                dp[i] += s * weight[i] * (pv[i] - target[i]);
                            }
                        }
                    });
                }
            }
        }
    }
}
