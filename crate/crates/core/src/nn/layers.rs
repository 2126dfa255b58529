use std::cell::RefCell;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ops::Adjacency;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named parameters in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn grads_flat(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.grad.data().iter().copied())
            .collect()
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_values() {
            return Err(Error::invalid(format!(
                "{} values for {} parameters",
                values.len(),
                self.num_values()
            )));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Places every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        Binding {
            vars: self
                .params
                .iter()
                .map(|p| tape.variable(p.value.clone()))
                .collect(),
            log: RefCell::new(Vec::new()),
        }
    }
}

/// Tape variables for a [`ParamStore`], with an access log.
pub struct Binding {
    vars: Vec<Var>,
    log: RefCell<Vec<ParamId>>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.log.borrow_mut().push(id);
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Parameters accessed since the last call, in access order.
    pub fn drain_log(&self) -> Vec<ParamId> {
        std::mem::take(&mut *self.log.borrow_mut())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Identity,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Elu => tape.elu(x),
            Activation::Identity => x,
        }
    }
}

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, len: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-a..a)).collect()
}

/// Single-head graph-attention layer:
/// `out_i = act(sum_j alpha_ij W^T h_j + b)` over `j` in the closed
/// neighbourhood of `i`, with
/// `alpha_ij = softmax_j(leaky_relu(a_src . W^T h_j + a_dst . W^T h_i))`.
#[derive(Debug, Clone)]
pub struct GatLayer {
    pub weight: ParamId,
    pub att_src: ParamId,
    pub att_dst: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub negative_slope: f64,
    pub activation: Activation,
}

pub const ATTENTION_SLOPE: f64 = 0.2;

impl GatLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let w = glorot(rng, in_dim, out_dim, in_dim * out_dim);
        let a_src = glorot(rng, out_dim, 1, out_dim);
        let a_dst = glorot(rng, out_dim, 1, out_dim);
        Ok(GatLayer {
            weight: store.push(format!("{prefix}.weight"), Tensor::matrix(in_dim, out_dim, w)?)?,
            att_src: store.push(format!("{prefix}.att_src"), Tensor::vector(a_src))?,
            att_dst: store.push(format!("{prefix}.att_dst"), Tensor::vector(a_dst))?,
            bias: store.push(format!("{prefix}.bias"), Tensor::zeros(&[out_dim]))?,
            in_dim,
            out_dim,
            negative_slope: ATTENTION_SLOPE,
            activation,
        })
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.weight, self.att_src, self.att_dst, self.bias]
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, h: Var, adj: &Arc<Adjacency>) -> Result<Var> {
        if tape.value(h).cols() != self.in_dim {
            return Err(Error::invalid(format!(
                "layer expects width {}, got {:?}",
                self.in_dim,
                tape.value(h).shape()
            )));
        }
        let z = tape.matmul(h, bind.var(self.weight))?;
        let s_src = tape.matvec(z, bind.var(self.att_src))?;
        let s_dst = tape.matvec(z, bind.var(self.att_dst))?;
        let agg = tape.attention(z, s_src, s_dst, adj, self.negative_slope)?;
        let out = tape.add_row(agg, bind.var(self.bias))?;
        Ok(self.activation.apply(tape, out))
    }
}

/// Evaluates one attention layer on plain tensors.
pub fn gat_forward(
    store: &ParamStore,
    layer: &GatLayer,
    node_feats: &Tensor,
    edges: &[(usize, usize)],
) -> Result<Tensor> {
    let adj = Arc::new(Adjacency::from_undirected(node_feats.rows(), edges)?);
    let mut tape = Tape::new();
    let bind = store.bind(&mut tape);
    let x = tape.constant(node_feats.clone());
    let y = layer.forward(&mut tape, &bind, x, &adj)?;
    Ok(tape.value(y).clone())
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let w = glorot(rng, in_dim, out_dim, in_dim * out_dim);
        Ok(Linear {
            weight: store.push(format!("{prefix}.weight"), Tensor::matrix(in_dim, out_dim, w)?)?,
            bias: store.push(format!("{prefix}.bias"), Tensor::zeros(&[out_dim]))?,
            activation,
        })
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bind.var(self.weight))?;
        let y = tape.add_row(y, bind.var(self.bias))?;
        Ok(self.activation.apply(tape, y))
    }
}
