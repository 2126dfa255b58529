use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::graph::{FORCE_OFFSET, INPUT_DIM};
use crate::nn::{Activation, Adjacency, Binding, GatLayer, Linear, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: usize,
    pub depth: usize,
}

/// Shared GAT encoder, two-layer GAT force decoder and a pooled MLP head for
/// the net force.
#[derive(Debug, Clone)]
pub struct MaskedAutoencoder {
    pub store: ParamStore,
    pub encoder: Vec<GatLayer>,
    pub decoder: Vec<GatLayer>,
    pub net_head: Vec<Linear>,
    pub arch: Architecture,
}

impl MaskedAutoencoder {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        if arch.hidden == 0 || arch.depth == 0 {
            return Err(Error::invalid("hidden width and depth must be >= 1"));
        }
        let h = arch.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut encoder = Vec::with_capacity(arch.depth);
        for l in 0..arch.depth {
            let input = if l == 0 { INPUT_DIM } else { h };
            encoder.push(GatLayer::new(&mut store, &format!("encoder.{l}"), input, h, Activation::Elu, &mut rng)?);
        }
        let decoder = vec![
            GatLayer::new(&mut store, "decoder.0", h, h, Activation::Elu, &mut rng)?,
            GatLayer::new(&mut store, "decoder.1", h, 3, Activation::Identity, &mut rng)?,
        ];
        let net_head = vec![
            Linear::new(&mut store, "net_head.0", h, h, Activation::Elu, &mut rng)?,
            Linear::new(&mut store, "net_head.1", h, 3, Activation::Identity, &mut rng)?,
        ];
        Ok(MaskedAutoencoder {
            store,
            encoder,
            decoder,
            net_head,
            arch,
        })
    }

    pub fn hidden(&self) -> usize {
        self.arch.hidden
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        self.encoder.iter().flat_map(|l| l.params()).collect()
    }

    /// Node embeddings, `N x hidden`.
    pub fn encode(&self, tape: &mut Tape, bind: &Binding, x: Var, adj: &Arc<Adjacency>) -> Result<Var> {
        let shape = tape.value(x).shape();
        if shape.len() != 2 || shape[1] != INPUT_DIM || shape[0] != adj.num_nodes() {
            return Err(Error::invalid(format!(
                "encoder expects {} x {INPUT_DIM} features, got {shape:?}",
                adj.num_nodes()
            )));
        }
        let mut h = x;
        for layer in &self.encoder {
            h = layer.forward(tape, bind, h, adj)?;
        }
        Ok(h)
    }

    /// Per-node force reconstruction, `N x 3`.
    pub fn decode(&self, tape: &mut Tape, bind: &Binding, h: Var, adj: &Arc<Adjacency>) -> Result<Var> {
        let mut y = h;
        for layer in &self.decoder {
            y = layer.forward(tape, bind, y, adj)?;
        }
        Ok(y)
    }

    /// Mean-pools node embeddings and regresses a `1 x 3` net force.
    pub fn head(&self, tape: &mut Tape, bind: &Binding, h: Var) -> Result<Var> {
        let mut y = tape.mean_rows(h);
        for layer in &self.net_head {
            y = layer.forward(tape, bind, y)?;
        }
        Ok(y)
    }
}

pub struct LocalPass {
    /// `N x 3`
    pub pred: Var,
    pub loss: Var,
}

pub struct NetPass {
    /// `1 x 3` net force divided by the node count.
    pub net: Var,
    pub loss: Var,
}

/// Encodes the masked graph and reconstructs forces; the loss only sees the
/// force entries of `masked` nodes.
pub fn local_force_forward(
    model: &MaskedAutoencoder,
    tape: &mut Tape,
    bind: &Binding,
    masked_features: Var,
    masked: &[usize],
    true_forces: &[f64],
    adj: &Arc<Adjacency>,
) -> Result<LocalPass> {
    let n = adj.num_nodes();
    if true_forces.len() != n * 3 {
        return Err(Error::invalid(format!(
            "{} force entries for {n} nodes",
            true_forces.len()
        )));
    }
    let h = model.encode(tape, bind, masked_features, adj)?;
    let pred = model.decode(tape, bind, h, adj)?;
    let mut weight = vec![0.0; n * 3];
    for &i in masked {
        if i >= n {
            return Err(Error::invalid(format!("masked node {i} out of range for {n} nodes")));
        }
        weight[i * 3..i * 3 + 3].fill(1.0);
    }
    let loss = tape.mse(pred, true_forces, &weight)?;
    Ok(LocalPass { pred, loss })
}

/// Writes `pred` rows of the masked nodes into the original (unflagged)
/// features, re-encodes with the same encoder and regresses the net force.
///
/// The head works in per-node units (net force / N), matching the mean-pooled
/// readout and keeping this loss on the scale of the per-taxel force loss.
pub fn net_force_forward(
    model: &MaskedAutoencoder,
    tape: &mut Tape,
    bind: &Binding,
    original_features: Var,
    masked: Arc<[usize]>,
    pred: Var,
    net_truth: Vec3,
    adj: &Arc<Adjacency>,
) -> Result<NetPass> {
    let pv = tape.value(pred);
    if pv.shape() != [adj.num_nodes(), 3] {
        return Err(Error::invalid(format!(
            "predictions {:?} do not match {} nodes",
            pv.shape(),
            adj.num_nodes()
        )));
    }
    let substituted = tape.substitute(original_features, pred, masked, FORCE_OFFSET)?;
    let h = model.encode(tape, bind, substituted, adj)?;
    let net = model.head(tape, bind, h)?;
    let loss = tape.mse(net, &per_node(net_truth, adj.num_nodes()), &[1.0; 3])?;
    Ok(NetPass { net, loss })
}

pub fn per_node(v: Vec3, n: usize) -> Vec3 {
    let inv = 1.0 / n as f64;
    [v[0] * inv, v[1] * inv, v[2] * inv]
}
