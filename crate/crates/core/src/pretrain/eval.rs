use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::Vec3;
use crate::graph::{build_graph, hand_edges, Representation, TactileFrame};
use crate::hand::Hand;
use crate::nn::{ops::masked_mse, Adjacency, Tape};
use crate::par::{self, Exec};
use crate::synth::derive_seed;

use super::model::{per_node, MaskedAutoencoder};
use super::train::{frame_loss, PreparedData, Sample};

/// Per-frame squared errors of the model and both baselines. Net-force
/// errors are in per-node units, like the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameErrors {
    pub masked_force_mse: f64,
    pub net_force_mse: f64,
    pub mean_masked_force_mse: f64,
    pub mean_net_force_mse: f64,
    pub zero_masked_force_mse: f64,
    pub zero_net_force_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub name: String,
    pub masked_force_mse: f64,
    pub net_force_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub mask_ratio: f64,
    pub eval_seed: u64,
    pub masked_force_mse: f64,
    pub net_force_mse: f64,
    pub baselines: Vec<Baseline>,
    /// Mean taxel force and mean net force used by the `mean` baseline.
    pub mean_force: Vec3,
    pub mean_net_force: Vec3,
    pub per_frame: Vec<FrameErrors>,
}

impl EvalReport {
    /// Averages per-frame errors in frame order.
    pub fn from_per_frame(
        per_frame: Vec<FrameErrors>,
        mask_ratio: f64,
        eval_seed: u64,
        mean_force: Vec3,
        mean_net_force: Vec3,
    ) -> Self {
        let n = per_frame.len().max(1) as f64;
        let mean = |f: fn(&FrameErrors) -> f64| per_frame.iter().map(f).sum::<f64>() / n;
        EvalReport {
            frames: per_frame.len(),
            mask_ratio,
            eval_seed,
            masked_force_mse: mean(|e| e.masked_force_mse),
            net_force_mse: mean(|e| e.net_force_mse),
            baselines: vec![
                Baseline {
                    name: "mean".into(),
                    masked_force_mse: mean(|e| e.mean_masked_force_mse),
                    net_force_mse: mean(|e| e.mean_net_force_mse),
                },
                Baseline {
                    name: "zero".into(),
                    masked_force_mse: mean(|e| e.zero_masked_force_mse),
                    net_force_mse: mean(|e| e.zero_net_force_mse),
                },
            ],
            mean_force,
            mean_net_force,
            per_frame,
        }
    }

    pub fn baseline(&self, name: &str) -> Option<&Baseline> {
        self.baselines.iter().find(|b| b.name == name)
    }
}

fn dataset_means(data: &PreparedData) -> (Vec3, Vec3) {
    let mut f = [0.0; 3];
    let mut nf = [0.0; 3];
    let mut taxels = 0usize;
    for s in &data.samples {
        for c in s.forces.chunks(3) {
            for k in 0..3 {
                f[k] += c[k];
            }
            taxels += 1;
        }
        for k in 0..3 {
            nf[k] += s.net_force[k];
        }
    }
    let (ti, fi) = (1.0 / taxels.max(1) as f64, 1.0 / data.len().max(1) as f64);
    ([f[0] * ti, f[1] * ti, f[2] * ti], [nf[0] * fi, nf[1] * fi, nf[2] * fi])
}

/// Masked-force and net-force errors at fixed per-frame masks
/// (`derive_seed(eval_seed, frame)`), alongside a mean-force predictor and a
/// zero predictor scored on the same masks.
pub fn evaluate(
    model: &MaskedAutoencoder,
    data: &PreparedData,
    mask_ratio: f64,
    eval_seed: u64,
    exec: Exec,
) -> Result<EvalReport> {
    let (mean_force, mean_net) = dataset_means(data);
    let per_frame = par::map_indexed(exec, data.len(), |i| {
        let s = &data.samples[i];
        let r = frame_loss(model, s, &data.adj, mask_ratio, derive_seed(eval_seed, i as u64), (1.0, 1.0), false)?;
        let n = s.graph.len();
        let mut weight = vec![0.0; n * 3];
        for &m in r.masked.iter() {
            weight[m * 3..m * 3 + 3].fill(1.0);
        }
        let mean_pred: Vec<f64> = (0..n).flat_map(|_| mean_force).collect();
        let zeros = vec![0.0; n * 3];
        Ok(FrameErrors {
            masked_force_mse: r.local,
            net_force_mse: r.net,
            mean_masked_force_mse: masked_mse(&mean_pred, &s.forces, &weight)?,
            mean_net_force_mse: masked_mse(&per_node(mean_net, n), &per_node(s.net_force, n), &[1.0; 3])?,
            zero_masked_force_mse: masked_mse(&zeros, &s.forces, &weight)?,
            zero_net_force_mse: masked_mse(&[0.0; 3], &per_node(s.net_force, n), &[1.0; 3])?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_per_frame(per_frame, mask_ratio, eval_seed, mean_force, mean_net))
}

pub(crate) fn embed_sample(model: &MaskedAutoencoder, sample: &Sample, adj: &Arc<Adjacency>) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bind = model.store.bind(&mut tape);
    let x = tape.constant(sample.features.clone());
    let h = model.encode(&mut tape, &bind, x, adj)?;
    let pooled = tape.mean_rows(h);
    Ok(tape.value(pooled).data().to_vec())
}

/// Encodes the unmasked graph of `frame` and mean-pools the node embeddings.
pub fn embed(model: &MaskedAutoencoder, frame: &TactileFrame, hand: &Hand, repr: Representation) -> Result<Vec<f64>> {
    let graph = build_graph(frame, hand, repr)?;
    let adj = Arc::new(Adjacency::from_undirected(graph.len(), &hand_edges(hand))?);
    embed_sample(model, &Sample::new(graph, [0.0; 3])?, &adj)
}
