use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::graph::{apply_mask, build_graph, hand_edges, TactileFrame, TactileGraph, INPUT_DIM};
use crate::hand::Hand;
use crate::nn::{AdamConfig, AdamState, Adjacency, Tape, Tensor};
use crate::par::{self, Exec};
use crate::synth::{derive_seed, Dataset};

use super::config::TrainConfig;
use super::model::{local_force_forward, net_force_forward, MaskedAutoencoder};

/// One frame turned into model inputs.
#[derive(Debug, Clone)]
pub struct Sample {
    pub graph: TactileGraph,
    /// Unmasked `N x 13` features.
    pub features: Tensor,
    /// Flattened `N x 3` taxel forces.
    pub forces: Vec<f64>,
    pub net_force: Vec3,
}

impl Sample {
    pub fn new(graph: TactileGraph, net_force: Vec3) -> Result<Self> {
        let n = graph.len();
        let features = Tensor::matrix(n, INPUT_DIM, graph.feature_matrix())?;
        let forces = graph.forces().into_iter().flatten().collect();
        Ok(Sample {
            graph,
            features,
            forces,
            net_force,
        })
    }
}

/// Graphs for every frame of a dataset, sharing one adjacency.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub adj: Arc<Adjacency>,
    pub samples: Vec<Sample>,
}

impl PreparedData {
    pub fn new(dataset: &Dataset, hand: &Hand, config: &TrainConfig, exec: Exec) -> Result<Self> {
        dataset.check_hand(hand)?;
        let frames: Vec<(&TactileFrame, Vec3)> = dataset.frames().map(|lf| (lf.frame, lf.net_force)).collect();
        Self::from_frames(hand, &frames, config.representation, exec)
    }

    pub fn from_frames(
        hand: &Hand,
        frames: &[(&TactileFrame, Vec3)],
        repr: crate::graph::Representation,
        exec: Exec,
    ) -> Result<Self> {
        let adj = Arc::new(Adjacency::from_undirected(hand.num_taxels(), &hand_edges(hand))?);
        let samples = par::map_indexed(exec, frames.len(), |i| {
            let (frame, net) = frames[i];
            Sample::new(build_graph(frame, hand, repr)?, net)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(PreparedData { adj, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        PreparedData {
            adj: Arc::clone(&self.adj),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrameLoss {
    pub loss: f64,
    pub local: f64,
    pub net: f64,
    pub masked: Arc<[usize]>,
    /// Per-node force predictions, flattened.
    pub pred: Vec<f64>,
    /// Predicted net force, newtons.
    pub net_pred: Vec3,
    /// Per-parameter gradients in store order, when requested.
    pub grads: Option<Vec<Vec<f64>>>,
}

/// Runs both passes on one frame with the mask drawn from `mask_seed`.
pub fn frame_loss(
    model: &MaskedAutoencoder,
    sample: &Sample,
    adj: &Arc<Adjacency>,
    mask_ratio: f64,
    mask_seed: u64,
    weights: (f64, f64),
    with_grads: bool,
) -> Result<FrameLoss> {
    let (masked_graph, mask) = apply_mask(&sample.graph, mask_ratio, mask_seed)?;
    let masked: Arc<[usize]> = Arc::from(mask.masked);
    let mut tape = Tape::new();
    let bind = model.store.bind(&mut tape);
    let xm = tape.constant(Tensor::matrix(masked_graph.len(), INPUT_DIM, masked_graph.feature_matrix())?);
    let xo = tape.constant(sample.features.clone());
    let local = local_force_forward(model, &mut tape, &bind, xm, &masked, &sample.forces, adj)?;
    let net = net_force_forward(model, &mut tape, &bind, xo, Arc::clone(&masked), local.pred, sample.net_force, adj)?;
    let a = tape.scale(local.loss, weights.0);
    let b = tape.scale(net.loss, weights.1);
    let total = tape.add(a, b)?;

    let grads = if with_grads {
        let mut g = tape.backward(total)?;
        Some(
            bind.vars()
                .iter()
                .zip(model.store.iter())
                .map(|(v, p)| g.take(*v).unwrap_or_else(|| vec![0.0; p.value.len()]))
                .collect(),
        )
    } else {
        None
    };
    let nv = tape.value(net.net).data();
    let n = sample.graph.len() as f64;
    Ok(FrameLoss {
        loss: tape.value(total).item(),
        local: tape.value(local.loss).item(),
        net: tape.value(net.loss).item(),
        pred: tape.value(local.pred).data().to_vec(),
        net_pred: [nv[0] * n, nv[1] * n, nv[2] * n],
        masked,
        grads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub loss_local: f64,
    pub loss_net: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub loss_local: f64,
    pub loss_net: f64,
}

/// One optimizer step on `batch` (indices into `data`), with one mask seed
/// per batch entry. Frames may be evaluated in parallel; gradients are
/// summed in batch order.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_step(
    model: &mut MaskedAutoencoder,
    adam: &mut AdamState,
    data: &PreparedData,
    batch: &[usize],
    mask_seeds: &[u64],
    config: &TrainConfig,
    exec: Exec,
    (epoch, step): (usize, usize),
) -> Result<StepMetrics> {
    if batch.is_empty() || batch.len() != mask_seeds.len() {
        return Err(Error::invalid("batch must be non-empty with one mask seed per frame"));
    }
    let weights = config.loss_weights();
    let shared: &MaskedAutoencoder = model;
    let results = par::map_indexed(exec, batch.len(), |b| {
        frame_loss(
            shared,
            &data.samples[batch[b]],
            &data.adj,
            config.mask_ratio,
            mask_seeds[b],
            weights,
            true,
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let inv = 1.0 / batch.len() as f64;
    let (mut loss, mut local, mut net) = (0.0, 0.0, 0.0);
    for r in &results {
        loss += r.loss;
        local += r.local;
        net += r.net;
    }
    let metrics = StepMetrics {
        epoch,
        step,
        loss: loss * inv,
        loss_local: local * inv,
        loss_net: net * inv,
    };
    if !metrics.loss.is_finite() {
        return Err(Error::Divergence {
            epoch,
            step,
            loss: metrics.loss,
        });
    }

    model.store.zero_grad();
    for r in &results {
        let grads = r.grads.as_ref().expect("requested");
        for (p, g) in model.store.iter_mut().zip(grads) {
            p.grad.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
    for p in model.store.iter_mut() {
        p.grad.data_mut().iter_mut().for_each(|g| *g *= inv);
    }
    adam.step(&mut model.store);
    Ok(metrics)
}

/// Owns the model, optimizer and training RNG.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: MaskedAutoencoder,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub rng: ChaCha8Rng,
    pub history: Vec<EpochMetrics>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = MaskedAutoencoder::new(config.architecture(), derive_seed(config.seed, 0))?;
        let adam = AdamState::new(
            &model.store,
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
        );
        Ok(Trainer {
            model,
            adam,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1)),
            config,
            history: Vec::new(),
        })
    }

    /// Shuffles the data, runs every batch, and records the frame-weighted
    /// mean losses.
    pub fn run_epoch(
        &mut self,
        data: &PreparedData,
        exec: Exec,
        mut on_step: impl FnMut(&StepMetrics),
    ) -> Result<EpochMetrics> {
        if data.is_empty() {
            return Err(Error::config("training data is empty"));
        }
        let epoch = self.history.len();
        self.adam.config.lr = self.config.lr_at(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut loss, mut local, mut net) = (0.0, 0.0, 0.0);
        for (step, batch) in order.chunks(self.config.batch_size).enumerate() {
            let seeds: Vec<u64> = batch.iter().map(|_| self.rng.gen()).collect();
            let m = pretrain_step(
                &mut self.model,
                &mut self.adam,
                data,
                batch,
                &seeds,
                &self.config,
                exec,
                (epoch, step),
            )?;
            let w = batch.len() as f64;
            loss += m.loss * w;
            local += m.loss_local * w;
            net += m.loss_net * w;
            on_step(&m);
        }
        let inv = 1.0 / data.len() as f64;
        let em = EpochMetrics {
            epoch,
            loss: loss * inv,
            loss_local: local * inv,
            loss_net: net * inv,
        };
        self.history.push(em);
        Ok(em)
    }
}

/// Runs `config.epochs` epochs. `on_epoch` sees the trainer after each epoch
/// (for periodic checkpoints and logging).
pub fn train(
    data: &PreparedData,
    config: &TrainConfig,
    exec: Exec,
    mut on_step: impl FnMut(&StepMetrics),
    mut on_epoch: impl FnMut(&Trainer, &EpochMetrics) -> Result<()>,
) -> Result<Trainer> {
    let mut trainer = Trainer::new(config.clone())?;
    for _ in 0..config.epochs {
        let em = trainer.run_epoch(data, exec, &mut on_step)?;
        on_epoch(&trainer, &em)?;
    }
    Ok(trainer)
}
