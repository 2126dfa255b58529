//! Finite-difference checks of every trainable component, including the
//! full two-pass loss on a small two-sensor hand.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::Pose6;
use crate::graph::{build_graph, hand_edges, net_force, Representation, TactileFrame};
use crate::hand::{curved_layout, planar_layout, Hand, HandDescription, JointSpec, JointType, SensorMount, SensorType, BASE_LINK};
use crate::nn::{grad_check, Activation, Adjacency, Binding, GatLayer, GradCheckOptions, GradCheckReport, Linear, ParamStore, Tape, Tensor, Var};

use super::model::{Architecture, MaskedAutoencoder};
use super::train::{frame_loss, Sample};

/// Two 3x5 sensors (30 taxels): a flat pad on the base and a curved tip on
/// a single revolute link.
pub fn toy_hand() -> Hand {
    Hand::new(HandDescription {
        version: 1,
        layouts: vec![
            planar_layout("pad", SensorType::Fingerpad, 3, 5, 0.003),
            curved_layout("tip", SensorType::Fingertip, 3, 5, 0.0025, 10f64.to_radians()),
        ],
        joints: vec![JointSpec {
            name: "j".into(),
            parent: BASE_LINK.into(),
            child: "l1".into(),
            origin: Pose6::from_translation([0.04, 0.0, 0.0]),
            axis: [0.0, 1.0, 0.0],
            kind: JointType::Revolute,
        }],
        sensor_mounts: vec![
            SensorMount {
                sensor: "pad".into(),
                finger: "f".into(),
                layout: "pad".into(),
                link: BASE_LINK.into(),
                pose: Pose6::new([0.01, 0.0, -0.005], [0.3, -0.2, 0.1]).expect("finite"),
            },
            SensorMount {
                sensor: "tip".into(),
                finger: "f".into(),
                layout: "tip".into(),
                link: "l1".into(),
                pose: Pose6::new([0.02, 0.0, -0.006], [2.2, 2.2, 0.0]).expect("finite"),
            },
        ],
    })
    .expect("toy hand is valid")
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub seed: u64,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    #[serde(skip)]
    pub report: GradCheckReport,
}

fn random(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn flat_grads(tape: &Tape, bind: &Binding, root: Var, store: &ParamStore) -> Result<Vec<f64>> {
    let g = tape.backward(root)?;
    Ok(bind
        .vars()
        .iter()
        .zip(store.iter())
        .flat_map(|(v, p)| g.get(*v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; p.value.len()]))
        .collect())
}

/// Checks the gradient of `build` with respect to every parameter in
/// `store`.
fn check_store<F>(store: &ParamStore, build: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Binding) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bind = store.bind(&mut tape);
    let root = build(&mut tape, &bind)?;
    let analytic = flat_grads(&tape, &bind, root, store)?;
    let theta = store.to_flat();
    let loss = |t: &[f64]| {
        let mut s = store.clone();
        s.assign_flat(t).expect("same length");
        let mut tape = Tape::new();
        let bind = s.bind(&mut tape);
        let root = build(&mut tape, &bind).expect("built once already");
        tape.value(root).item()
    };
    Ok(grad_check(loss, &theta, &analytic, opts))
}

/// Output of `f` on the current parameters, used to place regression
/// targets near the prediction so that the loss stays small.
fn value_of<F>(store: &ParamStore, f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &Binding) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bind = store.bind(&mut tape);
    let v = f(&mut tape, &bind)?;
    Ok(tape.value(v).data().to_vec())
}

fn near(values: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    values.iter().map(|v| v + rng.gen_range(-0.03..0.03)).collect()
}

pub fn check_linear(seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k, m) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..6));
    let mut store = ParamStore::new();
    let layer = Linear::new(&mut store, "lin", k, m, Activation::Elu, &mut rng)?;
    let b = random(&mut rng, m, 0.5);
    store.iter_mut().nth(1).expect("bias").value = Tensor::vector(b);
    let x = Tensor::matrix(n, k, random(&mut rng, n * k, 1.0))?;
    let fwd = |tape: &mut Tape, bind: &Binding| {
        let xv = tape.constant(x.clone());
        layer.forward(tape, bind, xv)
    };
    let target = near(&value_of(&store, fwd)?, &mut rng);
    check_store(
        &store,
        |tape, bind| {
            let y = fwd(tape, bind)?;
            tape.mse(y, &target, &vec![1.0; target.len()])
        },
        opts,
    )
}

pub fn check_gat(seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..9);
    let (k, m) = (rng.gen_range(1..6), rng.gen_range(1..6));
    let mut store = ParamStore::new();
    let layer = GatLayer::new(&mut store, "gat", k, m, Activation::Elu, &mut rng)?;
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(0.4) {
                edges.push((a, b));
            }
        }
    }
    let adj = Arc::new(Adjacency::from_undirected(n, &edges)?);
    let x = Tensor::matrix(n, k, random(&mut rng, n * k, 1.0))?;
    let fwd = |tape: &mut Tape, bind: &Binding| {
        let xv = tape.constant(x.clone());
        layer.forward(tape, bind, xv, &adj)
    };
    let target = near(&value_of(&store, fwd)?, &mut rng);
    check_store(
        &store,
        |tape, bind| {
            let y = fwd(tape, bind)?;
            tape.mse(y, &target, &vec![1.0; target.len()])
        },
        opts,
    )
}

/// Masked MSE with respect to its prediction input.
pub fn check_mse(seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..20);
    let mut store = ParamStore::new();
    let pred = store.push("pred", Tensor::matrix(n, 3, random(&mut rng, n * 3, 1.0))?)?;
    let target = random(&mut rng, n * 3, 1.0);
    let mut weight: Vec<f64> = (0..n * 3).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
    weight[0] = 1.0;
    check_store(&store, |tape, bind| tape.mse(bind.var(pred), &target, &weight), opts)
}

/// Mean-pool readout and MLP head with respect to head parameters and the
/// node embeddings feeding them.
pub fn check_net_head(seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = rng.gen_range(2..9);
    let n = rng.gen_range(1..12);
    let mut model = MaskedAutoencoder::new(Architecture { hidden, depth: 1 }, seed)?;
    for p in model.store.iter_mut().filter(|p| p.name.ends_with(".bias")) {
        let b = random(&mut rng, p.value.len(), 0.3);
        p.value.data_mut().copy_from_slice(&b);
    }
    let h = model.store.push("embeddings", Tensor::matrix(n, hidden, random(&mut rng, n * hidden, 1.0))?)?;
    let fwd = |tape: &mut Tape, bind: &Binding| model.head(tape, bind, bind.var(h));
    let target = near(&value_of(&model.store, fwd)?, &mut rng);
    check_store(
        &model.store,
        |tape, bind| {
            let y = fwd(tape, bind)?;
            tape.mse(y, &target, &[1.0; 3])
        },
        opts,
    )
}

/// Random small-force frame on the toy hand, with its label.
pub fn toy_frame(hand: &Hand, rng: &mut ChaCha8Rng) -> Result<(TactileFrame, [f64; 3])> {
    let q = random(rng, hand.dof(), 0.8);
    let mut frame = TactileFrame::zeros(hand, q, 0.0);
    for grid in &mut frame.readings {
        for f in grid.iter_mut() {
            *f = [rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03), rng.gen_range(0.0..0.1)];
        }
    }
    let nf = net_force(&frame, hand)?;
    Ok((frame, nf))
}

/// Total two-pass pretraining loss on one toy-hand frame with respect to
/// every model parameter.
pub fn check_pretrain_loss(seed: u64, weights: (f64, f64), opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let hand = toy_hand();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (frame, nf) = toy_frame(&hand, &mut rng)?;
    let mut sample = Sample::new(build_graph(&frame, &hand, Representation::Canonical)?, nf)?;
    let adj = Arc::new(Adjacency::from_undirected(hand.num_taxels(), &hand_edges(&hand))?);
    let model = MaskedAutoencoder::new(Architecture { hidden: 6, depth: 2 }, seed)?;
    let mask_seed = rng.gen();
    // Masked-node forces are only ever targets (the first pass zeroes them
    // and the second overwrites them with predictions), and so is the net
    // force. Placing both near the current predictions keeps the loss small;
    // with O(1) residuals its rounding noise at eps = 1e-5 exceeds the 1e-8
    // floor on coordinates whose true gradient is zero.
    let r0 = frame_loss(&model, &sample, &adj, 0.3, mask_seed, weights, false)?;
    for &i in r0.masked.iter() {
        for k in 0..3 {
            sample.forces[i * 3 + k] = r0.pred[i * 3 + k] + rng.gen_range(-0.03..0.03);
        }
    }
    let n = sample.graph.len() as f64;
    sample.net_force = r0.net_pred.map(|v| v + n * rng.gen_range(-0.03..0.03));
    let run = |m: &MaskedAutoencoder, grads: bool| frame_loss(m, &sample, &adj, 0.3, mask_seed, weights, grads);
    let r = run(&model, true)?;
    let analytic: Vec<f64> = r.grads.expect("requested").into_iter().flatten().collect();
    let theta = model.store.to_flat();
    let loss = |t: &[f64]| {
        let mut m = model.clone();
        m.store.assign_flat(t).expect("same length");
        run(&m, false).expect("ran once already").loss
    };
    Ok(grad_check(loss, &theta, &analytic, opts))
}

pub const CHECK_NAMES: [&str; 5] = ["linear", "gat", "mse", "net_head", "pretrain_loss"];

/// Runs every check for each seed in `seeds`.
pub fn run_suite(seeds: impl IntoIterator<Item = u64>, opts: &GradCheckOptions) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for seed in seeds {
        let o = GradCheckOptions { seed, ..*opts };
        for name in CHECK_NAMES {
            let report = match name {
                "linear" => check_linear(seed, &o)?,
                "gat" => check_gat(seed, &o)?,
                "mse" => check_mse(seed, &o)?,
                "net_head" => check_net_head(seed, &o)?,
                _ => check_pretrain_loss(seed, (1.0, 1.0), &o)?,
            };
            out.push(CheckOutcome {
                name,
                seed,
                max_rel_error: report.max_rel_error,
                coords_checked: report.coords_checked,
                report,
            });
        }
    }
    Ok(out)
}
