//! Tactile frames, the 12D node representation and the 4-neighbourhood
//! graph built over each sensor pad.
//!
//! Every taxel becomes one node with features `[P^s, T, F]`: the 6D pose of
//! its sensor's origin in the hand-base frame, its canonical coordinate in
//! the sensor's unit frame, and its tri-axial force. A 13th channel flags
//! nodes whose force has been masked out.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Pose6, Vec3};
use crate::hand::Hand;

/// Length of `[P^s, T, F]`.
pub const FEATURE_DIM: usize = 12;
/// Feature length plus the mask flag channel.
pub const INPUT_DIM: usize = FEATURE_DIM + 1;
pub const POSE_OFFSET: usize = 0;
pub const COORD_OFFSET: usize = 6;
pub const FORCE_OFFSET: usize = 9;
pub const FLAG_OFFSET: usize = 12;

/// How the per-taxel coordinate slot `T` is filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    /// Canonical unit-frame coordinates.
    #[default]
    Canonical,
    /// Raw sensor-frame positions in meters (ablation).
    Raw,
}

/// One snapshot of the hand: joint angles and per-taxel forces, each force
/// expressed in its taxel's local frame. `readings[s]` is sensor `s` in mount
/// order, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileFrame {
    pub timestamp: f64,
    pub q: Vec<f64>,
    pub readings: Vec<Vec<Vec3>>,
}

impl TactileFrame {
    pub fn zeros(hand: &Hand, q: Vec<f64>, timestamp: f64) -> Self {
        let readings = (0..hand.num_sensors())
            .map(|s| vec![[0.0; 3]; hand.sensor_layout(s).len()])
            .collect();
        TactileFrame {
            timestamp,
            q,
            readings,
        }
    }

    pub fn validate(&self, hand: &Hand) -> Result<()> {
        if self.q.len() != hand.dof() {
            return Err(Error::invalid(format!(
                "frame has {} joint angles, hand has {} joints",
                self.q.len(),
                hand.dof()
            )));
        }
        if self.readings.len() != hand.num_sensors() {
            return Err(Error::invalid(format!(
                "frame has readings for {} sensors, hand has {}",
                self.readings.len(),
                hand.num_sensors()
            )));
        }
        for (s, grid) in self.readings.iter().enumerate() {
            let layout = hand.sensor_layout(s);
            if grid.len() != layout.len() {
                return Err(Error::invalid(format!(
                    "sensor {}: {} readings for a {}x{} layout",
                    hand.sensor_id(s),
                    grid.len(),
                    layout.rows,
                    layout.cols
                )));
            }
            if grid.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "sensor {}: non-finite force reading",
                    hand.sensor_id(s)
                )));
            }
        }
        if self.q.iter().any(|v| !v.is_finite()) || !self.timestamp.is_finite() {
            return Err(Error::invalid("non-finite joint angle or timestamp"));
        }
        Ok(())
    }

    /// Forces flattened in global node order.
    pub fn forces(&self) -> impl Iterator<Item = &Vec3> {
        self.readings.iter().flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeFeature {
    pub ps: [f64; 6],
    pub t: Vec3,
    pub f: Vec3,
    pub mask_flag: f64,
}

impl NodeFeature {
    pub fn to_row(&self) -> [f64; INPUT_DIM] {
        let mut row = [0.0; INPUT_DIM];
        row[POSE_OFFSET..COORD_OFFSET].copy_from_slice(&self.ps);
        row[COORD_OFFSET..FORCE_OFFSET].copy_from_slice(&self.t);
        row[FORCE_OFFSET..FLAG_OFFSET].copy_from_slice(&self.f);
        row[FLAG_OFFSET] = self.mask_flag;
        row
    }

    pub fn is_masked(&self) -> bool {
        self.mask_flag != 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeMeta {
    pub sensor: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TactileGraph {
    pub nodes: Vec<NodeFeature>,
    /// Undirected edges `(a, b)` with `a < b`.
    pub edges: Vec<(usize, usize)>,
    pub meta: Vec<NodeMeta>,
}

impl TactileGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node features as a row-major `N x 13` buffer.
    pub fn feature_matrix(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.nodes.len() * INPUT_DIM);
        for n in &self.nodes {
            out.extend_from_slice(&n.to_row());
        }
        out
    }

    pub fn forces(&self) -> Vec<Vec3> {
        self.nodes.iter().map(|n| n.f).collect()
    }
}

/// Undirected edges between cells at Manhattan distance 1 on a row-major
/// `rows x cols` grid.
pub fn four_neighborhood(rows: usize, cols: usize) -> Result<Vec<(usize, usize)>> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!("grid must be at least 1x1, got {rows}x{cols}")));
    }
    let mut edges = Vec::with_capacity(rows * (cols - 1) + (rows - 1) * cols);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                edges.push((i, i + 1));
            }
            if r + 1 < rows {
                edges.push((i, i + cols));
            }
        }
    }
    Ok(edges)
}

/// Edges of the whole hand: per-sensor grids offset into global node ids.
pub fn hand_edges(hand: &Hand) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for s in 0..hand.num_sensors() {
        let layout = hand.sensor_layout(s);
        let off = hand.sensor_offset(s);
        let local = four_neighborhood(layout.rows, layout.cols).expect("validated layout");
        edges.extend(local.into_iter().map(|(a, b)| (a + off, b + off)));
    }
    edges
}

fn sensor_nodes(
    hand: &Hand,
    sensor: usize,
    sensor_pose: &Pose6,
    forces: &[Vec3],
    repr: Representation,
) -> Vec<(NodeFeature, NodeMeta)> {
    let layout = hand.sensor_layout(sensor);
    let ps = sensor_pose.to_array();
    let coords: Vec<Vec3> = match repr {
        Representation::Canonical => hand.sensor_canonical(sensor).coords.clone(),
        Representation::Raw => layout.positions(),
    };
    coords
        .into_iter()
        .zip(forces)
        .enumerate()
        .map(|(k, (t, f))| {
            (
                NodeFeature {
                    ps,
                    t,
                    f: *f,
                    mask_flag: 0.0,
                },
                NodeMeta {
                    sensor,
                    row: k / layout.cols,
                    col: k % layout.cols,
                },
            )
        })
        .collect()
}

/// Builds the graph for one frame. Sensors are visited in `order`; node
/// indices are fixed by the hand's sensor offsets regardless of the order.
pub fn build_graph_in_order(
    frame: &TactileFrame,
    hand: &Hand,
    repr: Representation,
    order: &[usize],
) -> Result<TactileGraph> {
    frame.validate(hand)?;
    let mut visited = vec![false; hand.num_sensors()];
    for &s in order {
        if s >= visited.len() || std::mem::replace(&mut visited[s], true) {
            return Err(Error::invalid("sensor order must be a permutation"));
        }
    }
    if visited.iter().any(|v| !v) {
        return Err(Error::invalid("sensor order must be a permutation"));
    }

    let frames = hand.sensor_frames(&frame.q)?;
    let n = hand.num_taxels();
    let placeholder = NodeFeature {
        ps: [0.0; 6],
        t: [0.0; 3],
        f: [0.0; 3],
        mask_flag: 0.0,
    };
    let mut nodes = vec![placeholder; n];
    let mut meta = vec![NodeMeta { sensor: 0, row: 0, col: 0 }; n];
    for &s in order {
        let pose = Pose6::from_frame(&frames[s])?;
        let off = hand.sensor_offset(s);
        for (k, (node, m)) in sensor_nodes(hand, s, &pose, &frame.readings[s], repr)
            .into_iter()
            .enumerate()
        {
            nodes[off + k] = node;
            meta[off + k] = m;
        }
    }
    Ok(TactileGraph {
        nodes,
        edges: hand_edges(hand),
        meta,
    })
}

pub fn build_graph(frame: &TactileFrame, hand: &Hand, repr: Representation) -> Result<TactileGraph> {
    let order: Vec<usize> = (0..hand.num_sensors()).collect();
    build_graph_in_order(frame, hand, repr, &order)
}

/// Which nodes had their force hidden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub ratio: f64,
    /// Sorted, unique node indices.
    pub masked: Vec<usize>,
    pub seed: u64,
}

impl MaskSpec {
    pub fn empty(seed: u64) -> Self {
        MaskSpec {
            ratio: 0.0,
            masked: Vec::new(),
            seed,
        }
    }
}

/// `ceil(ratio * n)`, with at least one node whenever `ratio > 0`.
pub fn masked_count(ratio: f64, n: usize) -> usize {
    if ratio <= 0.0 || n == 0 {
        return 0;
    }
    // absorb representation error such as 0.3 * 120 = 36.000000000000004
    let k = (ratio * n as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n)
}

/// Hides the force of `ceil(ratio * N)` nodes drawn uniformly without
/// replacement; masked nodes get `f = 0` and `mask_flag = 1`.
pub fn apply_mask(g: &TactileGraph, ratio: f64, seed: u64) -> Result<(TactileGraph, MaskSpec)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("mask ratio {ratio} outside [0, 1]")));
    }
    let n = g.len();
    let k = masked_count(ratio, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masked = rand::seq::index::sample(&mut rng, n, k).into_vec();
    masked.sort_unstable();
    let mut out = g.clone();
    for &i in &masked {
        out.nodes[i].f = [0.0; 3];
        out.nodes[i].mask_flag = 1.0;
    }
    Ok((out, MaskSpec { ratio, masked, seed }))
}

/// Sum of taxel forces rotated into the hand-base frame, accumulated in node
/// order.
pub fn net_force(frame: &TactileFrame, hand: &Hand) -> Result<Vec3> {
    frame.validate(hand)?;
    let taxels = hand.taxel_frames(&frame.q)?;
    let mut total = [0.0; 3];
    for (tf, f) in taxels.iter().zip(frame.forces()) {
        total = geometry::add(total, tf.apply_vector(*f));
    }
    Ok(total)
}


#[cfg(test)]
mod props {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    fn random_frame(hand: &Hand, seed: u64) -> TactileFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = (0..hand.dof()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut frame = TactileFrame::zeros(hand, q, 0.0);
        for f in frame.readings.iter_mut().flatten() {
            *f = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        }
        frame
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mask_hides_exactly_the_drawn_nodes(frame_seed in any::<u64>(), ratio in 0.0f64..=1.0, seed in any::<u64>()) {
            let hand = Hand::default_hand();
            let g = build_graph(&random_frame(&hand, frame_seed), &hand, Representation::Canonical).unwrap();
            let (m, spec) = apply_mask(&g, ratio, seed).unwrap();
            let expect = if ratio == 0.0 { 0 } else { ((ratio * 120.0) - 1e-9).ceil().max(1.0) as usize };
            prop_assert_eq!(spec.masked.len(), expect);
            prop_assert!(spec.masked.windows(2).all(|w| w[0] < w[1]));
            for (i, (a, b)) in g.nodes.iter().zip(&m.nodes).enumerate() {
                prop_assert_eq!(a.ps, b.ps);
                prop_assert_eq!(a.t, b.t);
                let hidden = spec.masked.binary_search(&i).is_ok();
                prop_assert_eq!(b.mask_flag, if hidden { 1.0 } else { 0.0 });
                prop_assert_eq!(b.f, if hidden { [0.0; 3] } else { a.f });
            }
        }

        #[test]
        fn net_force_is_linear(sa in any::<u64>(), sb in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let hand = Hand::default_hand();
            let a = random_frame(&hand, sa);
            let mut b = random_frame(&hand, sb);
            b.q = a.q.clone();
            let mut mix = a.clone();
            for (m, (fa, fb)) in mix.readings.iter_mut().flatten().zip(a.forces().zip(b.forces())) {
                *m = [0, 1, 2].map(|k| alpha * fa[k] + beta * fb[k]);
            }
            let (na, nb, nm) = (net_force(&a, &hand).unwrap(), net_force(&b, &hand).unwrap(), net_force(&mix, &hand).unwrap());
            let expect = [0, 1, 2].map(|k| alpha * na[k] + beta * nb[k]);
            let err = geometry::norm(geometry::sub(nm, expect));
            prop_assert!(err <= 1e-12 * geometry::norm(expect).max(1.0), "{err}");
        }

        #[test]
        fn build_graph_is_deterministic(seed in any::<u64>()) {
            let hand = Hand::default_hand();
            let frame = random_frame(&hand, seed);
            let a = build_graph(&frame, &hand, Representation::Canonical).unwrap();
            let b = build_graph(&frame, &hand, Representation::Canonical).unwrap();
            prop_assert_eq!(a.feature_matrix().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.feature_matrix().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
