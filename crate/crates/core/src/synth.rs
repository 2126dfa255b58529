//! Synthetic play data from a penalty-contact model.
//!
//! A probe (sphere or bounded plane) is driven against the hand along a pose
//! trajectory while the hand follows a joint trajectory. Each taxel that
//! penetrates the probe by `delta` reports a normal force `k * delta` along
//! its local `+z`, plus Coulomb-like friction `mu * k * delta` along the
//! tangential slip direction. Forces are then blurred across each sensor
//! grid with a normalized Gaussian kernel, which correlates neighbouring
//! taxels. Labels (net forces) come from [`crate::graph::net_force`], so they
//! are exact.
//!
//! Episodes are seeded independently from `(seed, episode index)`; datasets
//! are identical whether generated sequentially or in parallel.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Frame, Pose6, RotVec, Vec3};
use crate::graph::{net_force, TactileFrame};
use crate::hand::Hand;
use crate::par::{self, Exec};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Penetrations below this count as no contact.
const CONTACT_EPS: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Probe {
    Sphere {
        radius: f64,
    },
    /// Rigid slab whose contact face has outward `normal` (probe frame) and
    /// lateral half-extent `half_extent`; taxels deeper than `thickness`
    /// are behind the slab and untouched.
    Plane {
        normal: Vec3,
        half_extent: f64,
        thickness: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactScenario {
    pub probe: Probe,
    /// Probe pose per frame, hand-base frame.
    pub trajectory: Vec<Pose6>,
    /// N/m
    pub stiffness: f64,
    pub friction: f64,
    /// Gaussian smoothing width across each sensor grid, meters.
    pub smoothing: f64,
    /// Uniform jitter added to each probe position, meters.
    pub probe_jitter: f64,
    /// Uniform perturbation added to each joint angle, radians.
    pub joint_noise: f64,
}

impl ContactScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if !(self.stiffness.is_finite() && self.stiffness > 0.0) {
            return bad(format!("stiffness must be > 0, got {}", self.stiffness));
        }
        if !(self.friction.is_finite() && self.friction >= 0.0) {
            return bad(format!("friction must be >= 0, got {}", self.friction));
        }
        if !(self.smoothing.is_finite() && self.smoothing >= 0.0) {
            return bad(format!("smoothing must be >= 0, got {}", self.smoothing));
        }
        if !(self.probe_jitter >= 0.0 && self.joint_noise >= 0.0) {
            return bad("jitter and joint noise must be >= 0".into());
        }
        match self.probe {
            Probe::Sphere { radius } if !(radius.is_finite() && radius > 0.0) => {
                return bad(format!("sphere radius must be > 0, got {radius}"));
            }
            Probe::Plane {
                normal,
                half_extent,
                thickness,
            } => {
                if (geometry::norm(normal) - 1.0).abs() > 1e-9 {
                    return bad(format!("plane normal {normal:?} is not unit length"));
                }
                if !(half_extent > 0.0 && thickness > 0.0) {
                    return bad("plane extent and thickness must be > 0".into());
                }
            }
            _ => {}
        }
        if self.trajectory.is_empty() {
            return bad("probe trajectory is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub index: usize,
    pub seed: u64,
    pub frames: Vec<TactileFrame>,
    pub net_force_truth: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: u32,
    pub hand_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub episodes: Vec<Episode>,
}

/// Borrowed view of one frame with its label.
#[derive(Debug, Clone, Copy)]
pub struct LabeledFrame<'a> {
    pub episode: usize,
    pub step: usize,
    pub frame: &'a TactileFrame,
    pub net_force: Vec3,
}

impl Dataset {
    pub fn num_frames(&self) -> usize {
        self.episodes.iter().map(|e| e.frames.len()).sum()
    }

    /// Frames in (episode, step) order.
    pub fn frames(&self) -> impl Iterator<Item = LabeledFrame<'_>> {
        self.episodes.iter().flat_map(|e| {
            e.frames
                .iter()
                .zip(&e.net_force_truth)
                .enumerate()
                .map(move |(step, (frame, nf))| LabeledFrame {
                    episode: e.index,
                    step,
                    frame,
                    net_force: *nf,
                })
        })
    }

    pub fn check_hand(&self, hand: &Hand) -> Result<()> {
        if self.header.hand_hash != hand.hash() {
            return Err(Error::config(format!(
                "dataset was generated for hand {} but the configured hand is {}",
                self.header.hand_hash,
                hand.hash()
            )));
        }
        Ok(())
    }

    pub fn summary(&self) -> DatasetSummary {
        let mut frames = 0usize;
        let mut contact_frames = 0usize;
        let mut taxels = 0usize;
        let mut force_norm_sum = 0.0;
        let mut net_norm_sum = 0.0;
        for lf in self.frames() {
            frames += 1;
            let mut touched = false;
            for f in lf.frame.forces() {
                let n = geometry::norm(*f);
                force_norm_sum += n;
                taxels += 1;
                touched |= n > 0.0;
            }
            contact_frames += usize::from(touched);
            net_norm_sum += geometry::norm(lf.net_force);
        }
        DatasetSummary {
            episodes: self.episodes.len(),
            frames,
            contact_fraction: contact_frames as f64 / frames.max(1) as f64,
            mean_taxel_force: force_norm_sum / taxels.max(1) as f64,
            mean_net_force: net_norm_sum / frames.max(1) as f64,
        }
    }

    pub fn write_jsonl<W: Write>(&self, hand: &Hand, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        writeln!(w).map_err(|e| Error::io("<dataset>", e))?;
        for lf in self.frames() {
            let forces: BTreeMap<&str, &Vec<Vec3>> = lf
                .frame
                .readings
                .iter()
                .enumerate()
                .map(|(s, grid)| (hand.sensor_id(s), grid))
                .collect();
            let rec = FrameRecordOut {
                episode: lf.episode,
                step: lf.step,
                timestamp: lf.frame.timestamp,
                q: &lf.frame.q,
                forces,
                net_force: lf.net_force,
            };
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w).map_err(|e| Error::io("<dataset>", e))?;
        }
        Ok(())
    }

    pub fn to_jsonl_bytes(&self, hand: &Hand) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_jsonl(hand, &mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, hand: &Hand, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(hand, &mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Parses a dataset and checks it against `hand`: hash, shapes, and that
    /// every stored net force equals the recomputed one.
    pub fn read_jsonl<R: BufRead>(hand: &Hand, r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Format {
                what: "dataset",
                msg: "empty file".into(),
            })?
            .map_err(|e| Error::io("<dataset>", e))?;
        let raw: serde_json::Value = serde_json::from_str(&header_line)?;
        if let Some(v) = raw.get("version").and_then(|v| v.as_u64()) {
            if v != u64::from(DATASET_FORMAT_VERSION) {
                return Err(Error::UnsupportedVersion {
                    what: "dataset",
                    found: v as u32,
                    expected: DATASET_FORMAT_VERSION,
                });
            }
        }
        let header: DatasetHeader = serde_json::from_value(raw)?;
        let ds = Dataset {
            header,
            episodes: Vec::new(),
        };
        ds.check_hand(hand)?;
        let mut ds = ds;

        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("<dataset>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FrameRecordIn = serde_json::from_str(&line)?;
            let fmt_err = |msg: String| Error::Format {
                what: "dataset",
                msg: format!("line {}: {msg}", lineno + 2),
            };
            if rec.forces.len() != hand.num_sensors() {
                return Err(fmt_err(format!(
                    "{} sensors in record, hand has {}",
                    rec.forces.len(),
                    hand.num_sensors()
                )));
            }
            let mut readings = vec![Vec::new(); hand.num_sensors()];
            for (id, grid) in rec.forces {
                let s = hand
                    .sensor_index(&id)
                    .ok_or_else(|| fmt_err(format!("unknown sensor {id}")))?;
                readings[s] = grid;
            }
            let frame = TactileFrame {
                timestamp: rec.timestamp,
                q: rec.q,
                readings,
            };
            let recomputed = net_force(&frame, hand).map_err(|e| fmt_err(e.to_string()))?;
            let scale = 1.0 + geometry::norm(recomputed);
            if geometry::norm(geometry::sub(recomputed, rec.net_force)) > 1e-12 * scale {
                return Err(fmt_err(format!(
                    "stored net force {:?} disagrees with recomputed {:?}",
                    rec.net_force, recomputed
                )));
            }
            let new_episode = ds.episodes.last().is_none_or(|e| e.index != rec.episode);
            if new_episode {
                if ds.episodes.iter().any(|e| e.index == rec.episode) {
                    return Err(fmt_err(format!("episode {} is not contiguous", rec.episode)));
                }
                ds.episodes.push(Episode {
                    index: rec.episode,
                    seed: derive_seed(ds.header.seed, rec.episode as u64),
                    frames: Vec::new(),
                    net_force_truth: Vec::new(),
                });
            }
            let ep = ds.episodes.last_mut().expect("pushed above");
            if rec.step != ep.frames.len() {
                return Err(fmt_err(format!(
                    "episode {} step {} out of order",
                    rec.episode, rec.step
                )));
            }
            ep.frames.push(frame);
            ep.net_force_truth.push(rec.net_force);
        }
        Ok(ds)
    }

    pub fn load(hand: &Hand, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Dataset::read_jsonl(hand, BufReader::new(file))
    }
}

#[derive(Serialize)]
struct FrameRecordOut<'a> {
    episode: usize,
    step: usize,
    timestamp: f64,
    q: &'a [f64],
    forces: BTreeMap<&'a str, &'a Vec<Vec3>>,
    net_force: Vec3,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecordIn {
    episode: usize,
    step: usize,
    timestamp: f64,
    q: Vec<f64>,
    forces: BTreeMap<String, Vec<Vec3>>,
    net_force: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub episodes: usize,
    pub frames: usize,
    /// Fraction of frames with at least one non-zero taxel force.
    pub contact_fraction: f64,
    /// Mean over all taxel readings of the force magnitude, N.
    pub mean_taxel_force: f64,
    pub mean_net_force: f64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `index` under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

fn smoothing_kernel(positions: &[Vec3], sigma: f64) -> Vec<Vec<f64>> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    positions
        .iter()
        .map(|a| {
            let w: Vec<f64> = positions
                .iter()
                .map(|b| {
                    let d = geometry::sub(*a, *b);
                    (-geometry::dot(d, d) * inv).exp()
                })
                .collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

fn penetration(probe: &Probe, pose: &Frame, x: Vec3) -> f64 {
    match *probe {
        Probe::Sphere { radius } => radius - geometry::norm(geometry::sub(x, pose.t)),
        Probe::Plane {
            normal,
            half_extent,
            thickness,
        } => {
            let n = pose.rot.apply(normal);
            let rel = geometry::sub(x, pose.t);
            let depth = -geometry::dot(rel, n);
            let lateral = geometry::sub(rel, geometry::scale(n, -depth));
            if depth > thickness || geometry::norm(lateral) > half_extent {
                0.0
            } else {
                depth
            }
        }
    }
}

/// Runs the penalty-contact model along a joint trajectory.
pub fn simulate_contact(
    scenario: &ContactScenario,
    hand: &Hand,
    q_trajectory: &[Vec<f64>],
    seed: u64,
    dt: f64,
) -> Result<Episode> {
    scenario.validate()?;
    if q_trajectory.len() != scenario.trajectory.len() {
        return Err(Error::config(format!(
            "joint trajectory has {} frames, probe trajectory {}",
            q_trajectory.len(),
            scenario.trajectory.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernels: Vec<Option<Vec<Vec<f64>>>> = (0..hand.num_sensors())
        .map(|s| {
            (scenario.smoothing > 0.0)
                .then(|| smoothing_kernel(&hand.sensor_layout(s).positions(), scenario.smoothing))
        })
        .collect();

    let mut frames = Vec::with_capacity(q_trajectory.len());
    let mut truth = Vec::with_capacity(q_trajectory.len());
    let mut prev: Option<(Vec3, Vec<Frame>)> = None;
    for (t, (q_nominal, probe_pose)) in q_trajectory.iter().zip(&scenario.trajectory).enumerate() {
        let q: Vec<f64> = q_nominal
            .iter()
            .map(|v| v + jitter(&mut rng, scenario.joint_noise))
            .collect();
        let mut probe = probe_pose.to_frame();
        for k in 0..3 {
            probe.t[k] += jitter(&mut rng, scenario.probe_jitter);
        }
        let taxels = hand.taxel_frames(&q)?;

        let mut raw = Vec::with_capacity(taxels.len());
        for (i, tf) in taxels.iter().enumerate() {
            let delta = penetration(&scenario.probe, &probe, tf.t);
            if delta <= CONTACT_EPS {
                raw.push([0.0; 3]);
                continue;
            }
            let fn_mag = scenario.stiffness * delta;
            let mut local = [0.0, 0.0, fn_mag];
            if scenario.friction > 0.0 {
                if let Some((prev_probe, prev_taxels)) = &prev {
                    let slip = geometry::sub(
                        geometry::sub(probe.t, *prev_probe),
                        geometry::sub(tf.t, prev_taxels[i].t),
                    );
                    let n = tf.rot.apply([0.0, 0.0, 1.0]);
                    let tangential = geometry::sub(slip, geometry::scale(n, geometry::dot(slip, n)));
                    let len = geometry::norm(tangential);
                    if len > 1e-12 {
                        let world = geometry::scale(tangential, scenario.friction * fn_mag / len);
                        local = geometry::add(local, tf.rot.apply_transpose(world));
                    }
                }
            }
            raw.push(local);
        }

        let mut readings = Vec::with_capacity(hand.num_sensors());
        for (s, kernel) in kernels.iter().enumerate() {
            let off = hand.sensor_offset(s);
            let len = hand.sensor_layout(s).len();
            let block = &raw[off..off + len];
            let grid = match kernel {
                None => block.to_vec(),
                Some(k) => k
                    .iter()
                    .map(|row| {
                        let mut acc = [0.0; 3];
                        for (w, f) in row.iter().zip(block) {
                            acc = geometry::add(acc, geometry::scale(*f, *w));
                        }
                        acc
                    })
                    .collect(),
            };
            readings.push(grid);
        }

        let frame = TactileFrame {
            timestamp: t as f64 * dt,
            q,
            readings,
        };
        truth.push(net_force(&frame, hand)?);
        frames.push(frame);
        prev = Some((probe.t, taxels));
    }
    Ok(Episode {
        index: 0,
        seed,
        frames,
        net_force_truth: truth,
    })
}

fn jitter(rng: &mut ChaCha8Rng, amp: f64) -> f64 {
    if amp > 0.0 {
        rng.gen_range(-amp..amp)
    } else {
        0.0
    }
}

/// Parameters of the random scenario mix. The values are fixtures chosen to
/// give frequent, spatially smooth contact, not measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDistribution {
    pub sphere_fraction: f64,
    pub sphere_radius: [f64; 2],
    pub plane_half_extent: f64,
    pub plane_thickness: f64,
    pub stiffness: [f64; 2],
    pub friction: [f64; 2],
    /// Peak penetration at the contact point, meters.
    pub depth: [f64; 2],
    /// Smoothing width as a multiple of the contacted layout's pitch.
    pub smoothing_pitch_factor: f64,
    /// Maximum tilt of the approach direction from the sensor normal, rad.
    pub approach_tilt: f64,
    /// Maximum slide of the contact point over an episode, meters.
    pub slide: f64,
    pub probe_jitter: f64,
    pub joint_noise: f64,
    /// Per-joint drift over an episode, radians.
    pub joint_drift: f64,
    pub dt: f64,
}

impl Default for ScenarioDistribution {
    fn default() -> Self {
        ScenarioDistribution {
            sphere_fraction: 0.7,
            sphere_radius: [0.005, 0.015],
            plane_half_extent: 0.012,
            plane_thickness: 0.004,
            stiffness: [300.0, 600.0],
            friction: [0.1, 0.5],
            depth: [0.0008, 0.002],
            smoothing_pitch_factor: 1.5,
            approach_tilt: 0.5,
            slide: 0.002,
            probe_jitter: 0.0001,
            joint_noise: 0.01,
            joint_drift: 0.1,
            dt: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub num_episodes: usize,
    pub frames_per_episode: usize,
    pub distribution: ScenarioDistribution,
}

impl Default for GenerateSpec {
    fn default() -> Self {
        GenerateSpec {
            num_episodes: 100,
            frames_per_episode: 20,
            distribution: ScenarioDistribution::default(),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.gen_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Nearest-neighbour spacing of a layout (single-taxel layouts report 0).
fn layout_pitch(hand: &Hand, sensor: usize) -> f64 {
    let pts = hand.sensor_layout(sensor).positions();
    let mut best = f64::INFINITY;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            best = best.min(geometry::norm(geometry::sub(*a, *b)));
        }
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

fn random_posture(rng: &mut ChaCha8Rng, dof: usize) -> Vec<f64> {
    (0..dof)
        .map(|j| match j % 4 {
            0 => rng.gen_range(-0.15..0.15),
            _ => rng.gen_range(0.0..0.7),
        })
        .collect()
}

/// Draws one episode's joint trajectory and contact scenario.
pub fn sample_episode_setup(
    dist: &ScenarioDistribution,
    hand: &Hand,
    frames: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(ContactScenario, Vec<Vec<f64>>)> {
    let dof = hand.dof();
    let q0 = random_posture(rng, dof);
    let drift: Vec<f64> = (0..dof).map(|_| jitter(rng, dist.joint_drift)).collect();
    let q_traj: Vec<Vec<f64>> = (0..frames)
        .map(|t| {
            let s = if frames > 1 { t as f64 / (frames - 1) as f64 } else { 0.0 };
            q0.iter().zip(&drift).map(|(a, d)| a + s * d).collect()
        })
        .collect();

    let sensor = rng.gen_range(0..hand.num_sensors());
    let layout = hand.sensor_layout(sensor);
    let pts = layout.positions();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &pts {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let contact_local = [
        rng.gen_range(lo[0]..=hi[0]),
        rng.gen_range(lo[1]..=hi[1]),
        hi[2],
    ];
    let slide_dir = rng.gen_range(0.0..std::f64::consts::TAU);
    let slide_len = rng.gen_range(0.0..=dist.slide);
    let slide = [slide_len * slide_dir.cos(), slide_len * slide_dir.sin(), 0.0];

    // approach direction in the sensor frame: +z tilted about a random
    // in-plane axis
    let tilt = rng.gen_range(0.0..=dist.approach_tilt);
    let tilt_axis = rng.gen_range(0.0..std::f64::consts::TAU);
    let tilt_rot = RotVec::new([tilt * tilt_axis.cos(), tilt * tilt_axis.sin(), 0.0])?.to_matrix();
    let approach = tilt_rot.apply([0.0, 0.0, 1.0]);

    let depth_peak = uniform(rng, dist.depth);
    let depth_offset = rng.gen_range(0.0..0.3) * depth_peak;
    let is_sphere = rng.gen_bool(dist.sphere_fraction.clamp(0.0, 1.0));
    let radius = uniform(rng, dist.sphere_radius);
    let probe = if is_sphere {
        Probe::Sphere { radius }
    } else {
        Probe::Plane {
            normal: [0.0, 0.0, -1.0],
            half_extent: dist.plane_half_extent,
            thickness: dist.plane_thickness,
        }
    };
    let stiffness = uniform(rng, dist.stiffness);
    let friction = uniform(rng, dist.friction);

    let mut trajectory = Vec::with_capacity(frames);
    for (t, q) in q_traj.iter().enumerate() {
        let s = if frames > 1 { t as f64 / (frames - 1) as f64 } else { 0.5 };
        let depth = depth_peak * (std::f64::consts::PI * (t as f64 + 1.0) / (frames as f64 + 1.0)).sin()
            - depth_offset;
        let sensor_frame = hand.sensor_frames(q)?[sensor];
        let c_local = geometry::add(contact_local, geometry::scale(slide, s));
        let c = sensor_frame.apply_point(c_local);
        let a = sensor_frame.apply_vector(approach);
        let pose = match probe {
            Probe::Sphere { radius } => Pose6::from_translation(geometry::add(c, geometry::scale(a, radius - depth))),
            Probe::Plane { .. } => {
                // probe frame z is the approach direction, so the face normal
                // (-z) points back at the sensor
                let rot = sensor_frame.rot.mul(&tilt_rot);
                Pose6::from_frame(&Frame {
                    rot,
                    t: geometry::sub(c, geometry::scale(a, depth)),
                })?
            }
        };
        trajectory.push(pose);
    }

    let smoothing = dist.smoothing_pitch_factor * layout_pitch(hand, sensor);
    Ok((
        ContactScenario {
            probe,
            trajectory,
            stiffness,
            friction,
            smoothing,
            probe_jitter: dist.probe_jitter,
            joint_noise: dist.joint_noise,
        },
        q_traj,
    ))
}

pub fn generate_episode(spec: &GenerateSpec, hand: &Hand, seed: u64, index: usize) -> Result<Episode> {
    let ep_seed = derive_seed(seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(ep_seed);
    let (scenario, q_traj) = sample_episode_setup(&spec.distribution, hand, spec.frames_per_episode, &mut rng)?;
    let mut ep = simulate_contact(&scenario, hand, &q_traj, derive_seed(ep_seed, 1), spec.distribution.dt)?;
    ep.index = index;
    ep.seed = ep_seed;
    Ok(ep)
}

pub fn generate_dataset(spec: &GenerateSpec, hand: &Hand, seed: u64, exec: Exec) -> Result<Dataset> {
    if spec.num_episodes == 0 || spec.frames_per_episode == 0 {
        return Err(Error::invalid("episode and frame counts must be >= 1"));
    }
    let episodes = par::map_indexed(exec, spec.num_episodes, |i| generate_episode(spec, hand, seed, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        header: DatasetHeader {
            version: DATASET_FORMAT_VERSION,
            hand_hash: hand.hash().to_string(),
            seed,
        },
        episodes,
    })
}


#[cfg(test)]
mod props {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn forces_scale_with_stiffness(seed in any::<u64>(), k in 50.0f64..1000.0, factor in 0.1f64..10.0) {
            let hand = Hand::default_hand();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut scenario, q) = sample_episode_setup(&ScenarioDistribution::default(), &hand, 4, &mut rng).unwrap();
            scenario.stiffness = k;
            let a = simulate_contact(&scenario, &hand, &q, seed, 0.05).unwrap();
            scenario.stiffness = k * factor;
            let b = simulate_contact(&scenario, &hand, &q, seed, 0.05).unwrap();
            for (fa, fb) in a.frames.iter().zip(&b.frames) {
                for (x, y) in fa.forces().zip(fb.forces()) {
                    for i in 0..3 {
                        prop_assert!((factor * x[i] - y[i]).abs() <= 1e-9 * y[i].abs().max(1.0));
                    }
                }
            }
        }

        #[test]
        fn probe_far_away_gives_zero_forces(seed in any::<u64>()) {
            let hand = Hand::default_hand();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut scenario, q) = sample_episode_setup(&ScenarioDistribution::default(), &hand, 3, &mut rng).unwrap();
            for p in &mut scenario.trajectory {
                p.t = geometry::add(p.t, [0.0, 0.0, 5.0]);
            }
            let ep = simulate_contact(&scenario, &hand, &q, seed, 0.05).unwrap();
            for frame in &ep.frames {
                prop_assert!(frame.forces().all(|f| *f == [0.0; 3]));
            }
            prop_assert!(ep.net_force_truth.iter().all(|n| *n == [0.0; 3]));
        }

        #[test]
        fn episode_content_depends_only_on_its_index(seed in any::<u64>()) {
            let hand = Hand::default_hand();
            let spec = GenerateSpec {
                num_episodes: 4,
                frames_per_episode: 2,
                ..Default::default()
            };
            let ds = generate_dataset(&spec, &hand, seed, Exec::Sequential).unwrap();
            for i in 0..4 {
                prop_assert_eq!(&ds.episodes[i], &generate_episode(&spec, &hand, seed, i).unwrap());
            }
        }
    }
}
