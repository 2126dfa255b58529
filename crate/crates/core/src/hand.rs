//! Hand description: taxel layouts, kinematic chain, sensor mounts.
//!
//! A [`Hand`] is a validated [`HandDescription`]. It answers forward
//! kinematics queries (links, sensor origins, individual taxels) and holds
//! the canonical taxel coordinates of every layout.
//!
//! Links are named by the `child` of the joint that produces them; the root
//! link is [`BASE_LINK`]. Joints must be listed parent-first, which makes the
//! chain acyclic by construction and fixes the joint-angle ordering.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{self, Frame, Pose6, RotVec, Vec3};

pub const BASE_LINK: &str = "base";
pub const HAND_FORMAT_VERSION: u32 = 1;

/// Upper bound on nearest-neighbour taxel spacing, meters.
pub const MAX_TAXEL_SPACING: f64 = 0.004;

/// Bounding-box diagonals shorter than this canonicalize to the origin.
const DEGENERATE_DIAGONAL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorType {
    Fingertip,
    Fingerpad,
}

/// Grid of taxels in a sensor frame. Taxels are stored row-major; each
/// taxel's local `+z` axis is its outward surface normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxelLayout {
    pub name: String,
    pub sensor_type: SensorType,
    pub rows: usize,
    pub cols: usize,
    pub taxels: Vec<Pose6>,
}

impl TaxelLayout {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.taxels.iter().map(|p| p.t).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::config(format!(
                "layout {}: grid must be at least 1x1, got {}x{}",
                self.name, self.rows, self.cols
            )));
        }
        if self.taxels.len() != self.len() {
            return Err(Error::config(format!(
                "layout {}: {} taxel poses for a {}x{} grid",
                self.name,
                self.taxels.len(),
                self.rows,
                self.cols
            )));
        }
        let pts = self.positions();
        if pts.len() > 1 {
            for (i, a) in pts.iter().enumerate() {
                let mut nearest = f64::INFINITY;
                for (j, b) in pts.iter().enumerate() {
                    if i != j {
                        nearest = nearest.min(geometry::norm(geometry::sub(*a, *b)));
                    }
                }
                if nearest <= DEGENERATE_DIAGONAL {
                    return Err(Error::config(format!(
                        "layout {}: taxel {i} coincides with another taxel",
                        self.name
                    )));
                }
                if nearest >= MAX_TAXEL_SPACING {
                    return Err(Error::config(format!(
                        "layout {}: taxel {i} nearest-neighbour spacing {:.4} m exceeds {MAX_TAXEL_SPACING} m",
                        self.name, nearest
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Canonical taxel coordinates of one layout, row-major, each component in
/// `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalCoords {
    pub rows: usize,
    pub cols: usize,
    pub coords: Vec<Vec3>,
}

/// Maps taxel positions into the unit frame: center on the bounding box,
/// then scale uniformly so the bounding-box diagonal has length 2.
pub fn canonicalize(layout: &TaxelLayout) -> CanonicalCoords {
    CanonicalCoords {
        rows: layout.rows,
        cols: layout.cols,
        coords: canonicalize_points(&layout.positions()),
    }
}

pub fn canonicalize_points(points: &[Vec3]) -> Vec<Vec3> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let diagonal = geometry::norm(geometry::sub(hi, lo));
    if points.is_empty() || diagonal < DEGENERATE_DIAGONAL {
        return vec![[0.0; 3]; points.len()];
    }
    let center = geometry::scale(geometry::add(lo, hi), 0.5);
    let s = 2.0 / diagonal;
    points
        .iter()
        .map(|p| {
            let v = geometry::scale(geometry::sub(*p, center), s);
            // rounding can push an extreme component a few ulps past 1
            [v[0].clamp(-1.0, 1.0), v[1].clamp(-1.0, 1.0), v[2].clamp(-1.0, 1.0)]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointType {
    Revolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    pub parent: String,
    pub child: String,
    pub origin: Pose6,
    pub axis: Vec3,
    #[serde(rename = "type")]
    pub kind: JointType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorMount {
    pub sensor: String,
    pub finger: String,
    pub layout: String,
    pub link: String,
    pub pose: Pose6,
}

/// On-disk hand description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandDescription {
    pub version: u32,
    pub layouts: Vec<TaxelLayout>,
    pub joints: Vec<JointSpec>,
    pub sensor_mounts: Vec<SensorMount>,
}

impl HandDescription {
    pub fn from_json(text: &str) -> Result<Self> {
        // check the version first so an old file fails with a clear message
        // rather than a schema error
        let raw: serde_json::Value = serde_json::from_str(text)?;
        if let Some(v) = raw.get("version").and_then(|v| v.as_u64()) {
            if v != u64::from(HAND_FORMAT_VERSION) {
                return Err(Error::UnsupportedVersion {
                    what: "hand description",
                    found: v as u32,
                    expected: HAND_FORMAT_VERSION,
                });
            }
        }
        Ok(serde_json::from_value(raw)?)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("hand description serializes");
        s.push('\n');
        s
    }

    /// SHA-256 over the compact JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("hand description serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Joint-angle vector, radians, ordered as the chain's joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HandConfig(pub Vec<f64>);

#[derive(Debug, Clone)]
struct ResolvedJoint {
    parent_link: usize,
    origin: Frame,
    axis: Vec3,
}

#[derive(Debug, Clone)]
struct ResolvedMount {
    link: usize,
    layout: usize,
    pose: Frame,
}

/// Validated hand with precomputed lookups and canonical coordinates.
#[derive(Debug, Clone)]
pub struct Hand {
    desc: HandDescription,
    hash: String,
    link_names: Vec<String>,
    joints: Vec<ResolvedJoint>,
    mounts: Vec<ResolvedMount>,
    canonical: Vec<CanonicalCoords>,
    taxel_local: Vec<Vec<Frame>>,
    sensor_offsets: Vec<usize>,
}

impl Hand {
    pub fn new(desc: HandDescription) -> Result<Self> {
        if desc.version != HAND_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "hand description",
                found: desc.version,
                expected: HAND_FORMAT_VERSION,
            });
        }
        let mut layout_index = HashMap::new();
        for (i, layout) in desc.layouts.iter().enumerate() {
            layout.validate()?;
            if layout_index.insert(layout.name.clone(), i).is_some() {
                return Err(Error::config(format!("duplicate layout name {}", layout.name)));
            }
        }

        let mut link_names = vec![BASE_LINK.to_string()];
        let mut link_index: HashMap<String, usize> = HashMap::from([(BASE_LINK.to_string(), 0)]);
        let mut joints = Vec::with_capacity(desc.joints.len());
        let mut joint_names = HashMap::new();
        for joint in &desc.joints {
            if joint_names.insert(joint.name.clone(), ()).is_some() {
                return Err(Error::config(format!("duplicate joint name {}", joint.name)));
            }
            let parent_link = *link_index.get(&joint.parent).ok_or_else(|| {
                Error::config(format!(
                    "joint {}: parent link {} is not defined by an earlier joint",
                    joint.name, joint.parent
                ))
            })?;
            if link_index.contains_key(&joint.child) {
                return Err(Error::config(format!(
                    "joint {}: link {} already has a parent",
                    joint.name, joint.child
                )));
            }
            let n = geometry::norm(joint.axis);
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::config(format!(
                    "joint {}: axis {:?} is not unit length",
                    joint.name, joint.axis
                )));
            }
            link_index.insert(joint.child.clone(), link_names.len());
            link_names.push(joint.child.clone());
            joints.push(ResolvedJoint {
                parent_link,
                origin: joint.origin.to_frame(),
                axis: joint.axis,
            });
        }

        let mut mounts = Vec::with_capacity(desc.sensor_mounts.len());
        let mut sensor_ids = HashMap::new();
        for m in &desc.sensor_mounts {
            if sensor_ids.insert(m.sensor.clone(), ()).is_some() {
                return Err(Error::config(format!("duplicate sensor id {}", m.sensor)));
            }
            let link = *link_index.get(&m.link).ok_or_else(|| {
                Error::config(format!("sensor {}: unknown mount link {}", m.sensor, m.link))
            })?;
            let layout = *layout_index.get(&m.layout).ok_or_else(|| {
                Error::config(format!("sensor {}: unknown layout {}", m.sensor, m.layout))
            })?;
            mounts.push(ResolvedMount {
                link,
                layout,
                pose: m.pose.to_frame(),
            });
        }
        if mounts.is_empty() {
            return Err(Error::config("hand has no sensors"));
        }

        let canonical = desc.layouts.iter().map(canonicalize).collect();
        let taxel_local = desc
            .layouts
            .iter()
            .map(|l| l.taxels.iter().map(Pose6::to_frame).collect())
            .collect();
        let mut sensor_offsets = Vec::with_capacity(mounts.len() + 1);
        let mut acc = 0;
        for m in &mounts {
            sensor_offsets.push(acc);
            acc += desc.layouts[m.layout].len();
        }
        sensor_offsets.push(acc);

        Ok(Hand {
            hash: desc.hash(),
            desc,
            link_names,
            joints,
            mounts,
            canonical,
            taxel_local,
            sensor_offsets,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Hand::new(HandDescription::from_json(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Hand::from_json(&text)
    }

    pub fn default_hand() -> Self {
        Hand::new(default_description()).expect("built-in hand description is valid")
    }

    pub fn description(&self) -> &HandDescription {
        &self.desc
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn num_sensors(&self) -> usize {
        self.mounts.len()
    }

    pub fn num_taxels(&self) -> usize {
        *self.sensor_offsets.last().expect("offsets are non-empty")
    }

    pub fn sensor_id(&self, sensor: usize) -> &str {
        &self.desc.sensor_mounts[sensor].sensor
    }

    pub fn sensor_index(&self, id: &str) -> Option<usize> {
        self.desc.sensor_mounts.iter().position(|m| m.sensor == id)
    }

    pub fn sensor_layout(&self, sensor: usize) -> &TaxelLayout {
        &self.desc.layouts[self.mounts[sensor].layout]
    }

    /// Canonical coordinates of the layout mounted as `sensor`.
    pub fn sensor_canonical(&self, sensor: usize) -> &CanonicalCoords {
        &self.canonical[self.mounts[sensor].layout]
    }

    /// Global index of the first taxel of `sensor`.
    pub fn sensor_offset(&self, sensor: usize) -> usize {
        self.sensor_offsets[sensor]
    }

    pub fn link_names(&self) -> &[String] {
        &self.link_names
    }

    fn check_config(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::invalid(format!(
                "joint vector has {} entries, hand has {} joints",
                q.len(),
                self.dof()
            )));
        }
        if let Some(bad) = q.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("joint angle {bad} is not finite")));
        }
        Ok(())
    }

    /// Link frames in hand-base coordinates, indexed like [`Hand::link_names`].
    pub fn link_frames(&self, q: &[f64]) -> Result<Vec<Frame>> {
        self.check_config(q)?;
        let mut frames = Vec::with_capacity(self.link_names.len());
        frames.push(Frame::IDENTITY);
        for (joint, &angle) in self.joints.iter().zip(q) {
            let spin = Frame {
                rot: geometry::rotvec_to_matrix(geometry::scale(joint.axis, angle))?,
                t: [0.0; 3],
            };
            let f = frames[joint.parent_link].compose(&joint.origin).compose(&spin);
            frames.push(f);
        }
        Ok(frames)
    }

    pub fn forward_kinematics(&self, q: &HandConfig) -> Result<BTreeMap<String, Pose6>> {
        let frames = self.link_frames(&q.0)?;
        self.link_names
            .iter()
            .zip(&frames)
            .map(|(name, f)| Ok((name.clone(), Pose6::from_frame(f)?)))
            .collect()
    }

    /// Sensor origin frames (`P^s`) in hand-base coordinates, in mount order.
    pub fn sensor_frames(&self, q: &[f64]) -> Result<Vec<Frame>> {
        let links = self.link_frames(q)?;
        Ok(self
            .mounts
            .iter()
            .map(|m| links[m.link].compose(&m.pose))
            .collect())
    }

    pub fn sensor_poses(&self, q: &HandConfig) -> Result<Vec<(String, Pose6)>> {
        let frames = self.sensor_frames(&q.0)?;
        self.desc
            .sensor_mounts
            .iter()
            .zip(&frames)
            .map(|(m, f)| Ok((m.sensor.clone(), Pose6::from_frame(f)?)))
            .collect()
    }

    /// Taxel frames in hand-base coordinates, flattened sensor by sensor in
    /// row-major order.
    pub fn taxel_frames(&self, q: &[f64]) -> Result<Vec<Frame>> {
        let sensors = self.sensor_frames(q)?;
        let mut out = Vec::with_capacity(self.num_taxels());
        for (m, sf) in self.mounts.iter().zip(&sensors) {
            out.extend(self.taxel_local[m.layout].iter().map(|t| sf.compose(t)));
        }
        Ok(out)
    }

    pub fn taxel_poses(&self, q: &HandConfig) -> Result<Vec<Pose6>> {
        self.taxel_frames(&q.0)?
            .iter()
            .map(Pose6::from_frame)
            .collect()
    }
}

/// Planar grid: rows along local x, columns along local y, normals `+z`.
pub fn planar_layout(name: &str, sensor_type: SensorType, rows: usize, cols: usize, pitch: f64) -> TaxelLayout {
    let r0 = (rows as f64 - 1.0) / 2.0;
    let c0 = (cols as f64 - 1.0) / 2.0;
    let taxels = (0..rows)
        .flat_map(|r| {
            (0..cols).map(move |c| {
                Pose6::from_translation([(r as f64 - r0) * pitch, (c as f64 - c0) * pitch, 0.0])
            })
        })
        .collect();
    TaxelLayout {
        name: name.to_string(),
        sensor_type,
        rows,
        cols,
        taxels,
    }
}

/// Grid wrapped on a cylinder whose axis is local x; adjacent columns differ
/// by `step` radians of surface normal, with arc-length spacing `pitch`.
pub fn curved_layout(
    name: &str,
    sensor_type: SensorType,
    rows: usize,
    cols: usize,
    pitch: f64,
    step: f64,
) -> TaxelLayout {
    let radius = pitch / step;
    let r0 = (rows as f64 - 1.0) / 2.0;
    let c0 = (cols as f64 - 1.0) / 2.0;
    let taxels = (0..rows)
        .flat_map(|r| {
            (0..cols).map(move |c| {
                let theta = (c as f64 - c0) * step;
                Pose6 {
                    t: [
                        (r as f64 - r0) * pitch,
                        radius * theta.sin(),
                        -radius * (1.0 - theta.cos()),
                    ],
                    // rotates +z onto (0, sin theta, cos theta)
                    r: RotVec::new([-theta, 0.0, 0.0]).expect("finite"),
                }
            })
        })
        .collect();
    TaxelLayout {
        name: name.to_string(),
        sensor_type,
        rows,
        cols,
        taxels,
    }
}

/// Built-in fixture: four fingers with four revolute joints each and a
/// fingerpad plus a fingertip sensor per finger. Dimensions are plausible,
/// not measured.
pub fn default_description() -> HandDescription {
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    let layouts = vec![
        curved_layout("fingertip", SensorType::Fingertip, 3, 5, 0.0025, 10f64.to_radians()),
        planar_layout("fingerpad", SensorType::Fingerpad, 3, 5, 0.0030),
    ];

    // index, middle, ring along the palm edge; thumb on the side, turned in
    let bases = [
        Pose6::from_translation([0.095, 0.040, 0.0]),
        Pose6::from_translation([0.100, 0.000, 0.0]),
        Pose6::from_translation([0.095, -0.040, 0.0]),
        Pose6::new([0.030, 0.065, -0.015], [0.0, 0.35, 1.2]).expect("finite"),
    ];
    let y = [0.0, 1.0, 0.0];
    let z = [0.0, 0.0, 1.0];
    // sensor z -> link -z (palm side), sensor y -> link x (along the finger)
    let sensor_facing = [PI * FRAC_1_SQRT_2, PI * FRAC_1_SQRT_2, 0.0];

    let mut joints = Vec::new();
    let mut mounts = Vec::new();
    for (f, base) in bases.iter().enumerate() {
        let link = |k: usize| format!("f{f}_link{k}");
        let spec = |name: &str, parent: String, child: String, origin: Pose6, axis: Vec3| JointSpec {
            name: format!("f{f}_{name}"),
            parent,
            child,
            origin,
            axis,
            kind: JointType::Revolute,
        };
        joints.push(spec("abduct", BASE_LINK.to_string(), link(0), *base, z));
        joints.push(spec("mcp", link(0), link(1), Pose6::from_translation([0.012, 0.0, 0.0]), y));
        joints.push(spec("pip", link(1), link(2), Pose6::from_translation([0.045, 0.0, 0.0]), y));
        joints.push(spec("dip", link(2), link(3), Pose6::from_translation([0.036, 0.0, 0.0]), y));

        mounts.push(SensorMount {
            sensor: format!("f{f}_pad"),
            finger: format!("f{f}"),
            layout: "fingerpad".into(),
            link: link(2),
            pose: Pose6::new([0.018, 0.0, -0.008], sensor_facing).expect("finite"),
        });
        mounts.push(SensorMount {
            sensor: format!("f{f}_tip"),
            finger: format!("f{f}"),
            layout: "fingertip".into(),
            link: link(3),
            pose: Pose6::new([0.020, 0.0, -0.007], sensor_facing).expect("finite"),
        });
    }

    HandDescription {
        version: HAND_FORMAT_VERSION,
        layouts,
        joints,
        sensor_mounts: mounts,
    }
}
