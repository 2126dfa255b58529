//! Rigid-body math: rotation vectors, rotation matrices and 6D poses.
//!
//! Rotations are carried as rotation vectors (unit axis scaled by the angle
//! in radians) in canonical form, `|r| <= pi`. A [`Pose6`] is a translation
//! plus a [`RotVec`], six numbers total, and acts on points as
//! `x -> R x + t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Name of the rotation parameterization used for every 6D pose in node
/// features. Echoed into run metadata so that experiments are comparable.
pub const ROTATION_PARAMETERIZATION: &str = "rotation-vector";

/// Below this angle the Rodrigues coefficients are replaced by their Taylor
/// expansions.
const SMALL_ANGLE: f64 = 1e-8;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Rotation vector in canonical form (`|r| <= pi`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec3", into = "Vec3")]
pub struct RotVec(Vec3);

impl RotVec {
    pub const ZERO: RotVec = RotVec([0.0; 3]);

    /// Builds a canonical rotation vector, wrapping angles above pi onto the
    /// equivalent rotation about the flipped axis.
    pub fn new(r: Vec3) -> Result<Self> {
        if !all_finite(&r) {
            return Err(Error::invalid(format!("non-finite rotation vector {r:?}")));
        }
        let theta = norm(r);
        if theta <= std::f64::consts::PI {
            return Ok(RotVec(r));
        }
        let axis = scale(r, 1.0 / theta);
        let tau = 2.0 * std::f64::consts::PI;
        let mut wrapped = theta % tau;
        let mut axis = axis;
        if wrapped > std::f64::consts::PI {
            wrapped = tau - wrapped;
            axis = scale(axis, -1.0);
        }
        Ok(RotVec(scale(axis, wrapped)))
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let n = norm(axis);
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::invalid(format!("degenerate rotation axis {axis:?}")));
        }
        RotVec::new(scale(axis, angle / n))
    }

    pub fn as_array(&self) -> Vec3 {
        self.0
    }

    pub fn angle(&self) -> f64 {
        norm(self.0)
    }

    pub fn to_matrix(&self) -> Mat3 {
        rodrigues(self.0)
    }
}

impl TryFrom<Vec3> for RotVec {
    type Error = Error;

    fn try_from(r: Vec3) -> Result<Self> {
        RotVec::new(r)
    }
}

impl From<RotVec> for Vec3 {
    fn from(r: RotVec) -> Vec3 {
        r.0
    }
}

/// 3x3 row-major rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn mul(&self, other: &Mat3) -> Mat3 {
        let a = &self.0;
        let b = &other.0;
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Mat3(out)
    }

    #[inline]
    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    #[inline]
    pub fn apply_transpose(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
            m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
            m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest absolute entry of `M^T M - I`.
    pub fn orthonormality_error(&self) -> f64 {
        let mtm = self.transpose().mul(self);
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((mtm.0[i][j] - target).abs());
            }
        }
        worst
    }

    pub fn is_rotation(&self) -> bool {
        all_finite(self.0.as_flattened())
            && self.orthonormality_error() <= ORTHONORMAL_TOL
            && (self.determinant() - 1.0).abs() <= ORTHONORMAL_TOL
    }
}

fn rodrigues(r: Vec3) -> Mat3 {
    let theta2 = dot(r, r);
    let theta = theta2.sqrt();
    // R = I + a [r]x + b [r]x^2 with a = sin t / t, b = (1 - cos t) / t^2
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let [x, y, z] = r;
    Mat3([
        [
            1.0 - b * (y * y + z * z),
            -a * z + b * x * y,
            a * y + b * x * z,
        ],
        [
            a * z + b * x * y,
            1.0 - b * (x * x + z * z),
            -a * x + b * y * z,
        ],
        [
            -a * y + b * x * z,
            a * x + b * y * z,
            1.0 - b * (x * x + y * y),
        ],
    ])
}

pub fn rotvec_to_matrix(r: Vec3) -> Result<Mat3> {
    if !all_finite(&r) {
        return Err(Error::invalid(format!("non-finite rotation vector {r:?}")));
    }
    Ok(rodrigues(r))
}

pub fn matrix_to_rotvec(m: &Mat3) -> Result<RotVec> {
    if !m.is_rotation() {
        return Err(Error::invalid(format!(
            "matrix is not a proper rotation (orthonormality error {:.3e}, det {:.12})",
            m.orthonormality_error(),
            m.determinant()
        )));
    }
    let r = &m.0;
    // vee(M - M^T) = 2 sin(t) * axis
    let v = [r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]];
    let s = 0.5 * norm(v);
    let c = 0.5 * (r[0][0] + r[1][1] + r[2][2] - 1.0);
    let theta = s.atan2(c);

    if theta < SMALL_ANGLE {
        // t / (2 sin t) -> 1/2 (1 + t^2 / 6)
        return Ok(RotVec(scale(v, 0.5 * (1.0 + theta * theta / 6.0))));
    }
    if theta < std::f64::consts::PI - 1e-3 {
        return Ok(RotVec(scale(v, theta / (2.0 * s))));
    }

    // Near a half turn the antisymmetric part vanishes; recover the axis from
    // the symmetric part, B = (M + M^T)/2 - cos(t) I = (1 - cos t) a a^T.
    let one_minus_c = 1.0 - c;
    let diag = [
        (r[0][0] - c) / one_minus_c,
        (r[1][1] - c) / one_minus_c,
        (r[2][2] - c) / one_minus_c,
    ];
    let k = (0..3)
        .max_by(|&i, &j| diag[i].total_cmp(&diag[j]))
        .expect("three candidates");
    let mut axis = [0.0; 3];
    axis[k] = diag[k].max(0.0).sqrt();
    for i in 0..3 {
        if i != k {
            axis[i] = 0.5 * (r[i][k] + r[k][i]) / (one_minus_c * axis[k]);
        }
    }
    let n = norm(axis);
    axis = scale(axis, 1.0 / n);
    if dot(axis, v) < 0.0 {
        axis = scale(axis, -1.0);
    }
    RotVec::new(scale(axis, theta))
}

/// Rigid transform: translation in meters plus rotation vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose6 {
    pub t: Vec3,
    pub r: RotVec,
}

impl Default for Pose6 {
    fn default() -> Self {
        Pose6::IDENTITY
    }
}

impl Pose6 {
    pub const IDENTITY: Pose6 = Pose6 {
        t: [0.0; 3],
        r: RotVec::ZERO,
    };

    pub fn new(t: Vec3, r: Vec3) -> Result<Self> {
        if !all_finite(&t) {
            return Err(Error::invalid(format!("non-finite translation {t:?}")));
        }
        Ok(Pose6 {
            t,
            r: RotVec::new(r)?,
        })
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose6 { t, r: RotVec::ZERO }
    }

    /// The six numbers `[t, r]` used as node features.
    pub fn to_array(&self) -> [f64; 6] {
        let r = self.r.as_array();
        [self.t[0], self.t[1], self.t[2], r[0], r[1], r[2]]
    }

    pub fn to_frame(&self) -> Frame {
        Frame {
            rot: self.r.to_matrix(),
            t: self.t,
        }
    }

    pub fn from_frame(frame: &Frame) -> Result<Self> {
        Ok(Pose6 {
            t: frame.t,
            r: matrix_to_rotvec(&frame.rot)?,
        })
    }
}

/// Matrix form of a pose, used for chaining without repeated conversions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub rot: Mat3,
    pub t: Vec3,
}

impl Frame {
    pub const IDENTITY: Frame = Frame {
        rot: Mat3::IDENTITY,
        t: [0.0; 3],
    };

    pub fn compose(&self, other: &Frame) -> Frame {
        Frame {
            rot: self.rot.mul(&other.rot),
            t: add(self.rot.apply(other.t), self.t),
        }
    }

    #[inline]
    pub fn apply_point(&self, x: Vec3) -> Vec3 {
        add(self.rot.apply(x), self.t)
    }

    #[inline]
    pub fn apply_vector(&self, v: Vec3) -> Vec3 {
        self.rot.apply(v)
    }

    pub fn inverse(&self) -> Frame {
        let rt = self.rot.transpose();
        Frame {
            rot: rt,
            t: scale(rt.apply(self.t), -1.0),
        }
    }
}

/// Pose whose homogeneous matrix is `H(a) * H(b)`.
pub fn pose_compose(a: &Pose6, b: &Pose6) -> Result<Pose6> {
    Pose6::from_frame(&a.to_frame().compose(&b.to_frame()))
}

pub fn pose_apply_point(p: &Pose6, x: Vec3) -> Vec3 {
    p.to_frame().apply_point(x)
}

pub fn pose_apply_vector(p: &Pose6, v: Vec3) -> Vec3 {
    p.r.to_matrix().apply(v)
}

pub fn pose_inverse(p: &Pose6) -> Pose6 {
    let rt = p.r.to_matrix().transpose();
    Pose6 {
        t: scale(rt.apply(p.t), -1.0),
        r: RotVec(scale(p.r.as_array(), -1.0)),
    }
}
