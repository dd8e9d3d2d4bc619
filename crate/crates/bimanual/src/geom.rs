//! SE(3) pose algebra: scalar-first unit quaternions, rotation-vector
//! exp/log maps, frame composition, and the 6D pose difference used by the
//! tracking controller.

use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];
/// Scalar-first quaternion (w, x, y, z).
pub type Quat = [f64; 4];

/// Below this angle the exp/log maps switch to their series expansions.
const SMALL_ANGLE: f64 = 1e-8;

pub fn vadd(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn vsub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn vscale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn vdot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn vcross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn vnorm(a: Vec3) -> f64 {
    vdot(a, a).sqrt()
}

/// Rigid-body pose: position in meters plus a unit quaternion.
///
/// Quaternions are kept sign-canonical (w >= 0; on the w = 0 great circle the
/// first nonzero of x, y, z is >= 0) so that equal rotations compare equal
/// bitwise and serialize identically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub pos: Vec3,
    pub orient: Quat,
}

/// Difference between two poses: translation plus rotation vector
/// (axis * angle, principal branch, so the angle never exceeds pi).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseDelta {
    pub dpos: Vec3,
    pub drot: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            pos: [0.0; 3],
            orient: [1.0, 0.0, 0.0, 0.0],
        }
    }

    /// Builds a pose, normalizing and canonicalizing the quaternion.
    pub fn new(pos: Vec3, orient: Quat) -> Self {
        Pose {
            pos,
            orient: quat_normalize(orient),
        }
    }

    pub fn from_pos(pos: Vec3) -> Self {
        Pose {
            pos,
            orient: [1.0, 0.0, 0.0, 0.0],
        }
    }

    /// Flattens to the 7-number wire layout [px, py, pz, qw, qx, qy, qz].
    pub fn to_array(self) -> [f64; 7] {
        let [px, py, pz] = self.pos;
        let [qw, qx, qy, qz] = self.orient;
        [px, py, pz, qw, qx, qy, qz]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Pose::new([a[0], a[1], a[2]], [a[3], a[4], a[5], a[6]])
    }
}

impl PoseDelta {
    pub fn zero() -> Self {
        PoseDelta::default()
    }

    pub fn scale(self, s: f64) -> Self {
        PoseDelta {
            dpos: vscale(self.dpos, s),
            drot: vscale(self.drot, s),
        }
    }
}

/// Hamilton product a * b.
pub fn quat_mul(a: Quat, b: Quat) -> Quat {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

pub fn quat_conj(q: Quat) -> Quat {
    [q[0], -q[1], -q[2], -q[3]]
}

/// Normalizes to unit length and applies the sign canonicalization.
/// A zero quaternion is a programming error upstream; we map it to identity.
pub fn quat_normalize(q: Quat) -> Quat {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n < 1e-12 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    let mut out = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let flip = if out[0] != 0.0 {
        out[0] < 0.0
    } else if out[1] != 0.0 {
        out[1] < 0.0
    } else if out[2] != 0.0 {
        out[2] < 0.0
    } else {
        out[3] < 0.0
    };
    if flip {
        for c in &mut out {
            *c = -*c;
        }
    }
    out
}

/// Rotates v by the unit quaternion q.
pub fn rotate(q: Quat, v: Vec3) -> Vec3 {
    let u = [q[1], q[2], q[3]];
    let t = vscale(vcross(u, v), 2.0);
    vadd(vadd(v, vscale(t, q[0])), vcross(u, t))
}

/// Exp map: rotation vector to unit quaternion.
pub fn rotvec_to_quat(v: Vec3) -> Quat {
    let angle = vnorm(v);
    let half = 0.5 * angle;
    // sin(angle/2)/angle, series-expanded near zero
    let k = if angle < SMALL_ANGLE {
        0.5 - angle * angle / 48.0
    } else {
        half.sin() / angle
    };
    quat_normalize([half.cos(), v[0] * k, v[1] * k, v[2] * k])
}

/// Log map: unit quaternion to rotation vector on the principal branch,
/// so the returned angle is always in [0, pi].
pub fn quat_to_rotvec(q: Quat) -> Vec3 {
    let q = quat_normalize(q);
    let s = (q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if s < SMALL_ANGLE {
        // angle/sin(angle/2) -> 2/w as the angle vanishes
        let k = 2.0 / q[0];
        return [q[1] * k, q[2] * k, q[3] * k];
    }
    let angle = 2.0 * s.atan2(q[0]);
    let k = angle / s;
    [q[1] * k, q[2] * k, q[3] * k]
}

/// Applies rigid transform `a` after `b` expressed in a's frame:
/// the pose of b's frame seen from a's parent.
pub fn compose(a: Pose, b: Pose) -> Pose {
    Pose {
        pos: vadd(a.pos, rotate(a.orient, b.pos)),
        orient: quat_normalize(quat_mul(a.orient, b.orient)),
    }
}

pub fn inverse(p: Pose) -> Pose {
    let q = quat_conj(p.orient);
    Pose {
        pos: vscale(rotate(q, p.pos), -1.0),
        orient: quat_normalize(q),
    }
}

/// Pose of x expressed in `frame` coordinates: compose(inverse(frame), x).
pub fn relative_pose(x: Pose, frame: Pose) -> Pose {
    compose(inverse(frame), x)
}

/// 6D difference from `current` to `target`: straight positional offset and
/// the world-frame rotation carrying current.orient onto target.orient.
pub fn pose_dist(target: Pose, current: Pose) -> PoseDelta {
    PoseDelta {
        dpos: vsub(target.pos, current.pos),
        drot: quat_to_rotvec(quat_mul(target.orient, quat_conj(current.orient))),
    }
}

/// Applies a world-frame delta on the left: pos += dpos, orient becomes
/// exp(drot) * orient. Inverse of [`pose_dist`] in the sense that
/// apply_delta(current, pose_dist(target, current)) = target.
pub fn apply_delta(p: Pose, d: PoseDelta) -> Pose {
    // exact-zero deltas must be exact fixed points, so skip the
    // renormalization that could otherwise drift the quaternion by an ulp
    if d.dpos == [0.0; 3] && d.drot == [0.0; 3] {
        return p;
    }
    Pose {
        pos: vadd(p.pos, d.dpos),
        orient: quat_normalize(quat_mul(rotvec_to_quat(d.drot), p.orient)),
    }
}

/// Quaternion for a rotation of `angle` radians about `axis` (normalized here).
pub fn axis_angle(axis: Vec3, angle: f64) -> Quat {
    let n = vnorm(axis);
    if n < 1e-12 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    rotvec_to_quat(vscale(axis, angle / n))
}

/// Uniform random unit quaternion (4 Gaussians, normalized).
pub fn random_unit_quat<R: rand::Rng>(rng: &mut R) -> Quat {
    use rand_distr::{Distribution, StandardNormal};
    let mut q = [0.0; 4];
    for c in &mut q {
        *c = StandardNormal.sample(rng);
    }
    quat_normalize(q)
}

/// Random pose with position components in [-1, 1] and uniform orientation.
pub fn random_pose<R: rand::Rng>(rng: &mut R) -> Pose {
    let mut pos = [0.0; 3];
    for c in &mut pos {
        *c = rng.random_range(-1.0..1.0);
    }
    Pose {
        pos,
        orient: random_unit_quat(rng),
    }
}
