//! Split-target base controller: a commanded relative-pose correction is
//! divided between the two hand bases by the involvement weight alpha, and
//! joint targets are tracked with a first-order exponential approach.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{apply_delta, pose_dist, rotate, Pose, PoseDelta, Quat};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Involvement weight in [0, 1]: 1 moves only the dominant base,
    /// 0 moves only the facilitating base.
    pub alpha: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig { alpha: 0.5 }
    }
}

#[derive(Debug, Error)]
#[error("joint vector length mismatch: current {current} vs target {target}")]
pub struct JointLengthMismatch {
    pub current: usize,
    pub target: usize,
}

/// Weight zero must leave the base untouched bit for bit, so skip the
/// delta application entirely rather than applying a zero delta.
fn shifted(base: Pose, delta_world: PoseDelta, weight: f64) -> Pose {
    if weight == 0.0 {
        return base;
    }
    apply_delta(base, delta_world.scale(weight))
}

/// Splits the correction from `current_rel` to `target_rel` (both expressed
/// in the facilitating-object frame, whose world orientation is
/// `frame_f_orient`) between the two bases: the dominant base receives
/// alpha of the world-frame delta, the facilitating base alpha - 1 of it.
pub fn eq1_targets(
    target_rel: Pose,
    current_rel: Pose,
    base_d: Pose,
    base_f: Pose,
    frame_f_orient: Quat,
    cfg: &ControllerConfig,
) -> (Pose, Pose) {
    let d = pose_dist(target_rel, current_rel);
    let dw = PoseDelta {
        dpos: rotate(frame_f_orient, d.dpos),
        drot: rotate(frame_f_orient, d.drot),
    };
    (
        shifted(base_d, dw, cfg.alpha),
        shifted(base_f, dw, cfg.alpha - 1.0),
    )
}

/// First-order exponential approach toward `target`:
/// new = current + (1 - e^(-rate * dt)) * (target - current).
pub fn track_joint_targets(
    current: &[f64],
    target: &[f64],
    rate: f64,
    dt: f64,
) -> Result<Vec<f64>, JointLengthMismatch> {
    if current.len() != target.len() {
        return Err(JointLengthMismatch {
            current: current.len(),
            target: target.len(),
        });
    }
    let k = 1.0 - (-rate * dt).exp();
    Ok(current
        .iter()
        .zip(target)
        .map(|(c, t)| c + k * (t - c))
        .collect())
}

/// Same exponential approach applied to a pose via the 6D difference.
pub fn track_pose_target(current: Pose, target: Pose, rate: f64, dt: f64) -> Pose {
    let k = 1.0 - (-rate * dt).exp();
    apply_delta(current, pose_dist(target, current).scale(k))
}
