//! Observation and action vector layouts for the four policy variants.
//!
//! A variant is the cross product of two independent choices:
//!
//! * role split: does the policy drive both hands in full, or only the
//!   dominant hand's fingers (the facilitating hand keeps its grasp and
//!   only its base moves)?
//! * frame: are poses reported and commanded in world coordinates, or
//!   relative to the object held by the facilitating hand?
//!
//! Observations are flat `f64` vectors described by an [`ObsLayout`]: an
//! ordered list of named, contiguous segments. The layout is the single
//! source of truth for dimensions, packing, noise injection, and the JSON
//! descriptor used by log readers.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::controller::{eq1_targets, ControllerConfig};
use crate::env::{EnvState, HandId, HandModel, StepTargets, TaskSpec};
use crate::geom::{
    apply_delta, quat_mul, quat_normalize, relative_pose, rotvec_to_quat, Pose, PoseDelta,
};

/// Metres of base translation commanded by a saturated action entry, per step.
pub const POS_STEP: f64 = 0.02;
/// Radians of base rotation commanded by a saturated action entry, per step.
pub const ROT_STEP: f64 = 0.05;

const POSE_LEN: usize = 7;
const DELTA_LEN: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyVariant {
    /// Both hands fully driven, world-frame poses everywhere.
    Symmetric,
    /// Role split without relative coordinates: dominant hand in full plus
    /// the facilitating base, world-frame poses.
    AsymmetricAbsolute,
    /// Relative coordinates without the role split: both hands' fingers
    /// driven, one shared relative base action.
    SymmetricRelative,
    /// Role split and relative coordinates combined.
    AsymmetricRelative,
}

impl PolicyVariant {
    pub const ALL: [PolicyVariant; 4] = [
        PolicyVariant::Symmetric,
        PolicyVariant::AsymmetricAbsolute,
        PolicyVariant::SymmetricRelative,
        PolicyVariant::AsymmetricRelative,
    ];

    /// Poses are expressed in the frame of the facilitating hand's object.
    pub fn relative(self) -> bool {
        matches!(
            self,
            PolicyVariant::SymmetricRelative | PolicyVariant::AsymmetricRelative
        )
    }

    /// Only the dominant hand's fingers are policy-driven.
    pub fn split_roles(self) -> bool {
        matches!(
            self,
            PolicyVariant::AsymmetricAbsolute | PolicyVariant::AsymmetricRelative
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyVariant::Symmetric => "symmetric",
            PolicyVariant::AsymmetricAbsolute => "asymmetric-absolute",
            PolicyVariant::SymmetricRelative => "symmetric-relative",
            PolicyVariant::AsymmetricRelative => "asymmetric-relative",
        }
    }
}

impl std::fmt::Display for PolicyVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "symmetric" | "sym" => Ok(PolicyVariant::Symmetric),
            "asymmetric-absolute" | "asym-abs" => Ok(PolicyVariant::AsymmetricAbsolute),
            "symmetric-relative" | "sym-rel" => Ok(PolicyVariant::SymmetricRelative),
            "asymmetric-relative" | "asym-rel" => Ok(PolicyVariant::AsymmetricRelative),
            other => Err(format!(
                "unknown policy variant {other:?} (expected symmetric, \
                 asymmetric-absolute, symmetric-relative, or asymmetric-relative)"
            )),
        }
    }
}

/// What a segment contains, which decides how noise is applied to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    JointPos,
    JointVel,
    /// Hand base pose, 7 numbers, position then wxyz quaternion.
    HandPose,
    /// Object pose, same packing.
    ObjectPose,
    PrevAction,
    /// Action segment: 6 base-delta numbers.
    BaseDelta,
    /// Action segment: per-joint commands in [-1, 1].
    JointCommand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: &'static str,
    pub kind: SegmentKind,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsFlags {
    pub joint_vels: bool,
    pub prev_action: bool,
}

impl ObsFlags {
    pub fn from_task(task: &TaskSpec) -> Self {
        ObsFlags {
            joint_vels: task.obs_joint_vels,
            prev_action: task.obs_prev_action,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObsLayout {
    pub variant: PolicyVariant,
    pub flags: ObsFlags,
    pub obs: Vec<Segment>,
    pub act: Vec<Segment>,
    pub obs_dim: usize,
    pub act_dim: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpaceError {
    #[error("expected a vector of length {expected}, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("facilitating hand holds no object, so the relative frame is undefined")]
    MissingFrame,
    #[error("state has {got} objects, layout needs {need}")]
    MissingObject { need: usize, got: usize },
}

impl ObsLayout {
    pub fn new(variant: PolicyVariant, model: &HandModel, flags: ObsFlags) -> Self {
        let nj = model.n_joints_obs;
        let na = model.n_joints_act;

        let mut act = SegmentList::default();
        match variant {
            PolicyVariant::Symmetric => {
                act.push("dominant_base_delta", SegmentKind::BaseDelta, DELTA_LEN);
                act.push("dominant_joints", SegmentKind::JointCommand, na);
                act.push("facilitating_base_delta", SegmentKind::BaseDelta, DELTA_LEN);
                act.push("facilitating_joints", SegmentKind::JointCommand, na);
            }
            PolicyVariant::AsymmetricAbsolute => {
                act.push("dominant_base_delta", SegmentKind::BaseDelta, DELTA_LEN);
                act.push("dominant_joints", SegmentKind::JointCommand, na);
                act.push("facilitating_base_delta", SegmentKind::BaseDelta, DELTA_LEN);
            }
            PolicyVariant::SymmetricRelative => {
                act.push("relative_base_delta", SegmentKind::BaseDelta, DELTA_LEN);
                act.push("dominant_joints", SegmentKind::JointCommand, na);
                act.push("facilitating_joints", SegmentKind::JointCommand, na);
            }
            PolicyVariant::AsymmetricRelative => {
                act.push("relative_base_delta", SegmentKind::BaseDelta, DELTA_LEN);
                act.push("dominant_joints", SegmentKind::JointCommand, na);
            }
        }
        let act_dim = act.total;

        let mut obs = SegmentList::default();
        let joints = |obs: &mut SegmentList, hand: &str| {
            obs.push_owned(format!("{hand}_joint_pos"), SegmentKind::JointPos, nj);
            if flags.joint_vels {
                obs.push_owned(format!("{hand}_joint_vel"), SegmentKind::JointVel, nj);
            }
        };
        match variant {
            PolicyVariant::Symmetric => {
                joints(&mut obs, "facilitating");
                joints(&mut obs, "dominant");
                obs.push("facilitating_base", SegmentKind::HandPose, POSE_LEN);
                obs.push("dominant_base", SegmentKind::HandPose, POSE_LEN);
                obs.push("facilitating_object", SegmentKind::ObjectPose, POSE_LEN);
                obs.push("dominant_object", SegmentKind::ObjectPose, POSE_LEN);
            }
            PolicyVariant::AsymmetricAbsolute => {
                joints(&mut obs, "dominant");
                obs.push("facilitating_base", SegmentKind::HandPose, POSE_LEN);
                obs.push("dominant_base", SegmentKind::HandPose, POSE_LEN);
                obs.push("facilitating_object", SegmentKind::ObjectPose, POSE_LEN);
                obs.push("dominant_object", SegmentKind::ObjectPose, POSE_LEN);
            }
            PolicyVariant::SymmetricRelative => {
                joints(&mut obs, "facilitating");
                joints(&mut obs, "dominant");
                obs.push("dominant_base_in_frame", SegmentKind::HandPose, POSE_LEN);
                obs.push("dominant_object_in_frame", SegmentKind::ObjectPose, POSE_LEN);
                obs.push(
                    "facilitating_object_in_hand",
                    SegmentKind::ObjectPose,
                    POSE_LEN,
                );
            }
            PolicyVariant::AsymmetricRelative => {
                joints(&mut obs, "dominant");
                obs.push("dominant_base_in_frame", SegmentKind::HandPose, POSE_LEN);
                obs.push("dominant_object_in_frame", SegmentKind::ObjectPose, POSE_LEN);
            }
        }
        if flags.prev_action {
            obs.push("prev_action", SegmentKind::PrevAction, act_dim);
        }

        ObsLayout {
            variant,
            flags,
            obs_dim: obs.total,
            act_dim,
            obs: obs.segments,
            act: act.segments,
        }
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.obs.iter().find(|s| s.name == name)
    }

    pub fn action_segment(&self, name: &str) -> Option<&Segment> {
        self.act.iter().find(|s| s.name == name)
    }

    /// Machine-readable description for log readers and external tools.
    pub fn descriptor(&self) -> serde_json::Value {
        let seg = |s: &Segment| {
            serde_json::json!({
                "name": s.name,
                "kind": format!("{:?}", s.kind),
                "offset": s.offset,
                "len": s.len,
            })
        };
        serde_json::json!({
            "variant": self.variant.name(),
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "joint_vels": self.flags.joint_vels,
            "prev_action": self.flags.prev_action,
            "observation": self.obs.iter().map(seg).collect::<Vec<_>>(),
            "action": self.act.iter().map(seg).collect::<Vec<_>>(),
        })
    }
}

/// Builder that keeps offsets contiguous.
#[derive(Default)]
struct SegmentList {
    segments: Vec<Segment>,
    total: usize,
}

impl SegmentList {
    fn push(&mut self, name: &'static str, kind: SegmentKind, len: usize) {
        self.segments.push(Segment {
            name,
            kind,
            offset: self.total,
            len,
        });
        self.total += len;
    }

    fn push_owned(&mut self, name: String, kind: SegmentKind, len: usize) {
        // segment names come from a small fixed set, so interning them as
        // &'static keeps Segment Copy
        let name: &'static str = match name.as_str() {
            "facilitating_joint_pos" => "facilitating_joint_pos",
            "facilitating_joint_vel" => "facilitating_joint_vel",
            "dominant_joint_pos" => "dominant_joint_pos",
            "dominant_joint_vel" => "dominant_joint_vel",
            other => panic!("unknown joint segment name {other}"),
        };
        self.push(name, kind, len);
    }
}

pub fn space_dims(variant: PolicyVariant, model: &HandModel, flags: ObsFlags) -> (usize, usize) {
    let layout = ObsLayout::new(variant, model, flags);
    (layout.obs_dim, layout.act_dim)
}

fn write_pose(out: &mut [f64], pose: Pose) {
    out[..POSE_LEN].copy_from_slice(&pose.to_array());
}

/// Pack the current state into an observation vector.
///
/// Relative segments are measured against the pose of the facilitating
/// hand's held object; building a relative-variant observation while that
/// hand holds nothing is an error. `prev_action` must be given exactly when
/// the layout includes it.
pub fn build_observation(
    layout: &ObsLayout,
    state: &EnvState,
    prev_action: Option<&[f64]>,
) -> Result<Vec<f64>, SpaceError> {
    if state.objects.len() < 2 {
        return Err(SpaceError::MissingObject {
            need: 2,
            got: state.objects.len(),
        });
    }
    let frame = if layout.variant.relative() {
        Some(state.frame_f().ok_or(SpaceError::MissingFrame)?)
    } else {
        None
    };

    let mut out = vec![0.0; layout.obs_dim];
    for seg in &layout.obs {
        let dst = &mut out[seg.offset..seg.offset + seg.len];
        let hand = |name: &str| {
            if name.starts_with("facilitating") {
                state.hand(HandId::Facilitating)
            } else {
                state.hand(HandId::Dominant)
            }
        };
        match seg.kind {
            SegmentKind::JointPos => dst.copy_from_slice(&hand(seg.name).joints),
            SegmentKind::JointVel => dst.copy_from_slice(&hand(seg.name).joint_vels),
            SegmentKind::HandPose => {
                let base = state.hand(HandId::Dominant).base;
                let pose = match seg.name {
                    "facilitating_base" => state.hand(HandId::Facilitating).base,
                    "dominant_base" => base,
                    "dominant_base_in_frame" => relative_pose(base, frame.unwrap()),
                    other => unreachable!("hand pose segment {other}"),
                };
                write_pose(dst, pose);
            }
            SegmentKind::ObjectPose => {
                let pose = match seg.name {
                    "facilitating_object" => state.objects[0].pose,
                    "dominant_object" => state.objects[1].pose,
                    "dominant_object_in_frame" => {
                        relative_pose(state.objects[1].pose, frame.unwrap())
                    }
                    "facilitating_object_in_hand" => relative_pose(
                        state.objects[0].pose,
                        state.hand(HandId::Facilitating).base,
                    ),
                    other => unreachable!("object pose segment {other}"),
                };
                write_pose(dst, pose);
            }
            SegmentKind::PrevAction => {
                let prev = prev_action.ok_or(SpaceError::WrongLength {
                    expected: seg.len,
                    got: 0,
                })?;
                if prev.len() != seg.len {
                    return Err(SpaceError::WrongLength {
                        expected: seg.len,
                        got: prev.len(),
                    });
                }
                dst.copy_from_slice(prev);
            }
            SegmentKind::BaseDelta | SegmentKind::JointCommand => {
                unreachable!("action segment in observation layout")
            }
        }
    }
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(SpaceError::NonFinite(i));
    }
    Ok(out)
}

fn scaled_delta(a: &[f64]) -> PoseDelta {
    let c = |v: f64| v.tanh();
    PoseDelta {
        dpos: [c(a[0]) * POS_STEP, c(a[1]) * POS_STEP, c(a[2]) * POS_STEP],
        drot: [c(a[3]) * ROT_STEP, c(a[4]) * ROT_STEP, c(a[5]) * ROT_STEP],
    }
}

/// Squashes joint commands through tanh and maps the result affinely onto
/// the joint limits, so 0 commands the midpoint of each range.
pub fn affine_joints(model: &HandModel, a: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(&model.joint_limits)
        .map(|(v, [lo, hi])| {
            let t = 0.5 * (v.tanh() + 1.0);
            lo + t * (hi - lo)
        })
        .collect()
}

fn held_joints(state: &EnvState, model: &HandModel, id: HandId) -> Vec<f64> {
    state.hand(id).joints[..model.n_joints_act].to_vec()
}

/// Turn a policy action into base and joint targets for the simulator.
///
/// Every action entry is squashed through tanh, so base deltas saturate at
/// [`POS_STEP`] metres and [`ROT_STEP`] radians per step. World-frame
/// variants apply their deltas directly to each hand; relative variants move
/// the relative-pose target and let the controller split the motion between
/// the hands according to `cfg`. Joint commands map onto the joint limits.
/// Facilitating fingers without an action segment hold their current
/// position, which keeps an existing grasp closed.
pub fn decode_action(
    layout: &ObsLayout,
    model: &HandModel,
    cfg: &ControllerConfig,
    action: &[f64],
    state: &EnvState,
) -> Result<StepTargets, SpaceError> {
    if action.len() != layout.act_dim {
        return Err(SpaceError::WrongLength {
            expected: layout.act_dim,
            got: action.len(),
        });
    }
    if let Some(i) = action.iter().position(|v| !v.is_finite()) {
        return Err(SpaceError::NonFinite(i));
    }

    let slice = |name: &str| {
        let seg = layout
            .action_segment(name)
            .unwrap_or_else(|| panic!("layout lacks action segment {name}"));
        &action[seg.offset..seg.offset + seg.len]
    };
    let base_f = state.hand(HandId::Facilitating).base;
    let base_d = state.hand(HandId::Dominant).base;

    let (bases, dom_joints, fac_joints) = match layout.variant {
        PolicyVariant::Symmetric => (
            [
                apply_delta(base_f, scaled_delta(slice("facilitating_base_delta"))),
                apply_delta(base_d, scaled_delta(slice("dominant_base_delta"))),
            ],
            affine_joints(model, slice("dominant_joints")),
            affine_joints(model, slice("facilitating_joints")),
        ),
        PolicyVariant::AsymmetricAbsolute => (
            [
                apply_delta(base_f, scaled_delta(slice("facilitating_base_delta"))),
                apply_delta(base_d, scaled_delta(slice("dominant_base_delta"))),
            ],
            affine_joints(model, slice("dominant_joints")),
            held_joints(state, model, HandId::Facilitating),
        ),
        PolicyVariant::SymmetricRelative | PolicyVariant::AsymmetricRelative => {
            let frame = state.frame_f().ok_or(SpaceError::MissingFrame)?;
            let current_rel = relative_pose(base_d, frame);
            let target_rel = apply_delta(current_rel, scaled_delta(slice("relative_base_delta")));
            let (target_d, target_f) =
                eq1_targets(target_rel, current_rel, base_d, base_f, frame.orient, cfg);
            let fac = if layout.variant.split_roles() {
                held_joints(state, model, HandId::Facilitating)
            } else {
                affine_joints(model, slice("facilitating_joints"))
            };
            (
                [target_f, target_d],
                affine_joints(model, slice("dominant_joints")),
                fac,
            )
        }
    };

    Ok(StepTargets {
        base: bases,
        joints: [fac_joints, dom_joints],
    })
}

/// Per-class Gaussian noise levels for sensor simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Object position entries.
    pub object_pos: f64,
    /// Hand base position entries.
    pub hand_pos: f64,
    /// Hand base orientation, applied as a rotation-vector perturbation.
    pub hand_orient: f64,
    /// Hand joint positions.
    pub joint_pos: f64,
    /// Action entries, added before decoding where a task asks for it.
    pub action: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            object_pos: 0.02,
            hand_pos: 0.02,
            hand_orient: 0.05,
            joint_pos: 0.2,
            action: 0.1,
        }
    }
}

impl NoiseSpec {
    pub fn zero() -> Self {
        NoiseSpec {
            object_pos: 0.0,
            hand_pos: 0.0,
            hand_orient: 0.0,
            joint_pos: 0.0,
            action: 0.0,
        }
    }
}

fn perturb_quat<R: Rng>(q: [f64; 4], sigma: f64, rng: &mut R) -> [f64; 4] {
    let axis = [
        sigma * rng.sample::<f64, _>(StandardNormal),
        sigma * rng.sample::<f64, _>(StandardNormal),
        sigma * rng.sample::<f64, _>(StandardNormal),
    ];
    quat_normalize(quat_mul(rotvec_to_quat(axis), q))
}

/// Add per-segment sensor noise in place. Quaternion entries are perturbed
/// on the rotation manifold and re-normalized; zero sigmas leave the vector
/// bit-identical.
pub fn add_observation_noise<R: Rng>(
    obs: &mut [f64],
    layout: &ObsLayout,
    spec: &NoiseSpec,
    rng: &mut R,
) {
    debug_assert_eq!(obs.len(), layout.obs_dim);
    for seg in &layout.obs {
        let dst = &mut obs[seg.offset..seg.offset + seg.len];
        match seg.kind {
            SegmentKind::JointPos if spec.joint_pos != 0.0 => {
                for v in dst {
                    *v += spec.joint_pos * rng.sample::<f64, _>(StandardNormal);
                }
            }
            SegmentKind::HandPose | SegmentKind::ObjectPose => {
                let (pos_sigma, orient_sigma) = if seg.kind == SegmentKind::HandPose {
                    (spec.hand_pos, spec.hand_orient)
                } else {
                    (spec.object_pos, 0.0)
                };
                if pos_sigma != 0.0 {
                    for v in &mut dst[..3] {
                        *v += pos_sigma * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                if orient_sigma != 0.0 {
                    let q = [dst[3], dst[4], dst[5], dst[6]];
                    dst[3..POSE_LEN].copy_from_slice(&perturb_quat(q, orient_sigma, rng));
                }
            }
            _ => {}
        }
    }
}

/// Largest entry-wise difference between two observations, treating the
/// quaternion part of each pose segment as equal to its negation. Unit
/// quaternions double-cover rotations, and face-to-face hand poses sit on
/// the seam where sign canonicalization is decided by rounding noise, so a
/// raw vector comparison would report spurious differences of 2.
pub fn obs_max_diff(layout: &ObsLayout, a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), layout.obs_dim);
    assert_eq!(b.len(), layout.obs_dim);
    let mut worst = 0.0f64;
    for seg in &layout.obs {
        let xa = &a[seg.offset..seg.offset + seg.len];
        let xb = &b[seg.offset..seg.offset + seg.len];
        match seg.kind {
            SegmentKind::HandPose | SegmentKind::ObjectPose => {
                for i in 0..3 {
                    worst = worst.max((xa[i] - xb[i]).abs());
                }
                let mut same = 0.0f64;
                let mut flipped = 0.0f64;
                for i in 3..POSE_LEN {
                    same = same.max((xa[i] - xb[i]).abs());
                    flipped = flipped.max((xa[i] + xb[i]).abs());
                }
                worst = worst.max(same.min(flipped));
            }
            _ => {
                for (va, vb) in xa.iter().zip(xb.iter()) {
                    worst = worst.max((va - vb).abs());
                }
            }
        }
    }
    worst
}

/// Additive action noise used by tasks that randomize actuation.
pub fn add_action_noise<R: Rng>(action: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    for v in action {
        *v += sigma * rng.sample::<f64, _>(StandardNormal);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TaskId;
    use crate::geom::{compose, random_pose, vnorm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn full_flags() -> ObsFlags {
        ObsFlags {
            joint_vels: true,
            prev_action: true,
        }
    }

    fn bare_flags() -> ObsFlags {
        ObsFlags {
            joint_vels: false,
            prev_action: false,
        }
    }

    fn interaction_state(task: TaskId, seed: u64) -> (TaskSpec, EnvState) {
        let spec = TaskSpec::preset(task);
        let state = crate::env::reset_sample(&spec, ChaCha8Rng::seed_from_u64(seed));
        (spec, state)
    }

    #[test]
    fn dims_match_published_hand_configs() {
        let sim = HandModel::full();
        let cases = [
            (PolicyVariant::Symmetric, (176, 52)),
            (PolicyVariant::AsymmetricAbsolute, (108, 32)),
            (PolicyVariant::SymmetricRelative, (163, 46)),
            (PolicyVariant::AsymmetricRelative, (88, 26)),
        ];
        for (variant, want) in cases {
            assert_eq!(space_dims(variant, &sim, full_flags()), want, "{variant}");
        }

        let rw = HandModel::reduced();
        let cases = [
            (PolicyVariant::Symmetric, (60, 44)),
            (PolicyVariant::AsymmetricAbsolute, (44, 28)),
            (PolicyVariant::SymmetricRelative, (53, 38)),
            (PolicyVariant::AsymmetricRelative, (30, 22)),
        ];
        for (variant, want) in cases {
            assert_eq!(space_dims(variant, &rw, bare_flags()), want, "{variant}");
        }

        let fingerless = HandModel::with_joints(0, 0);
        assert_eq!(
            space_dims(PolicyVariant::AsymmetricRelative, &fingerless, bare_flags()),
            (14, 6)
        );
    }

    #[test]
    fn segments_are_contiguous_and_cover_the_vector() {
        for variant in PolicyVariant::ALL {
            for flags in [full_flags(), bare_flags()] {
                let layout = ObsLayout::new(variant, &HandModel::full(), flags);
                let mut next = 0;
                for seg in &layout.obs {
                    assert_eq!(seg.offset, next, "{variant} {}", seg.name);
                    next += seg.len;
                }
                assert_eq!(next, layout.obs_dim);
                let mut next = 0;
                for seg in &layout.act {
                    assert_eq!(seg.offset, next, "{variant} {}", seg.name);
                    next += seg.len;
                }
                assert_eq!(next, layout.act_dim);
            }
        }
    }

    #[test]
    fn layout_round_trip_recovers_sources() {
        let (spec, state) = interaction_state(TaskId::BlockInCup, 7);
        let layout = ObsLayout::new(
            PolicyVariant::SymmetricRelative,
            &spec.hand,
            ObsFlags::from_task(&spec),
        );
        let prev: Vec<f64> = (0..layout.act_dim).map(|i| i as f64 * 0.01).collect();
        let obs = build_observation(&layout, &state, Some(&prev)).unwrap();

        let read = |name: &str| {
            let seg = layout.segment(name).unwrap();
            obs[seg.offset..seg.offset + seg.len].to_vec()
        };
        assert_eq!(read("dominant_joint_pos"), state.hand(HandId::Dominant).joints);
        assert_eq!(
            read("facilitating_joint_vel"),
            state.hand(HandId::Facilitating).joint_vels
        );
        let frame = state.frame_f().unwrap();
        assert_eq!(
            read("dominant_base_in_frame"),
            relative_pose(state.hand(HandId::Dominant).base, frame)
                .to_array()
                .to_vec()
        );
        assert_eq!(
            read("facilitating_object_in_hand"),
            relative_pose(state.objects[0].pose, state.hand(HandId::Facilitating).base)
                .to_array()
                .to_vec()
        );
        assert_eq!(read("prev_action"), prev);
    }

    #[test]
    fn coincident_base_and_frame_reads_identity() {
        let (spec, mut state) = interaction_state(TaskId::BlockInCup, 11);
        let frame = state.frame_f().unwrap();
        state.hands[HandId::Dominant.index()].base = frame;
        let layout = ObsLayout::new(PolicyVariant::AsymmetricRelative, &spec.hand, bare_flags());
        let obs = build_observation(&layout, &state, None).unwrap();
        let seg = layout.segment("dominant_base_in_frame").unwrap();
        let got = &obs[seg.offset..seg.offset + seg.len];
        let identity = Pose::identity().to_array();
        for (g, w) in got.iter().zip(identity.iter()) {
            assert!((g - w).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn relative_observations_ignore_rigid_world_motion() {
        let (spec, state) = interaction_state(TaskId::Stack, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for variant in [
            PolicyVariant::AsymmetricRelative,
            PolicyVariant::SymmetricRelative,
        ] {
            let layout = ObsLayout::new(variant, &spec.hand, bare_flags());
            let before = build_observation(&layout, &state, None).unwrap();
            for _ in 0..100 {
                let t = random_pose(&mut rng);
                let mut moved = state.clone();
                for hand in &mut moved.hands {
                    hand.base = compose(t, hand.base);
                }
                for obj in &mut moved.objects {
                    obj.pose = compose(t, obj.pose);
                }
                let after = build_observation(&layout, &moved, None).unwrap();
                let diff = obs_max_diff(&layout, &before, &after);
                assert!(diff < 1e-9, "{variant}: {diff}");
            }
        }

        // absolute coordinates do move
        let layout = ObsLayout::new(PolicyVariant::Symmetric, &spec.hand, bare_flags());
        let before = build_observation(&layout, &state, None).unwrap();
        let t = Pose::from_pos([1.0, 0.0, 0.0]);
        let mut moved = state.clone();
        for hand in &mut moved.hands {
            hand.base = compose(t, hand.base);
        }
        for obj in &mut moved.objects {
            obj.pose = compose(t, obj.pose);
        }
        let after = build_observation(&layout, &moved, None).unwrap();
        let max_diff = before
            .iter()
            .zip(after.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 0.5);
    }

    #[test]
    fn zero_action_fixes_base_targets() {
        let cfg = ControllerConfig { alpha: 0.7 };
        for task in [TaskId::BlockInCup, TaskId::Switch, TaskId::RwTwistLid] {
            let (spec, state) = interaction_state(task, 21);
            for variant in PolicyVariant::ALL {
                let layout = ObsLayout::new(variant, &spec.hand, ObsFlags::from_task(&spec));
                let action = vec![0.0; layout.act_dim];
                let targets = decode_action(&layout, &spec.hand, &cfg, &action, &state).unwrap();
                assert_eq!(
                    targets.base[0].to_array(),
                    state.hand(HandId::Facilitating).base.to_array(),
                    "{task:?} {variant}"
                );
                assert_eq!(
                    targets.base[1].to_array(),
                    state.hand(HandId::Dominant).base.to_array(),
                    "{task:?} {variant}"
                );
                for joints in &targets.joints {
                    assert_eq!(joints.len(), spec.hand.n_joints_act);
                }
            }
        }
    }

    #[test]
    fn saturated_relative_x_moves_the_target_one_step() {
        let (spec, state) = interaction_state(TaskId::BlockInCup, 5);
        let layout = ObsLayout::new(PolicyVariant::AsymmetricRelative, &spec.hand, bare_flags());
        let cfg = ControllerConfig { alpha: 1.0 };
        let mut action = vec![0.0; layout.act_dim];
        action[0] = 20.0;
        let targets = decode_action(&layout, &spec.hand, &cfg, &action, &state).unwrap();

        let frame = state.frame_f().unwrap();
        let current_rel = relative_pose(state.hand(HandId::Dominant).base, frame);
        let want = apply_delta(
            current_rel,
            PoseDelta {
                dpos: [POS_STEP, 0.0, 0.0],
                drot: [0.0; 3],
            },
        );
        let got = relative_pose(targets.base[1], frame);
        assert!(vnorm(crate::geom::vsub(got.pos, want.pos)) < 1e-12);
        // facilitating hand stays put at full involvement
        assert_eq!(
            targets.base[0].to_array(),
            state.hand(HandId::Facilitating).base.to_array()
        );
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let (spec, mut state) = interaction_state(TaskId::BlockInCup, 2);
        let layout = ObsLayout::new(PolicyVariant::AsymmetricRelative, &spec.hand, bare_flags());
        let cfg = ControllerConfig::default();

        let short = vec![0.0; layout.act_dim - 1];
        assert_eq!(
            decode_action(&layout, &spec.hand, &cfg, &short, &state),
            Err(SpaceError::WrongLength {
                expected: layout.act_dim,
                got: layout.act_dim - 1
            })
        );

        let mut nan = vec![0.0; layout.act_dim];
        nan[3] = f64::NAN;
        assert_eq!(
            decode_action(&layout, &spec.hand, &cfg, &nan, &state),
            Err(SpaceError::NonFinite(3))
        );

        state.hands[HandId::Facilitating.index()].held_object = None;
        assert_eq!(
            build_observation(&layout, &state, None),
            Err(SpaceError::MissingFrame)
        );
        let zero = vec![0.0; layout.act_dim];
        assert_eq!(
            decode_action(&layout, &spec.hand, &cfg, &zero, &state),
            Err(SpaceError::MissingFrame)
        );
    }

    #[test]
    fn zero_noise_is_identity() {
        let (spec, state) = interaction_state(TaskId::RwPour, 13);
        let layout = ObsLayout::new(PolicyVariant::Symmetric, &spec.hand, bare_flags());
        let obs = build_observation(&layout, &state, None).unwrap();
        let mut noisy = obs.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        add_observation_noise(&mut noisy, &layout, &NoiseSpec::zero(), &mut rng);
        assert_eq!(noisy, obs);
    }

    #[test]
    fn noise_statistics_match_sigmas() {
        let (spec, state) = interaction_state(TaskId::RwPour, 13);
        let layout = ObsLayout::new(PolicyVariant::Symmetric, &spec.hand, bare_flags());
        let clean = build_observation(&layout, &state, None).unwrap();
        let noise = NoiseSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4242);

        let obj = *layout.segment("dominant_object").unwrap();
        let base = *layout.segment("facilitating_base").unwrap();
        let draws = 100_000;
        let mut sq_sum = 0.0;
        let mut count = 0usize;
        for _ in 0..draws {
            let mut noisy = clean.clone();
            add_observation_noise(&mut noisy, &layout, &noise, &mut rng);
            for i in 0..3 {
                let d = noisy[obj.offset + i] - clean[obj.offset + i];
                sq_sum += d * d;
                count += 1;
            }
            let q = &noisy[base.offset + 3..base.offset + 7];
            let norm: f64 = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        let var = sq_sum / count as f64;
        let want = noise.object_pos * noise.object_pos;
        assert!(
            (var - want).abs() < 0.05 * want,
            "sample variance {var}, expected about {want}"
        );
    }

    #[test]
    fn descriptor_is_valid_json() {
        let layout = ObsLayout::new(
            PolicyVariant::AsymmetricRelative,
            &HandModel::reduced(),
            bare_flags(),
        );
        let d = layout.descriptor();
        assert_eq!(d["variant"], "asymmetric-relative");
        assert_eq!(d["obs_dim"], 30);
        assert_eq!(d["act_dim"], 22);
        let names: Vec<&str> = d["observation"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s["name"].as_str().unwrap())
            .collect();
        assert_eq!(
            names,
            ["dominant_joint_pos", "dominant_base_in_frame", "dominant_object_in_frame"]
        );
    }

    #[test]
    fn variant_names_round_trip() {
        for variant in PolicyVariant::ALL {
            let parsed: PolicyVariant = variant.name().parse().unwrap();
            assert_eq!(parsed, variant);
        }
        assert!("sideways".parse::<PolicyVariant>().is_err());
    }
}
