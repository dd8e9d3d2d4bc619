//! Weld-grasp task simulator: floating 6-DoF hand bases with tracked finger
//! joints, free and articulated objects, proximity-triggered attachment, and
//! semi-implicit Euler integration for anything not held.
//!
//! There is no contact solver. Held objects are kinematically welded to their
//! hand (pose = base composed with a fixed grasp transform), articulated
//! sub-bodies (switch button, jar lid, seated cap) are derived from their
//! parent object each step, and free objects fall under gravity until they
//! rest on the task's support plane.

mod task;

pub use task::{check_reset, check_success, update_articulation, TaskId, TaskSpec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{track_joint_targets, track_pose_target};
use crate::geom::{compose, relative_pose, rotvec_to_quat, quat_mul, quat_normalize, vadd, vscale, Pose, Vec3};

pub const GRAVITY: Vec3 = [0.0, 0.0, -9.81];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HandId {
    Facilitating,
    Dominant,
}

impl HandId {
    pub fn index(self) -> usize {
        match self {
            HandId::Facilitating => 0,
            HandId::Dominant => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Acquisition,
    Interaction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failure,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("task spec invalid: {0}")]
    BadSpec(String),
}

/// Named reference points on a hand, fixed offsets in the base frame.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FingerPoints {
    pub palm: Vec3,
    pub index_tip: Vec3,
    pub thumb_tip: Vec3,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HandModel {
    /// Joints reported in observations.
    pub n_joints_obs: usize,
    /// Actuated joints accepted in actions; the remainder are passive.
    pub n_joints_act: usize,
    /// Per-joint [lo, hi] in radians, one entry per observed joint.
    pub joint_limits: Vec<[f64; 2]>,
    pub fingertips: FingerPoints,
    /// First-order tracking rates, 1/s.
    pub base_tracking_rate: f64,
    pub joint_tracking_rate: f64,
}

impl HandModel {
    pub fn with_joints(n_obs: usize, n_act: usize) -> Self {
        HandModel {
            n_joints_obs: n_obs,
            n_joints_act: n_act,
            joint_limits: vec![[0.0, 1.571]; n_obs],
            fingertips: FingerPoints {
                palm: [0.08, 0.0, 0.0],
                index_tip: [0.14, 0.025, 0.0],
                thumb_tip: [0.14, -0.025, 0.0],
            },
            base_tracking_rate: 20.0,
            joint_tracking_rate: 30.0,
        }
    }

    /// 24 observed joints (20 actuated), the full-hand configuration.
    pub fn full() -> Self {
        Self::with_joints(24, 20)
    }

    /// 16 observed = 16 actuated joints, the reduced-hand configuration.
    pub fn reduced() -> Self {
        Self::with_joints(16, 16)
    }

    /// Tiny model for fast desk-scale training runs.
    pub fn desk(n_joints: usize) -> Self {
        Self::with_joints(n_joints, n_joints)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.n_joints_act > self.n_joints_obs {
            return Err(EnvError::BadSpec(format!(
                "n_joints_act {} exceeds n_joints_obs {}",
                self.n_joints_act, self.n_joints_obs
            )));
        }
        if self.joint_limits.len() != self.n_joints_obs {
            return Err(EnvError::BadSpec(format!(
                "joint_limits has {} entries for {} joints",
                self.joint_limits.len(),
                self.n_joints_obs
            )));
        }
        for (i, [lo, hi]) in self.joint_limits.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(EnvError::BadSpec(format!("joint {i} limits [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Mean commanded closing fraction over the actuated joints, in [0, 1].
    pub fn close_fraction(&self, commands: &[f64]) -> f64 {
        if self.n_joints_act == 0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for (cmd, [lo, hi]) in commands.iter().zip(&self.joint_limits) {
            acc += ((cmd - lo) / (hi - lo)).clamp(0.0, 1.0);
        }
        acc / self.n_joints_act as f64
    }
}

/// A held object: index into `EnvState::objects` plus the fixed transform
/// from hand base to object frame.
#[derive(Debug, Clone, Copy)]
pub struct Grasp {
    pub object: usize,
    pub transform: Pose,
}

#[derive(Debug, Clone)]
pub struct HandState {
    pub base: Pose,
    pub joints: Vec<f64>,
    pub joint_vels: Vec<f64>,
    pub held_object: Option<Grasp>,
}

impl HandState {
    fn at(base: Pose, model: &HandModel) -> Self {
        let joints: Vec<f64> = model.joint_limits.iter().map(|[lo, hi]| 0.5 * (lo + hi)).collect();
        HandState {
            base,
            joint_vels: vec![0.0; joints.len()],
            joints,
            held_object: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ObjectState {
    pub pose: Pose,
    pub lin_vel: Vec3,
    pub ang_vel: Vec3,
    pub attached_to: Option<HandId>,
    /// Joint angle of the articulated sub-body (button, lid), when present.
    pub articulation: Option<f64>,
}

impl ObjectState {
    pub fn free_at(pose: Pose) -> Self {
        ObjectState {
            pose,
            lin_vel: [0.0; 3],
            ang_vel: [0.0; 3],
            attached_to: None,
            articulation: None,
        }
    }
}

/// Base and joint targets for one step, ordered [facilitating, dominant].
/// Joint vectors are sized n_joints_act.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTargets {
    pub base: [Pose; 2],
    pub joints: [Vec<f64>; 2],
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepResult {
    pub success: bool,
    pub reset: bool,
    /// Non-finite targets reached the simulator; episode marked failed.
    pub fault: bool,
}

#[derive(Debug, Clone)]
pub struct EnvState {
    /// Ordered [facilitating, dominant].
    pub hands: [HandState; 2],
    /// Ordered [facilitating-side object, dominant-side object].
    pub objects: Vec<ObjectState>,
    pub step_count: usize,
    pub phase: Phase,
    pub done: bool,
    pub outcome: Option<Outcome>,
    /// Change of the articulation angle during the latest step.
    pub articulation_delta: f64,
    /// Sampled friction passthrough; no dynamic effect in this simulator.
    pub friction: f64,
    pub rng: ChaCha8Rng,
}

impl EnvState {
    pub fn hand(&self, id: HandId) -> &HandState {
        &self.hands[id.index()]
    }

    /// Pose of the facilitating hand's held object, the frame all relative
    /// observations and actions are expressed in.
    pub fn frame_f(&self) -> Option<Pose> {
        self.hands[HandId::Facilitating.index()]
            .held_object
            .map(|g| self.objects[g.object].pose)
    }

    /// World positions of (palm, index tip, thumb tip) for one hand.
    pub fn finger_points(&self, model: &HandModel, id: HandId) -> [Vec3; 3] {
        let base = self.hand(id).base;
        [
            compose(base, Pose::from_pos(model.fingertips.palm)).pos,
            compose(base, Pose::from_pos(model.fingertips.index_tip)).pos,
            compose(base, Pose::from_pos(model.fingertips.thumb_tip)).pos,
        ]
    }

    pub(crate) fn weld(&mut self, hand: HandId, object: usize) {
        let transform = relative_pose(self.objects[object].pose, self.hands[hand.index()].base);
        self.hands[hand.index()].held_object = Some(Grasp { object, transform });
        let obj = &mut self.objects[object];
        obj.attached_to = Some(hand);
        obj.lin_vel = [0.0; 3];
        obj.ang_vel = [0.0; 3];
    }

    /// Flat numeric record for replay and determinism checks. Layout:
    /// [step_count, phase, done, outcome, articulation_delta, friction,
    ///  per hand: 7 base numbers, joints, joint_vels, held flag, 7 transform
    ///  numbers (identity when free); per object: 7 pose numbers, lin_vel,
    ///  ang_vel, attach flag, articulation angle (0 when absent)].
    pub fn snapshot(&self) -> Vec<f64> {
        let mut out = vec![
            self.step_count as f64,
            match self.phase {
                Phase::Acquisition => 0.0,
                Phase::Interaction => 1.0,
            },
            self.done as u8 as f64,
            match self.outcome {
                None => 0.0,
                Some(Outcome::Success) => 1.0,
                Some(Outcome::Failure) => 2.0,
            },
            self.articulation_delta,
            self.friction,
        ];
        for hand in &self.hands {
            out.extend(hand.base.to_array());
            out.extend(&hand.joints);
            out.extend(&hand.joint_vels);
            match hand.held_object {
                Some(g) => {
                    out.push(1.0 + g.object as f64);
                    out.extend(g.transform.to_array());
                }
                None => {
                    out.push(0.0);
                    out.extend(Pose::identity().to_array());
                }
            }
        }
        for obj in &self.objects {
            out.extend(obj.pose.to_array());
            out.extend(obj.lin_vel);
            out.extend(obj.ang_vel);
            out.push(match obj.attached_to {
                None => 0.0,
                Some(HandId::Facilitating) => 1.0,
                Some(HandId::Dominant) => 2.0,
            });
            out.push(obj.articulation.unwrap_or(0.0));
        }
        out
    }
}

/// Samples a fresh episode start. The rng is moved into the state and drives
/// every later stochastic draw for this environment, so a given (spec, rng)
/// pair always yields the same episode.
pub fn reset_sample(task: &TaskSpec, mut rng: ChaCha8Rng) -> EnvState {
    let mut state = task::sample_initial(task, &mut rng);
    state.friction = if task.randomize_friction {
        rng.random_range(task.friction_range[0]..task.friction_range[1])
    } else {
        1.0
    };
    state.rng = rng;
    state
}

/// Re-samples in place, keeping the env's rng stream.
pub fn reset_in_place(state: &mut EnvState, task: &TaskSpec) {
    let rng = std::mem::replace(&mut state.rng, ChaCha8Rng::seed_from_u64(0));
    *state = reset_sample(task, rng);
}

/// Advances one control step: tracks base/joint targets, re-derives welded
/// and articulated objects, integrates free ones, then evaluates success and
/// reset conditions.
pub fn step(state: &mut EnvState, task: &TaskSpec, targets: &StepTargets, dt: f64) -> StepResult {
    let mut result = StepResult::default();
    if state.done {
        result.reset = true;
        return result;
    }

    let finite = targets.base.iter().all(|p| {
        p.pos.iter().all(|v| v.is_finite()) && p.orient.iter().all(|v| v.is_finite())
    }) && targets.joints.iter().flat_map(|j| j.iter()).all(|v| v.is_finite());
    if !finite {
        state.done = true;
        state.outcome = Some(Outcome::Failure);
        result.fault = true;
        result.reset = true;
        return result;
    }

    let model = &task.hand;
    let prev_bases = [state.hands[0].base, state.hands[1].base];
    for (i, hand) in state.hands.iter_mut().enumerate() {
        hand.base = track_pose_target(hand.base, targets.base[i], model.base_tracking_rate, dt);
        let n_act = model.n_joints_act;
        let tracked = track_joint_targets(
            &hand.joints[..n_act],
            &targets.joints[i],
            model.joint_tracking_rate,
            dt,
        )
        .expect("joint target length checked by caller");
        for (j, new) in tracked.into_iter().enumerate() {
            let [lo, hi] = model.joint_limits[j];
            let clamped = new.clamp(lo, hi);
            hand.joint_vels[j] = (clamped - hand.joints[j]) / dt;
            hand.joints[j] = clamped;
        }
    }

    // Welded objects follow their hand exactly.
    for hand in &state.hands {
        if let Some(g) = hand.held_object {
            state.objects[g.object].pose = compose(hand.base, g.transform);
        }
    }

    // Free objects: semi-implicit Euler under gravity, resting on the
    // support plane.
    for obj in &mut state.objects {
        if obj.attached_to.is_some() || task.is_derived_sub_body(obj) {
            continue;
        }
        obj.lin_vel = vadd(obj.lin_vel, vscale(GRAVITY, dt));
        obj.pose.pos = vadd(obj.pose.pos, vscale(obj.lin_vel, dt));
        if obj.ang_vel != [0.0; 3] {
            obj.pose.orient = quat_normalize(quat_mul(
                rotvec_to_quat(vscale(obj.ang_vel, dt)),
                obj.pose.orient,
            ));
        }
        if obj.pose.pos[2] < task.plane_z {
            obj.pose.pos[2] = task.plane_z;
            obj.lin_vel = [0.0; 3];
            obj.ang_vel = [0.0; 3];
        }
    }

    update_articulation(state, task, targets, &prev_bases);

    if state.phase == Phase::Acquisition && task::required_welds_present(state, task) {
        state.phase = Phase::Interaction;
    }

    state.step_count += 1;

    if state.phase == Phase::Interaction && check_success(state, task) {
        state.done = true;
        state.outcome = Some(Outcome::Success);
        result.success = true;
        result.reset = true;
        return result;
    }
    if check_reset(state, task) {
        state.done = true;
        state.outcome = Some(Outcome::Failure);
        result.reset = true;
    }
    result
}

/// N independent environments stepped in parallel. Each env owns its rng
/// stream, so the batch is deterministic regardless of thread scheduling.
pub struct VecEnv {
    pub task: TaskSpec,
    pub envs: Vec<EnvState>,
}

impl VecEnv {
    pub fn new(task: TaskSpec, n: usize, seed: u64) -> Result<Self, EnvError> {
        task.validate()?;
        let envs = (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                reset_sample(&task, rng)
            })
            .collect();
        Ok(VecEnv { task, envs })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn step(&mut self, targets: &[StepTargets], dt: f64) -> Vec<StepResult> {
        assert_eq!(targets.len(), self.envs.len());
        let task = &self.task;
        self.envs
            .par_iter_mut()
            .zip(targets.par_iter())
            .map(|(env, t)| step(env, task, t, dt))
            .collect()
    }

    pub fn reset_done(&mut self) {
        let task = &self.task;
        for env in &mut self.envs {
            if env.done {
                reset_in_place(env, task);
            }
        }
    }
}
