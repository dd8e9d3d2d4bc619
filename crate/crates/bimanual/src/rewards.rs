//! Shaped task rewards: per-task hand-distance and progress terms, action
//! penalty, success bonus, and the grasp-phase hold reward.

use serde::{Deserialize, Serialize};

use crate::env::{check_success, EnvState, HandId, Phase, TaskId, TaskSpec};
use crate::geom::{compose, quat_conj, rotate, vdot, vnorm, vsub, Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardCoeffs {
    /// Weight on the hand-distance term.
    pub hand_dist: f64,
    /// Weight on the task-progress term.
    pub progress: f64,
    /// Weight on the action penalty.
    pub action_penalty: f64,
    /// Weight on the success bonus.
    pub success: f64,
    /// Bonus magnitude paid once at the success step (before weighting).
    pub success_bonus: f64,
    /// Component weights for the real-world task groups
    /// (hand/orient, progress/twist, extra, penalty terms).
    pub rw: [f64; 4],
    /// Grasp-phase hold reward: allowed drift and its gain.
    pub grasp_alpha: f64,
    pub grasp_beta: f64,
}

impl Default for RewardCoeffs {
    fn default() -> Self {
        RewardCoeffs {
            hand_dist: 0.5,
            progress: 1.0,
            action_penalty: 0.01,
            success: 10.0,
            success_bonus: 25.0,
            rw: [1.0, 1.0, 1.0, 1.0],
            grasp_alpha: 0.1,
            grasp_beta: 10.0,
        }
    }
}

/// Unweighted reward components; unused entries stay zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RewardBreakdown {
    pub hand_dist: f64,
    pub progress: f64,
    pub orient: f64,
    pub twist: f64,
    pub hand_dist_penalty: f64,
    pub action_penalty: f64,
    pub success_bonus: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub const COLUMNS: [&'static str; 8] = [
        "hand_dist",
        "progress",
        "orient",
        "twist",
        "hand_dist_penalty",
        "action_penalty",
        "success_bonus",
        "total",
    ];

    pub fn as_row(&self) -> [f64; 8] {
        [
            self.hand_dist,
            self.progress,
            self.orient,
            self.twist,
            self.hand_dist_penalty,
            self.action_penalty,
            self.success_bonus,
            self.total,
        ]
    }
}

pub fn action_penalty(action: &[f64]) -> f64 {
    -action.iter().map(|a| a * a).sum::<f64>()
}

fn landmark(task: &TaskSpec, obj: usize, state: &EnvState) -> Vec3 {
    compose(state.objects[obj].pose, Pose::from_pos(task.landmark_offset)).pos
}

fn pinch(task: &TaskSpec, state: &EnvState, target: Vec3) -> f64 {
    let [_, index, thumb] = state.finger_points(&task.hand, HandId::Dominant);
    let d = vnorm(vsub(index, target)) + vnorm(vsub(thumb, target));
    (1.0 - d).powi(3)
}

fn z_axis_alignment(state: &EnvState, obj: usize) -> f64 {
    rotate(state.objects[obj].pose.orient, [0.0, 0.0, 1.0])[2]
}

/// Interaction-phase reward: weighted components plus action penalty and the
/// success bonus at the success step.
pub fn interaction_reward(
    task: &TaskSpec,
    state: &EnvState,
    action: &[f64],
) -> (f64, RewardBreakdown) {
    let c = &task.coeffs;
    let mut b = RewardBreakdown {
        action_penalty: action_penalty(action),
        ..Default::default()
    };
    if state.phase == Phase::Interaction && check_success(state, task) {
        b.success_bonus = c.success_bonus;
    }

    let palm_d = state.finger_points(&task.hand, HandId::Dominant)[0];
    let task_term = match task.task {
        TaskId::BlockInCup | TaskId::Stack => {
            b.hand_dist = (-vnorm(vsub(palm_d, landmark(task, 0, state)))).exp();
            b.progress = -vnorm(vsub(
                state.objects[1].pose.pos,
                state.objects[0].pose.pos,
            ));
            c.hand_dist * b.hand_dist + c.progress * b.progress
        }
        TaskId::BottleCap => {
            b.hand_dist = pinch(task, state, state.objects[1].pose.pos);
            b.progress = vnorm(vsub(
                state.objects[1].pose.pos,
                landmark(task, 0, state),
            ));
            c.hand_dist * b.hand_dist + c.progress * b.progress
        }
        TaskId::Switch => {
            b.hand_dist = pinch(task, state, state.objects[1].pose.pos);
            b.progress = 2.0 * state.objects[1].articulation.unwrap_or(0.0);
            c.hand_dist * b.hand_dist + c.progress * b.progress
        }
        TaskId::RwBlockInCup => {
            b.hand_dist = (-vnorm(vsub(palm_d, landmark(task, 0, state)))).exp();
            b.progress = -vnorm(vsub(
                state.objects[1].pose.pos,
                state.objects[0].pose.pos,
            ));
            c.rw[0] * b.hand_dist + c.rw[1] * b.progress
        }
        TaskId::RwPour => {
            let rim_f = landmark(task, 0, state);
            let rim_d = landmark(task, 1, state);
            b.hand_dist = (-vnorm(vsub(palm_d, rim_f))).exp();
            b.progress = -vnorm(vsub(rim_d, rim_f));
            b.orient = z_axis_alignment(state, 0);
            c.rw[0] * b.hand_dist + c.rw[1] * b.progress + c.rw[2] * b.orient
        }
        TaskId::RwTwistLid => {
            b.orient = z_axis_alignment(state, 0);
            b.twist = state.articulation_delta;
            b.hand_dist = pinch(task, state, state.objects[1].pose.pos);
            let palm_f = state.finger_points(&task.hand, HandId::Facilitating)[0];
            b.hand_dist_penalty = -f64::min(vnorm(vsub(palm_f, palm_d)) - 0.1, 0.0);
            c.rw[0] * b.orient
                + c.rw[1] * b.twist
                + c.rw[2] * b.hand_dist
                + c.rw[3] * b.hand_dist_penalty
        }
    };

    b.total = task_term + c.action_penalty * b.action_penalty + c.success * b.success_bonus;
    (b.total, b)
}

/// Grasp-phase hold reward: keep the object at its initial position relative
/// to the hand and keep the grasp direction aligned with the object's.
/// Directions are world-frame unit vectors.
pub fn grasp_reward(
    state: &EnvState,
    hand: HandId,
    object: usize,
    initial_rel_pos: Vec3,
    hand_dir: Vec3,
    obj_dir: Vec3,
    alpha: f64,
    beta: f64,
) -> f64 {
    let base = state.hand(hand).base;
    let rel = rotate(
        quat_conj(base.orient),
        vsub(state.objects[object].pose.pos, base.pos),
    );
    let drift = vnorm(vsub(rel, initial_rel_pos));
    (alpha - drift) * beta + vdot(obj_dir, hand_dir)
}

/// Relative position of an object in a hand's base frame, the reference for
/// [`grasp_reward`] drift.
pub fn rel_pos_in_hand(state: &EnvState, hand: HandId, object: usize) -> Vec3 {
    let base = state.hand(hand).base;
    rotate(
        quat_conj(base.orient),
        vsub(state.objects[object].pose.pos, base.pos),
    )
}
