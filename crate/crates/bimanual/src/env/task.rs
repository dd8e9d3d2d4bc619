//! Task definitions: sampling ranges, landmark geometry, articulation
//! mechanics, and success/reset rules for the seven bimanual tasks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use super::{
    EnvError, EnvState, HandId, HandModel, HandState, ObjectState, Phase, StepTargets,
};
use crate::geom::{
    axis_angle, compose, quat_conj, quat_mul, quat_to_rotvec, rotate, vdot, vnorm, vscale, vsub,
    Pose, Vec3,
};
use crate::rewards::RewardCoeffs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskId {
    BlockInCup,
    Stack,
    BottleCap,
    Switch,
    RwBlockInCup,
    RwPour,
    RwTwistLid,
}

impl TaskId {
    pub const ALL: [TaskId; 7] = [
        TaskId::BlockInCup,
        TaskId::Stack,
        TaskId::BottleCap,
        TaskId::Switch,
        TaskId::RwBlockInCup,
        TaskId::RwPour,
        TaskId::RwTwistLid,
    ];
}

impl std::str::FromStr for TaskId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "block-in-cup" => Ok(TaskId::BlockInCup),
            "stack" => Ok(TaskId::Stack),
            "bottle-cap" => Ok(TaskId::BottleCap),
            "switch" => Ok(TaskId::Switch),
            "rw-block-in-cup" => Ok(TaskId::RwBlockInCup),
            "rw-pour" => Ok(TaskId::RwPour),
            "rw-twist-lid" => Ok(TaskId::RwTwistLid),
            other => Err(format!("unknown task '{other}'")),
        }
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TaskId::BlockInCup => "block-in-cup",
            TaskId::Stack => "stack",
            TaskId::BottleCap => "bottle-cap",
            TaskId::Switch => "switch",
            TaskId::RwBlockInCup => "rw-block-in-cup",
            TaskId::RwPour => "rw-pour",
            TaskId::RwTwistLid => "rw-twist-lid",
        };
        f.write_str(s)
    }
}

/// Uniform sampling box for one hand base: per-axis position intervals plus
/// a roll interval about the hand's arm axis (local x).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaseSampling {
    pub pos: [[f64; 2]; 3],
    pub roll: [f64; 2],
    /// Orientation before the roll is applied.
    pub orient: [f64; 4],
}

impl BaseSampling {
    fn fixed(pos: Vec3, orient: [f64; 4]) -> Self {
        BaseSampling {
            pos: [[pos[0], pos[0]], [pos[1], pos[1]], [pos[2], pos[2]]],
            roll: [0.0, 0.0],
            orient,
        }
    }

    fn boxed(pos: [[f64; 2]; 3], roll: [f64; 2], orient: [f64; 4]) -> Self {
        BaseSampling { pos, roll, orient }
    }

    fn centered(center: Vec3, amp: f64, roll: [f64; 2], orient: [f64; 4]) -> Self {
        BaseSampling {
            pos: [
                [center[0] - amp, center[0] + amp],
                [center[1] - amp, center[1] + amp],
                [center[2] - amp, center[2] + amp],
            ],
            roll,
            orient,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Pose {
        let pos = [
            draw(rng, self.pos[0]),
            draw(rng, self.pos[1]),
            draw(rng, self.pos[2]),
        ];
        let roll = draw(rng, self.roll);
        // roll about the local x axis: right-multiply
        let orient = quat_mul(self.orient, axis_angle([1.0, 0.0, 0.0], roll));
        Pose::new(pos, orient)
    }

    fn validate(&self, what: &str) -> Result<(), EnvError> {
        for [lo, hi] in self.pos.iter().chain(std::iter::once(&self.roll)) {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(EnvError::BadSpec(format!("{what} range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: TaskId,
    pub hand: HandModel,
    pub horizon: usize,
    pub dt: f64,
    /// Episodes start with objects on the support plane and ungrasped hands
    /// instead of pre-welded grasps.
    pub acquisition: bool,
    pub grasp_horizon: usize,
    pub floor_z: f64,
    pub plane_z: f64,
    pub grasp_radius: f64,
    /// Commanded closing fraction needed for attach triggers.
    pub close_threshold: f64,
    pub dominant: BaseSampling,
    pub facilitating: BaseSampling,
    /// Named point (cup mouth / rim / bottle top / button / lid center) in
    /// the parent object's frame.
    pub landmark_offset: Vec3,
    /// Lid rim circle radius (twist task).
    pub rim_radius: f64,
    /// Button angle gained per metre of fingertip penetration per step.
    pub press_gain: f64,
    pub articulation_range: [f64; 2],
    pub success_dist: f64,
    pub success_angle: f64,
    /// Minimum z-axis alignment for the pour upright check.
    pub upright_min: f64,
    pub randomize_friction: bool,
    pub friction_range: [f64; 2],
    /// Joint velocities appear in observations (simulated hands only; the
    /// real-world arm configs report positions alone).
    pub obs_joint_vels: bool,
    /// Previous action is appended to observations.
    pub obs_prev_action: bool,
    pub coeffs: RewardCoeffs,
}

impl TaskSpec {
    pub fn preset(task: TaskId) -> Self {
        let face_pos_y = axis_angle([0.0, 0.0, 1.0], FRAC_PI_2);
        let face_neg_y = axis_angle([0.0, 0.0, 1.0], -FRAC_PI_2);
        let mut spec = TaskSpec {
            task,
            hand: HandModel::full(),
            horizon: 300,
            dt: 1.0 / 60.0,
            acquisition: false,
            grasp_horizon: 120,
            floor_z: 0.05,
            plane_z: 0.45,
            grasp_radius: 0.03,
            close_threshold: 0.5,
            dominant: BaseSampling::fixed([0.5, -0.2, 0.7], face_pos_y),
            facilitating: BaseSampling::fixed([0.5, 0.2, 0.7], face_neg_y),
            landmark_offset: [0.0, 0.0, 0.06],
            rim_radius: 0.03,
            press_gain: 2.0,
            articulation_range: [0.0, 0.0],
            success_dist: 0.035,
            success_angle: 0.0,
            upright_min: 0.95,
            randomize_friction: false,
            friction_range: [0.5, 1.5],
            obs_joint_vels: true,
            obs_prev_action: true,
            coeffs: RewardCoeffs::default(),
        };
        match task {
            TaskId::BlockInCup => {
                spec.dominant = BaseSampling::boxed(
                    [[0.3, 0.7], [-0.2, 0.0], [0.7, 1.1]],
                    [-1.57, 1.57],
                    face_pos_y,
                );
                spec.facilitating = BaseSampling::fixed([0.55, 0.6, 0.8], face_neg_y);
            }
            TaskId::Stack => {
                spec.dominant = BaseSampling::boxed(
                    [[0.3, 0.7], [-0.2, 0.0], [0.7, 1.1]],
                    [-1.57, 1.57],
                    face_pos_y,
                );
                spec.facilitating = BaseSampling::fixed([0.55, 0.6, 0.8], face_neg_y);
                spec.success_dist = 0.02;
            }
            TaskId::BottleCap => {
                spec.dominant = BaseSampling::boxed(
                    [[0.58, 0.62], [-0.21, -0.19], [0.58, 0.62]],
                    [-1.0, 1.0],
                    face_pos_y,
                );
                spec.facilitating = BaseSampling::boxed(
                    [[0.53, 0.57], [0.59, 0.61], [0.43, 0.45]],
                    [-0.5, 0.5],
                    face_neg_y,
                );
                spec.landmark_offset = [0.0, 0.0, 0.08];
                spec.success_dist = 0.05;
            }
            TaskId::Switch => {
                spec.dominant = BaseSampling::boxed(
                    [[0.2, 0.6], [-0.25, -0.05], [0.5, 0.9]],
                    [-1.0, 1.0],
                    face_pos_y,
                );
                spec.facilitating = BaseSampling::boxed(
                    [[0.2, 0.6], [0.05, 0.25], [0.41, 0.81]],
                    [-1.0, 1.0],
                    face_neg_y,
                );
                spec.landmark_offset = [0.0, -0.06, 0.0];
                spec.articulation_range = [0.0, 0.5585];
                spec.success_angle = 0.3585;
            }
            TaskId::RwBlockInCup => {
                spec.hand = HandModel::reduced();
                spec.obs_joint_vels = false;
                spec.obs_prev_action = false;
                spec.dominant =
                    BaseSampling::centered([0.45, -0.15, 0.6], 0.08, [-0.3, 0.3], face_pos_y);
                spec.facilitating =
                    BaseSampling::centered([0.45, 0.15, 0.55], 0.02, [-0.1, 0.1], face_neg_y);
            }
            TaskId::RwPour => {
                spec.hand = HandModel::reduced();
                spec.obs_joint_vels = false;
                spec.obs_prev_action = false;
                spec.dominant =
                    BaseSampling::centered([0.45, -0.15, 0.6], 0.08, [-1.1, 0.6], face_pos_y);
                spec.facilitating =
                    BaseSampling::centered([0.45, 0.15, 0.55], 0.02, [-0.1, 0.1], face_neg_y);
            }
            TaskId::RwTwistLid => {
                spec.hand = HandModel::reduced();
                spec.obs_joint_vels = false;
                spec.obs_prev_action = false;
                spec.horizon = 600;
                spec.dominant =
                    BaseSampling::centered([0.45, -0.12, 0.62], 0.03, [-0.1, 0.1], face_pos_y);
                spec.facilitating = BaseSampling::fixed([0.45, 0.12, 0.5], face_neg_y);
                spec.articulation_range = [-4.0 * PI, 4.0 * PI];
                spec.success_angle = 3.0 * PI;
                spec.randomize_friction = true;
            }
        }
        spec
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        self.hand.validate()?;
        self.dominant.validate("dominant")?;
        self.facilitating.validate("facilitating")?;
        if self.horizon == 0 {
            return Err(EnvError::BadSpec("horizon must be at least 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(EnvError::BadSpec(format!("dt {}", self.dt)));
        }
        if self.articulation_range[0] > self.articulation_range[1] {
            return Err(EnvError::BadSpec("articulation range inverted".into()));
        }
        Ok(())
    }

    /// Sub-bodies (button, lid) are posed from their parent every step and
    /// skip free-body integration.
    pub fn is_derived_sub_body(&self, obj: &ObjectState) -> bool {
        obj.articulation.is_some()
    }

    /// Welds expected at interaction start: (hand, object index).
    pub fn initial_welds(&self) -> &'static [(HandId, usize)] {
        match self.task {
            TaskId::BlockInCup | TaskId::Stack | TaskId::RwBlockInCup | TaskId::RwPour => {
                &[(HandId::Facilitating, 0), (HandId::Dominant, 1)]
            }
            TaskId::BottleCap | TaskId::Switch | TaskId::RwTwistLid => {
                &[(HandId::Facilitating, 0)]
            }
        }
    }
}

/// World pose of the articulated sub-body for a given parent pose and angle.
fn sub_body_pose(task: &TaskSpec, parent: Pose, angle: f64) -> Pose {
    let hinge = match task.task {
        // button hinges about the switch x axis
        TaskId::Switch => axis_angle([1.0, 0.0, 0.0], angle),
        // lid revolves about the jar z axis
        _ => axis_angle([0.0, 0.0, 1.0], angle),
    };
    compose(parent, Pose::new(task.landmark_offset, hinge))
}

pub(super) fn sample_initial(task: &TaskSpec, rng: &mut ChaCha8Rng) -> EnvState {
    use rand::SeedableRng;
    let base_d = task.dominant.sample(rng);
    let base_f = task.facilitating.sample(rng);

    let mut state = EnvState {
        hands: [
            HandState::at(base_f, &task.hand),
            HandState::at(base_d, &task.hand),
        ],
        objects: Vec::with_capacity(2),
        step_count: 0,
        phase: Phase::Interaction,
        done: false,
        outcome: None,
        articulation_delta: 0.0,
        friction: 1.0,
        rng: ChaCha8Rng::seed_from_u64(0),
    };

    if task.acquisition {
        place_for_acquisition(task, &mut state, rng);
        return state;
    }

    // Interaction start: parent objects welded with identity grasp
    // transforms, sub-bodies derived, paired objects welded to the
    // dominant hand.
    state.objects.push(ObjectState::free_at(base_f));
    match task.task {
        TaskId::BlockInCup | TaskId::Stack | TaskId::RwBlockInCup | TaskId::RwPour => {
            state.objects.push(ObjectState::free_at(base_d));
            state.weld(HandId::Facilitating, 0);
            state.weld(HandId::Dominant, 1);
        }
        TaskId::BottleCap => {
            let seat = compose(base_f, Pose::from_pos(task.landmark_offset));
            let mut cap = ObjectState::free_at(seat);
            cap.attached_to = Some(HandId::Facilitating);
            state.objects.push(cap);
            state.weld(HandId::Facilitating, 0);
        }
        TaskId::Switch | TaskId::RwTwistLid => {
            let mut sub = ObjectState::free_at(sub_body_pose(task, base_f, 0.0));
            sub.articulation = Some(0.0);
            state.objects.push(sub);
            state.weld(HandId::Facilitating, 0);
        }
    }
    state
}

/// Acquisition start: to-be-grasped objects rest on the support plane and
/// each grasping hand is placed just short of its object along the approach
/// axis; sub-bodies ride on their parents as usual.
fn place_for_acquisition(task: &TaskSpec, state: &mut EnvState, rng: &mut ChaCha8Rng) {
    state.phase = Phase::Acquisition;
    let spots = [&task.facilitating, &task.dominant];
    let mut object_poses = [Pose::identity(), Pose::identity()];
    for (hand, obj) in task.initial_welds() {
        let sampling = spots[hand.index()];
        let pos = [
            draw(rng, sampling.pos[0]),
            draw(rng, sampling.pos[1]),
            task.plane_z,
        ];
        object_poses[*obj] = Pose::from_pos(pos);
        let jitter = [
            rng.random_range(-0.02..0.02),
            rng.random_range(-0.02..0.02),
            rng.random_range(0.0..0.02),
        ];
        let behind = rotate(sampling.orient, [-0.16, 0.0, 0.0]);
        let base = Pose::new(
            [
                pos[0] + behind[0] + jitter[0],
                pos[1] + behind[1] + jitter[1],
                pos[2] + behind[2] + 0.02 + jitter[2],
            ],
            sampling.orient,
        );
        state.hands[hand.index()].base = base;
    }

    state.objects.push(ObjectState::free_at(object_poses[0]));
    match task.task {
        TaskId::BlockInCup | TaskId::Stack | TaskId::RwBlockInCup | TaskId::RwPour => {
            state.objects.push(ObjectState::free_at(object_poses[1]));
        }
        TaskId::BottleCap => {
            let seat = compose(object_poses[0], Pose::from_pos(task.landmark_offset));
            let mut cap = ObjectState::free_at(seat);
            cap.attached_to = Some(HandId::Facilitating);
            state.objects.push(cap);
        }
        TaskId::Switch | TaskId::RwTwistLid => {
            let mut sub = ObjectState::free_at(sub_body_pose(task, object_poses[0], 0.0));
            sub.articulation = Some(0.0);
            state.objects.push(sub);
        }
    }
}

pub(super) fn required_welds_present(state: &EnvState, task: &TaskSpec) -> bool {
    task.initial_welds().iter().all(|(hand, obj)| {
        state.hands[hand.index()]
            .held_object
            .is_some_and(|g| g.object == *obj)
    })
}

/// Articulation and attachment mechanics, run after hand/object tracking.
pub fn update_articulation(
    state: &mut EnvState,
    task: &TaskSpec,
    targets: &StepTargets,
    prev_bases: &[Pose; 2],
) {
    state.articulation_delta = 0.0;
    match task.task {
        TaskId::BottleCap => update_cap(state, task, targets),
        TaskId::Switch => update_button(state, task),
        TaskId::RwTwistLid => update_lid(state, task, prev_bases),
        _ => {}
    }
    if state.phase == Phase::Acquisition {
        acquisition_attach(state, task, targets);
    }
}

fn update_cap(state: &mut EnvState, task: &TaskSpec, targets: &StepTargets) {
    if state.objects[1].attached_to == Some(HandId::Dominant) {
        return;
    }
    // seated: ride on the bottle
    let seat = compose(state.objects[0].pose, Pose::from_pos(task.landmark_offset));
    state.objects[1].pose = seat;

    let [_, index, thumb] = state.finger_points(&task.hand, HandId::Dominant);
    let cap = state.objects[1].pose.pos;
    let pinch = vnorm(vsub(index, cap)) < task.grasp_radius
        && vnorm(vsub(thumb, cap)) < task.grasp_radius;
    let closing = task.hand.close_fraction(&targets.joints[HandId::Dominant.index()])
        > task.close_threshold;
    if pinch && closing {
        state.weld(HandId::Dominant, 1);
    }
}

fn update_button(state: &mut EnvState, task: &TaskSpec) {
    let angle = state.objects[1].articulation.unwrap_or(0.0);
    let parent = state.objects[0].pose;
    let button = sub_body_pose(task, parent, angle);
    let [_, index, thumb] = state.finger_points(&task.hand, HandId::Dominant);
    let pen = [index, thumb]
        .iter()
        .map(|tip| task.grasp_radius - vnorm(vsub(*tip, button.pos)))
        .fold(0.0, f64::max);
    let new_angle = (angle + task.press_gain * pen).min(task.articulation_range[1]);
    state.articulation_delta = new_angle - angle;
    state.objects[1].articulation = Some(new_angle);
    state.objects[1].pose = sub_body_pose(task, parent, new_angle);
}

fn update_lid(state: &mut EnvState, task: &TaskSpec, prev_bases: &[Pose; 2]) {
    let angle = state.objects[1].articulation.unwrap_or(0.0);
    let parent = state.objects[0].pose;
    let lid = sub_body_pose(task, parent, angle);
    let axis = rotate(parent.orient, [0.0, 0.0, 1.0]);

    let [_, index, thumb] = state.finger_points(&task.hand, HandId::Dominant);
    let engaged = [index, thumb].iter().all(|tip| {
        let rel = vsub(*tip, lid.pos);
        let dz = vdot(rel, axis);
        let radial = vnorm(vsub(rel, vscale(axis, dz)));
        ((radial - task.rim_radius).powi(2) + dz * dz).sqrt() < task.grasp_radius
    });

    let mut new_angle = angle;
    if engaged {
        let d = state.hands[HandId::Dominant.index()].base;
        let spun = quat_to_rotvec(quat_mul(
            d.orient,
            quat_conj(prev_bases[HandId::Dominant.index()].orient),
        ));
        new_angle = (angle + vdot(spun, axis))
            .clamp(task.articulation_range[0], task.articulation_range[1]);
    }
    state.articulation_delta = new_angle - angle;
    state.objects[1].articulation = Some(new_angle);
    state.objects[1].pose = sub_body_pose(task, parent, new_angle);
}

/// Proximity + closing-command welds during the acquisition phase.
fn acquisition_attach(state: &mut EnvState, task: &TaskSpec, targets: &StepTargets) {
    for (hand, obj) in task.initial_welds() {
        if state.hands[hand.index()].held_object.is_some()
            || state.objects[*obj].attached_to.is_some()
        {
            continue;
        }
        let [_, index, thumb] = state.finger_points(&task.hand, *hand);
        let center = state.objects[*obj].pose.pos;
        let near = vnorm(vsub(index, center)) < task.grasp_radius
            && vnorm(vsub(thumb, center)) < task.grasp_radius;
        let closing =
            task.hand.close_fraction(&targets.joints[hand.index()]) > task.close_threshold;
        if near && closing {
            state.weld(*hand, *obj);
        }
    }
}

pub fn check_success(state: &EnvState, task: &TaskSpec) -> bool {
    match task.task {
        TaskId::BlockInCup | TaskId::RwBlockInCup | TaskId::Stack => {
            let d = vnorm(vsub(state.objects[1].pose.pos, state.objects[0].pose.pos));
            d < task.success_dist
        }
        TaskId::BottleCap => {
            let seat = compose(state.objects[0].pose, Pose::from_pos(task.landmark_offset));
            vnorm(vsub(state.objects[1].pose.pos, seat.pos)) >= task.success_dist
        }
        TaskId::Switch | TaskId::RwTwistLid => {
            state.objects[1].articulation.unwrap_or(0.0) >= task.success_angle
        }
        TaskId::RwPour => {
            let rim_f = compose(state.objects[0].pose, Pose::from_pos(task.landmark_offset));
            let rim_d = compose(state.objects[1].pose, Pose::from_pos(task.landmark_offset));
            let upright = rotate(state.objects[0].pose.orient, [0.0, 0.0, 1.0])[2];
            vnorm(vsub(rim_d.pos, rim_f.pos)) < task.success_dist && upright > task.upright_min
        }
    }
}

pub fn check_reset(state: &EnvState, task: &TaskSpec) -> bool {
    if state.objects.iter().any(|o| o.pose.pos[2] < task.floor_z) {
        return true;
    }
    if state.phase == Phase::Acquisition && state.step_count >= task.grasp_horizon {
        return true;
    }
    state.step_count >= task.horizon
}
