//! Rollout collection, the PPO training loop, and policy evaluation.
//!
//! A training run is reproducible from its config and seed alone: parallel
//! envs draw from per-env rng streams, the action sampler and parameter init
//! use dedicated streams of the same seed, and evaluation builds its own
//! envs from a seed offset. Nothing here reads clocks or global state.

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControllerConfig;
use crate::env::{
    reset_in_place, reset_sample, EnvError, EnvState, HandModel, Outcome, Phase, StepTargets,
    TaskId, TaskSpec, VecEnv,
};
use crate::geom::{rotate, vadd, vnorm, vscale, vsub, Pose, Vec3};
use crate::rewards::{self, RewardBreakdown, RewardCoeffs};
use crate::rl::{
    adaptive_lr, ppo_update, ActorCritic, Checkpoint, CheckpointError, Optimizer, PpoConfig,
    RlError, RolloutBuffer,
};
use crate::spaces::{
    add_action_noise, add_observation_noise, affine_joints, build_observation, decode_action,
    NoiseSpec, ObsFlags, ObsLayout, PolicyVariant, SpaceError,
};

/// Height of the scripted lift during the grasp phase, in metres.
const LIFT_HEIGHT: f64 = 0.15;
/// Completed episodes kept for the rolling mean-return metric.
const WINDOW: usize = 100;
/// Added to the run seed to derive the evaluation env seed.
pub const EVAL_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

/// Seed for the evaluation envs of a run trained with `seed`.
pub fn eval_seed(seed: u64) -> u64 {
    seed.wrapping_add(EVAL_SEED_OFFSET)
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("metrics csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("non-finite training metrics at update {update}")]
    NonFinite {
        update: usize,
        /// Diagnostic checkpoint with the faulty parameters, when an output
        /// directory was available.
        checkpoint: Option<PathBuf>,
    },
}

/// Which part of a task a policy is trained on.
///
/// `Grasp` trains finger closing under the scripted base motion, `Interaction`
/// trains on pre-welded states, and `Combined` trains one policy on full
/// episodes from acquisition through interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseMode {
    Grasp,
    Interaction,
    Combined,
}

impl fmt::Display for PhaseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PhaseMode::Grasp => "grasp",
            PhaseMode::Interaction => "interaction",
            PhaseMode::Combined => "combined",
        };
        f.write_str(s)
    }
}

impl FromStr for PhaseMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "grasp" => Ok(PhaseMode::Grasp),
            "interaction" => Ok(PhaseMode::Interaction),
            "combined" => Ok(PhaseMode::Combined),
            _ => Err(format!(
                "unknown phase '{s}' (expected grasp, interaction, or combined)"
            )),
        }
    }
}

/// Everything a training run needs beyond the task presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub task: TaskId,
    pub variant: PolicyVariant,
    pub phase: PhaseMode,
    /// Parallel envs per rollout (N).
    pub n_envs: usize,
    /// Steps per env per rollout (M); one update consumes N * M transitions.
    pub rollout_steps: usize,
    /// Total env-step budget; the run performs budget / (N * M) updates.
    pub budget: u64,
    pub seed: u64,
    /// Toggles observation noise, action noise, and friction randomization.
    pub domain_randomization: bool,
    /// Involvement weight handed to the relative-target controller.
    pub alpha: f64,
    /// When set, replaces the task's hand with a small n-joint model.
    pub hand_joints: Option<usize>,
    /// When set, overrides the episode horizon.
    pub horizon: Option<usize>,
    pub eval_episodes: usize,
    /// Updates between evaluation passes; rows in between carry the last
    /// measured success rate forward.
    pub eval_every: usize,
    /// Updates between checkpoints; 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
    /// Stop once an evaluation reaches this success rate.
    pub stop_success: Option<f64>,
    /// When set, replaces the task's reward coefficients.
    pub rewards: Option<RewardCoeffs>,
    pub ppo: PpoConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            task: TaskId::Switch,
            variant: PolicyVariant::AsymmetricRelative,
            phase: PhaseMode::Interaction,
            n_envs: 64,
            rollout_steps: 64,
            budget: 2_000_000,
            seed: 0,
            domain_randomization: false,
            alpha: 0.5,
            hand_joints: None,
            horizon: None,
            eval_episodes: 32,
            eval_every: 5,
            checkpoint_every: 50,
            stop_success: None,
            rewards: None,
            ppo: PpoConfig::default(),
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.n_envs == 0 {
            return bad("n_envs must be at least 1".into());
        }
        if self.rollout_steps == 0 {
            return bad("rollout_steps must be at least 1".into());
        }
        let per_update = (self.n_envs * self.rollout_steps) as u64;
        if self.budget < per_update {
            return bad(format!(
                "budget {} is below one rollout of {} transitions",
                self.budget, per_update
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if self.horizon == Some(0) {
            return bad("horizon must be at least 1".into());
        }
        if self.hand_joints == Some(0) && self.phase != PhaseMode::Interaction {
            return bad("grasping needs at least one finger joint".into());
        }
        if self.phase == PhaseMode::Combined && self.variant != PolicyVariant::Symmetric {
            return bad(format!(
                "combined-phase training starts without a weld, so variant {} cannot act; \
                 use symmetric",
                self.variant
            ));
        }
        self.ppo.validate().map_err(TrainError::Config)?;
        Ok(())
    }

    /// Task preset with this config's overrides applied.
    pub fn task_spec(&self) -> TaskSpec {
        let mut t = TaskSpec::preset(self.task);
        if let Some(j) = self.hand_joints {
            t.hand = HandModel::desk(j);
        }
        if let Some(h) = self.horizon {
            t.horizon = h;
        }
        t.acquisition = self.phase != PhaseMode::Interaction;
        if !self.domain_randomization {
            t.randomize_friction = false;
        }
        if let Some(rw) = self.rewards {
            t.coeffs = rw;
        }
        t
    }

    pub fn noise(&self) -> NoiseSpec {
        if self.domain_randomization {
            NoiseSpec::default()
        } else {
            NoiseSpec::zero()
        }
    }

    pub fn action_noise(&self) -> f64 {
        if self.domain_randomization {
            NoiseSpec::default().action
        } else {
            0.0
        }
    }
}

/// One row of the training metrics stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env_steps: u64,
    pub success_rate: f64,
    pub mean_return: f64,
    pub approx_kl: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStat {
    pub ret: f64,
    pub len: usize,
    pub success: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RolloutStats {
    /// Episodes that finished during the rollout, in completion order.
    pub episodes: Vec<EpisodeStat>,
}

/// Aggregate results of a deterministic evaluation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub successes: usize,
    /// successes / episodes, computed exactly.
    pub success_rate: f64,
    pub mean_length: f64,
    pub mean_return: f64,
    /// Per-step means of the interaction reward components, ordered as
    /// [`RewardBreakdown::COLUMNS`]. Zero for pure grasp evaluations.
    pub component_means: [f64; 8],
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-episode reference data for the scripted grasp motion: where the bases
/// and objects started, where the base should sit to wrap the fingers around
/// the object, and the last positions for movement-direction rewards.
#[derive(Debug, Clone)]
struct GraspRef {
    base0: [Pose; 2],
    stance: [Vec3; 2],
    scripted: [bool; 2],
    object_of: [usize; 2],
    initial_rel: [Vec3; 2],
    prev_hand: [Vec3; 2],
    prev_obj: [Vec3; 2],
}

fn make_grasp_ref(task: &TaskSpec, state: &EnvState) -> GraspRef {
    let base0 = [state.hands[0].base, state.hands[1].base];
    let mut r = GraspRef {
        base0,
        stance: [base0[0].pos, base0[1].pos],
        scripted: [false; 2],
        object_of: [0; 2],
        initial_rel: [[0.0; 3]; 2],
        prev_hand: [base0[0].pos, base0[1].pos],
        prev_obj: [[0.0; 3]; 2],
    };
    let tip_x = task.hand.fingertips.index_tip[0];
    for (hand, obj) in task.initial_welds() {
        let h = hand.index();
        r.scripted[h] = true;
        r.object_of[h] = *obj;
        let opos = state.objects[*obj].pose.pos;
        // base position that puts both fingertips astride the object center
        r.stance[h] = vsub(opos, rotate(base0[h].orient, [tip_x, 0.0, 0.0]));
        r.initial_rel[h] = rewards::rel_pos_in_hand(state, *hand, *obj);
        r.prev_obj[h] = opos;
    }
    r
}

fn lerp3(a: Vec3, b: Vec3, s: f64) -> Vec3 {
    vadd(vscale(a, 1.0 - s), vscale(b, s))
}

fn unit_or_zero(v: Vec3) -> Vec3 {
    let n = vnorm(v);
    if n < 1e-12 {
        [0.0; 3]
    } else {
        vscale(v, 1.0 / n)
    }
}

/// Scripted base motion for the grasp phase: approach the stance over the
/// first third of the grasp horizon, dwell, then lift [`LIFT_HEIGHT`]
/// linearly from the halfway mark. Hands without an object to grasp hold
/// their start pose.
fn script_base_targets(task: &TaskSpec, r: &GraspRef, step_count: usize) -> [Pose; 2] {
    let approach = (task.grasp_horizon / 3).max(1);
    let lift_start = (task.grasp_horizon / 2).max(approach);
    let lift_span = task.grasp_horizon.saturating_sub(lift_start).max(1);
    let t = step_count as f64;
    let s_a = (t / approach as f64).min(1.0);
    let s_l = ((t - lift_start as f64) / lift_span as f64).clamp(0.0, 1.0);
    let mut out = [r.base0[0], r.base0[1]];
    for h in 0..2 {
        if !r.scripted[h] {
            continue;
        }
        let pos = vadd(
            lerp3(r.base0[h].pos, r.stance[h], s_a),
            [0.0, 0.0, LIFT_HEIGHT * s_l],
        );
        out[h] = Pose::new(pos, r.base0[h].orient);
    }
    out
}

/// Grasp-phase action decode: the policy only commands fingers, ordered
/// [dominant joints, facilitating joints]; bases follow the script.
fn grasp_targets(task: &TaskSpec, r: &GraspRef, state: &EnvState, action: &[f64]) -> StepTargets {
    let n = task.hand.n_joints_act;
    debug_assert_eq!(action.len(), 2 * n);
    let dom = affine_joints(&task.hand, &action[..n]);
    let fac = affine_joints(&task.hand, &action[n..]);
    StepTargets {
        base: script_base_targets(task, r, state.step_count),
        joints: [fac, dom],
    }
}

/// Mean of the hold rewards over all welds the task still has to form.
fn grasp_step_reward(task: &TaskSpec, state: &EnvState, r: &mut GraspRef) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (hand, obj) in task.initial_welds() {
        let h = hand.index();
        let hp = state.hands[h].base.pos;
        let op = state.objects[*obj].pose.pos;
        let hand_dir = unit_or_zero(vsub(hp, r.prev_hand[h]));
        let obj_dir = unit_or_zero(vsub(op, r.prev_obj[h]));
        total += rewards::grasp_reward(
            state,
            *hand,
            *obj,
            r.initial_rel[h],
            hand_dir,
            obj_dir,
            task.coeffs.grasp_alpha,
            task.coeffs.grasp_beta,
        );
        r.prev_hand[h] = hp;
        r.prev_obj[h] = op;
        count += 1;
    }
    total / count.max(1) as f64
}

fn hold_targets(task: &TaskSpec, state: &EnvState) -> StepTargets {
    let n = task.hand.n_joints_act;
    StepTargets {
        base: [state.hands[0].base, state.hands[1].base],
        joints: [
            state.hands[0].joints[..n].to_vec(),
            state.hands[1].joints[..n].to_vec(),
        ],
    }
}

/// Observation layout and action width for a phase. The grasp phase watches
/// the world through the symmetric layout (no weld exists yet, so relative
/// frames are unavailable) without a previous-action block, and acts on both
/// hands' fingers.
fn mode_layout(mode: PhaseMode, variant: PolicyVariant, task: &TaskSpec) -> (ObsLayout, usize) {
    match mode {
        PhaseMode::Grasp => {
            let flags = ObsFlags {
                joint_vels: task.obs_joint_vels,
                prev_action: false,
            };
            let layout = ObsLayout::new(PolicyVariant::Symmetric, &task.hand, flags);
            let act = 2 * task.hand.n_joints_act;
            (layout, act)
        }
        PhaseMode::Interaction | PhaseMode::Combined => {
            let layout = ObsLayout::new(variant, &task.hand, ObsFlags::from_task(task));
            let act = layout.act_dim;
            (layout, act)
        }
    }
}

/// Per-env bookkeeping shared by rollout collection and evaluation: previous
/// actions for the observation block, grasp script references, and episode
/// accumulators.
pub struct Collector {
    pub mode: PhaseMode,
    pub layout: ObsLayout,
    pub act_dim: usize,
    pub ctrl: ControllerConfig,
    pub noise: NoiseSpec,
    pub action_noise: f64,
    prev_actions: Vec<Vec<f64>>,
    refs: Vec<Option<GraspRef>>,
    ep_return: Vec<f64>,
    ep_len: Vec<usize>,
}

impl Collector {
    pub fn new(
        mode: PhaseMode,
        layout: ObsLayout,
        act_dim: usize,
        ctrl: ControllerConfig,
        noise: NoiseSpec,
        action_noise: f64,
        n_envs: usize,
    ) -> Self {
        Collector {
            mode,
            layout,
            act_dim,
            ctrl,
            noise,
            action_noise,
            prev_actions: vec![vec![0.0; act_dim]; n_envs],
            refs: vec![None; n_envs],
            ep_return: vec![0.0; n_envs],
            ep_len: vec![0; n_envs],
        }
    }

    pub fn for_config(cfg: &TrainRunConfig, task: &TaskSpec) -> Self {
        let (layout, act_dim) = mode_layout(cfg.phase, cfg.variant, task);
        Collector::new(
            cfg.phase,
            layout,
            act_dim,
            ControllerConfig { alpha: cfg.alpha },
            cfg.noise(),
            cfg.action_noise(),
            cfg.n_envs,
        )
    }

    fn start_episode(&mut self, task: &TaskSpec, state: &EnvState, i: usize) {
        self.prev_actions[i].iter_mut().for_each(|v| *v = 0.0);
        self.ep_return[i] = 0.0;
        self.ep_len[i] = 0;
        if self.mode != PhaseMode::Interaction {
            self.refs[i] = Some(make_grasp_ref(task, state));
        }
    }

    /// Builds the (noised) observation for one env. A state the layout
    /// cannot observe ends its episode as a failure and restarts the env.
    fn observe(
        &mut self,
        task: &TaskSpec,
        env: &mut EnvState,
        i: usize,
        stats: &mut RolloutStats,
    ) -> Vec<f64> {
        for attempt in 0..2 {
            let prev = self
                .layout
                .flags
                .prev_action
                .then_some(&self.prev_actions[i][..]);
            match build_observation(&self.layout, env, prev) {
                Ok(mut row) => {
                    add_observation_noise(&mut row, &self.layout, &self.noise, &mut env.rng);
                    return row;
                }
                Err(_) => {
                    debug_assert_eq!(attempt, 0, "reset state failed to observe");
                    stats.episodes.push(EpisodeStat {
                        ret: self.ep_return[i],
                        len: self.ep_len[i],
                        success: false,
                    });
                    reset_in_place(env, task);
                    self.start_episode(task, env, i);
                }
            }
        }
        unreachable!("a freshly reset state always yields an observation")
    }

    fn decode(
        &self,
        task: &TaskSpec,
        env: &EnvState,
        action: &[f64],
        i: usize,
    ) -> Result<StepTargets, SpaceError> {
        match self.mode {
            PhaseMode::Grasp => Ok(grasp_targets(
                task,
                self.refs[i].as_ref().expect("grasp refs kept per episode"),
                env,
                action,
            )),
            PhaseMode::Interaction | PhaseMode::Combined => {
                decode_action(&self.layout, &task.hand, &self.ctrl, action, env)
            }
        }
    }

    /// Reward for the step that just ran, with the interaction breakdown
    /// when one applies.
    fn step_reward(
        &mut self,
        task: &TaskSpec,
        state: &EnvState,
        i: usize,
        action: &[f64],
    ) -> (f64, Option<RewardBreakdown>) {
        let grasping = self.mode == PhaseMode::Grasp
            || (self.mode == PhaseMode::Combined && state.phase == Phase::Acquisition);
        if grasping {
            let r = self.refs[i].as_mut().expect("grasp refs kept per episode");
            (grasp_step_reward(task, state, r), None)
        } else {
            let (total, b) = rewards::interaction_reward(task, state, action);
            (total, Some(b))
        }
    }
}

/// Start states for episodes that resume after a completed grasp, cycled
/// in order. Refilled envs keep their own rng stream.
pub struct HandoffPool {
    states: Vec<EnvState>,
    cursor: usize,
}

impl HandoffPool {
    fn refill(&mut self, env: &mut EnvState) {
        let rng = std::mem::replace(&mut env.rng, ChaCha8Rng::seed_from_u64(0));
        *env = self.states[self.cursor % self.states.len()].clone();
        self.cursor += 1;
        env.rng = rng;
    }
}

/// The grasp stage's output, packaged for the interaction stage: the frozen
/// policy, the post-attach start states it produced, and the simulator steps
/// spent producing them (charged against the interaction budget).
pub struct Handoff {
    pub grasp: ActorCritic,
    pub states: Vec<EnvState>,
    pub cost: u64,
}

/// Rng stream ids for pool construction, counted downward to stay clear of
/// the env streams 0..N.
const POOL_STREAM_BASE: u64 = u64::MAX - 2;

/// Rolls the scripted grasp under the frozen policy's mean actions to build
/// start states for the interaction stage. One attempt per slot; an attempt
/// whose welds never form falls back to a pre-welded interaction start, so a
/// weak grasp policy degrades the pool instead of emptying it. The pool is
/// sized so its cost stays near an eighth of `cfg.budget`.
pub fn build_handoff(grasp: ActorCritic, cfg: &TrainRunConfig) -> Result<Handoff, TrainError> {
    let mut full_cfg = cfg.clone();
    full_cfg.phase = PhaseMode::Grasp;
    let task = full_cfg.task_spec();
    let (g_layout, g_act) = mode_layout(PhaseMode::Grasp, cfg.variant, &task);
    if grasp.obs_dim() != g_layout.obs_dim || grasp.act_dim() != g_act {
        return Err(TrainError::Config("grasp policy width mismatch".into()));
    }
    let mut inter_cfg = cfg.clone();
    inter_cfg.phase = PhaseMode::Interaction;
    let inter_task = inter_cfg.task_spec();

    let size = ((cfg.budget / 8) / task.grasp_horizon.max(1) as u64).clamp(1, 256) as usize;
    let mut states = Vec::with_capacity(size);
    let mut cost = 0u64;
    for e in 0..size as u64 {
        let mut state = reset_sample(&task, stream_rng(cfg.seed, POOL_STREAM_BASE - 2 * e));
        let refs = make_grasp_ref(&task, &state);
        let mut attached = false;
        for _ in 0..task.grasp_horizon {
            let obs = build_observation(&g_layout, &state, None).expect("grasp states observe");
            let obs = Array2::from_shape_vec((1, g_layout.obs_dim), obs).expect("obs shape");
            let a = grasp.mean_actions(&obs).row(0).to_vec();
            let tg = grasp_targets(&task, &refs, &state, &a);
            crate::env::step(&mut state, &task, &tg, task.dt);
            cost += 1;
            if state.done {
                break;
            }
            if state.phase == Phase::Interaction {
                attached = true;
                break;
            }
        }
        if attached {
            states.push(state);
        } else {
            states.push(reset_sample(
                &inter_task,
                stream_rng(cfg.seed, POOL_STREAM_BASE - 2 * e - 1),
            ));
        }
    }
    Ok(Handoff {
        grasp,
        states,
        cost,
    })
}

/// Steps the envs `steps` times under the sampled policy and returns the
/// filled buffer plus the episodes that completed along the way. The buffer
/// holds exactly `steps * envs.len()` transitions; envs that finish an
/// episode restart immediately and keep contributing. A faulted step scores
/// zero reward and ends its episode as a failure while the rest of the batch
/// carries on. With a pool, restarts draw handoff states instead of fresh
/// samples.
pub fn collect_rollouts(
    ac: &ActorCritic,
    envs: &mut VecEnv,
    col: &mut Collector,
    steps: usize,
    rng: &mut ChaCha8Rng,
    mut pool: Option<&mut HandoffPool>,
) -> (RolloutBuffer, RolloutStats) {
    let n = envs.len();
    assert!(n > 0 && steps > 0, "empty rollout");
    assert_eq!(col.prev_actions.len(), n, "collector sized for {n} envs");
    assert_eq!(ac.obs_dim(), col.layout.obs_dim, "policy obs width");
    assert_eq!(ac.act_dim(), col.act_dim, "policy act width");

    let task = envs.task.clone();
    let mut buffer = RolloutBuffer::new(steps, n, col.layout.obs_dim, col.act_dim);
    let mut stats = RolloutStats::default();
    let mut obs_batch = Array2::zeros((n, col.layout.obs_dim));

    for t in 0..steps {
        for i in 0..n {
            if envs.envs[i].step_count == 0 {
                col.start_episode(&task, &envs.envs[i], i);
            }
            let row = col.observe(&task, &mut envs.envs[i], i, &mut stats);
            obs_batch.row_mut(i).assign(&ArrayView1::from(&row[..]));
        }
        let (actions, log_probs) = ac.sample_actions(&obs_batch, rng);
        let values = ac.values(&obs_batch);

        let mut targets = Vec::with_capacity(n);
        let mut decode_fault = vec![false; n];
        for i in 0..n {
            let mut exec: Vec<f64> = actions.row(i).to_vec();
            if col.action_noise > 0.0 {
                add_action_noise(&mut exec, col.action_noise, &mut envs.envs[i].rng);
            }
            match col.decode(&task, &envs.envs[i], &exec, i) {
                Ok(tg) => targets.push(tg),
                Err(_) => {
                    let env = &mut envs.envs[i];
                    env.done = true;
                    env.outcome = Some(Outcome::Failure);
                    decode_fault[i] = true;
                    let tg = hold_targets(&task, env);
                    targets.push(tg);
                }
            }
        }
        let results = envs.step(&targets, task.dt);

        for i in 0..n {
            let fault = results[i].fault || decode_fault[i];
            let arow = actions.row(i);
            let a = arow.as_slice().expect("actions are row-major");
            let reward0 = if fault {
                0.0
            } else {
                col.step_reward(&task, &envs.envs[i], i, a).0
            };
            let env = &mut envs.envs[i];
            let mut reward = reward0;
            let mut success = results[i].success;
            // pure grasp training: forming every weld is the goal itself
            if col.mode == PhaseMode::Grasp && env.phase == Phase::Interaction && !env.done {
                env.done = true;
                env.outcome = Some(Outcome::Success);
                success = true;
                reward += task.coeffs.success * task.coeffs.success_bonus;
            }
            let done = env.done;
            let k = t * n + i;
            buffer.obs.row_mut(k).assign(&obs_batch.row(i));
            buffer.actions.row_mut(k).assign(&arow);
            buffer.log_probs[k] = log_probs[i];
            buffer.values[[t, i]] = values[i];
            buffer.rewards[[t, i]] = reward;
            buffer.dones[[t, i]] = if done { 1.0 } else { 0.0 };
            col.ep_return[i] += reward;
            col.ep_len[i] += 1;
            for (d, s) in col.prev_actions[i].iter_mut().zip(arow.iter()) {
                *d = *s;
            }
            if done {
                stats.episodes.push(EpisodeStat {
                    ret: col.ep_return[i],
                    len: col.ep_len[i],
                    success,
                });
                col.ep_return[i] = 0.0;
                col.ep_len[i] = 0;
            }
        }
        match pool.as_deref_mut() {
            Some(p) => {
                for i in 0..n {
                    if envs.envs[i].done {
                        p.refill(&mut envs.envs[i]);
                        col.start_episode(&task, &envs.envs[i], i);
                    }
                }
            }
            None => envs.reset_done(),
        }
    }

    for i in 0..n {
        let row = col.observe(&task, &mut envs.envs[i], i, &mut stats);
        obs_batch.row_mut(i).assign(&ArrayView1::from(&row[..]));
    }
    buffer.bootstrap.assign(&ac.values(&obs_batch));
    (buffer, stats)
}

fn report_from(
    stats: &[EpisodeStat],
    comp: [f64; 8],
    comp_steps: usize,
    episodes: usize,
) -> EvalReport {
    let successes = stats.iter().filter(|s| s.success).count();
    let mut component_means = comp;
    if comp_steps > 0 {
        for v in &mut component_means {
            *v /= comp_steps as f64;
        }
    }
    EvalReport {
        episodes,
        successes,
        success_rate: successes as f64 / episodes as f64,
        mean_length: stats.iter().map(|s| s.len as f64).sum::<f64>() / episodes as f64,
        mean_return: stats.iter().map(|s| s.ret).sum::<f64>() / episodes as f64,
        component_means,
    }
}

/// Runs `episodes` episodes with the policy mean, no noise, and no learning,
/// and aggregates the outcomes. Envs are built fresh from `seed`, so the same
/// call yields the same report every time and leaves no state behind.
pub fn evaluate(
    ac: &ActorCritic,
    task: &TaskSpec,
    mode: PhaseMode,
    variant: PolicyVariant,
    ctrl: ControllerConfig,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, TrainError> {
    if episodes == 0 {
        return Err(TrainError::Config(
            "evaluation needs at least one episode".into(),
        ));
    }
    let (layout, act_dim) = mode_layout(mode, variant, task);
    if ac.obs_dim() != layout.obs_dim || ac.act_dim() != act_dim {
        return Err(TrainError::Config(format!(
            "policy is ({}, {}) but the {} layout wants ({}, {})",
            ac.obs_dim(),
            ac.act_dim(),
            variant,
            layout.obs_dim,
            act_dim
        )));
    }
    let mut envs = VecEnv::new(task.clone(), episodes, seed)?;
    let task = envs.task.clone();
    let n = episodes;
    let mut col = Collector::new(mode, layout, act_dim, ctrl, NoiseSpec::zero(), 0.0, n);
    let mut scratch = RolloutStats::default();
    let mut obs_batch = Array2::zeros((n, col.layout.obs_dim));
    let mut done_stats: Vec<Option<EpisodeStat>> = vec![None; n];
    let mut comp = [0.0f64; 8];
    let mut comp_steps = 0usize;

    for i in 0..n {
        col.start_episode(&task, &envs.envs[i], i);
    }
    let cap = task.horizon.max(task.grasp_horizon) + 2;
    for _ in 0..cap {
        if done_stats.iter().all(|s| s.is_some()) {
            break;
        }
        let running: Vec<bool> = envs.envs.iter().map(|e| !e.done).collect();
        for i in 0..n {
            if running[i] {
                let row = col.observe(&task, &mut envs.envs[i], i, &mut scratch);
                obs_batch.row_mut(i).assign(&ArrayView1::from(&row[..]));
            }
        }
        let actions = ac.mean_actions(&obs_batch);

        let mut targets = Vec::with_capacity(n);
        let mut decode_fault = vec![false; n];
        for i in 0..n {
            if !running[i] {
                let tg = hold_targets(&task, &envs.envs[i]);
                targets.push(tg);
                continue;
            }
            let arow = actions.row(i);
            let a = arow.as_slice().expect("actions are row-major");
            match col.decode(&task, &envs.envs[i], a, i) {
                Ok(tg) => targets.push(tg),
                Err(_) => {
                    let env = &mut envs.envs[i];
                    env.done = true;
                    env.outcome = Some(Outcome::Failure);
                    decode_fault[i] = true;
                    let tg = hold_targets(&task, env);
                    targets.push(tg);
                }
            }
        }
        let results = envs.step(&targets, task.dt);

        for i in 0..n {
            if !running[i] {
                continue;
            }
            let fault = results[i].fault || decode_fault[i];
            let arow = actions.row(i);
            let a = arow.as_slice().expect("actions are row-major");
            let (reward0, breakdown) = if fault {
                (0.0, None)
            } else {
                col.step_reward(&task, &envs.envs[i], i, a)
            };
            if let Some(b) = breakdown {
                for (acc, v) in comp.iter_mut().zip(b.as_row()) {
                    *acc += v;
                }
                comp_steps += 1;
            }
            let env = &mut envs.envs[i];
            let mut reward = reward0;
            let mut success = results[i].success;
            if col.mode == PhaseMode::Grasp && env.phase == Phase::Interaction && !env.done {
                env.done = true;
                env.outcome = Some(Outcome::Success);
                success = true;
                reward += task.coeffs.success;
            }
            col.ep_return[i] += reward;
            col.ep_len[i] += 1;
            for (d, s) in col.prev_actions[i].iter_mut().zip(arow.iter()) {
                *d = *s;
            }
            if env.done {
                done_stats[i] = Some(EpisodeStat {
                    ret: col.ep_return[i],
                    len: col.ep_len[i],
                    success,
                });
            }
        }
        // no resets: each env runs exactly one episode and then freezes
    }
    let stats: Vec<EpisodeStat> = done_stats
        .into_iter()
        .map(|s| s.expect("episode ends within the horizon"))
        .collect();
    Ok(report_from(&stats, comp, comp_steps, episodes))
}

/// The two policies of a staged run plus how the interaction one acts.
pub struct TwoPhasePolicies<'a> {
    pub grasp: &'a ActorCritic,
    pub interaction: &'a ActorCritic,
    pub variant: PolicyVariant,
    pub ctrl: ControllerConfig,
}

fn two_phase_episode(
    p: &TwoPhasePolicies,
    g_layout: &ObsLayout,
    i_layout: &ObsLayout,
    task: &TaskSpec,
    state: &mut EnvState,
    comp: &mut [f64; 8],
    comp_steps: &mut usize,
) -> EpisodeStat {
    let mut refs = (state.phase == Phase::Acquisition).then(|| make_grasp_ref(task, state));
    let mut prev_inter = vec![0.0; i_layout.act_dim];
    let mut ep = EpisodeStat {
        ret: 0.0,
        len: 0,
        success: false,
    };
    let cap = task.horizon.max(task.grasp_horizon) + 2;
    for _ in 0..cap {
        if state.done {
            break;
        }
        let reward = if state.phase == Phase::Acquisition {
            let r = refs.as_mut().expect("acquisition entered with refs");
            let obs = match build_observation(g_layout, state, None) {
                Ok(o) => o,
                Err(_) => {
                    state.done = true;
                    state.outcome = Some(Outcome::Failure);
                    break;
                }
            };
            let obs = Array2::from_shape_vec((1, g_layout.obs_dim), obs).expect("obs shape");
            let a = p.grasp.mean_actions(&obs).row(0).to_vec();
            let tg = grasp_targets(task, r, state, &a);
            let res = crate::env::step(state, task, &tg, task.dt);
            if res.fault {
                0.0
            } else {
                grasp_step_reward(task, state, r)
            }
        } else {
            let prev = i_layout.flags.prev_action.then_some(&prev_inter[..]);
            let obs = match build_observation(i_layout, state, prev) {
                Ok(o) => o,
                Err(_) => {
                    state.done = true;
                    state.outcome = Some(Outcome::Failure);
                    break;
                }
            };
            let obs = Array2::from_shape_vec((1, i_layout.obs_dim), obs).expect("obs shape");
            let a = p.interaction.mean_actions(&obs).row(0).to_vec();
            let tg = match decode_action(i_layout, &task.hand, &p.ctrl, &a, state) {
                Ok(t) => t,
                Err(_) => {
                    state.done = true;
                    state.outcome = Some(Outcome::Failure);
                    break;
                }
            };
            let res = crate::env::step(state, task, &tg, task.dt);
            let (r, b) = rewards::interaction_reward(task, state, &a);
            prev_inter.copy_from_slice(&a);
            if res.fault {
                0.0
            } else {
                for (acc, v) in comp.iter_mut().zip(b.as_row()) {
                    *acc += v;
                }
                *comp_steps += 1;
                r
            }
        };
        ep.ret += reward;
        ep.len += 1;
    }
    ep.success = state.outcome == Some(Outcome::Success);
    ep
}

/// Runs one episode with the grasp policy in charge until every required
/// weld has formed, then hands control to the interaction policy; if the
/// grasp horizon lapses first the episode fails. A state that starts
/// pre-welded skips straight to interaction. Both policies act through
/// their means.
pub fn two_phase_rollout(
    p: &TwoPhasePolicies,
    task: &TaskSpec,
    state: &mut EnvState,
) -> Result<EpisodeStat, TrainError> {
    let (g_layout, g_act) = mode_layout(PhaseMode::Grasp, p.variant, task);
    let (i_layout, i_act) = mode_layout(PhaseMode::Interaction, p.variant, task);
    if p.grasp.obs_dim() != g_layout.obs_dim || p.grasp.act_dim() != g_act {
        return Err(TrainError::Config("grasp policy width mismatch".into()));
    }
    if p.interaction.obs_dim() != i_layout.obs_dim || p.interaction.act_dim() != i_act {
        return Err(TrainError::Config(
            "interaction policy width mismatch".into(),
        ));
    }
    let mut comp = [0.0; 8];
    let mut comp_steps = 0;
    Ok(two_phase_episode(
        p,
        &g_layout,
        &i_layout,
        task,
        state,
        &mut comp,
        &mut comp_steps,
    ))
}

/// Deterministic staged evaluation over `episodes` fresh episodes.
pub fn evaluate_two_phase(
    p: &TwoPhasePolicies,
    task: &TaskSpec,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, TrainError> {
    if episodes == 0 {
        return Err(TrainError::Config(
            "evaluation needs at least one episode".into(),
        ));
    }
    let (g_layout, g_act) = mode_layout(PhaseMode::Grasp, p.variant, task);
    let (i_layout, i_act) = mode_layout(PhaseMode::Interaction, p.variant, task);
    if p.grasp.obs_dim() != g_layout.obs_dim || p.grasp.act_dim() != g_act {
        return Err(TrainError::Config("grasp policy width mismatch".into()));
    }
    if p.interaction.obs_dim() != i_layout.obs_dim || p.interaction.act_dim() != i_act {
        return Err(TrainError::Config(
            "interaction policy width mismatch".into(),
        ));
    }
    let mut comp = [0.0; 8];
    let mut comp_steps = 0;
    let mut stats = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut state = reset_sample(task, stream_rng(seed, e as u64));
        stats.push(two_phase_episode(
            p,
            &g_layout,
            &i_layout,
            task,
            &mut state,
            &mut comp,
            &mut comp_steps,
        ));
    }
    Ok(report_from(&stats, comp, comp_steps, episodes))
}

/// Splits a total env-step budget between a grasp run and an interaction run
/// so that each side is a whole number of updates and the two sides together
/// spend exactly the rounded-down total.
pub fn split_budget(total: u64, grasp_fraction: f64, per_update: u64) -> (u64, u64) {
    assert!(per_update > 0, "per_update must be positive");
    let updates = total / per_update;
    assert!(updates >= 2, "budget too small to split");
    let g = (((updates as f64) * grasp_fraction).round() as u64).clamp(1, updates - 1);
    (g * per_update, (updates - g) * per_update)
}

/// Results of a completed (or early-stopped) training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    pub final_eval: EvalReport,
    pub policy: ActorCritic,
    pub env_steps: u64,
}

fn abort_diagnostic(
    out_dir: Option<&Path>,
    ac: &ActorCritic,
    rng: &ChaCha8Rng,
    ppo: &PpoConfig,
    update: usize,
) -> TrainError {
    let checkpoint = out_dir.map(|d| d.join("diagnostic.ckpt"));
    if let Some(path) = &checkpoint {
        let ck = Checkpoint {
            config: ppo.clone(),
            params: ac.clone(),
            rng: rng.clone(),
        };
        // best effort: the error below matters more than this file
        let _ = ck.save(path);
    }
    TrainError::NonFinite { update, checkpoint }
}

fn mean_return_estimate(window: &VecDeque<EpisodeStat>, col: &Collector) -> f64 {
    if window.is_empty() {
        // nothing finished yet: fall back to the in-progress returns
        let n = col.ep_return.len().max(1);
        return col.ep_return.iter().sum::<f64>() / n as f64;
    }
    window.iter().map(|e| e.ret).sum::<f64>() / window.len() as f64
}

/// Trains one policy for one phase until the env-step budget is spent (or an
/// evaluation clears `stop_success`). Writes one metrics row per update, a
/// checkpoint every `checkpoint_every` updates, and a final checkpoint, all
/// under `out_dir` when one is given. Every simulator step of rollout
/// collection counts toward `env_steps`; evaluation runs on separate envs
/// and is free.
pub fn train_phase(
    cfg: &TrainRunConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    run_training(cfg, out_dir, None)
}

/// Trains the interaction stage of a two-phase run. Episodes start from the
/// handoff pool rather than fresh pre-welded samples, the pool's build cost
/// is charged against the budget up front, and the reported success rate is
/// that of the stitched pipeline: the frozen grasp policy followed by the
/// policy in training.
pub fn train_staged_interaction(
    cfg: &TrainRunConfig,
    out_dir: Option<&Path>,
    handoff: &Handoff,
) -> Result<TrainOutcome, TrainError> {
    if cfg.phase != PhaseMode::Interaction {
        return Err(TrainError::Config(
            "staged training is for the interaction phase".into(),
        ));
    }
    run_training(cfg, out_dir, Some(handoff))
}

fn run_training(
    cfg: &TrainRunConfig,
    out_dir: Option<&Path>,
    staged: Option<&Handoff>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let task = cfg.task_spec();
    let mut col = Collector::for_config(cfg, &task);
    let mut init_rng = stream_rng(cfg.seed, u64::MAX);
    let mut ac = ActorCritic::init(col.layout.obs_dim, col.act_dim, &cfg.ppo, &mut init_rng);
    let mut opt = Optimizer::new(&ac);
    let mut sampler = stream_rng(cfg.seed, u64::MAX - 1);
    let mut envs = VecEnv::new(task.clone(), cfg.n_envs, cfg.seed)?;
    let mut pool = staged.map(|h| HandoffPool {
        states: h.states.clone(),
        cursor: 0,
    });
    if let Some(p) = pool.as_mut() {
        for env in envs.envs.iter_mut() {
            p.refill(env);
        }
    }
    let full_task = staged.map(|_| {
        let mut c = cfg.clone();
        c.phase = PhaseMode::Grasp;
        c.task_spec()
    });

    let per_update = (cfg.n_envs * cfg.rollout_steps) as u64;
    let spent_up_front = staged.map_or(0, |h| h.cost);
    let updates = ((cfg.budget.saturating_sub(spent_up_front)) / per_update).max(1) as usize;
    let eval_seed = eval_seed(cfg.seed);
    let ctrl = ControllerConfig { alpha: cfg.alpha };

    let mut writer = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            if cfg.checkpoint_every > 0 {
                fs::create_dir_all(dir.join("checkpoints"))?;
            }
            Some(csv::Writer::from_path(dir.join("metrics.csv"))?)
        }
        None => None,
    };

    let mut window: VecDeque<EpisodeStat> = VecDeque::with_capacity(WINDOW);
    let mut rows = Vec::with_capacity(updates);
    let mut lr = cfg.ppo.lr;
    let mut env_steps = spent_up_front;
    let mut last_eval: Option<EvalReport> = None;

    for u in 1..=updates {
        let (mut buffer, stats) = collect_rollouts(
            &ac,
            &mut envs,
            &mut col,
            cfg.rollout_steps,
            &mut sampler,
            pool.as_mut(),
        );
        env_steps += per_update;
        for e in stats.episodes {
            if window.len() == WINDOW {
                window.pop_front();
            }
            window.push_back(e);
        }
        buffer.compute_gae(cfg.ppo.gamma, cfg.ppo.lambda);
        let ustats = match ppo_update(&mut ac, &mut opt, &buffer, &cfg.ppo, lr, &mut sampler) {
            Ok(s) => s,
            Err(RlError::NonFiniteLoss { .. }) => {
                return Err(abort_diagnostic(out_dir, &ac, &sampler, &cfg.ppo, u));
            }
        };
        lr = adaptive_lr(lr, ustats.approx_kl, cfg.ppo.kl_threshold);
        let mean_return = mean_return_estimate(&window, &col);
        if !mean_return.is_finite() || !ustats.approx_kl.is_finite() {
            return Err(abort_diagnostic(out_dir, &ac, &sampler, &cfg.ppo, u));
        }
        if u == 1 || u == updates || u % cfg.eval_every == 0 {
            last_eval = Some(match staged {
                Some(h) => evaluate_two_phase(
                    &TwoPhasePolicies {
                        grasp: &h.grasp,
                        interaction: &ac,
                        variant: cfg.variant,
                        ctrl,
                    },
                    full_task.as_ref().expect("staged runs keep the full task"),
                    cfg.eval_episodes,
                    eval_seed,
                )?,
                None => evaluate(
                    &ac,
                    &task,
                    cfg.phase,
                    cfg.variant,
                    ctrl,
                    cfg.eval_episodes,
                    eval_seed,
                )?,
            });
        }
        let success_rate = last_eval
            .as_ref()
            .expect("the first update always evaluates")
            .success_rate;
        let row = MetricsRow {
            env_steps,
            success_rate,
            mean_return,
            approx_kl: ustats.approx_kl,
            lr,
        };
        if let Some(w) = writer.as_mut() {
            w.serialize(row)?;
            w.flush()?;
        }
        rows.push(row);
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && u % cfg.checkpoint_every == 0 {
                let ck = Checkpoint {
                    config: cfg.ppo.clone(),
                    params: ac.clone(),
                    rng: sampler.clone(),
                };
                ck.save(&dir.join("checkpoints").join(format!("update_{u:05}.ckpt")))?;
            }
        }
        if cfg.stop_success.is_some_and(|th| success_rate >= th) {
            break;
        }
    }

    if let Some(dir) = out_dir {
        let ck = Checkpoint {
            config: cfg.ppo.clone(),
            params: ac.clone(),
            rng: sampler.clone(),
        };
        ck.save(&dir.join("final.ckpt"))?;
    }
    let final_eval = last_eval.expect("at least one update ran");
    Ok(TrainOutcome {
        metrics: rows,
        final_eval,
        policy: ac,
        env_steps,
    })
}

pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Runs the same config across seeds, one output directory per seed.
pub fn train_seeds(
    cfg: &TrainRunConfig,
    seeds: &[u64],
    out_root: Option<&Path>,
) -> Result<Vec<TrainOutcome>, TrainError> {
    seeds
        .iter()
        .map(|&seed| {
            let mut c = cfg.clone();
            c.seed = seed;
            let dir = out_root.map(|r| r.join(format!("seed_{seed}")));
            train_phase(&c, dir.as_deref())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn tmp_dir(tag: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("bimanual_trainer_{tag}_{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        fs::create_dir_all(&d).unwrap();
        d
    }

    fn tiny_cfg() -> TrainRunConfig {
        let mut cfg = TrainRunConfig {
            task: TaskId::Switch,
            variant: PolicyVariant::AsymmetricRelative,
            phase: PhaseMode::Interaction,
            n_envs: 2,
            rollout_steps: 8,
            budget: 32,
            seed: 7,
            hand_joints: Some(2),
            horizon: Some(20),
            eval_episodes: 4,
            eval_every: 1,
            checkpoint_every: 0,
            ..TrainRunConfig::default()
        };
        cfg.ppo.policy_hidden = vec![16, 16];
        cfg.ppo.value_hidden = vec![16, 16];
        cfg.ppo.minibatch = 8;
        cfg.ppo.epochs = 2;
        cfg
    }

    fn fresh_policy(cfg: &TrainRunConfig, task: &TaskSpec, seed: u64) -> (Collector, ActorCritic) {
        let col = Collector::for_config(cfg, task);
        let ac = ActorCritic::init(
            col.layout.obs_dim,
            col.act_dim,
            &cfg.ppo,
            &mut stream_rng(seed, 0),
        );
        (col, ac)
    }

    #[test]
    fn one_env_one_step_yields_one_transition() {
        let mut cfg = tiny_cfg();
        cfg.n_envs = 1;
        let task = cfg.task_spec();
        let (mut col, ac) = fresh_policy(&cfg, &task, 1);
        let mut envs = VecEnv::new(task, 1, cfg.seed).unwrap();
        let (buf, _) = collect_rollouts(&ac, &mut envs, &mut col, 1, &mut stream_rng(1, 1), None);
        assert_eq!(buf.len(), 1);
        assert_eq!(buf.n_steps, 1);
        assert_eq!(buf.n_envs, 1);
    }

    #[test]
    fn collection_counts_and_horizon_flags_are_exact() {
        let mut cfg = tiny_cfg();
        cfg.n_envs = 3;
        cfg.horizon = Some(5);
        let task = cfg.task_spec();
        let (mut col, ac) = fresh_policy(&cfg, &task, 2);
        let mut envs = VecEnv::new(task, 3, cfg.seed).unwrap();
        let (buf, stats) = collect_rollouts(&ac, &mut envs, &mut col, 12, &mut stream_rng(2, 1), None);
        assert_eq!(buf.len(), 36);
        for i in 0..3 {
            for t in 0..12 {
                let expect = if t == 4 || t == 9 { 1.0 } else { 0.0 };
                assert_eq!(buf.dones[[t, i]], expect, "env {i} step {t}");
            }
        }
        assert_eq!(stats.episodes.len(), 6);
        assert!(stats.episodes.iter().all(|e| e.len == 5 && !e.success));
    }

    #[test]
    fn fixed_seed_reproduces_the_rollout_buffer_bitwise() {
        let mut cfg = tiny_cfg();
        cfg.domain_randomization = true;
        let run = || {
            let task = cfg.task_spec();
            let (mut col, ac) = fresh_policy(&cfg, &task, 3);
            let mut envs = VecEnv::new(task, cfg.n_envs, cfg.seed).unwrap();
            let mut rng = stream_rng(3, 1);
            let (a, _) = collect_rollouts(&ac, &mut envs, &mut col, 8, &mut rng, None);
            let (b, _) = collect_rollouts(&ac, &mut envs, &mut col, 8, &mut rng, None);
            (a, b)
        };
        let (a1, b1) = run();
        let (a2, b2) = run();
        for (x, y) in [(&a1, &a2), (&b1, &b2)] {
            assert_eq!(x.obs, y.obs);
            assert_eq!(x.actions, y.actions);
            assert_eq!(x.log_probs, y.log_probs);
            assert_eq!(x.rewards, y.rewards);
            assert_eq!(x.values, y.values);
            assert_eq!(x.dones, y.dones);
            assert_eq!(x.bootstrap, y.bootstrap);
        }
        // the second rollout continues episodes rather than repeating them
        assert_ne!(a1.obs, b1.obs);
    }

    #[test]
    fn previous_action_segment_mirrors_the_last_policy_action() {
        let mut cfg = tiny_cfg();
        cfg.variant = PolicyVariant::Symmetric;
        cfg.n_envs = 1;
        let task = cfg.task_spec();
        assert!(task.obs_prev_action);
        let (mut col, ac) = fresh_policy(&cfg, &task, 4);
        let seg = *col.layout.segment("prev_action").unwrap();
        let mut envs = VecEnv::new(task, 1, cfg.seed).unwrap();
        let (buf, _) = collect_rollouts(&ac, &mut envs, &mut col, 3, &mut stream_rng(4, 1), None);
        let prev0 = buf.obs.row(0);
        assert!(prev0
            .slice(ndarray::s![seg.offset..seg.offset + seg.len])
            .iter()
            .all(|v| *v == 0.0));
        for t in 1..3 {
            let prev = buf.obs.row(t);
            let prev = prev.slice(ndarray::s![seg.offset..seg.offset + seg.len]);
            assert_eq!(prev, buf.actions.row(t - 1));
        }
    }

    #[test]
    fn training_writes_one_metrics_row_per_update_and_is_reproducible() {
        let cfg = tiny_cfg();
        let d1 = tmp_dir("metrics_a");
        let d2 = tmp_dir("metrics_b");
        let o1 = train_phase(&cfg, Some(&d1)).unwrap();
        let o2 = train_phase(&cfg, Some(&d2)).unwrap();
        assert_eq!(o1.metrics.len(), 2);
        assert_eq!(o1.env_steps, 32);
        assert_eq!(o1.metrics[0].env_steps, 16);
        assert_eq!(o1.metrics[1].env_steps, 32);
        let b1 = fs::read(d1.join("metrics.csv")).unwrap();
        let b2 = fs::read(d2.join("metrics.csv")).unwrap();
        assert!(!b1.is_empty());
        assert_eq!(b1, b2);
        let text = String::from_utf8(b1).unwrap();
        assert!(text.starts_with("env_steps,success_rate,mean_return,approx_kl,lr\n"));
        assert_eq!(text.lines().count(), 3);
        assert!(d1.join("final.ckpt").exists());
        let ck = Checkpoint::load(&d1.join("final.ckpt")).unwrap();
        assert_eq!(ck.params, o1.policy);
        for d in [d1, d2] {
            let _ = fs::remove_dir_all(d);
        }
    }

    #[test]
    fn budget_equal_to_one_rollout_trains_exactly_once() {
        let mut cfg = tiny_cfg();
        cfg.budget = 16;
        let out = train_phase(&cfg, None).unwrap();
        assert_eq!(out.metrics.len(), 1);
        assert_eq!(out.env_steps, 16);
    }

    #[test]
    fn grasp_and_combined_phases_train_end_to_end() {
        let mut cfg = tiny_cfg();
        cfg.phase = PhaseMode::Grasp;
        cfg.budget = 16;
        cfg.eval_episodes = 2;
        let out = train_phase(&cfg, None).unwrap();
        assert_eq!(out.metrics.len(), 1);

        cfg.phase = PhaseMode::Combined;
        cfg.variant = PolicyVariant::Symmetric;
        let out = train_phase(&cfg, None).unwrap();
        assert_eq!(out.metrics.len(), 1);
    }

    #[test]
    fn evaluation_is_deterministic_and_a_random_policy_fails_switch() {
        let mut cfg = tiny_cfg();
        cfg.horizon = None;
        let task = cfg.task_spec();
        let (col, ac) = fresh_policy(&cfg, &task, 5);
        let ctrl = ControllerConfig { alpha: cfg.alpha };
        drop(col);
        let r1 = evaluate(&ac, &task, cfg.phase, cfg.variant, ctrl, 100, 123).unwrap();
        let r2 = evaluate(&ac, &task, cfg.phase, cfg.variant, ctrl, 100, 123).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.episodes, 100);
        assert_eq!(r1.success_rate, r1.successes as f64 / 100.0);
        assert!(r1.success_rate <= 0.05, "got {}", r1.success_rate);
        assert!(r1.mean_length > 0.0);
    }

    #[test]
    fn scripted_grasp_attaches_with_closed_fingers_and_fails_open() {
        let mut cfg = tiny_cfg();
        cfg.phase = PhaseMode::Grasp;
        cfg.horizon = None;
        let task = cfg.task_spec();
        assert!(task.acquisition);
        let run = |close: f64| {
            let mut env = reset_sample(&task, stream_rng(3, 0));
            let refs = make_grasp_ref(&task, &env);
            let n = 2 * task.hand.n_joints_act;
            for _ in 0..task.grasp_horizon {
                let action = vec![close; n];
                let tg = grasp_targets(&task, &refs, &env, &action);
                crate::env::step(&mut env, &task, &tg, task.dt);
                if env.phase == Phase::Interaction || env.done {
                    break;
                }
            }
            env
        };
        let closed = run(1.0);
        assert_eq!(closed.phase, Phase::Interaction, "script failed to attach");
        let open = run(-1.0);
        assert_eq!(open.phase, Phase::Acquisition);
        assert!(open.done);
        assert_eq!(open.outcome, Some(Outcome::Failure));
    }

    #[test]
    fn two_phase_hands_off_and_prewelded_skips_grasp() {
        let mut cfg = tiny_cfg();
        cfg.variant = PolicyVariant::Symmetric;
        cfg.phase = PhaseMode::Combined;
        cfg.horizon = None;
        let task_full = cfg.task_spec();
        cfg.phase = PhaseMode::Interaction;
        cfg.horizon = Some(30);
        let task_inter = cfg.task_spec();

        let (g_layout, g_act) = mode_layout(PhaseMode::Grasp, cfg.variant, &task_full);
        let (i_layout, i_act) = mode_layout(PhaseMode::Interaction, cfg.variant, &task_inter);
        let zero = |obs: usize, act: usize| {
            let ac = ActorCritic::init(obs, act, &cfg.ppo, &mut stream_rng(6, 0));
            ac.from_flat(&vec![0.0; ac.param_count()])
        };
        let grasp = zero(g_layout.obs_dim, g_act);
        let inter = zero(i_layout.obs_dim, i_act);
        let p = TwoPhasePolicies {
            grasp: &grasp,
            interaction: &inter,
            variant: cfg.variant,
            ctrl: ControllerConfig { alpha: cfg.alpha },
        };

        // zero actions map to half-closed commands, below the closing
        // threshold, so acquisition runs out the grasp horizon
        let mut st = reset_sample(&task_full, stream_rng(5, 0));
        let ep = two_phase_rollout(&p, &task_full, &mut st).unwrap();
        assert!(!ep.success);
        assert_eq!(ep.len, task_full.grasp_horizon);

        let mut st = reset_sample(&task_inter, stream_rng(5, 0));
        assert_eq!(st.phase, Phase::Interaction);
        let ep = two_phase_rollout(&p, &task_inter, &mut st).unwrap();
        assert_eq!(ep.len, task_inter.horizon);

        let staged = evaluate_two_phase(&p, &task_full, 200, 99).unwrap();
        let inter_only = evaluate(
            &inter,
            &task_inter,
            PhaseMode::Interaction,
            cfg.variant,
            p.ctrl,
            200,
            99,
        )
        .unwrap();
        assert_eq!(staged.success_rate, 0.0);
        assert!(staged.success_rate <= inter_only.success_rate);
    }

    #[test]
    fn aborting_writes_a_diagnostic_checkpoint() {
        let d = tmp_dir("diag");
        let cfg = tiny_cfg();
        let ac = ActorCritic::init(6, 2, &cfg.ppo, &mut stream_rng(8, 0));
        let err = abort_diagnostic(Some(&d), &ac, &stream_rng(8, 1), &cfg.ppo, 7);
        match err {
            TrainError::NonFinite { update, checkpoint } => {
                assert_eq!(update, 7);
                let path = checkpoint.unwrap();
                assert!(path.exists());
                let ck = Checkpoint::load(&path).unwrap();
                assert_eq!(ck.params, ac);
            }
            other => panic!("unexpected error {other:?}"),
        }
        let _ = fs::remove_dir_all(d);
    }

    #[test]
    fn split_budget_preserves_the_total() {
        let (g, i) = split_budget(1000, 0.25, 100);
        assert_eq!(g + i, 1000);
        assert_eq!(g % 100, 0);
        let (g, i) = split_budget(1000, 0.0, 100);
        assert_eq!((g, i), (100, 900));
        let (g, i) = split_budget(1000, 1.0, 100);
        assert_eq!((g, i), (900, 100));
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let mut cfg = tiny_cfg();
        assert!(cfg.validate().is_ok());
        cfg.budget = 8;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.phase = PhaseMode::Combined;
        assert!(cfg.validate().is_err());
        cfg.variant = PolicyVariant::Symmetric;
        assert!(cfg.validate().is_ok());
        let mut cfg = tiny_cfg();
        cfg.eval_episodes = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn phase_names_round_trip() {
        for m in [PhaseMode::Grasp, PhaseMode::Interaction, PhaseMode::Combined] {
            assert_eq!(m.to_string().parse::<PhaseMode>().unwrap(), m);
        }
        assert!("lunch".parse::<PhaseMode>().is_err());
    }
}
