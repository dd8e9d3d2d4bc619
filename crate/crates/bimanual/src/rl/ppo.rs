//! Clipped-surrogate policy optimization over collected rollouts.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::gae;
use super::gaussian;
use super::mlp::{Mlp, MlpGrads};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub minibatch: usize,
    pub kl_threshold: f64,
    pub epochs: usize,
    pub entropy_coeff: f64,
    pub value_coeff: f64,
    /// Initial learning rate; the adaptive rule moves it between updates.
    pub lr: f64,
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.98,
            lambda: 0.95,
            clip: 0.2,
            minibatch: 512,
            kl_threshold: 0.016,
            epochs: 5,
            entropy_coeff: 0.0,
            value_coeff: 2.0,
            lr: 3e-4,
            policy_hidden: vec![256, 256, 128],
            value_hidden: vec![512, 512, 512],
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(format!("lambda {} outside (0, 1]", self.lambda));
        }
        if self.clip <= 0.0 {
            return Err(format!("clip range {} must be positive", self.clip));
        }
        if self.minibatch == 0 || self.epochs == 0 {
            return Err("minibatch and epochs must be at least 1".into());
        }
        if self.lr <= 0.0 {
            return Err(format!("learning rate {} must be positive", self.lr));
        }
        if self.policy_hidden.is_empty() || self.value_hidden.is_empty() {
            return Err("hidden layer lists must be nonempty".into());
        }
        Ok(())
    }
}

/// Policy mean network, its log-std vector, and the value network.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub policy: Mlp,
    pub log_std: Array1<f64>,
    pub value: Mlp,
}

impl ActorCritic {
    pub fn init<R: Rng>(obs_dim: usize, act_dim: usize, cfg: &PpoConfig, rng: &mut R) -> Self {
        let mut policy_sizes = vec![obs_dim];
        policy_sizes.extend_from_slice(&cfg.policy_hidden);
        policy_sizes.push(act_dim);
        let mut value_sizes = vec![obs_dim];
        value_sizes.extend_from_slice(&cfg.value_hidden);
        value_sizes.push(1);
        ActorCritic {
            policy: Mlp::init(&policy_sizes, 0.01, rng),
            log_std: Array1::zeros(act_dim),
            value: Mlp::init(&value_sizes, 1.0, rng),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.policy.output_dim()
    }

    pub fn values(&self, obs: &Array2<f64>) -> Array1<f64> {
        self.value.forward(obs).index_axis(Axis(1), 0).to_owned()
    }

    /// Deterministic action (the mean) for evaluation.
    pub fn mean_actions(&self, obs: &Array2<f64>) -> Array2<f64> {
        self.policy.forward(obs)
    }

    pub fn sample_actions(
        &self,
        obs: &Array2<f64>,
        rng: &mut ChaCha8Rng,
    ) -> (Array2<f64>, Array1<f64>) {
        let mean = self.policy.forward(obs);
        let actions = gaussian::sample(&mean, &self.log_std, rng);
        let log_probs = gaussian::log_prob(&mean, &self.log_std, &actions);
        (actions, log_probs)
    }

    pub fn param_count(&self) -> usize {
        let net = |m: &Mlp| -> usize { m.layers.iter().map(|l| l.w.len() + l.b.len()).sum() };
        net(&self.policy) + self.log_std.len() + net(&self.value)
    }

    /// Parameters as one flat vector: policy layers (weights row-major,
    /// then bias), log stds, value layers. Used by checkpoints and
    /// finite-difference checks.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        let push_net = |out: &mut Vec<f64>, m: &Mlp| {
            for l in &m.layers {
                out.extend(l.w.iter());
                out.extend(l.b.iter());
            }
        };
        push_net(&mut out, &self.policy);
        out.extend(self.log_std.iter());
        push_net(&mut out, &self.value);
        out
    }

    /// Rebuilds parameters from [`Self::to_flat`] order, taking shapes from
    /// `self`.
    pub fn from_flat(&self, flat: &[f64]) -> ActorCritic {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let mut ac = self.clone();
        let mut it = flat.iter().copied();
        let fill_net = |m: &mut Mlp, it: &mut dyn Iterator<Item = f64>| {
            for l in &mut m.layers {
                for v in l.w.iter_mut() {
                    *v = it.next().expect("length checked");
                }
                for v in l.b.iter_mut() {
                    *v = it.next().expect("length checked");
                }
            }
        };
        fill_net(&mut ac.policy, &mut it);
        for v in ac.log_std.iter_mut() {
            *v = it.next().expect("length checked");
        }
        fill_net(&mut ac.value, &mut it);
        ac
    }
}

/// One rollout's worth of transitions, step-major: scalar grids are
/// (steps, envs) and flattened rows use index `t * envs + i`.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub n_steps: usize,
    pub n_envs: usize,
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub log_probs: Array1<f64>,
    pub rewards: Array2<f64>,
    pub values: Array2<f64>,
    pub dones: Array2<f64>,
    pub bootstrap: Array1<f64>,
    pub advantages: Array1<f64>,
    pub returns: Array1<f64>,
}

impl RolloutBuffer {
    pub fn new(n_steps: usize, n_envs: usize, obs_dim: usize, act_dim: usize) -> Self {
        RolloutBuffer {
            n_steps,
            n_envs,
            obs: Array2::zeros((n_steps * n_envs, obs_dim)),
            actions: Array2::zeros((n_steps * n_envs, act_dim)),
            log_probs: Array1::zeros(n_steps * n_envs),
            rewards: Array2::zeros((n_steps, n_envs)),
            values: Array2::zeros((n_steps, n_envs)),
            dones: Array2::zeros((n_steps, n_envs)),
            bootstrap: Array1::zeros(n_envs),
            advantages: Array1::zeros(n_steps * n_envs),
            returns: Array1::zeros(n_steps * n_envs),
        }
    }

    pub fn len(&self) -> usize {
        self.n_steps * self.n_envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Computes raw (un-normalized) advantages and returns from the stored
    /// rewards, values, dones, and bootstrap values.
    pub fn compute_gae(&mut self, gamma: f64, lambda: f64) {
        let (adv, ret) = gae::gae_advantages(
            &self.rewards,
            &self.values,
            &self.bootstrap,
            &self.dones,
            gamma,
            lambda,
        );
        for t in 0..self.n_steps {
            for i in 0..self.n_envs {
                self.advantages[t * self.n_envs + i] = adv[[t, i]];
                self.returns[t * self.n_envs + i] = ret[[t, i]];
            }
        }
    }
}

/// min(rho * a, clip(rho) * a), the per-sample clipped surrogate objective.
pub fn clipped_objective(rho: f64, advantage: f64, clip: f64) -> f64 {
    let unclipped = rho * advantage;
    let clipped = rho.clamp(1.0 - clip, 1.0 + clip) * advantage;
    unclipped.min(clipped)
}

/// Relative weights for the three loss terms. The total minimized is
/// `surrogate * L_clip + value * L_v - entropy * H`.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub surrogate: f64,
    pub value: f64,
    pub entropy: f64,
}

impl LossWeights {
    pub fn from_config(cfg: &PpoConfig) -> Self {
        LossWeights {
            surrogate: 1.0,
            value: cfg.value_coeff,
            entropy: cfg.entropy_coeff,
        }
    }
}

/// A gathered minibatch of transitions with normalized advantages.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub old_log_probs: Array1<f64>,
    pub advantages: Array1<f64>,
    pub returns: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct PolicyGrads {
    pub net: MlpGrads,
    pub log_std: Array1<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub total: f64,
    pub surrogate: f64,
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Evaluates the weighted loss and its exact parameter gradients on one
/// minibatch. Gradients correspond to the mean-over-batch loss.
pub fn loss_and_grad(
    ac: &ActorCritic,
    mb: &Minibatch,
    clip: f64,
    weights: &LossWeights,
) -> (LossParts, PolicyGrads, MlpGrads) {
    let batch = mb.obs.nrows();
    let inv_b = 1.0 / batch as f64;

    let (mean, policy_cache) = ac.policy.forward_cached(&mb.obs);
    let new_log_probs = gaussian::log_prob(&mean, &ac.log_std, &mb.actions);

    let mut surrogate = 0.0;
    let mut approx_kl = 0.0;
    let mut clipped_count = 0usize;
    let mut lp_weights = Array1::zeros(batch);
    for i in 0..batch {
        let log_rho = new_log_probs[i] - mb.old_log_probs[i];
        let rho = log_rho.exp();
        let a = mb.advantages[i];
        surrogate -= clipped_objective(rho, a, clip) * inv_b;
        // gradient flows only where the min picks the unclipped branch
        let unclipped = rho * a;
        let clipped = rho.clamp(1.0 - clip, 1.0 + clip) * a;
        if unclipped <= clipped {
            lp_weights[i] = -weights.surrogate * a * rho * inv_b;
        }
        approx_kl += ((rho - 1.0) - log_rho) * inv_b;
        if (rho - 1.0).abs() > clip {
            clipped_count += 1;
        }
    }
    let (d_mean, mut d_log_std) =
        gaussian::log_prob_grads(&mean, &ac.log_std, &mb.actions, &lp_weights);
    let policy_net_grads = ac.policy.backward(&policy_cache, &d_mean);

    let entropy = gaussian::entropy(&ac.log_std);
    // the entropy term enters the loss as -w_e * H with dH/dlog_std_j = 1
    d_log_std.mapv_inplace(|v| v - weights.entropy);

    let (v_out, value_cache) = ac.value.forward_cached(&mb.obs);
    let mut value_loss = 0.0;
    let mut d_v = Array2::zeros(v_out.dim());
    for i in 0..batch {
        let err = v_out[[i, 0]] - mb.returns[i];
        value_loss += err * err * inv_b;
        d_v[[i, 0]] = weights.value * 2.0 * err * inv_b;
    }
    let value_grads = ac.value.backward(&value_cache, &d_v);

    let parts = LossParts {
        total: weights.surrogate * surrogate + weights.value * value_loss
            - weights.entropy * entropy,
        surrogate,
        value: value_loss,
        entropy,
        approx_kl,
        clip_fraction: clipped_count as f64 / batch as f64,
    };
    (
        parts,
        PolicyGrads {
            net: policy_net_grads,
            log_std: d_log_std,
        },
        value_grads,
    )
}

#[derive(Debug, thiserror::Error)]
pub enum RlError {
    #[error("non-finite loss in update epoch {epoch}, minibatch {minibatch}")]
    NonFiniteLoss { epoch: usize, minibatch: usize },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    pub approx_kl: f64,
    pub surrogate_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

/// Optimizer state for both networks.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub policy: AdamState,
    pub value: AdamState,
}

impl Optimizer {
    pub fn new(ac: &ActorCritic) -> Self {
        Optimizer {
            policy: AdamState::new(&ac.policy, ac.log_std.len()),
            value: AdamState::new(&ac.value, 0),
        }
    }
}

/// Runs the configured epochs of shuffled minibatch gradient steps over the
/// buffer. Advantages are normalized over the whole buffer first. On a
/// non-finite loss the update stops and reports a fault; steps already
/// applied stay applied.
pub fn ppo_update(
    ac: &mut ActorCritic,
    opt: &mut Optimizer,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats, RlError> {
    let total = buffer.len();
    assert!(total > 0, "empty rollout buffer");
    let mut advantages = buffer.advantages.clone();
    gae::normalize(&mut advantages);

    let weights = LossWeights::from_config(cfg);
    let mut stats = UpdateStats::default();
    let mut empty_vec = Array1::zeros(0);
    let empty_grad = Array1::zeros(0);

    for epoch in 0..cfg.epochs {
        let mut indices: Vec<usize> = (0..total).collect();
        indices.shuffle(rng);
        for (mb_idx, chunk) in indices.chunks(cfg.minibatch.min(total)).enumerate() {
            let mb = Minibatch {
                obs: buffer.obs.select(Axis(0), chunk),
                actions: buffer.actions.select(Axis(0), chunk),
                old_log_probs: buffer.log_probs.select(Axis(0), chunk),
                advantages: advantages.select(Axis(0), chunk),
                returns: buffer.returns.select(Axis(0), chunk),
            };
            let (parts, policy_grads, value_grads) = loss_and_grad(ac, &mb, cfg.clip, &weights);
            if !parts.total.is_finite() {
                return Err(RlError::NonFiniteLoss {
                    epoch,
                    minibatch: mb_idx,
                });
            }
            opt.policy.step(
                &mut ac.policy,
                &policy_grads.net,
                &mut ac.log_std,
                &policy_grads.log_std,
                lr,
            );
            gaussian::clamp_log_std(&mut ac.log_std);
            opt.value
                .step(&mut ac.value, &value_grads, &mut empty_vec, &empty_grad, lr);

            stats.approx_kl += parts.approx_kl;
            stats.surrogate_loss += parts.surrogate;
            stats.value_loss += parts.value;
            stats.entropy += parts.entropy;
            stats.clip_fraction += parts.clip_fraction;
            stats.minibatches += 1;
        }
    }
    let n = stats.minibatches as f64;
    stats.approx_kl /= n;
    stats.surrogate_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.clip_fraction /= n;
    Ok(stats)
}

/// KL-driven learning-rate schedule: shrink above twice the threshold,
/// grow below half of it, and stay inside [1e-6, 1e-2].
pub fn adaptive_lr(lr: f64, approx_kl: f64, threshold: f64) -> f64 {
    let next = if approx_kl > 2.0 * threshold {
        lr / 1.5
    } else if approx_kl < threshold / 2.0 {
        lr * 1.5
    } else {
        lr
    };
    next.clamp(1e-6, 1e-2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_cfg() -> PpoConfig {
        PpoConfig {
            minibatch: 16,
            policy_hidden: vec![8, 8],
            value_hidden: vec![8, 8],
            ..PpoConfig::default()
        }
    }

    fn random_buffer(ac: &ActorCritic, steps: usize, envs: usize, seed: u64) -> RolloutBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf = RolloutBuffer::new(steps, envs, ac.obs_dim(), ac.act_dim());
        buf.obs.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        let (actions, log_probs) = ac.sample_actions(&buf.obs.clone(), &mut rng);
        buf.actions = actions;
        buf.log_probs = log_probs;
        buf.rewards.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        buf.values.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        buf.dones
            .mapv_inplace(|_| if rng.random_range(0.0..1.0) < 0.1 { 1.0 } else { 0.0 });
        buf.bootstrap.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        buf.compute_gae(0.98, 0.95);
        buf
    }

    #[test]
    fn clipped_objective_worked_example() {
        assert!((clipped_objective(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert_eq!(clipped_objective(1.0, 2.0, 0.2), 2.0);
        // negative advantage clips on the low side
        assert!((clipped_objective(0.5, -1.0, 0.2) - (-0.8)).abs() < 1e-15);
    }

    #[test]
    fn adaptive_lr_follows_the_rule() {
        let thr = 0.016;
        assert_eq!(adaptive_lr(1e-3, thr, thr), 1e-3);
        assert!((adaptive_lr(1e-3, 0.04, thr) - 1e-3 / 1.5).abs() < 1e-18);
        assert!((adaptive_lr(1e-3, 0.001, thr) - 1.5e-3).abs() < 1e-18);
        assert_eq!(adaptive_lr(9e-3, 0.001, thr), 1e-2);
        assert_eq!(adaptive_lr(1.2e-6, 0.1, thr), 1e-6);
    }

    #[test]
    fn zero_learning_rate_is_bit_identity() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ac = ActorCritic::init(6, 3, &cfg, &mut rng);
        let before = ac.clone();
        let buf = random_buffer(&ac, 8, 4, 2);
        let mut opt = Optimizer::new(&ac);
        let stats =
            ppo_update(&mut ac, &mut opt, &buf, &cfg, 0.0, &mut ChaCha8Rng::seed_from_u64(3))
                .unwrap();
        assert_eq!(ac, before);
        assert!(stats.minibatches >= cfg.epochs);
    }

    #[test]
    fn same_seed_gives_bit_identical_updates() {
        let cfg = small_cfg();
        let make = || {
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            let mut ac = ActorCritic::init(5, 2, &cfg, &mut rng);
            let buf = random_buffer(&ac, 16, 2, 11);
            let mut opt = Optimizer::new(&ac);
            ppo_update(&mut ac, &mut opt, &buf, &cfg, 3e-4, &mut ChaCha8Rng::seed_from_u64(12))
                .unwrap();
            ac
        };
        let a = make();
        let b = make();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_ratio_has_zero_kl_and_unclipped_gradient() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let ac = ActorCritic::init(4, 2, &cfg, &mut rng);
        let buf = random_buffer(&ac, 8, 2, 21);
        // old log probs recomputed from the current params: rho = 1 exactly
        let mean = ac.policy.forward(&buf.obs);
        let fresh = gaussian::log_prob(&mean, &ac.log_std, &buf.actions);
        let mut adv = buf.advantages.clone();
        gae::normalize(&mut adv);
        let mb = Minibatch {
            obs: buf.obs.clone(),
            actions: buf.actions.clone(),
            old_log_probs: fresh,
            advantages: adv.clone(),
            returns: buf.returns.clone(),
        };
        let weights = LossWeights {
            surrogate: 1.0,
            value: 0.0,
            entropy: 0.0,
        };
        let (parts, grads, _) = loss_and_grad(&ac, &mb, cfg.clip, &weights);
        assert!(parts.approx_kl.abs() < 1e-12);
        assert_eq!(parts.clip_fraction, 0.0);

        // with rho = 1 the surrogate gradient is the vanilla policy
        // gradient: -mean_i A_i * grad log pi
        let inv_b = 1.0 / mb.obs.nrows() as f64;
        let pg_weights = adv.mapv(|a| -a * inv_b);
        let (d_mean, _) = gaussian::log_prob_grads(&mean, &ac.log_std, &mb.actions, &pg_weights);
        let (_, cache) = ac.policy.forward_cached(&mb.obs);
        let vanilla = ac.policy.backward(&cache, &d_mean);
        for (a, b) in grads.net.layers.iter().zip(vanilla.layers.iter()) {
            for (x, y) in a.w.iter().zip(b.w.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn approx_kl_is_positive_for_shifted_ratios() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let ac = ActorCritic::init(4, 2, &cfg, &mut rng);
        let buf = random_buffer(&ac, 16, 2, 31);
        let mean = ac.policy.forward(&buf.obs);
        let mut old = gaussian::log_prob(&mean, &ac.log_std, &buf.actions);
        // pretend the data came from a slightly different policy
        old.mapv_inplace(|v| v + 0.1);
        let mb = Minibatch {
            obs: buf.obs.clone(),
            actions: buf.actions.clone(),
            old_log_probs: old,
            advantages: buf.advantages.clone(),
            returns: buf.returns.clone(),
        };
        let weights = LossWeights {
            surrogate: 1.0,
            value: 1.0,
            entropy: 0.0,
        };
        let (parts, _, _) = loss_and_grad(&ac, &mb, cfg.clip, &weights);
        assert!(parts.approx_kl > 0.0);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let mut ac = ActorCritic::init(4, 2, &cfg, &mut rng);
        let mut buf = random_buffer(&ac, 4, 2, 41);
        buf.returns[0] = f64::NAN;
        let mut opt = Optimizer::new(&ac);
        let err = ppo_update(
            &mut ac,
            &mut opt,
            &buf,
            &cfg,
            1e-4,
            &mut ChaCha8Rng::seed_from_u64(42),
        );
        assert!(matches!(err, Err(RlError::NonFiniteLoss { .. })));
    }

    #[test]
    fn flat_round_trip_is_exact() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let ac = ActorCritic::init(7, 3, &cfg, &mut rng);
        let flat = ac.to_flat();
        assert_eq!(flat.len(), ac.param_count());
        let back = ac.from_flat(&flat);
        assert_eq!(back, ac);
    }

    #[test]
    fn gradients_match_finite_differences_per_term() {
        let cfg = PpoConfig {
            policy_hidden: vec![4],
            value_hidden: vec![4],
            ..PpoConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let ac = ActorCritic::init(3, 2, &cfg, &mut rng);
        let buf = random_buffer(&ac, 8, 2, 61);
        let mean = ac.policy.forward(&buf.obs);
        let mut old = gaussian::log_prob(&mean, &ac.log_std, &buf.actions);
        old.mapv_inplace(|v| v + 0.05);
        let mut adv = buf.advantages.clone();
        gae::normalize(&mut adv);
        let mb = Minibatch {
            obs: buf.obs.clone(),
            actions: buf.actions.clone(),
            old_log_probs: old,
            advantages: adv,
            returns: buf.returns.clone(),
        };

        for weights in [
            LossWeights { surrogate: 1.0, value: 0.0, entropy: 0.0 },
            LossWeights { surrogate: 0.0, value: 1.0, entropy: 0.0 },
            LossWeights { surrogate: 0.0, value: 0.0, entropy: 1.0 },
        ] {
            let (_, pg, vg) = loss_and_grad(&ac, &mb, cfg.clip, &weights);
            let analytic = flatten_grads(&ac, &pg, &vg);
            let flat = ac.to_flat();
            let h = 1e-5;
            for k in (0..flat.len()).step_by(3) {
                let mut plus = flat.clone();
                plus[k] += h;
                let mut minus = flat.clone();
                minus[k] -= h;
                let lp = loss_and_grad(&ac.from_flat(&plus), &mb, cfg.clip, &weights).0.total;
                let lm = loss_and_grad(&ac.from_flat(&minus), &mb, cfg.clip, &weights).0.total;
                let fd = (lp - lm) / (2.0 * h);
                let an = analytic[k];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                assert!(
                    (fd - an).abs() / denom < 1e-4,
                    "param {k}: fd {fd} analytic {an}"
                );
            }
        }
    }

    /// Flattens gradients in [`ActorCritic::to_flat`] order.
    pub(super) fn flatten_grads(
        ac: &ActorCritic,
        pg: &PolicyGrads,
        vg: &MlpGrads,
    ) -> Vec<f64> {
        let mut out = Vec::with_capacity(ac.param_count());
        for l in &pg.net.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out.extend(pg.log_std.iter());
        for l in &vg.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }
}
