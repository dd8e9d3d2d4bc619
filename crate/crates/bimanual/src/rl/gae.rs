//! Generalized advantage estimation over step-major rollout arrays.

use ndarray::{Array1, Array2};

/// Computes advantages and returns for `(steps, envs)` arrays.
///
/// `values` holds V(s_t) for every stored step; `bootstrap` holds V of the
/// state after the last step, one entry per env. `dones[t][i]` = 1.0 marks
/// that env i's episode ended inside step t, which cuts both the TD target
/// and the advantage recursion there.
pub fn gae_advantages(
    rewards: &Array2<f64>,
    values: &Array2<f64>,
    bootstrap: &Array1<f64>,
    dones: &Array2<f64>,
    gamma: f64,
    lambda: f64,
) -> (Array2<f64>, Array2<f64>) {
    let (steps, envs) = rewards.dim();
    assert_eq!(values.dim(), (steps, envs));
    assert_eq!(dones.dim(), (steps, envs));
    assert_eq!(bootstrap.len(), envs);

    let mut advantages = Array2::zeros((steps, envs));
    for i in 0..envs {
        let mut acc = 0.0;
        for t in (0..steps).rev() {
            let not_done = 1.0 - dones[[t, i]];
            let next_value = if t + 1 < steps {
                values[[t + 1, i]]
            } else {
                bootstrap[i]
            };
            let delta = rewards[[t, i]] + gamma * next_value * not_done - values[[t, i]];
            acc = delta + gamma * lambda * not_done * acc;
            advantages[[t, i]] = acc;
        }
    }
    let returns = &advantages + values;
    (advantages, returns)
}

/// Normalizes to zero mean and unit variance in place. A batch with no
/// spread (variance below 1e-12) is only centered.
pub fn normalize(advantages: &mut Array1<f64>) {
    let n = advantages.len() as f64;
    let mean = advantages.sum() / n;
    advantages.mapv_inplace(|v| v - mean);
    let var = advantages.iter().map(|v| v * v).sum::<f64>() / n;
    if var > 1e-12 {
        let inv = 1.0 / var.sqrt();
        advantages.mapv_inplace(|v| v * inv);
    }
}
