//! Diagonal Gaussian action distribution with state-independent log stds.
//!
//! The policy net outputs the mean; a separate learned vector holds one log
//! standard deviation per action dimension. Samples stay un-squashed here
//! and the density stays Gaussian; the tanh bound is applied only when an
//! action is decoded into simulator targets.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.8378770664093453;

pub fn clamp_log_std(log_std: &mut Array1<f64>) {
    log_std.mapv_inplace(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
}

/// Draw one action per mean row: a = mean + exp(log_std) * eps.
pub fn sample<R: Rng>(mean: &Array2<f64>, log_std: &Array1<f64>, rng: &mut R) -> Array2<f64> {
    let mut out = mean.clone();
    for mut row in out.rows_mut() {
        for (v, ls) in row.iter_mut().zip(log_std.iter()) {
            *v += ls.exp() * rng.sample::<f64, _>(StandardNormal);
        }
    }
    out
}

/// Exact log density of each action row under its mean row.
pub fn log_prob(mean: &Array2<f64>, log_std: &Array1<f64>, actions: &Array2<f64>) -> Array1<f64> {
    let d = log_std.len() as f64;
    let log_std_sum: f64 = log_std.sum();
    let mut out = Array1::zeros(mean.nrows());
    for (i, (m, a)) in mean.rows().into_iter().zip(actions.rows()).enumerate() {
        let mut quad = 0.0;
        for ((mv, av), ls) in m.iter().zip(a.iter()).zip(log_std.iter()) {
            let z = (av - mv) / ls.exp();
            quad += z * z;
        }
        out[i] = -0.5 * (quad + d * LN_2PI) - log_std_sum;
    }
    out
}

/// Entropy per sample; state-independent, so it is a scalar.
pub fn entropy(log_std: &Array1<f64>) -> f64 {
    log_std.sum() + 0.5 * (LN_2PI + 1.0) * log_std.len() as f64
}

/// Gradients of the summed weighted log probability:
/// d(sum_i w_i logp_i)/d(mean) and /d(log_std).
pub fn log_prob_grads(
    mean: &Array2<f64>,
    log_std: &Array1<f64>,
    actions: &Array2<f64>,
    weights: &Array1<f64>,
) -> (Array2<f64>, Array1<f64>) {
    let mut d_mean = Array2::zeros(mean.dim());
    let mut d_log_std = Array1::zeros(log_std.len());
    for (i, (m, a)) in mean.rows().into_iter().zip(actions.rows()).enumerate() {
        let w = weights[i];
        for (j, ((mv, av), ls)) in m.iter().zip(a.iter()).zip(log_std.iter()).enumerate() {
            let inv_var = (-2.0 * ls).exp();
            let diff = av - mv;
            d_mean[[i, j]] = w * diff * inv_var;
            d_log_std[j] += w * (diff * diff * inv_var - 1.0);
        }
    }
    (d_mean, d_log_std)
}
