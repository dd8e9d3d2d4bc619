//! Fixed-topology MLP with manual reverse-mode differentiation.
//!
//! The network family is small and static (affine layers with ELU between
//! them, linear head), so gradients are hand-derived rather than pulled in
//! through an autodiff engine. Everything is `f64` and single-threaded,
//! which keeps parameter trajectories bit-reproducible for a fixed seed.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Weight matrix, shape (out, in).
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Affine layers with ELU activations between them and a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Per-layer gradients, same shapes as [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

/// Intermediate values saved by the forward pass for backpropagation.
pub struct ForwardCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer.
    preacts: Vec<Array2<f64>>,
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Semi-orthogonal matrix of shape (rows, cols) scaled by `gain`: the
/// shorter side's vectors are orthonormal.
pub fn orthogonal<R: Rng>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<f64> {
    let n = rows.max(cols);
    let m = rows.min(cols);
    let mut a = Array2::from_shape_fn((n, m), |_| rng.sample::<f64, _>(StandardNormal));
    // modified Gram-Schmidt over columns
    for j in 0..m {
        for k in 0..j {
            let dot = a.column(j).dot(&a.column(k));
            let prev = a.column(k).to_owned();
            a.column_mut(j).zip_mut_with(&prev, |v, p| *v -= dot * p);
        }
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        assert!(norm > 1e-9, "degenerate random matrix column");
        a.column_mut(j).mapv_inplace(|v| v / norm);
    }
    let w = if rows <= cols { a.t().to_owned() } else { a };
    w * gain
}

impl Mlp {
    /// `sizes` runs input to output, e.g. [obs, 256, 256, 128, act].
    /// Hidden layers use orthogonal init with gain sqrt(2); the head uses
    /// `head_gain`. Biases start at zero.
    pub fn init<R: Rng>(sizes: &[usize], head_gain: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, io)| {
                let gain = if i == last { head_gain } else { 2.0f64.sqrt() };
                Layer {
                    w: orthogonal(io[1], io[0], gain, rng),
                    b: Array1::zeros(io[1]),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").w.nrows()
    }

    pub fn zeros_like(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: Array2::zeros(l.w.dim()),
                    b: Array1::zeros(l.b.len()),
                })
                .collect(),
        }
    }

    /// Batched forward pass; rows of `x` are samples.
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, ForwardCache) {
        assert_eq!(x.ncols(), self.input_dim(), "input width mismatch");
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            preacts: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            cache.inputs.push(h.clone());
            let z = h.dot(&layer.w.t()) + &layer.b;
            cache.preacts.push(z.clone());
            h = if i == last { z } else { z.mapv(elu) };
        }
        (h, cache)
    }

    /// Backpropagates `grad_out` = dL/d(output) through the cached forward
    /// pass, returning parameter gradients. Gradients are summed over the
    /// batch; divide `grad_out` by the batch size beforehand if the loss is
    /// a mean.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Array2<f64>) -> MlpGrads {
        let mut grads = self.zeros_like();
        let last = self.layers.len() - 1;
        let mut dz = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            if i != last {
                dz.zip_mut_with(&cache.preacts[i], |g, z| *g *= elu_grad(*z));
            }
            grads.layers[i].w = dz.t().dot(&cache.inputs[i]);
            grads.layers[i].b = dz.sum_axis(Axis(0));
            if i > 0 {
                dz = dz.dot(&self.layers[i].w);
            }
        }
        grads
    }
}

impl MlpGrads {
    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(other.layers.iter()) {
            a.w.zip_mut_with(&b.w, |x, y| *x += scale * y);
            a.b.zip_mut_with(&b.b, |x, y| *x += scale * y);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Plain nested-loop forward pass, kept free of ndarray so it can
    /// cross-check the production path.
    fn oracle_forward(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = mlp.layers.len() - 1;
        for (i, layer) in mlp.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.b.len()];
            for (r, o) in out.iter_mut().enumerate() {
                let mut acc = layer.b[r];
                for (c, v) in h.iter().enumerate() {
                    acc += layer.w[[r, c]] * v;
                }
                *o = if i == last { acc } else { elu(acc) };
            }
            h = out;
        }
        h
    }

    fn random_mlp(sizes: &[usize], seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mlp::init(sizes, 1.0, &mut rng)
    }

    #[test]
    fn elu_matches_definition() {
        assert_eq!(elu(-1e9), -1.0);
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(1.0), 1.0);
        assert!((elu(-1.0) - (-1.0f64).exp() + 1.0).abs() < 1e-15);
        // the derivative is continuous at the joint
        assert_eq!(elu_grad(0.0), 1.0);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let mut mlp = random_mlp(&[3, 4, 2], 0);
        for layer in &mut mlp.layers {
            layer.w.fill(0.0);
            layer.b.fill(0.0);
        }
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i + j) as f64);
        assert!(mlp.forward(&x).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..50 {
            let sizes = [3, 5, 4, 2];
            let mlp = random_mlp(&sizes, 100 + case);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let batch = Array2::from_shape_vec((1, 3), x.clone()).unwrap();
            let got = mlp.forward(&batch);
            let want = oracle_forward(&mlp, &x);
            for (g, w) in got.row(0).iter().zip(want.iter()) {
                assert!((g - w).abs() < 1e-10, "case {case}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn orthogonal_init_has_orthonormal_short_side() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gain = 2.0f64.sqrt();
        let w = orthogonal(4, 9, gain, &mut rng);
        let gram = w.dot(&w.t());
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { gain * gain } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-10);
            }
        }
        let w = orthogonal(9, 4, 1.0, &mut rng);
        let gram = w.t().dot(&w);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mlp = random_mlp(&[3, 4, 2], 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        // L = sum of outputs
        let loss = |m: &Mlp| m.forward(&x).sum();

        let (out, cache) = mlp.forward_cached(&x);
        let grad_out = Array2::ones(out.dim());
        let grads = mlp.backward(&cache, &grad_out);

        let h = 1e-6;
        for li in 0..mlp.layers.len() {
            for r in 0..mlp.layers[li].w.nrows() {
                for c in 0..mlp.layers[li].w.ncols() {
                    let mut plus = mlp.clone();
                    plus.layers[li].w[[r, c]] += h;
                    let mut minus = mlp.clone();
                    minus.layers[li].w[[r, c]] -= h;
                    let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                    let an = grads.layers[li].w[[r, c]];
                    assert!(
                        (fd - an).abs() / fd.abs().max(an.abs()).max(1.0) < 1e-6,
                        "layer {li} w[{r},{c}]: fd {fd} analytic {an}"
                    );
                }
            }
            for j in 0..mlp.layers[li].b.len() {
                let mut plus = mlp.clone();
                plus.layers[li].b[j] += h;
                let mut minus = mlp.clone();
                minus.layers[li].b[j] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let an = grads.layers[li].b[j];
                assert!((fd - an).abs() / fd.abs().max(an.abs()).max(1.0) < 1e-6);
            }
        }
    }

    #[test]
    fn input_gradient_flows_through_chain() {
        // check dL/dx via the returned dz chain by extending backward: feed
        // a net whose first layer is perturbed instead (equivalent check of
        // the dz propagation used between layers)
        let mlp = random_mlp(&[2, 3, 1], 21);
        let x = Array2::from_shape_vec((1, 2), vec![0.3, -0.7]).unwrap();
        let (out, cache) = mlp.forward_cached(&x);
        assert_eq!(out.dim(), (1, 1));
        let grads = mlp.backward(&cache, &Array2::ones((1, 1)));
        // dL/db of layer 0 equals dL/dz0, the same quantity dz propagation
        // uses, so a finite-difference check on b0 covers it
        let h = 1e-6;
        for j in 0..3 {
            let mut plus = mlp.clone();
            plus.layers[0].b[j] += h;
            let mut minus = mlp.clone();
            minus.layers[0].b[j] -= h;
            let fd = (plus.forward(&x).sum() - minus.forward(&x).sum()) / (2.0 * h);
            assert!((fd - grads.layers[0].b[j]).abs() < 1e-8);
        }
    }
}
