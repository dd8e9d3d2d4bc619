//! Adam optimizer over the actor-critic parameter set.

use ndarray::{Array1, Array2};

use super::mlp::{Mlp, MlpGrads};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Moments {
    fn zeros(mlp: &Mlp) -> Self {
        let shapes: Vec<_> = mlp
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.w.dim()), Array1::zeros(l.b.len())))
            .collect();
        Moments {
            m: shapes.clone(),
            v: shapes,
        }
    }
}

/// First and second moment estimates for one MLP plus a free vector
/// parameter (the policy's log stds use this slot).
#[derive(Debug, Clone)]
pub struct AdamState {
    net: Moments,
    vec_m: Array1<f64>,
    vec_v: Array1<f64>,
    t: u64,
}

fn step_scalar(m: &mut f64, v: &mut f64, g: f64, lr_hat: f64, bias2: f64) -> f64 {
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    lr_hat * *m / ((*v / bias2).sqrt() + EPS)
}

impl AdamState {
    pub fn new(mlp: &Mlp, vec_len: usize) -> Self {
        AdamState {
            net: Moments::zeros(mlp),
            vec_m: Array1::zeros(vec_len),
            vec_v: Array1::zeros(vec_len),
            t: 0,
        }
    }

    /// One update step: params -= lr * m_hat / (sqrt(v_hat) + eps).
    /// `vec_param`/`vec_grad` may be empty when the net has no extra vector.
    pub fn step(
        &mut self,
        mlp: &mut Mlp,
        grads: &MlpGrads,
        vec_param: &mut Array1<f64>,
        vec_grad: &Array1<f64>,
        lr: f64,
    ) {
        self.t += 1;
        let bias1 = 1.0 - BETA1.powi(self.t as i32);
        let bias2 = 1.0 - BETA2.powi(self.t as i32);
        let lr_hat = lr / bias1;

        for i in 0..mlp.layers.len() {
            let layer = &mut mlp.layers[i];
            let grad = &grads.layers[i];
            let (mw, mb) = &mut self.net.m[i];
            let (vw, vb) = &mut self.net.v[i];
            for ((p, g), (m, v)) in layer
                .w
                .iter_mut()
                .zip(grad.w.iter())
                .zip(mw.iter_mut().zip(vw.iter_mut()))
            {
                *p -= step_scalar(m, v, *g, lr_hat, bias2);
            }
            for ((p, g), (m, v)) in layer
                .b
                .iter_mut()
                .zip(grad.b.iter())
                .zip(mb.iter_mut().zip(vb.iter_mut()))
            {
                *p -= step_scalar(m, v, *g, lr_hat, bias2);
            }
        }
        for ((p, g), (m, v)) in vec_param
            .iter_mut()
            .zip(vec_grad.iter())
            .zip(self.vec_m.iter_mut().zip(self.vec_v.iter_mut()))
        {
            *p -= step_scalar(m, v, *g, lr_hat, bias2);
        }
    }
}
