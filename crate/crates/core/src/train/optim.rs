//! Adam, global-norm clipping and cosine learning-rate decay.

use crate::nn::layers::Param;
use crate::nn::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `lr(t) = lr_final + (lr_init - lr_final) (1 + cos(pi t / (T - 1))) / 2`
/// over `total_steps = T` optimizer steps.
pub fn cosine_lr(step: usize, total_steps: usize, lr_init: f64, lr_final: f64) -> f64 {
    if total_steps <= 1 {
        return lr_init;
    }
    let t = step.min(total_steps - 1) as f64 / (total_steps - 1) as f64;
    lr_final + 0.5 * (lr_init - lr_final) * (1.0 + (std::f64::consts::PI * t).cos())
}

pub fn global_grad_norm<T: Real>(params: &[&mut Param<T>]) -> f64 {
    params
        .iter()
        .flat_map(|p| p.grad.iter())
        .map(|g| g.f64().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns `(norm_before, norm_after)`.
pub fn clip_grad_norm<T: Real>(params: &mut [&mut Param<T>], max_norm: f64) -> (f64, f64) {
    let norm = global_grad_norm(params);
    if norm > max_norm && norm > 0.0 {
        // shrink by a few ulps of T so per-entry rounding cannot push the
        // result back above the ceiling
        let scale = max_norm / norm * (1.0 - 4.0 * T::epsilon().f64());
        let s = T::of(scale);
        for p in params.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g = *g * s);
        }
        (norm, global_grad_norm(params))
    } else {
        (norm, norm)
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new<T: Real>(params: &[&mut Param<T>]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step<T: Real>(&mut self, params: &mut [&mut Param<T>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter list changed under the optimizer");
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i].f64();
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                let upd = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
                p.value[i] = T::of(p.value[i].f64() - upd);
            }
        }
    }
}
