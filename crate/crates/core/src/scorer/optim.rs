use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RAdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for RAdamConfig {
    fn default() -> Self {
        RAdamConfig {
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Rectified Adam.
#[derive(Clone, Debug)]
pub struct RAdam<T> {
    pub config: RAdamConfig,
    step: u64,
    m: ParamSet<T>,
    v: ParamSet<T>,
}

impl<T: Scalar> RAdam<T> {
    pub fn new(config: RAdamConfig, params: &ParamSet<T>) -> Self {
        RAdam {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamSet<T>, grad: &ParamSet<T>) {
        self.step += 1;
        let c = &self.config;
        let t = self.step as f64;
        let beta2_t = c.beta2.powf(t);
        let bias1 = 1.0 - c.beta1.powf(t);
        let rho_inf = 2.0 / (1.0 - c.beta2) - 1.0;
        let rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t);

        let rectifier = (rho_t > 5.0).then(|| {
            ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt()
        });

        let f = T::from_f64_lossy;
        let (beta1, beta2) = (f(c.beta1), f(c.beta2));
        let (one_m_b1, one_m_b2) = (f(1.0 - c.beta1), f(1.0 - c.beta2));
        let bias2_sqrt = f((1.0 - beta2_t).sqrt());
        let step_size = f(c.lr / bias1);
        let decay = f(1.0 - c.lr * c.weight_decay);
        let eps = f(c.eps);
        let rect = rectifier.map(f);

        let blocks = params
            .blocks_mut()
            .into_iter()
            .zip(grad.blocks())
            .zip(self.m.blocks_mut())
            .zip(self.v.blocks_mut());
        for (((p, g), m), v) in blocks {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + one_m_b1 * g[i];
                v[i] = beta2 * v[i] + one_m_b2 * g[i] * g[i];
                p[i] = p[i] * decay;
                p[i] = match rect {
                    Some(r) => p[i] - step_size * r * m[i] / (v[i].sqrt() / bias2_sqrt + eps),
                    None => p[i] - step_size * m[i],
                };
            }
        }
    }
}

/// Rescale `grad` so its global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grad: &mut ParamSet<T>, max_norm: T) -> T {
    let norm = grad.norm();
    if norm > max_norm && norm > T::zero() {
        grad.scale(max_norm / norm);
    }
    norm
}
