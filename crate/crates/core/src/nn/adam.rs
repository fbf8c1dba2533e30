use serde::{Deserialize, Serialize};

use super::{Grads, Mlp};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Adam moments for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Grads,
    v: Grads,
    t: u64,
}

impl Adam {
    pub fn new(mlp: &Mlp, config: AdamConfig) -> Self {
        Self {
            config,
            m: Grads::zeros_like(mlp),
            v: Grads::zeros_like(mlp),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &Grads {
        &self.m
    }

    pub fn second_moment(&self) -> &Grads {
        &self.v
    }

    /// One bias-corrected Adam update. Parameters are untouched if the
    /// gradient contains a non-finite entry.
    pub fn step(&mut self, params: &mut Mlp, grads: &Grads) -> Result<()> {
        grads.check_congruent(params)?;
        self.m.check_congruent(params)?;
        if let Some(at) = grads.first_non_finite() {
            return Err(Error::Training(format!("non-finite gradient at {at}")));
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (l, layer) in params.layers_mut().iter_mut().enumerate() {
            let g = &grads.layers[l];
            let m = &mut self.m.layers[l];
            let v = &mut self.v.layers[l];
            update(
                layer.weights_mut(),
                &g.weights,
                &mut m.weights,
                &mut v.weights,
                lr,
                beta1,
                beta2,
                eps,
                bc1,
                bc2,
            );
            update(
                layer.biases_mut(),
                &g.biases,
                &mut m.biases,
                &mut v.biases,
                lr,
                beta1,
                beta2,
                eps,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn update(
    theta: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..theta.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;

    fn scalar(value: f64) -> Mlp {
        Mlp::from_layers(vec![Dense::new(1, 1, vec![value], vec![0.0]).unwrap()]).unwrap()
    }

    fn grad(g: f64) -> Grads {
        let mut grads = Grads::zeros_like(&scalar(0.0));
        grads.layers[0].weights[0] = g;
        grads
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = Mlp::new(&[3, 4, 2], 1).unwrap();
        let before = p.clone();
        let mut adam = Adam::new(&p, AdamConfig::default());
        let zeros = Grads::zeros_like(&p);
        for _ in 0..5 {
            adam.step(&mut p, &zeros).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn first_step_is_about_lr() {
        for g in [1e-3, 0.5, -7.0] {
            let mut p = scalar(1.0);
            let mut adam = Adam::new(&p, AdamConfig::default());
            adam.step(&mut p, &grad(g)).unwrap();
            let change = (p.layers()[0].weights()[0] - 1.0).abs();
            let exact = 1e-4 * g.abs() / (g.abs() + 1e-8);
            assert!((change - exact).abs() < 1e-15);
            assert!((change - 1e-4).abs() < 1e-9);
        }
    }

    #[test]
    fn two_step_trace() {
        // constant g: m_hat = g and v_hat = g^2 at both steps
        // t=1: m = 0.1 g, v = 0.001 g^2; t=2: m = 0.19 g, v = 0.001999 g^2
        let g = 0.5;
        let mut p = scalar(1.0);
        let mut adam = Adam::new(&p, AdamConfig::default());
        adam.step(&mut p, &grad(g)).unwrap();
        adam.step(&mut p, &grad(g)).unwrap();
        let expected = 1.0 - 2.0 * 1e-4 * 0.5 / (0.5 + 1e-8);
        assert!((p.layers()[0].weights()[0] - expected).abs() < 1e-15);
        assert!((adam.first_moment().layers[0].weights[0] - 0.19 * g).abs() < 1e-15);
        assert!((adam.second_moment().layers[0].weights[0] - 0.001999 * g * g).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = scalar(1.0);
        let mut adam = Adam::new(&p, AdamConfig::default());
        let err = adam.step(&mut p, &grad(f64::INFINITY)).unwrap_err();
        assert!(err.to_string().contains("layer 0 weights[0]"));
        assert_eq!(p, scalar(1.0));
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn second_moment_stays_non_negative() {
        let mut p = scalar(0.0);
        let mut adam = Adam::new(&p, AdamConfig::default());
        for k in 0..20 {
            adam.step(&mut p, &grad(((k as f64) * 1.7).sin())).unwrap();
            assert!(adam.second_moment().values().all(|&v| v >= 0.0));
        }
    }
}
