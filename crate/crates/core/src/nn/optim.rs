//! AdamW with a cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Moment estimates for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamWState {
    pub fn new(net: &Mlp, config: AdamWConfig) -> Self {
        let n = net.param_count();
        AdamWState {
            config,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One decoupled-weight-decay Adam update at learning rate `lr`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients, lr: f64) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::GradientBlowUp);
        }
        if self.m.len() != net.param_count() {
            return Err(Error::DimensionMismatch { expected: self.m.len(), got: net.param_count() });
        }
        let c = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let mut k = 0;
        for (li, layer) in net.layers_mut().iter_mut().enumerate() {
            let pairs = [
                (&mut layer.weight, &grads.weights[li]),
                (&mut layer.bias, &grads.biases[li]),
            ];
            for (params, g) in pairs {
                for (p, &gi) in params.iter_mut().zip(g.iter()) {
                    let m = &mut self.m[k];
                    let v = &mut self.v[k];
                    *m = c.beta1 * *m + (1.0 - c.beta1) * gi;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * gi * gi;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *p);
                    k += 1;
                }
            }
        }
        Ok(())
    }
}

/// Cosine decay from `base` to 0 over `total` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub total: u64,
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        if self.total == 0 {
            return self.base;
        }
        let t = (step.min(self.total)) as f64 / self.total as f64;
        self.base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::{Activation, Dense};
    use rand::SeedableRng;

    #[test]
    fn schedule_endpoints() {
        let s = LrSchedule { base: 0.01, total: 100 };
        assert_eq!(s.at(0), 0.01);
        assert!((s.at(50) - 0.005).abs() < 1e-15);
        assert!(s.at(100).abs() < 1e-15);
        assert!(s.at(200).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut l = Dense::zeros(1, 1, Activation::Identity);
        l.weight[0] = 1.0;
        let mut net = Mlp::from_layers(vec![l]).unwrap();
        let config = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamWState::new(&net, config);
        let grads = Gradients { weights: vec![vec![3.0]], biases: vec![vec![-0.5]] };
        opt.step(&mut net, &grads, 0.1).unwrap();
        // bias-corrected first step is lr * g / (|g| + eps)
        assert!((net.layers()[0].weight[0] - 0.9).abs() < 1e-7);
        assert!((net.layers()[0].bias[0] - 0.1).abs() < 1e-7);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut l = Dense::zeros(1, 1, Activation::Identity);
        l.weight[0] = 2.0;
        let mut net = Mlp::from_layers(vec![l]).unwrap();
        let mut opt = AdamWState::new(&net, AdamWConfig { weight_decay: 0.5, ..Default::default() });
        let grads = Gradients { weights: vec![vec![0.0]], biases: vec![vec![0.0]] };
        opt.step(&mut net, &grads, 0.1).unwrap();
        assert!((net.layers()[0].weight[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut net = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng);
        let before = net.clone();
        let mut opt = AdamWState::new(&net, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        let grads = Gradients::zeros_like(&net);
        for _ in 0..3 {
            opt.step(&mut net, &grads, 0.01).unwrap();
        }
        assert_eq!(net, before);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut net = Mlp::from_layers(vec![Dense::zeros(1, 1, Activation::Identity)]).unwrap();
        let mut opt = AdamWState::new(&net, AdamWConfig::default());
        let grads = Gradients { weights: vec![vec![f64::NAN]], biases: vec![vec![0.0]] };
        assert!(matches!(opt.step(&mut net, &grads, 0.01), Err(Error::GradientBlowUp)));
    }

    #[test]
    fn ten_steps_on_a_bowl_strictly_decrease_loss() {
        let mut l = Dense::zeros(2, 1, Activation::Identity);
        l.weight = vec![1.5, -2.0];
        let mut net = Mlp::from_layers(vec![l]).unwrap();
        let mut opt = AdamWState::new(&net, AdamWConfig::default());
        let loss = |n: &Mlp| n.layers()[0].weight.iter().map(|w| w * w).sum::<f64>();
        let mut prev = loss(&net);
        for _ in 0..10 {
            let w = net.layers()[0].weight.clone();
            let grads = Gradients { weights: vec![w.iter().map(|w| 2.0 * w).collect()], biases: vec![vec![0.0]] };
            opt.step(&mut net, &grads, 0.01).unwrap();
            let now = loss(&net);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let l = Dense::zeros(1, 1, Activation::Identity);
        let mut net = Mlp::from_layers(vec![l]).unwrap();
        let mut opt = AdamWState::new(&net, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        for _ in 0..2000 {
            let b = net.layers()[0].bias[0];
            let grads = Gradients { weights: vec![vec![0.0]], biases: vec![vec![2.0 * (b - 3.0)]] };
            opt.step(&mut net, &grads, 0.05).unwrap();
        }
        assert!((net.layers()[0].bias[0] - 3.0).abs() < 1e-2);
    }
}
