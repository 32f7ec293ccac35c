use serde::{Deserialize, Serialize};

use crate::nets::ParamStore;
use crate::numcore::Matrix;

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    /// Adam with decoupled weight decay.
    AdamW {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_weight_decay")]
        weight_decay: f64,
    },
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_weight_decay() -> f64 {
    0.01
}

impl OptimizerConfig {
    pub fn adamw(lr: f64) -> Self {
        OptimizerConfig::AdamW {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: default_weight_decay(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig::Sgd { lr, momentum: 0.0 }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::AdamW { lr, .. } | OptimizerConfig::Sgd { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let ok = match *self {
            OptimizerConfig::AdamW {
                lr,
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                lr > 0.0
                    && (0.0..1.0).contains(&beta1)
                    && (0.0..1.0).contains(&beta2)
                    && eps > 0.0
                    && weight_decay >= 0.0
            }
            OptimizerConfig::Sgd { lr, momentum } => lr > 0.0 && (0.0..1.0).contains(&momentum),
        };
        if ok {
            Ok(())
        } else {
            Err(HarnessError::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Per-parameter optimizer state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &ParamStore) -> Self {
        let zeros = || -> Vec<Matrix> {
            params
                .params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        let second = match config {
            OptimizerConfig::AdamW { .. } => zeros(),
            OptimizerConfig::Sgd { .. } => Vec::new(),
        };
        Self {
            config,
            step: 0,
            first: zeros(),
            second,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; `grads[i]` is the gradient of parameter `i`,
    /// `None` for frozen parameters.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Matrix>]) {
        self.step += 1;
        let t = self.step as i32;
        for (i, (p, g)) in params.params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if p.frozen {
                continue;
            }
            let theta = p.value.data_mut();
            let g = g.data();
            let m = self.first[i].data_mut();
            match self.config {
                OptimizerConfig::AdamW {
                    lr,
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                } => {
                    let v = self.second[i].data_mut();
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for k in 0..theta.len() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                        v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                        theta[k] -= lr * weight_decay * theta[k];
                        theta[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                    }
                }
                OptimizerConfig::Sgd { lr, momentum } => {
                    for k in 0..theta.len() {
                        m[k] = momentum * m[k] + g[k];
                        theta[k] -= lr * m[k];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(value: f64) -> ParamStore {
        let mut s = ParamStore::default();
        s.add("x", Matrix::scalar(value));
        s
    }

    // f(x) = (x - 3)², f'(x) = 2(x - 3)
    fn grad(s: &ParamStore) -> Vec<Option<Matrix>> {
        vec![Some(Matrix::scalar(2.0 * (s.params[0].value.get(0, 0) - 3.0)))]
    }

    #[test]
    fn adamw_first_step() {
        let mut s = one(1.0);
        let mut opt = Optimizer::new(OptimizerConfig::adamw(0.1), &s);
        let g = grad(&s);
        opt.step(&mut s, &g);
        // g = -4; m̂ = -4, v̂ = 16; decay 1 - 0.1·0.01 = 0.999
        let expect = 1.0 * 0.999 - 0.1 * (-4.0 / (4.0 + 1e-8));
        assert!((s.params[0].value.get(0, 0) - expect).abs() < 1e-15);
    }

    #[test]
    fn adamw_second_step() {
        let mut s = one(1.0);
        let mut opt = Optimizer::new(OptimizerConfig::adamw(0.1), &s);
        let g1 = grad(&s);
        opt.step(&mut s, &g1);
        let x1 = s.params[0].value.get(0, 0);
        let g2 = grad(&s);
        opt.step(&mut s, &g2);
        let (a, b) = (-4.0, 2.0 * (x1 - 3.0));
        let m = 0.9 * 0.1 * a + 0.1 * b;
        let v = 0.999 * 0.001 * a * a + 0.001 * b * b;
        let mh = m / (1.0 - 0.81);
        let vh = v / (1.0 - 0.999f64.powi(2));
        let expect = x1 * (1.0 - 0.001) - 0.1 * mh / (vh.sqrt() + 1e-8);
        assert!((s.params[0].value.get(0, 0) - expect).abs() < 1e-14);
    }

    #[test]
    fn sgd_step() {
        let mut s = one(1.0);
        let mut opt = Optimizer::new(OptimizerConfig::sgd(1e-4), &s);
        let g = grad(&s);
        opt.step(&mut s, &g);
        assert_eq!(s.params[0].value.get(0, 0), 1.0 + 1e-4 * 4.0);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut s = one(0.0);
        let mut opt = Optimizer::new(OptimizerConfig::Sgd { lr: 0.5, momentum: 0.5 }, &s);
        let g = vec![Some(Matrix::scalar(1.0))];
        opt.step(&mut s, &g);
        opt.step(&mut s, &g);
        // buffers 1 then 1.5
        assert_eq!(s.params[0].value.get(0, 0), -0.5 - 0.75);
    }

    #[test]
    fn frozen_and_missing_untouched() {
        let mut s = one(1.0);
        s.add("y", Matrix::scalar(2.0));
        s.freeze("y");
        let mut opt = Optimizer::new(OptimizerConfig::adamw(0.1), &s);
        opt.step(&mut s, &[None, Some(Matrix::scalar(1.0))]);
        assert_eq!(s.params[0].value.get(0, 0), 1.0);
        assert_eq!(s.params[1].value.get(0, 0), 2.0);
    }

    #[test]
    fn adamw_converges_on_quadratic() {
        let mut s = one(-5.0);
        let mut opt = Optimizer::new(
            OptimizerConfig::AdamW {
                lr: 0.05,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: 0.0,
            },
            &s,
        );
        for _ in 0..2000 {
            let g = grad(&s);
            opt.step(&mut s, &g);
        }
        assert!((s.params[0].value.get(0, 0) - 3.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(OptimizerConfig::sgd(0.0).validate().is_err());
        assert!(OptimizerConfig::Sgd { lr: 0.1, momentum: 1.0 }.validate().is_err());
        assert!(OptimizerConfig::adamw(1e-3).validate().is_ok());
    }
}
