//! Plain gradient descent and decoupled-weight-decay Adam.

use crate::error::{Error, Result};
use crate::numcore::tensor::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerMode {
    /// `θ ← θ − lr·g`
    Plain,
    /// Adam with decoupled weight decay.
    Adaptive { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerMode {
    pub fn adaptive() -> Self {
        OptimizerMode::Adaptive {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    mode: OptimizerMode,
    step: u64,
    lr: f64,
    weight_decay: f64,
    first: Option<ParamSet>,
    second: Option<ParamSet>,
}

impl OptimizerState {
    pub fn plain(lr: f64) -> Self {
        OptimizerState {
            mode: OptimizerMode::Plain,
            step: 0,
            lr,
            weight_decay: 0.0,
            first: None,
            second: None,
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        OptimizerState {
            mode: OptimizerMode::adaptive(),
            step: 0,
            lr,
            weight_decay,
            first: None,
            second: None,
        }
    }

    pub fn mode(&self) -> OptimizerMode {
        self.mode
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        params.check_same_layout(grads)?;
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFinite {
                op: format!("optimizer gradient `{name}`"),
            });
        }
        self.step += 1;
        match self.mode {
            OptimizerMode::Plain => {
                for (name, p) in params.iter_mut() {
                    let g = grads.require(name)?;
                    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= self.lr * d;
                    }
                }
            }
            OptimizerMode::Adaptive { beta1, beta2, eps } => {
                let first = self.first.get_or_insert_with(|| params.zeros_like());
                let second = self.second.get_or_insert_with(|| params.zeros_like());
                first.check_same_layout(params)?;
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for (name, p) in params.iter_mut() {
                    let g = grads.require(name)?.data();
                    let m = first.get_mut(name).expect("layout checked").data_mut();
                    let v = second.get_mut(name).expect("layout checked").data_mut();
                    for (i, x) in p.data_mut().iter_mut().enumerate() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        *x -= self.lr * (m_hat / (v_hat.sqrt() + eps) + self.weight_decay * *x);
                    }
                }
            }
        }
        Ok(())
    }
}
