use ndarray::{Array2, Zip};

use super::params::Params;
use super::Matrix;
use crate::error::{Error, Result};

/// Adam with an L2 penalty folded into the gradient
/// (`g <- g + weight_decay * param`).
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &Params, learning_rate: f64, weight_decay: f64) -> Self {
        let zeros = |id| Array2::zeros(params.value(id).raw_dim());
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.ids().map(zeros).collect(),
            v: params.ids().map(zeros).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter, then clears the gradients.
    pub fn step(&mut self, params: &mut Params) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer built for {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for id in params.ids() {
            if params.grad(id).is_none() {
                return Err(Error::Parameter {
                    name: params.name(id).to_owned(),
                    msg: "no gradient for optimizer step".into(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr, wd) = (self.beta1, self.beta2, self.eps, self.learning_rate, self.weight_decay);
        for id in params.ids().collect::<Vec<_>>() {
            let g = params.grad(id).cloned().expect("checked above");
            let i = id.index();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            Zip::from(params.value_mut(id))
                .and(&g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    let g = g + wd * *p;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
        params.zero_grads();
        Ok(())
    }
}

/// Step decay: the rate is multiplied by `gamma` every `step_size` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLr {
    pub base: f64,
    pub step_size: usize,
    pub gamma: f64,
}

impl StepLr {
    pub fn new(base: f64, step_size: usize) -> Self {
        Self {
            base,
            step_size,
            gamma: 0.1,
        }
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        let decays = if self.step_size == 0 { 0 } else { epoch / self.step_size };
        self.base * self.gamma.powi(decays as i32)
    }
}
