use super::ParamStore;
use crate::error::{Error, Result};

/// Adam with an optional L1 penalty folded into the gradients.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Weight of `λ·|p|`, applied to parameters whose name ends in `.weight`.
    pub l1: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(0.9, 0.999, 1e-8, 0.0)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64, l1: f64) -> Self {
        Adam { beta1, beta2, eps, l1, first: Vec::new(), second: Vec::new(), steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every trainable parameter; gradients are zeroed afterwards.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if let Some((_, p)) = store.iter().find(|(_, p)| p.trainable && p.tensor.grad().is_none()) {
            return Err(Error::State(format!("parameter `{}` has no gradient", p.name)));
        }
        if self.first.is_empty() {
            for (_, p) in store.iter() {
                self.first.push(vec![0.0; p.tensor.numel()]);
                self.second.push(vec![0.0; p.tensor.numel()]);
            }
        }
        if self.first.len() != store.len() {
            return Err(Error::State("parameter store changed size between steps".into()));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if !p.trainable {
                p.tensor.clear_grad();
                continue;
            }
            let lr = lr * p.lr_scale;
            let l1 = if p.name.ends_with(".weight") { self.l1 } else { 0.0 };
            let mut grad = p.tensor.take_grad().expect("checked above");
            if l1 != 0.0 {
                for (g, w) in grad.iter_mut().zip(p.tensor.data()) {
                    *g += l1_subgradient(*w, l1);
                }
            }
            for (((w, g), m), v) in p.tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            }
            grad.fill(0.0);
            *p.tensor.grad_mut() = grad;
        }
        Ok(())
    }
}

/// Gradient of `λ·|p|`; zero at `p = 0`.
pub fn l1_subgradient(p: f64, lambda: f64) -> f64 {
    if p > 0.0 {
        lambda
    } else if p < 0.0 {
        -lambda
    } else {
        0.0
    }
}
