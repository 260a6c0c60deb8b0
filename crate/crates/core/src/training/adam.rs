use crate::autodiff::{DiffGraph, Real};

/// Adaptive-moment gradient descent over every trainable graph parameter.
/// Moment estimates are kept in `f64` whatever the graph precision.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One update from the gradients left by the last `backward`.
    pub fn step<T: Real>(&mut self, g: &mut DiffGraph<T>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let slots = g.params_mut();
        if self.m.len() < slots.len() {
            self.m.resize(slots.len(), Vec::new());
            self.v.resize(slots.len(), Vec::new());
        }
        for (i, slot) in slots.iter_mut().enumerate() {
            if !slot.trainable {
                continue;
            }
            let n = slot.value.numel();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            if m.len() != n {
                *m = vec![0.0; n];
                *v = vec![0.0; n];
            }
            let grads = slot.grad.data();
            for (k, p) in slot.value.data_mut().iter_mut().enumerate() {
                let gk = grads[k].as_f64();
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let update = self.lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + self.eps);
                *p = T::cast_from(p.as_f64() - update);
            }
        }
    }
}
