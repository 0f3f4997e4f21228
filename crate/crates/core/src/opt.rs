//! Optimizers. Training loops own their optimizer state; parameters are
//! updated in place from tape gradients.

use alloc::vec::Vec;

use crate::fm;
use crate::tensor::Tensor;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.5,
            beta2: 0.99,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            beta1,
            beta2,
            ..Adam::new(lr)
        }
    }

    /// One update. `grads[i] == None` leaves `params[i]` untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<Tensor>]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        self.t += 1;
        let b1t = 1.0 - fm::powf(self.beta1, self.t as f64);
        let b2t = 1.0 - fm::powf(self.beta2, self.t as f64);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for k in 0..p.numel() {
                let gk = g.data()[k];
                let mk = self.beta1 * m.data()[k] + (1.0 - self.beta1) * gk;
                let vk = self.beta2 * v.data()[k] + (1.0 - self.beta2) * gk * gk;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                let mhat = mk / b1t;
                let vhat = vk / b2t;
                p.data_mut()[k] -= self.lr * mhat / (fm::sqrt(vhat) + self.eps);
            }
        }
    }
}

/// Cosine-decayed learning rate over a fixed iteration budget:
/// `lr_i = lr0 * 0.5 * (1 + cos(pi * i / n))`.
pub fn cosine_lr(lr0: f64, i: usize, n: usize) -> f64 {
    if n == 0 {
        return lr0;
    }
    lr0 * 0.5 * (1.0 + fm::cos(fm::PI * i as f64 / n as f64))
}

/// Plain gradient descent step (no momentum).
pub fn sgd_step(param: &mut Tensor, grad: &Tensor, lr: f64) {
    for k in 0..param.numel() {
        param.data_mut()[k] -= lr * grad.data()[k];
    }
}
