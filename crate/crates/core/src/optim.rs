//! Adam with a fixed learning rate.

use alloc::vec;
use alloc::vec::Vec;

use crate::params::ParamStore;
use crate::tape::Gradients;
use crate::tensor::Tensor;
use crate::Real;

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Option<Tensor<T>>>,
    v: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One update of every trainable parameter; a parameter without a
    /// gradient is treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) {
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - libm::pow(self.beta1, self.step as f64));
        let c2 = T::of(1.0 - libm::pow(self.beta2, self.step as f64));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        let ids: Vec<_> = store.trainable_ids().collect();
        for id in ids {
            let n = store.value(id).numel();
            let g = grads.param(id);
            let m = self.m[id.index()].get_or_insert_with(|| Tensor::zeros(store.value(id).shape()));
            let v = self.v[id.index()].get_or_insert_with(|| Tensor::zeros(store.value(id).shape()));
            let zero = vec![T::zero(); if g.is_none() { n } else { 0 }];
            let gd = g.map_or(&zero[..], |g| g.data());
            let value = store.value_mut(id).data_mut();
            for i in 0..n {
                let gi = gd[i];
                let mi = &mut m.data_mut()[i];
                *mi = b1 * *mi + (T::one() - b1) * gi;
                let vi = &mut v.data_mut()[i];
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = m.data()[i] / c1;
                let vhat = v.data()[i] / c2;
                value[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
