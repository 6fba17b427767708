use ndarray::Zip;

use super::layers::cast;
use super::{Scalar, Tensors};

/// `lr0 · decay^floor(step / decay_steps)`
pub fn learning_rate(step: u64, lr0: f64, decay: f64, decay_steps: u64) -> f64 {
    lr0 * decay.powi((step / decay_steps.max(1)) as i32)
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Tensors<T>,
    pub v: Tensors<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &Tensors<T>) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    pub fn update(&mut self, params: &mut Tensors<T>, grads: &Tensors<T>, lr: f64) {
        self.t += 1;
        let t = self.t as i32;
        let step = lr * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t));
        let (b1, b2, eps, step) = (cast::<T>(self.beta1), cast::<T>(self.beta2), cast::<T>(self.eps), cast::<T>(step));
        for (name, p) in params.map.iter_mut() {
            let g = grads.get(name);
            let m = self.m.get_mut(name);
            let v = self.v.get_mut(name);
            Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *p -= step * *m / (v.sqrt() + eps);
            });
        }
    }
}
