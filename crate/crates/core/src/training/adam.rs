use crate::error::{Error, Result};
use crate::numerics::memory::Buffer;
use crate::numerics::{Gradients, ParamStore};

/// Adam with bias correction. Moment buffers are allocated lazily, one per
/// parameter, and count toward the tensor memory probe.
#[derive(Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Option<Buffer>>,
    v: Vec<Option<Buffer>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if self.m.len() != store.len() {
            if self.step > 0 {
                return Err(Error::config("optimizer state belongs to a different parameter store"));
            }
            self.m = (0..store.len()).map(|_| None).collect();
            self.v = (0..store.len()).map(|_| None).collect();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads.iter() {
            let i = id.index();
            let m = self.m[i].get_or_insert_with(|| Buffer::zeros(g.len()));
            let v = self.v[i].get_or_insert_with(|| Buffer::zeros(g.len()));
            let p = store.get_mut(id).data_mut();
            for k in 0..g.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                p[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
