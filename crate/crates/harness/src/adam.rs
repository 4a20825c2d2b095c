//! Adam with bias correction over a parameter store. Moment buffers live
//! here, lined up with the store's registration order, so the optimizer
//! state can be checkpointed next to the weights.

use crackseg_core::ParamStore;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore<f32>) -> Self {
        let m = store.ids().map(|id| vec![0.0; store.value(id).numel()]).collect::<Vec<_>>();
        let v = m.clone();
        Self { cfg, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update. `grads[i]` belongs to the i-th parameter in
    /// registration order; `None` (a parameter off the loss path) leaves
    /// both the parameter and its moments untouched.
    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &[Option<Vec<f32>>]) {
        let ids: Vec<_> = store.ids().collect();
        assert_eq!(ids.len(), grads.len(), "gradient list does not match the store");
        self.step += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.step as i32);
        for (i, id) in ids.into_iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let p = store.value_mut(id).data_mut();
            assert_eq!(p.len(), g.len(), "gradient shape drifted from its parameter");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g[j] as f64;
                let mj = self.cfg.beta1 * m[j] as f64 + (1.0 - self.cfg.beta1) * gj;
                let vj = self.cfg.beta2 * v[j] as f64 + (1.0 - self.cfg.beta2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let update = self.cfg.lr * (mj / bc1) / ((vj / bc2).sqrt() + self.cfg.eps);
                p[j] = (p[j] as f64 - update) as f32;
            }
        }
    }

    /// Moment buffers in registration order, for checkpointing.
    pub fn moments(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.m, &self.v)
    }

    /// Restore optimizer state saved by [`Self::moments`] and
    /// [`Self::step_count`].
    pub fn restore(&mut self, step: u64, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>) {
        assert_eq!(m.len(), self.m.len(), "moment count does not match the store");
        assert_eq!(v.len(), self.v.len(), "moment count does not match the store");
        for (ours, theirs) in self.m.iter().zip(&m) {
            assert_eq!(ours.len(), theirs.len(), "moment width does not match its parameter");
        }
        self.step = step;
        self.m = m;
        self.v = v;
    }
}
