use lgt_autodiff::{ParamStore, Tensor};

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: store.zeros_like(),
            v: store.zeros_like(),
        }
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// Applies one update; `grads` follows the store's parameter order.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) {
        assert_eq!(grads.len(), self.m.len(), "one gradient per parameter");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let p = store.value_mut(id).data_mut();
            let (m, v, g) = (self.m[i].data_mut(), self.v[i].data_mut(), grads[i].data());
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let step = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                p[j] -= step;
            }
        }
    }
}

/// Step schedule: `initial` until `decay_epoch`, then `decayed`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSchedule {
    pub initial: f64,
    pub decayed: f64,
    pub decay_epoch: usize,
}

impl StepSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_epoch {
            self.initial
        } else {
            self.decayed
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a", Tensor::from_fn(&[3], |i| i as f64 - 1.3)).unwrap();
        s.add("b", Tensor::from_fn(&[2, 2], |i| i as f64 * 0.25)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store();
        let before: Vec<Tensor> = s.iter().map(|(_, p)| p.value.clone()).collect();
        let mut adam = Adam::new(&s, 0.9, 0.999, 1e-8);
        let zeros = s.zeros_like();
        adam.update(&mut s, &zeros, 1e-3);
        for ((_, p), b) in s.iter().zip(&before) {
            assert_eq!(&p.value, b);
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = store();
        let mut adam = Adam::new(&s, 0.9, 0.999, 0.0);
        let grads: Vec<Tensor> = s.iter().map(|(_, p)| p.value.map(|_| 3.0)).collect();
        let before = s.get(s.id("a").unwrap()).value.clone();
        adam.update(&mut s, &grads, 0.01);
        let after = &s.get(s.id("a").unwrap()).value;
        for (x, y) in before.data().iter().zip(after.data()) {
            assert!((x - y - 0.01).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_decays_at_epoch() {
        let s = StepSchedule {
            initial: 5e-4,
            decayed: 1e-4,
            decay_epoch: 45,
        };
        assert_eq!((s.at(0), s.at(44), s.at(45)), (5e-4, 5e-4, 1e-4));
    }
}
