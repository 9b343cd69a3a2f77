use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::graph::Gradients;
use crate::params::ParamStore;
use crate::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates. Frozen parameters are skipped.
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let zeros = |s: &ParamStore| -> Vec<Matrix> {
            s.ids().map(|id| Array2::zeros(s.get(id).dim())).collect()
        };
        Self {
            cfg,
            step: 0,
            first: zeros(store),
            second: zeros(store),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        for (id, g) in grads.iter() {
            if store.is_frozen(id) {
                continue;
            }
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            let w = store.get_mut(id);
            ndarray::Zip::from(w)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let x = store.add_filled("x", 1, 1, 3.0);
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &store,
        );
        for _ in 0..500 {
            let grads = {
                let mut g = Graph::new(&store);
                let xv = g.param(x);
                // (x - 1)^2 via matmul of the shifted value with itself
                let shift = g.constant(Array2::from_elem((1, 1), -1.0));
                let d = g.add(xv, shift);
                let sq = g.matmul(d, d);
                g.backward(sq)
            };
            adam.step(&mut store, &grads);
        }
        assert!((store.get(x)[[0, 0]] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut store = ParamStore::new();
        let x = store.add_filled("x", 1, 1, 3.0);
        store.set_frozen_prefix("x", true);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let grads = {
            let mut g = Graph::new(&store);
            let xv = g.param(x);
            let sq = g.matmul(xv, xv);
            g.backward(sq)
        };
        adam.step(&mut store, &grads);
        assert_eq!(store.get(x)[[0, 0]], 3.0);
    }
}
