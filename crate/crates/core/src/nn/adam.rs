//! Adam optimizer with bias correction.

use std::collections::BTreeMap;

use crate::nn::tensor::ParamStore;
use crate::Result;

/// Moment state, exposed so checkpoints can persist an exact training cursor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: AdamState,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: AdamState::default(),
        }
    }

    pub fn with_state(lr: f64, state: AdamState) -> Adam {
        Adam {
            state,
            ..Adam::new(lr)
        }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    /// One update: `p -= lr * m_hat / (sqrt(v_hat) + eps)` with
    /// `m_hat = m / (1 - beta1^t)` and `v_hat = v / (1 - beta2^t)`.
    /// Only parameters named in `grads` move; moments for new names start
    /// at zero.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = store.get_mut(name)?;
            let m = self
                .state
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .state
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;
    use approx::assert_relative_eq;

    #[test]
    fn first_step_closed_form() {
        // g = 0.5: m = 0.1*0.5 = 0.05, v = 0.001*0.25 = 2.5e-4,
        // m_hat = 0.05/0.1 = 0.5, v_hat = 2.5e-4/0.001 = 0.25,
        // delta = 0.1 * 0.5 / (0.5 + 1e-8) ~= 0.1.
        let mut store = ParamStore::new();
        store.insert("p", Tensor::scalar(1.0)).unwrap();
        let mut opt = Adam::new(0.1);
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), vec![0.5]);
        opt.step(&mut store, &grads).unwrap();
        let got = store.get("p").unwrap().data[0];
        assert_relative_eq!(got, 1.0 - 0.1 * 0.5 / (0.25f64.sqrt() + 1e-8), max_relative = 1e-12);
        assert_eq!(opt.state().step, 1);
    }

    #[test]
    fn second_step_closed_form() {
        // Constant gradient 1.0, lr 0.01. Step 2:
        // m2 = 0.9*0.1 + 0.1*1 = 0.19, bc1 = 1-0.81 = 0.19 -> m_hat = 1.
        // v2 = 0.999*0.001 + 0.001*1 = 0.001999, bc2 = 1-0.998001 = 0.001999
        // -> v_hat = 1. delta = 0.01 * 1/(1+1e-8).
        let mut store = ParamStore::new();
        store.insert("p", Tensor::scalar(0.0)).unwrap();
        let mut opt = Adam::new(0.01);
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), vec![1.0]);
        opt.step(&mut store, &grads).unwrap();
        let after1 = store.get("p").unwrap().data[0];
        assert_relative_eq!(after1, -0.01 / (1.0 + 1e-8), max_relative = 1e-10);
        opt.step(&mut store, &grads).unwrap();
        let after2 = store.get("p").unwrap().data[0];
        assert_relative_eq!(after2, after1 - 0.01 / (1.0 + 1e-8), max_relative = 1e-10);
    }

    #[test]
    fn state_round_trip_resumes_identically() {
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), vec![0.3, -0.7]);

        // Continuous run: 4 steps.
        let mut store_a = ParamStore::new();
        store_a
            .insert("p", Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap())
            .unwrap();
        let mut opt_a = Adam::new(0.05);
        for _ in 0..4 {
            opt_a.step(&mut store_a, &grads).unwrap();
        }

        // Split run: 2 steps, snapshot, 2 more on a restored optimizer.
        let mut store_b = ParamStore::new();
        store_b
            .insert("p", Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap())
            .unwrap();
        let mut opt_b = Adam::new(0.05);
        opt_b.step(&mut store_b, &grads).unwrap();
        opt_b.step(&mut store_b, &grads).unwrap();
        let snapshot = opt_b.state().clone();
        let mut opt_b2 = Adam::with_state(0.05, snapshot);
        opt_b2.step(&mut store_b, &grads).unwrap();
        opt_b2.step(&mut store_b, &grads).unwrap();

        assert_eq!(store_a.get("p").unwrap().data, store_b.get("p").unwrap().data);
    }

    #[test]
    fn untouched_params_stay_put() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::scalar(5.0)).unwrap();
        store.insert("b", Tensor::scalar(7.0)).unwrap();
        let mut opt = Adam::new(0.1);
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), vec![1.0]);
        opt.step(&mut store, &grads).unwrap();
        assert_eq!(store.get("b").unwrap().data[0], 7.0);
        assert_ne!(store.get("a").unwrap().data[0], 5.0);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::from_vec(&[2], vec![3.0, -4.0]).unwrap()).unwrap();
        let mut opt = Adam::new(0.1);
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), vec![0.0, 0.0]);
        opt.step(&mut store, &grads).unwrap();
        // m and v stay zero, so the update is 0 / (0 + eps) = 0 exactly.
        assert_eq!(store.get("p").unwrap().data, vec![3.0, -4.0]);
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        // f(p) = 0.5 * ((p0 - 1)^2 + (p1 + 2)^2), grad = p - minimum.
        let minimum = [1.0, -2.0];
        let mut store = ParamStore::new();
        store.insert("p", Tensor::from_vec(&[2], vec![6.0, 4.0]).unwrap()).unwrap();
        let mut opt = Adam::new(0.05);
        for step in 0..500 {
            let p = store.get("p").unwrap().data.clone();
            let grad: Vec<f64> = p.iter().zip(minimum).map(|(x, m)| x - m).collect();
            let mut grads = BTreeMap::new();
            grads.insert("p".to_string(), grad);
            opt.step(&mut store, &grads).unwrap();
            let p = &store.get("p").unwrap().data;
            if (p[0] - minimum[0]).abs() < 1e-3 && (p[1] - minimum[1]).abs() < 1e-3 {
                assert!(step < 499);
                return;
            }
        }
        panic!("did not reach the minimum within 500 steps");
    }
}
