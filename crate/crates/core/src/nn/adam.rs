use serde::{Deserialize, Serialize};

use crate::tensor::Scalar;

use super::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Moment buffers, kept separately so they can be checkpointed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        Self {
            config,
            step: 0,
            m: store
                .values
                .iter()
                .map(|p| vec![T::zero(); p.len()])
                .collect(),
            v: store
                .values
                .iter()
                .map(|p| vec![T::zero(); p.len()])
                .collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update from the gradients currently in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let lr_t =
            T::from_f64_lossy(c.lr * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t)));
        let eps_t = T::from_f64_lossy(c.eps * (1.0 - c.beta2.powi(t)).sqrt());
        for ((p, g), (m, v)) in store
            .values
            .iter_mut()
            .zip(&store.grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                p[i] = p[i] - lr_t * m[i] / (v[i].sqrt() + eps_t);
            }
        }
    }

    pub fn state(&self) -> AdamState {
        let conv = |b: &Vec<Vec<T>>| {
            b.iter()
                .map(|x| x.iter().map(|v| v.as_f64() as f32).collect())
                .collect()
        };
        AdamState {
            step: self.step,
            m: conv(&self.m),
            v: conv(&self.v),
        }
    }

    pub fn restore(&mut self, state: &AdamState) -> bool {
        let fits = |b: &Vec<Vec<f32>>, own: &Vec<Vec<T>>| {
            b.len() == own.len() && b.iter().zip(own).all(|(x, y)| x.len() == y.len())
        };
        if !fits(&state.m, &self.m) || !fits(&state.v, &self.v) {
            return false;
        }
        let conv = |b: &Vec<Vec<f32>>| -> Vec<Vec<T>> {
            b.iter()
                .map(|x| x.iter().map(|&v| T::from_f64_lossy(v as f64)).collect())
                .collect()
        };
        self.step = state.step;
        self.m = conv(&state.m);
        self.v = conv(&state.v);
        true
    }
}
