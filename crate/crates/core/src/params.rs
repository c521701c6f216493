//! Trainable parameter storage, gradient buffers and the Adam update.
//!
//! Gradients are produced by hand-derived backward passes in the backbones.
//! [`ParamStore::backward`] runs a loss closure against a fresh set of
//! buffers and only commits them when the loss is finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Gradient buffers with the same layout as a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Grads {
    bufs: Vec<Vec<f64>>,
}

impl Grads {
    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.bufs[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.bufs[id.0]
    }

    pub fn scale(&mut self, s: f64) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|x| *x *= s);
        }
    }
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("optimizer.learning_rate", "must be finite and >= 0"));
        }
        for (f, b) in [("optimizer.beta1", self.beta1), ("optimizer.beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(f, "must be in (0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("optimizer.eps", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
    grads: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    fresh: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor data/shape mismatch");
        let n = data.len();
        self.tensors.push(Tensor { name: name.into(), shape, data });
        self.grads.push(vec![0.0; n]);
        self.m.push(vec![0.0; n]);
        self.v.push(vec![0.0; n]);
        ParamId(self.tensors.len() - 1)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.tensors[id.0].data
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id.0].data
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Flat coordinate `i` across all tensors in insertion order.
    pub fn locate(&self, mut i: usize) -> (ParamId, usize) {
        for (k, t) in self.tensors.iter().enumerate() {
            if i < t.data.len() {
                return (ParamId(k), i);
            }
            i -= t.data.len();
        }
        panic!("coordinate out of range");
    }

    pub fn zeroed_grads(&self) -> Grads {
        Grads { bufs: self.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect() }
    }

    /// Replace parameter values with a snapshot of identical layout.
    pub fn load_values(&mut self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "snapshot has {} tensors, store has {}",
                values.len(),
                self.tensors.len()
            )));
        }
        for (dst, src) in self.tensors.iter_mut().zip(values) {
            if dst.name != src.name || dst.shape != src.shape || src.data.len() != dst.data.len() {
                return Err(Error::Shape(format!("tensor {} does not match snapshot", dst.name)));
            }
            dst.data.copy_from_slice(&src.data);
        }
        Ok(())
    }

    /// Evaluate `loss` with fresh gradient buffers. The buffers replace the
    /// store's gradients only if the returned loss is finite.
    pub fn backward<F>(&mut self, loss: F) -> Result<f64>
    where
        F: FnOnce(&ParamStore, &mut Grads) -> f64,
    {
        let mut g = self.zeroed_grads();
        let value = loss(self, &mut g);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss(value));
        }
        self.grads = g.bufs;
        self.fresh = true;
        Ok(value)
    }

    /// Bias-corrected Adam update; clears gradients and advances the step.
    pub fn adam_step(&mut self, cfg: &OptimConfig) -> Result<()> {
        if !self.fresh {
            return Err(Error::StaleGradients);
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for k in 0..self.tensors.len() {
            let (p, g) = (&mut self.tensors[k].data, &mut self.grads[k]);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps);
                g[i] = 0.0;
            }
        }
        self.fresh = false;
        Ok(())
    }
}
