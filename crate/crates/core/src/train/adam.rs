use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Gradients, ParamStore, Tensor};
use crate::error::{Error, Result};

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

/// Per-parameter moments, indexed like the parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected update. Parameters the loss does not reach are
    /// treated as having zero gradient. A non-finite gradient aborts before
    /// anything is modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        for id in params.ids() {
            if let Some(g) = grads.param(id) {
                if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of `{}`[{pos}] = {} at step {}",
                        params.name(id),
                        g.data()[pos],
                        self.t + 1
                    )));
                }
            }
        }

        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let i = id.index();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let p = params.get_mut(id).data_mut();
            match grads.param(id) {
                Some(g) => {
                    for (((p, m), v), &g) in p.iter_mut().zip(m).zip(v).zip(g.data()) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
                None => {
                    for ((p, m), v) in p.iter_mut().zip(m).zip(v) {
                        *m *= beta1;
                        *v *= beta2;
                        if *m != 0.0 {
                            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Moments and step count as named arrays for a checkpoint.
    pub fn to_arrays(&self, params: &ParamStore) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (id, name, _) in params.iter() {
            out.insert(format!("adam.m.{name}"), self.m[id.index()].clone());
            out.insert(format!("adam.v.{name}"), self.v[id.index()].clone());
        }
        out.insert("adam.t".into(), Tensor::scalar(self.t as f64));
        out
    }

    pub fn from_arrays(
        config: AdamConfig,
        params: &ParamStore,
        arrays: &BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        let get = |key: String, shape: &[usize]| -> Result<Tensor> {
            let t = arrays
                .get(&key)
                .ok_or_else(|| Error::SchemaMismatch(format!("optimizer state lacks `{key}`")))?;
            if t.shape() != shape {
                return Err(Error::SchemaMismatch(format!("`{key}` has shape {:?}", t.shape())));
            }
            Ok(t.clone())
        };
        let mut state = Self::new(config, params);
        for (id, name, t) in params.iter() {
            state.m[id.index()] = get(format!("adam.m.{name}"), t.shape())?;
            state.v[id.index()] = get(format!("adam.v.{name}"), t.shape())?;
        }
        state.t = get("adam.t".into(), &[])?.item()? as u64;
        Ok(state)
    }
}
