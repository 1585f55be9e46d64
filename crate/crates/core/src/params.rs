use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::graph::ParamGrads;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor,
}

/// Glorot/Xavier uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-a..=a)).collect())
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        id
    }

    pub fn add_xavier(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        self.add(name, xavier(rng, rows, cols))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Tensor::zeros(rows, cols))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(name, value)| NamedTensor {
                name: name.clone(),
                value: value.clone(),
            })
            .collect()
    }

    /// Overwrites every registered tensor from `named`. Names and shapes must
    /// match exactly.
    pub fn load_named(&mut self, named: &[NamedTensor]) -> Result<()> {
        if named.len() != self.len() {
            return Err(Error::Contract(format!(
                "checkpoint holds {} parameters, model expects {}",
                named.len(),
                self.len()
            )));
        }
        for nt in named {
            let id = self
                .id(&nt.name)
                .ok_or_else(|| Error::Contract(format!("unexpected parameter {}", nt.name)))?;
            let slot = &mut self.tensors[id.0];
            if slot.shape() != nt.value.shape() || nt.value.data.len() != nt.value.rows * nt.value.cols {
                return Err(Error::Contract(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    nt.name,
                    nt.value.shape(),
                    slot.shape()
                )));
            }
            *slot = nt.value.clone();
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Parameters without a gradient are left alone, moments included.
    pub fn step(&mut self, store: &mut ParamStore, grads: &crate::graph::ParamGrads) {
        self.t += 1;
        let n = store.len();
        self.m.resize(n, None);
        self.v.resize(n, None);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for id in store.ids() {
            let Some(g) = grads.get(id) else { continue };
            let p = store.get_mut(id);
            let m = self.m[id.0].get_or_insert_with(|| Tensor::zeros(g.rows, g.cols));
            let v = self.v[id.0].get_or_insert_with(|| Tensor::zeros(g.rows, g.cols));
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Central-difference check of `analytic` against `loss` for every parameter
/// tensor. Returns `(name, ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖))`;
/// near-zero gradients report the absolute difference instead.
pub fn gradient_errors(store: &ParamStore, analytic: &ParamGrads, mut loss: impl FnMut(&ParamStore) -> f64) -> Vec<(String, f64)> {
    let eps = 1e-5;
    let mut probe = store.clone();
    let mut out = Vec::with_capacity(store.len());
    for id in store.ids() {
        let base = store.get(id).clone();
        let a = analytic.get(id).cloned().unwrap_or_else(|| Tensor::zeros(base.rows, base.cols));
        let mut numeric = Tensor::zeros(base.rows, base.cols);
        for i in 0..base.len() {
            probe.get_mut(id).data[i] = base.data[i] + eps;
            let up = loss(&probe);
            probe.get_mut(id).data[i] = base.data[i] - eps;
            let down = loss(&probe);
            probe.get_mut(id).data[i] = base.data[i];
            numeric.data[i] = (up - down) / (2.0 * eps);
        }
        let diff = a.data.iter().zip(&numeric.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let scale = a.norm().max(numeric.norm());
        out.push((store.name(id).to_owned(), if scale < 1e-9 { diff } else { diff / scale }));
    }
    out
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xavier_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = xavier(&mut rng, 10, 20);
        let a = (6.0f64 / 30.0).sqrt();
        assert!(t.data.iter().all(|x| x.abs() <= a));
        assert!(t.data.iter().any(|x| x.abs() > a / 2.0));
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row_vector(vec![1.0, -2.0]));
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let sq = g.mul(wv, wv);
        let loss = g.sum(sq);
        let grads = g.backward(loss);
        let mut adam = Adam::new(0.1);
        adam.step(&mut store, &grads);
        // bias-corrected first step is lr * sign(g)
        let got = &store.get(w).data;
        assert!((got[0] - 0.9).abs() < 1e-6);
        assert!((got[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row_vector(vec![3.0, -4.0]));
        let mut adam = Adam::new(0.05);
        for _ in 0..2000 {
            let mut g = Graph::new();
            let wv = g.param(&store, w);
            let sq = g.mul(wv, wv);
            let loss = g.sum(sq);
            adam.step(&mut store, &g.backward(loss));
        }
        assert!(store.get(w).norm() < 1e-2);
    }

    #[test]
    fn load_named_checks_shapes() {
        let mut a = ParamStore::new();
        a.add_zeros("x", 2, 2);
        let mut named = a.to_named();
        named[0].value.data[0] = 5.0;
        a.load_named(&named).unwrap();
        assert_eq!(a.get(ParamId(0)).get(0, 0), 5.0);
        named[0].value = Tensor::zeros(1, 2);
        assert!(a.load_named(&named).is_err());
    }
}
