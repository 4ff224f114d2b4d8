//! Named learnable parameters shared by all model components.
//!
//! Parameters live outside any graph; each forward pass binds them into a
//! fresh [`Graph`](crate::numerics::graph::Graph) as leaves. Iteration order
//! is construction order, which fixes checkpoint layout and optimizer-state
//! alignment.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::graph::{Graph, Grads, NodeId};
use crate::numerics::{el, Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Populated by the backward pass of the most recent step.
    pub grad: Option<Tensor<T>>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Param { name, value, grad: None });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) {
        assert_eq!(self.params[id.0].value.shape(), value.shape());
        self.params[id.0].value = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total learnable scalar count.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Sum `grads` (one per-clip gradient set, in clip order) into the store.
    pub fn set_grads(&mut self, grads: Vec<Vec<Option<Tensor<T>>>>) {
        for p in &mut self.params {
            p.grad = None;
        }
        for set in grads {
            for (i, g) in set.into_iter().enumerate() {
                if let Some(g) = g {
                    match &mut self.params[i].grad {
                        None => self.params[i].grad = Some(g),
                        Some(acc) => {
                            let data = acc.data_mut();
                            for (a, b) in data.iter_mut().zip(g.data()) {
                                *a = *a + *b;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast::<U>(), grad: None })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Binds parameters into one graph, deduplicating shared parameters so tied
/// weights resolve to a single leaf.
pub struct Binder {
    map: HashMap<ParamId, NodeId>,
}

impl Binder {
    pub fn new() -> Self {
        Binder { map: HashMap::new() }
    }

    pub fn node<T: Element>(
        &mut self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        id: ParamId,
    ) -> NodeId {
        *self
            .map
            .entry(id)
            .or_insert_with(|| g.leaf(store.value(id).clone(), true))
    }

    /// Collect per-parameter gradients (indexed by parameter position) from a
    /// finished backward pass.
    pub fn collect<T: Element>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
    ) -> Vec<Option<Tensor<T>>> {
        let mut out = vec![None; store.len()];
        for (&pid, &nid) in &self.map {
            out[pid.0] = grads.take(nid);
        }
        out
    }
}

impl Default for Binder {
    fn default() -> Self {
        Self::new()
    }
}

/// Seeded initializers. All parameter randomness flows through a single
/// `ChaCha8Rng` threaded in construction order, so a seed pins every weight.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Standard normal via Box-Muller, scaled by `std`.
    pub fn normal<T: Element>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let u1: f64 = self.rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = self.rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let th = 2.0 * std::f64::consts::PI * u2;
            data.push(el::<T>(r * th.cos() * std));
            if data.len() < n {
                data.push(el::<T>(r * th.sin() * std));
            }
        }
        Tensor::from_vec(shape.to_vec(), data)
    }

    pub fn uniform<T: Element>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| el::<T>(self.rng.gen_range(lo..hi))).collect();
        Tensor::from_vec(shape.to_vec(), data)
    }

    /// Kaiming-style uniform for a layer with `fan_in` inputs.
    pub fn kaiming<T: Element>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = (1.0 / fan_in as f64).sqrt();
        self.uniform(shape, -bound, bound)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binder_dedups_shared_params() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_vec(vec![2], vec![1.0, 2.0]));
        let mut g = Graph::new();
        let mut b = Binder::new();
        let n1 = b.node(&mut g, &store, id);
        let n2 = b.node(&mut g, &store, id);
        assert_eq!(n1, n2);
    }

    #[test]
    fn initializer_is_seed_deterministic() {
        let a = Initializer::new(7).normal::<f32>(&[16], 0.5);
        let b = Initializer::new(7).normal::<f32>(&[16], 0.5);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn duplicate_grads_accumulate_in_clip_order() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", Tensor::from_vec(vec![1], vec![0.0]));
        let g1 = vec![Some(Tensor::from_vec(vec![1], vec![1.0]))];
        let g2 = vec![Some(Tensor::from_vec(vec![1], vec![2.0]))];
        store.set_grads(vec![g1, g2]);
        assert_eq!(store.get(id).grad.as_ref().unwrap().data(), &[3.0]);
    }
}
