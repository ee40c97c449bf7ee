//! Named, ordered parameter storage.
//!
//! All learnable tensors of a model live in one [`ParamStore`], keyed by
//! dotted names (`"bilstm.fwd.w_f"`). Insertion order is fixed at build
//! time and drives everything order-sensitive: optimizer updates,
//! checkpoint layout, gradient clipping. Binding a store onto a tape
//! clones the current values into leaves and hands back the [`Var`]
//! handles by name.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Tape, Tensor, Var};

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a new parameter. Names must be unique.
    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[self.index[name]]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.tensors[self.index[name]]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Names in insertion order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    /// (name, tensor) pairs in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    /// Tensors in insertion order, mutably (optimizer update path).
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter_mut())
    }

    /// Owned snapshot in insertion order, for serialization.
    pub fn to_entries(&self) -> Vec<(String, Tensor)> {
        self.names
            .iter()
            .cloned()
            .zip(self.tensors.iter().cloned())
            .collect()
    }

    /// Rebuild from serialized entries, preserving their order.
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        let mut store = ParamStore::new();
        for (name, tensor) in entries {
            store.insert(&name, tensor);
        }
        store
    }

    /// Register every parameter as a tape leaf, in insertion order.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars: Vec<Var> = self.tensors.iter().map(|t| tape.param(t.clone())).collect();
        Bound {
            vars,
            index: self.index.clone(),
        }
    }

    /// Wrap externally created leaves (one per parameter, in insertion
    /// order) so they can be looked up by name. Used when a driver such
    /// as the gradient checker owns leaf creation.
    pub fn bound_with(&self, vars: Vec<Var>) -> Bound {
        assert_eq!(vars.len(), self.len(), "one var per parameter");
        Bound {
            vars,
            index: self.index.clone(),
        }
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// Tape handles for one bound store.
pub struct Bound {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        self.vars[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name:?}"))]
    }

    /// Vars in store insertion order, aligned with [`ParamStore::names`].
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// `uniform(lo, hi)` init, the recurrent-weight default at ±0.08.
pub fn init_uniform(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    lo: f64,
    hi: f64,
) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(vec![rows, cols], data).expect("computed length")
}

/// `normal(0, std)` init, the embedding default at std 0.1.
pub fn init_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let dist = rand_distr::Normal::new(0.0, std).expect("std is finite");
    let data = (0..rows * cols).map(|_| rng.sample(dist)).collect();
    Tensor::new(vec![rows, cols], data).expect("computed length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn entries_keep_insertion_order() {
        let mut store = ParamStore::new();
        store.insert("z.last", Tensor::zeros(1, 1));
        store.insert("a.first", Tensor::zeros(2, 2));
        let names: Vec<&str> = store.names().collect();
        assert_eq!(names, vec!["z.last", "a.first"]);
        assert_eq!(store.scalar_count(), 5);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_panic() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(1, 1));
        store.insert("w", Tensor::zeros(1, 1));
    }

    #[test]
    fn bind_exposes_every_parameter() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::row(&[1.0, 2.0]));
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        assert_eq!(tape.value(bound.var("w")).data(), &[1.0, 2.0]);
    }

    #[test]
    fn round_trip_through_entries() {
        let mut store = ParamStore::new();
        store.insert("b", Tensor::row(&[3.0]));
        store.insert("a", Tensor::row(&[4.0]));
        let back = ParamStore::from_entries(store.to_entries());
        assert_eq!(back, store);
    }

    #[test]
    fn inits_are_seed_deterministic() {
        let a = init_uniform(&mut ChaCha8Rng::seed_from_u64(5), 3, 3, -0.08, 0.08);
        let b = init_uniform(&mut ChaCha8Rng::seed_from_u64(5), 3, 3, -0.08, 0.08);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (-0.08..0.08).contains(v)));

        let c = init_normal(&mut ChaCha8Rng::seed_from_u64(5), 4, 4, 0.1);
        let d = init_normal(&mut ChaCha8Rng::seed_from_u64(5), 4, 4, 0.1);
        assert_eq!(c, d);
    }
}
