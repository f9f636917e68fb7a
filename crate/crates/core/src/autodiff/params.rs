use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::{Error, Result};

/// One named model parameter. Non-trainable entries (fixed buffers that
/// still belong in checkpoints, like a frozen initial hidden state) are
/// skipped by the optimizer but saved and loaded like any other.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Insertion-ordered collection of named parameters. Order is part of the
/// contract: checkpoints, optimizer state and gradient clipping all walk
/// entries in the order they were registered, which keeps training
/// trajectories reproducible.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        self.insert_param(name, tensor, true)
    }

    /// Register a buffer that is saved in checkpoints but never updated.
    pub fn insert_frozen(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        self.insert_param(name, tensor, false)
    }

    fn insert_param(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(
                "params",
                format!("duplicate parameter name '{}'", name),
            ));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Param { name: name.to_string(), tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = *self.index.get(name)?;
        Some(&mut self.entries[i].tensor)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.index
            .get(name)
            .map(|&i| self.entries[i].trainable)
            .unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    /// Total number of scalar values across all entries.
    pub fn value_count(&self) -> usize {
        self.entries.iter().map(|p| p.tensor.len()).sum()
    }

    /// Number of scalar values in trainable entries only.
    pub fn trainable_value_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Copy every parameter onto `tape` as a leaf, returning the handle
    /// map a forward pass reads from.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let mut vars = Vec::with_capacity(self.entries.len());
        let mut index = HashMap::with_capacity(self.entries.len());
        for p in &self.entries {
            let var = tape.leaf(p.tensor.clone());
            index.insert(p.name.clone(), vars.len());
            vars.push((p.name.clone(), var));
        }
        Binding { vars, index }
    }
}

/// Parameter-name to tape-handle map for one recorded forward pass.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<(String, Var)>,
    index: HashMap<String, usize>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i].1)
            .ok_or_else(|| Error::invalid("binding", format!("unknown parameter '{}'", name)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

/// Uniform values in `[lo, hi)`.
pub fn uniform_tensor(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor { shape, data }
}

/// Xavier/Glorot uniform init for a `fan_in x fan_out` weight matrix.
pub fn xavier_tensor(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform_tensor(vec![fan_in, fan_out], -limit, limit, rng)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(vec![2])).unwrap();
        assert!(p.insert("w", Tensor::zeros(vec![2])).is_err());
    }

    #[test]
    fn insertion_order_preserved() {
        let mut p = ParamSet::new();
        for name in ["c", "a", "b"] {
            p.insert(name, Tensor::zeros(vec![1])).unwrap();
        }
        let names: Vec<&str> = p.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, vec!["c", "a", "b"]);
    }

    #[test]
    fn frozen_entries_counted_separately() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(vec![4])).unwrap();
        p.insert_frozen("h0", Tensor::zeros(vec![3])).unwrap();
        assert_eq!(p.value_count(), 7);
        assert_eq!(p.trainable_value_count(), 4);
        assert!(!p.is_trainable("h0"));
    }

    #[test]
    fn binding_resolves_names() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let v = bound.var("w").unwrap();
        assert_eq!(tape.value(v).data, vec![1.0, 2.0]);
        assert!(bound.var("nope").is_err());
    }

    #[test]
    fn xavier_within_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = xavier_tensor(30, 10, &mut rng);
        let limit = (6.0f64 / 40.0).sqrt();
        assert!(t.data.iter().all(|v| v.abs() <= limit));
        assert_eq!(t.shape, vec![30, 10]);
    }
}
