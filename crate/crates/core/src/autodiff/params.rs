use std::collections::BTreeMap;

use rand::Rng;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named parameter tensors, iterated in sorted name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

/// Gradient of a scalar objective, keyed like the [`ParamSet`] it differentiates.
pub type GradRecord = ParamSet;

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total number of scalar entries.
    pub fn value_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Parameters whose name starts with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Copies every entry of `other` into `self`, replacing equal names.
    pub fn extend(&mut self, other: &ParamSet) {
        for (k, v) in &other.tensors {
            self.tensors.insert(k.clone(), v.clone());
        }
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.rows(), v.cols())))
                .collect(),
        }
    }

    fn check_same_layout(&self, other: &ParamSet, op: &'static str) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::shape(op, "parameter sets differ in size"));
        }
        for ((ka, va), (kb, vb)) in self.tensors.iter().zip(&other.tensors) {
            if ka != kb || va.shape() != vb.shape() {
                return Err(Error::shape(
                    op,
                    format!("{ka} {:?} vs {kb} {:?}", va.shape(), vb.shape()),
                ));
            }
        }
        Ok(())
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) -> Result<()> {
        self.check_same_layout(other, "add_scaled")?;
        for (a, b) in self.tensors.values_mut().zip(other.tensors.values()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn scaled(&self, scale: f64) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.map(|x| x * scale)))
                .collect(),
        }
    }

    /// Largest absolute entry difference; infinite when layouts differ.
    pub fn max_abs_diff(&self, other: &ParamSet) -> f64 {
        if self.check_same_layout(other, "max_abs_diff").is_err() {
            return f64::INFINITY;
        }
        self.tensors
            .values()
            .zip(other.tensors.values())
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Bitwise equality of every entry, distinguishing `0.0` from `-0.0`.
    pub fn bitwise_eq(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, va), (kb, vb))| {
                    ka == kb
                        && va.shape() == vb.shape()
                        && va
                            .data()
                            .iter()
                            .zip(vb.data())
                            .all(|(x, y)| x.to_bits() == y.to_bits())
                })
    }

    /// Fills `name` with Glorot-uniform values for a `fan_in × fan_out` matrix.
    pub fn insert_glorot(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.insert_uniform(name, fan_in, fan_out, bound, rng);
    }

    pub fn insert_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut impl Rng,
    ) {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, Tensor::new(rows, cols, data).expect("sized"));
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamSet {
            tensors: iter.into_iter().collect(),
        }
    }
}

/// Tape handles for a [`ParamSet`], in the same sorted name order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    /// Records every parameter as a differentiable leaf.
    pub fn register(tape: &mut Tape, params: &ParamSet) -> Self {
        ParamVars {
            vars: params
                .iter()
                .map(|(k, v)| (k.to_string(), tape.param(v.clone())))
                .collect(),
        }
    }

    /// Records every parameter as a constant; nothing downstream is differentiable.
    pub fn constants(tape: &mut Tape, params: &ParamSet) -> Self {
        ParamVars {
            vars: params
                .iter()
                .map(|(k, v)| (k.to_string(), tape.constant(v.clone())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().copied().collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Current values as an owned [`ParamSet`].
    pub fn values(&self, tape: &Tape) -> ParamSet {
        self.vars
            .iter()
            .map(|(k, &v)| (k.clone(), tape.value(v).clone()))
            .collect()
    }

    /// Differentiable gradient step `θ − lr · g`, recorded on the tape.
    pub fn descend(&self, tape: &mut Tape, grads: &[Var], lr: f64) -> Result<ParamVars> {
        if grads.len() != self.vars.len() {
            return Err(Error::shape("descend", "gradient count mismatch"));
        }
        let mut vars = BTreeMap::new();
        for ((name, &v), &g) in self.vars.iter().zip(grads) {
            let step = tape.scale(g, lr)?;
            vars.insert(name.clone(), tape.sub(v, step)?);
        }
        Ok(ParamVars { vars })
    }

    pub(crate) fn grads_to_record(&self, grads: Vec<Tensor>) -> GradRecord {
        self.vars.keys().cloned().zip(grads).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iteration_is_sorted_by_name() {
        let mut p = ParamSet::new();
        p.insert("b", Tensor::scalar(1.0));
        p.insert("a", Tensor::scalar(2.0));
        assert_eq!(p.names().collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn add_scaled_requires_matching_layout() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::filled(1, 2, 1.0));
        let mut q = ParamSet::new();
        q.insert("w", Tensor::filled(1, 2, 2.0));
        p.add_scaled(&q, -0.5).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.0, 0.0]);
        q.insert("extra", Tensor::scalar(0.0));
        assert!(p.add_scaled(&q, 1.0).is_err());
    }

    #[test]
    fn bitwise_eq_sees_signed_zero() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(0.0));
        let mut q = ParamSet::new();
        q.insert("w", Tensor::scalar(-0.0));
        assert_eq!(p, q);
        assert!(!p.bitwise_eq(&q));
    }
}
