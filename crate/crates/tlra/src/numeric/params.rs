//! Named trainable parameters and their binding onto a tape.

use std::collections::HashMap;

use super::{Tape, Tensor, Var};
use crate::error::{Result, TlraError};

/// A named trainable tensor.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

/// Stable handle into a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered collection of uniquely named parameters.
///
/// Iteration and binding order is insertion order, which keeps training
/// and checkpointing deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(TlraError::Config(format!("duplicate parameter name \"{name}\"")));
        }
        let idx = self.params.len();
        self.params.push(Parameter { name: name.to_string(), value });
        self.by_name.insert(name.to_string(), idx);
        Ok(ParamId(idx))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Total number of scalar entries across all parameters.
    pub fn entry_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Registers every parameter as a leaf on `tape`, in insertion order.
    pub fn bind(&self, tape: &Tape) -> BoundParams {
        BoundParams { vars: self.params.iter().map(|p| tape.leaf(p.value.clone())).collect() }
    }
}

/// Tape handles for one bound [`ParamSet`], aligned by index.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Wraps externally bound leaves (e.g. inside `grad_check`); the slice
    /// must follow the owning set's insertion order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_must_be_unique() {
        let mut set = ParamSet::new();
        set.add("w", Tensor::scalar(1.0)).unwrap();
        assert!(set.add("w", Tensor::scalar(2.0)).is_err());
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn binding_preserves_order_and_values() {
        let mut set = ParamSet::new();
        let a = set.add("a", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = set.add("b", Tensor::scalar(3.0)).unwrap();
        let tape = Tape::new();
        let bound = set.bind(&tape);
        assert_eq!(tape.value(bound.var(a)).values(), &[1.0, 2.0]);
        assert_eq!(tape.scalar_value(bound.var(b)), 3.0);
        assert_eq!(set.id_of("b"), Some(b));
    }
}
