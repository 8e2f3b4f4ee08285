use std::collections::HashMap;
use std::fmt;

use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Handle to a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A named trainable tensor. Vectors are stored as single-column matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Matrix<T>,
}

/// Ordered collection of named parameters. Insertion order is the
/// checkpoint order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a parameter. Panics on a duplicate name, which is always a
    /// model-construction bug.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix<T>) -> ParamId {
        let name = name.into();
        let id = ParamId(self.params.len());
        let prev = self.index.insert(name.clone(), id);
        assert!(prev.is_none(), "duplicate parameter name {name}");
        self.params.push(Parameter { name, value });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_entries(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// `θ ← θ − lr·g` for every entry.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: T) {
        assert_eq!(grads.grads.len(), self.params.len(), "gradient layout mismatch");
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            for (v, &d) in p.value.as_mut_slice().iter_mut().zip(g) {
                *v -= lr * d;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }
}

/// Accumulated gradients, laid out parallel to a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        Self {
            grads: params
                .params
                .iter()
                .map(|p| vec![T::zero(); p.value.len()])
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.grads[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.grads[id.0]
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.grads
            .iter()
            .flatten()
            .fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.grads
            .iter()
            .enumerate()
            .map(|(i, g)| (ParamId(i), g.as_slice()))
    }
}
