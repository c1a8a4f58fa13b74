use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Matrix;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable matrices plus a same-shaped gradient slot for each.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    grads: Vec<Matrix>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.grads.push(Matrix::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.names.push(name);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    /// Like [`ParamStore::id`] but also checks the stored shape.
    pub fn require(&self, name: &str, shape: (usize, usize)) -> Result<ParamId> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
        let got = self.values[id.0].shape();
        if got != shape {
            return Err(Error::Dimension {
                op: "parameter shape",
                left: got,
                right: shape,
            });
        }
        Ok(id)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    /// A zeroed gradient buffer shaped like this store.
    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            slots: self
                .values
                .iter()
                .map(|v| Matrix::zeros(v.rows(), v.cols()))
                .collect(),
        }
    }

    pub fn set_grads(&mut self, grads: Gradients) -> Result<()> {
        if grads.slots.len() != self.values.len()
            || grads
                .slots
                .iter()
                .zip(&self.values)
                .any(|(g, v)| g.shape() != v.shape())
        {
            return Err(Error::invalid("gradient buffer does not match parameter store"));
        }
        self.grads = grads.slots;
        Ok(())
    }

    pub(crate) fn values_and_grads_mut(&mut self) -> (&mut [Matrix], &[Matrix]) {
        (&mut self.values, &self.grads)
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Matrix::sum_squares).sum::<f64>().sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let k = max_norm / norm;
            for g in &mut self.grads {
                g.as_mut_slice().iter_mut().for_each(|x| *x *= k);
            }
        }
        norm
    }

    pub fn total_params(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }
}

/// Gradient accumulator shaped like a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Gradients {
    slots: Vec<Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.slots[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.slots[id.0]
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            super::matrix::axpy(1.0, b.as_slice(), a.as_mut_slice());
        }
    }

    pub fn scale(&mut self, k: f64) {
        for s in &mut self.slots {
            s.as_mut_slice().iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn norm(&self) -> f64 {
        self.slots.iter().map(Matrix::sum_squares).sum::<f64>().sqrt()
    }
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape by construction")
}
