use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Shape};

use super::graph::Gradients;

/// Handle to a parameter in a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a freshly created parameter is filled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Xavier,
    /// Uniform in ±0.5 / cols, used for embedding rows.
    Embedding,
    Zeros,
    Constant(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A dense trainable tensor with its Adam moments and gradient staging buffer.
#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    shape: Shape,
    pub(crate) value: Vec<f64>,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
    grad: Vec<f64>,
    staged: bool,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn staged_gradient(&self) -> &[f64] {
        &self.grad
    }

    /// Row `r` of a matrix parameter.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.shape.cols;
        &self.value[r * c..(r + 1) * c]
    }
}

/// All trainable parameters of a model, addressed by unique name.
#[derive(Clone, Debug)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
    step: u64,
    seed: u64,
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        ParameterStore {
            params: Vec::new(),
            index: HashMap::new(),
            step: 0,
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of Adam updates since creation or the last restart.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: Shape,
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n = shape.len();
        let value = match init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(c) => vec![c; n],
            Init::Xavier => {
                let bound = (6.0 / (shape.rows + shape.cols) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            }
            Init::Embedding => {
                let bound = 0.5 / shape.cols as f64;
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            }
        };
        self.add_with_values(name, shape, value)
    }

    pub fn add_with_values(
        &mut self,
        name: &str,
        shape: Shape,
        value: Vec<f64>,
    ) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_owned()));
        }
        if value.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                op: "parameter",
                left: shape,
                right: Shape::vector(value.len()),
            });
        }
        let id = ParamId(self.params.len());
        let n = value.len();
        self.params.push(Parameter {
            name: name.to_owned(),
            shape,
            value,
            m: vec![0.0; n],
            v: vec![0.0; n],
            grad: vec![0.0; n],
            staged: false,
        });
        self.index.insert(name.to_owned(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_owned()))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    /// Mutable access to a parameter's values. The shape cannot change.
    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].value
    }

    pub fn shape(&self, id: ParamId) -> Shape {
        self.params[id.0].shape
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub(crate) fn param_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    /// Adds the gradients of one backward pass to the staging buffers.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.dense() {
            let p = &mut self.params[id.0];
            for (acc, x) in p.grad.iter_mut().zip(g) {
                *acc += x;
            }
            p.staged = true;
        }
        for (id, row, g) in grads.rows() {
            let p = &mut self.params[id.0];
            let c = p.shape.cols;
            for (acc, x) in p.grad[row * c..(row + 1) * c].iter_mut().zip(g) {
                *acc += x;
            }
            p.staged = true;
        }
    }

    /// One bias-corrected Adam update over every parameter, then clears the
    /// staged gradients. Values are untouched if any gradient is non-finite.
    pub fn adam_step(&mut self, lr: f64, cfg: &AdamConfig) -> Result<()> {
        for p in &self.params {
            if p.staged && p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let corr1 = 1.0 - cfg.beta1.powi(t);
        let corr2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                let m = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
                let v = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
                p.m[i] = m;
                p.v[i] = v;
                let m_hat = m / corr1;
                let v_hat = v / corr2;
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
            if p.staged {
                p.grad.iter_mut().for_each(|g| *g = 0.0);
                p.staged = false;
            }
        }
        Ok(())
    }

    /// Zeroes both Adam moments and the step counter; values are kept.
    pub fn adam_restart(&mut self) {
        for p in &mut self.params {
            p.m.iter_mut().for_each(|x| *x = 0.0);
            p.v.iter_mut().for_each(|x| *x = 0.0);
        }
        self.step = 0;
    }

    pub fn clear_gradients(&mut self) {
        for p in &mut self.params {
            if p.staged {
                p.grad.iter_mut().for_each(|g| *g = 0.0);
                p.staged = false;
            }
        }
    }

    pub fn moments_are_zero(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.m.iter().chain(&p.v).all(|&x| x == 0.0))
    }
}
