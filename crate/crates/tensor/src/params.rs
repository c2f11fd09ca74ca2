//! Named parameter storage and the per-forward-pass [`Session`] that binds
//! stored parameters onto a fresh tape.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::ops::{BatchNormMode, BatchStats};
use crate::tape::{numel, Tape, Var};

/// Owned dense tensor with an attached gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(values: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        if numel(shape) != values.len() {
            return Err(TensorError::ShapeMismatch {
                op: "tensor",
                left: shape.to_vec(),
                right: vec![values.len()],
            });
        }
        let grad = vec![0.0; values.len()];
        Ok(Self {
            shape: shape.to_vec(),
            values,
            grad,
            requires_grad,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = numel(shape);
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: vec![0.0; n],
            requires_grad: true,
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.values.iter_mut().for_each(|v| *v = value);
        t
    }

    /// Uniform in `±sqrt(1 / fan_in)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let mut t = Self::zeros(shape);
        t.values.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        t
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Learnable parameters plus non-learnable buffers (batch-norm running statistics).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.params.insert(name.into(), tensor);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, tensor: Tensor) {
        let mut t = tensor;
        t.requires_grad = false;
        self.buffers.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.buffers
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.buffers.iter()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in self.params.values_mut() {
            t.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `weight * grads[name]` into each named parameter's gradient buffer.
    pub fn accumulate_grads(&mut self, grads: &BTreeMap<String, Vec<f64>>, weight: f64) -> Result<()> {
        for (name, g) in grads {
            let t = self.get_mut(name)?;
            for (acc, v) in t.grad.iter_mut().zip(g) {
                *acc += weight * v;
            }
        }
        Ok(())
    }

    /// Blends observed batch statistics into the running buffers
    /// `<prefix>.running_mean` / `<prefix>.running_var`.
    pub fn update_running_stats(&mut self, prefix: &str, stats: &BatchStats, momentum: f64) -> Result<()> {
        let mean = self.buffer_mut(&format!("{prefix}.running_mean"))?;
        for (r, m) in mean.values.iter_mut().zip(&stats.mean) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        let var = self.buffer_mut(&format!("{prefix}.running_var"))?;
        for (r, v) in var.values.iter_mut().zip(&stats.var) {
            *r = (1.0 - momentum) * *r + momentum * v;
        }
        Ok(())
    }

    /// Global L2 norm of all gradient buffers.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .flat_map(|t| t.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// One forward/backward pass: a fresh tape with stored parameters bound on demand.
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: BTreeMap<String, Var>,
    training: bool,
    rng: ChaCha8Rng,
    bn_updates: Vec<(String, BatchStats)>,
}

impl<'a> Session<'a> {
    /// `seed` drives dropout masks; it is irrelevant in inference mode.
    pub fn new(store: &'a ParamStore, training: bool, seed: u64) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: BTreeMap::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bn_updates: Vec::new(),
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Binds a stored parameter as a gradient-tracking leaf (once per session).
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.store.get(name)?;
        let v = self.tape.leaf(t.values.clone(), &t.shape, t.requires_grad)?;
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn linear(&mut self, x: Var, prefix: &str, bias: bool) -> Result<Var> {
        let w = self.param(&format!("{prefix}.w"))?;
        let b = if bias {
            Some(self.param(&format!("{prefix}.b"))?)
        } else {
            None
        };
        self.tape.linear(x, w, b)
    }

    pub fn prelu(&mut self, x: Var, name: &str) -> Result<Var> {
        let a = self.param(name)?;
        self.tape.prelu(x, a)
    }

    pub fn conv1d(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.param(&format!("{prefix}.w"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        self.tape.conv1d(x, w, b)
    }

    pub fn conv2d(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.param(&format!("{prefix}.w"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        self.tape.conv2d(x, w, b)
    }

    /// Batch norm using `<prefix>.gamma`, `<prefix>.beta` and, in inference
    /// mode, the running buffers. Training-mode statistics are queued for
    /// [`ParamStore::update_running_stats`].
    pub fn batch_norm(&mut self, x: Var, prefix: &str, eps: f64) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        if self.training {
            let (y, stats) = self.tape.batch_norm(x, gamma, beta, BatchNormMode::Train, eps)?;
            if let Some(stats) = stats {
                self.bn_updates.push((prefix.to_string(), stats));
            }
            Ok(y)
        } else {
            let mean = &self.store.buffer(&format!("{prefix}.running_mean"))?.values;
            let var = &self.store.buffer(&format!("{prefix}.running_var"))?.values;
            let mode = BatchNormMode::Eval {
                running_mean: mean,
                running_var: var,
            };
            Ok(self.tape.batch_norm(x, gamma, beta, mode, eps)?.0)
        }
    }

    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        let training = self.training;
        self.tape.dropout(x, p, training, &mut self.rng)
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss)
    }

    /// Gradients of every bound parameter (zeros for unreached ones).
    pub fn gradients(&self) -> BTreeMap<String, Vec<f64>> {
        self.bound
            .iter()
            .map(|(name, &v)| (name.clone(), self.tape.grad_or_zeros(v)))
            .collect()
    }

    pub fn bn_updates(&self) -> &[(String, BatchStats)] {
        &self.bn_updates
    }
}
