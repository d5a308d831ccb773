//! Named parameter store shared by every model component.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{read_checkpoint_map, write_checkpoint_map, Gradients, Tape, Tensor, Var};

/// All learned weights of a model, keyed by role (e.g. `tower0.gru.wz`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor.with_requires_grad(true));
    }

    pub fn init_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) {
        self.insert(name, Tensor::uniform_fan_in(shape, fan_in, rng));
    }

    pub fn init_zeros(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Same names and shapes, every value set to zero.
    pub fn zeros_like(&self) -> Self {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()).with_requires_grad(true)))
            .collect();
        Self { tensors }
    }

    pub fn as_map(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    /// Records every parameter as a differentiable leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), tape.param(v)))
            .collect();
        BoundParams { vars }
    }

    pub fn to_json(&self) -> Result<String> {
        write_checkpoint_map(&self.tensors)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tensors = read_checkpoint_map(text)?
            .into_iter()
            .map(|(k, v)| (k, v.with_requires_grad(true)))
            .collect();
        Ok(Self { tensors })
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn check_layout(&self, other: &ModelParams) -> Result<()> {
        for (name, t) in &self.tensors {
            let theirs = other.get(name)?;
            if theirs.shape() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    theirs.shape(),
                    t.shape()
                )));
            }
        }
        if let Some(extra) = other.names().find(|n| !self.tensors.contains_key(*n)) {
            return Err(Error::Config(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }
}

/// Parameters recorded on a tape for one forward pass.
#[derive(Debug)]
pub struct BoundParams<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> BoundParams<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    /// Collects per-parameter gradients into a store with the same layout.
    pub fn collect_grads(&self, grads: &Gradients) -> Result<ModelParams> {
        let mut out = ModelParams::new();
        for (name, var) in &self.vars {
            let g = grads
                .get(*var)
                .ok_or_else(|| Error::Contract(format!("no gradient for `{name}`")))?;
            out.insert(name.clone(), g.clone());
        }
        Ok(out)
    }
}
