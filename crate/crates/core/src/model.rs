//! Complete MPNN: message passing followed by a readout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{self, ModelConfig};
use crate::error::{Error, Result};
use crate::molgraph::EncodedGraph;
use crate::params::{BoundParams, ModelParams};
use crate::readout;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Mpnn {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Mpnn {
    /// Fresh model with seeded uniform fan-in initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        engine::init_params(&config, &mut params, &mut rng);
        readout::init_params(&config, &mut params, &mut rng);
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let reference = Self::new(config.clone(), 0)?;
        reference.params.check_layout(&params)?;
        Ok(Self { config, params })
    }

    /// Records the full forward pass; output is `[1, outputs]`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        bound: &BoundParams<'t>,
        graph: &EncodedGraph,
    ) -> Result<Var<'t>> {
        forward(tape, bound, &self.config, graph)
    }

    /// Normalized-space predictions for one graph.
    pub fn predict(&self, graph: &EncodedGraph) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        Ok(self.forward(&tape, &bound, graph)?.value().into_data())
    }

    /// Mean squared error against `target`, forward pass only.
    pub fn loss(&self, graph: &EncodedGraph, target: &[f64]) -> Result<f64> {
        let pred = self.predict(graph)?;
        if pred.len() != target.len() {
            return Err(Error::Dimension(format!(
                "{} predictions for {} targets",
                pred.len(),
                target.len()
            )));
        }
        Ok(pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / target.len() as f64)
    }

    /// Mean squared error against `target` and its parameter gradients.
    pub fn loss_and_grad(&self, graph: &EncodedGraph, target: &[f64]) -> Result<(f64, ModelParams)> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let pred = self.forward(&tape, &bound, graph)?;
        let loss = mse(&tape, pred, target)?;
        let value = loss.item()?;
        let grads = tape.backward(loss)?;
        Ok((value, bound.collect_grads(&grads)?))
    }
}

pub fn forward<'t>(
    tape: &'t Tape,
    bound: &BoundParams<'t>,
    cfg: &ModelConfig,
    graph: &EncodedGraph,
) -> Result<Var<'t>> {
    let states = engine::propagate(tape, graph, bound, cfg).map_err(divergence)?;
    readout::readout(tape, &states, &graph.node_features, bound, cfg).map_err(divergence)
}

fn divergence(e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Divergence(format!("non-finite value in {op}")),
        other => other,
    }
}

/// `mean((pred - target)^2)` as a one-element var.
pub fn mse<'t>(tape: &'t Tape, pred: Var<'t>, target: &[f64]) -> Result<Var<'t>> {
    let shape = pred.shape();
    let t = tape.constant(Tensor::new(&shape, target.to_vec())?);
    let diff = pred.sub(t)?;
    diff.mul(diff)?.sum()?.scale(1.0 / target.len() as f64)
}
