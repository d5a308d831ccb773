//! Message-phase cost measurements for tower configurations.

use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{MessageFn, MessagePlan, ModelConfig, ReadoutFn};
use crate::error::Result;
use crate::model::Mpnn;
use crate::molgraph::{Atom, EdgeRepr, Element, MolecularGraph, NUM_TARGETS};
use crate::tensor::{multiply_counter, Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TowerBench {
    pub towers: usize,
    pub hidden_dim: usize,
    pub nodes: usize,
    pub multiplies: u64,
    pub wall: Duration,
}

/// `n` carbon atoms at random positions with no bonds; the raw distance
/// representation makes the graph fully connected.
pub fn random_cloud(n: usize, seed: u64) -> MolecularGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms = (0..n)
        .map(|_| {
            let mut a = Atom::new(Element::C);
            a.position = Some([rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)]);
            a
        })
        .collect();
    MolecularGraph {
        atoms,
        bonds: Vec::new(),
        explicit_hydrogens: true,
        targets: [0.0; NUM_TARGETS],
    }
}

pub fn tower_config(hidden_dim: usize, towers: usize) -> ModelConfig {
    ModelConfig {
        message: MessageFn::EdgeNetwork,
        readout: ReadoutFn::Set2Set,
        edge_repr: EdgeRepr::RawDistance,
        hidden_dim,
        towers,
        ..ModelConfig::default()
    }
}

/// Multiplies performed by one message phase (edge terms plus aggregation
/// for every tower) on a fully connected `n`-node graph.
pub fn bench_towers(hidden_dim: usize, towers: usize, n: usize, seed: u64) -> Result<TowerBench> {
    let cfg = tower_config(hidden_dim, towers);
    let model = Mpnn::new(cfg.clone(), seed)?;
    let graph = cfg.prepare_graph(&random_cloud(n, seed))?;
    let tape = Tape::new();
    let p = model.params.bind(&tape);
    let h = tape.constant(Tensor::uniform_fan_in(&[n, hidden_dim], 1, &mut ChaCha8Rng::seed_from_u64(seed)));
    let dk = cfg.tower_width();

    multiply_counter::reset();
    let start = Instant::now();
    let plan = MessagePlan::new(&tape, &graph, &p, &cfg)?;
    for t in 0..towers {
        let h_t = if towers == 1 { h } else { h.narrow(1, t * dk, dk)? };
        plan.aggregate(&cfg, &p, t, h_t)?;
    }
    let wall = start.elapsed();
    Ok(TowerBench {
        towers,
        hidden_dim,
        nodes: n,
        multiplies: multiply_counter::get(),
        wall,
    })
}
