//! Graph-level readouts over final node states.

use rand::Rng;

use crate::engine::{ModelConfig, NodeStates, ReadoutFn};
use crate::error::Result;
use crate::nn;
use crate::params::{BoundParams, ModelParams};
use crate::tensor::{Tape, Tensor, Var};

pub fn init_params<R: Rng + ?Sized>(cfg: &ModelConfig, params: &mut ModelParams, rng: &mut R) {
    let d = cfg.hidden_dim;
    let out = cfg.outputs;
    match cfg.readout {
        ReadoutFn::Ggnn => {
            nn::init_mlp(params, "ro.i", 2 * d, d, out, rng);
            nn::init_mlp(params, "ro.j", d, d, out, rng);
        }
        ReadoutFn::Set2Set => {
            let p = cfg.set2set_width();
            nn::init_linear(params, "ro.proj", d + cfg.feature_width(), p, true, rng);
            if let (Some(dm), true) = (cfg.master_dim, cfg.master_in_readout) {
                nn::init_linear(params, "ro.proj_master", dm, p, true, rng);
            }
            nn::init_gru(params, "ro.s2s.gru", 2 * p, p, rng);
            nn::init_mlp(params, "ro.out", 2 * p, d, out, rng);
        }
        ReadoutFn::DtnnSum => nn::init_mlp(params, "ro.nn", d, d, out, rng),
    }
}

/// Whether the master node state joins the readout set. GG-NN and DTNN sums
/// reuse the node networks, so the master only fits when `d_master == d`.
fn master_joins(cfg: &ModelConfig) -> bool {
    match cfg.master_dim {
        Some(dm) if cfg.master_in_readout => cfg.readout == ReadoutFn::Set2Set || dm == cfg.hidden_dim,
        _ => false,
    }
}

/// `Σ_v σ(i(h_v^T, h_v^0)) ⊙ j(h_v^T)`, shape `[1, out]`.
pub fn readout_ggnn<'t>(
    h_t: Var<'t>,
    h_0: Var<'t>,
    p: &BoundParams<'t>,
    cfg: &ModelConfig,
) -> Result<Var<'t>> {
    let tape = h_t.tape();
    if h_t.shape()[0] == 0 {
        return Ok(tape.constant(Tensor::zeros(&[1, cfg.outputs])));
    }
    let gate = nn::mlp(tape.concat(&[h_t, h_0], 1)?, p, "ro.i", cfg.activation)?.sigmoid()?;
    let value = nn::mlp(h_t, p, "ro.j", cfg.activation)?;
    gate.mul(value)?.sum_axis(0)?.reshape(&[1, cfg.outputs])
}

/// `Σ_v NN(h_v^T)`, shape `[1, out]`.
pub fn readout_dtnn_sum<'t>(h_t: Var<'t>, p: &BoundParams<'t>, cfg: &ModelConfig) -> Result<Var<'t>> {
    let tape = h_t.tape();
    if h_t.shape()[0] == 0 {
        return Ok(tape.constant(Tensor::zeros(&[1, cfg.outputs])));
    }
    nn::mlp(h_t, p, "ro.nn", cfg.activation)?
        .sum_axis(0)?
        .reshape(&[1, cfg.outputs])
}

/// Trace of one set2set run, for inspection.
pub struct Set2SetTrace<'t> {
    /// Final `q* = (q, r)`, `[1, 2p]`.
    pub q_star: Var<'t>,
    /// Attention weights `[n, 1]` at each processing step.
    pub attention: Vec<Var<'t>>,
}

/// Order-invariant set embedding of `memory` (`[n, p]`) after `steps` rounds:
///
/// ```text
/// q   = GRU(q*, q)
/// a   = softmax(memory · q)
/// r   = Σ a_i memory_i
/// q*  = (q, r)
/// ```
///
/// `q` and `q*` start at zero.
pub fn set2set<'t>(
    tape: &'t Tape,
    memory: Var<'t>,
    steps: usize,
    p: &BoundParams<'t>,
) -> Result<Set2SetTrace<'t>> {
    if steps < 1 {
        return Err(crate::Error::Config("set2set needs M >= 1".into()));
    }
    let shape = memory.shape();
    let (n, width) = (shape[0], shape[1]);
    let mut q = tape.constant(Tensor::zeros(&[1, width]));
    let mut q_star = tape.constant(Tensor::zeros(&[1, 2 * width]));
    let mut attention = Vec::with_capacity(steps);
    for _ in 0..steps {
        q = nn::gru_cell(q_star, q, p, "ro.s2s.gru")?;
        let scores = memory.matmul(q.reshape(&[width, 1])?)?;
        let a = scores.softmax(0)?;
        let r = a.reshape(&[1, n])?.matmul(memory)?;
        q_star = tape.concat(&[q, r], 1)?;
        attention.push(a);
    }
    Ok(Set2SetTrace { q_star, attention })
}

/// Projects `(h_v^T, x_v)` tuples, runs set2set and the output MLP.
pub fn readout_set2set<'t>(
    h_t: Var<'t>,
    x: Var<'t>,
    master: Option<Var<'t>>,
    p: &BoundParams<'t>,
    cfg: &ModelConfig,
) -> Result<Var<'t>> {
    let tape = h_t.tape();
    let mut memory = nn::linear(tape.concat(&[h_t, x], 1)?, p, "ro.proj")?;
    if let Some(hm) = master {
        let projected = nn::linear(hm, p, "ro.proj_master")?;
        memory = tape.concat(&[memory, projected], 0)?;
    }
    let trace = set2set(tape, memory, cfg.set2set_steps, p)?;
    nn::mlp(trace.q_star, p, "ro.out", cfg.activation)
}

/// Applies the configured readout; returns `[1, outputs]`.
pub fn readout<'t>(
    tape: &'t Tape,
    states: &NodeStates<'t>,
    x: &Tensor,
    p: &BoundParams<'t>,
    cfg: &ModelConfig,
) -> Result<Var<'t>> {
    let mut h_t = states.last();
    let mut h_0 = states.h0;
    let master = if master_joins(cfg) { states.master } else { None };
    match cfg.readout {
        ReadoutFn::Set2Set => {
            readout_set2set(h_t, tape.constant(x.clone()), master.map(|m| m.1), p, cfg)
        }
        ReadoutFn::Ggnn | ReadoutFn::DtnnSum => {
            if let Some((m0, m_t)) = master {
                h_t = tape.concat(&[h_t, m_t], 0)?;
                h_0 = tape.concat(&[h_0, m0], 0)?;
            }
            if cfg.readout == ReadoutFn::Ggnn {
                readout_ggnn(h_t, h_0, p, cfg)
            } else {
                readout_dtnn_sum(h_t, p, cfg)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(readout: ReadoutFn) -> (ModelConfig, ModelParams) {
        let cfg = ModelConfig {
            readout,
            hidden_dim: 16,
            outputs: 2,
            set2set_dim: Some(5),
            ..ModelConfig::default()
        };
        let mut params = ModelParams::new();
        init_params(&cfg, &mut params, &mut ChaCha8Rng::seed_from_u64(11));
        (cfg, params)
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform_fan_in(&[rows, cols], 1, &mut rng)
    }

    #[test]
    fn ggnn_zero_j_gives_zero() {
        let (cfg, params) = setup(ReadoutFn::Ggnn);
        let mut params = params;
        for name in ["ro.j.l2.w", "ro.j.l2.b"] {
            params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let tape = Tape::new();
        let b = params.bind(&tape);
        let h = tape.constant(random_matrix(4, 16, 1));
        let h0 = tape.constant(random_matrix(4, 16, 2));
        let r = readout_ggnn(h, h0, &b, &cfg).unwrap().value();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ggnn_single_node_is_gate_times_value() {
        let (cfg, params) = setup(ReadoutFn::Ggnn);
        let tape = Tape::new();
        let b = params.bind(&tape);
        let h = tape.constant(random_matrix(1, 16, 3));
        let h0 = tape.constant(random_matrix(1, 16, 4));
        let r = readout_ggnn(h, h0, &b, &cfg).unwrap().value();
        let gate = nn::mlp(tape.concat(&[h, h0], 1).unwrap(), &b, "ro.i", cfg.activation)
            .unwrap()
            .sigmoid()
            .unwrap();
        let value = nn::mlp(h, &b, "ro.j", cfg.activation).unwrap();
        let expected = gate.mul(value).unwrap().value();
        assert_eq!(r.data(), expected.data());
    }

    #[test]
    fn empty_graph_reads_out_zero() {
        let (cfg, params) = setup(ReadoutFn::Ggnn);
        let tape = Tape::new();
        let b = params.bind(&tape);
        let h = tape.constant(Tensor::zeros(&[0, 16]));
        let r = readout_ggnn(h, h, &b, &cfg).unwrap().value();
        assert_eq!(r.data(), &[0.0, 0.0]);
    }

    #[test]
    fn set2set_singleton_attends_fully() {
        let (_, params) = setup(ReadoutFn::Set2Set);
        let tape = Tape::new();
        let b = params.bind(&tape);
        let m = random_matrix(1, 5, 5);
        let memory = tape.constant(m.clone());
        let trace = set2set(&tape, memory, 4, &b).unwrap();
        for a in &trace.attention {
            assert_eq!(a.value().data(), &[1.0]);
        }
        let q_star = trace.q_star.value();
        for (r, expected) in q_star.data()[5..].iter().zip(m.data()) {
            assert!((r - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn set2set_identical_elements_split_attention() {
        let (_, params) = setup(ReadoutFn::Set2Set);
        let tape = Tape::new();
        let b = params.bind(&tape);
        let row = random_matrix(1, 5, 6);
        let both = Tensor::new(&[2, 5], [row.data(), row.data()].concat()).unwrap();
        let trace = set2set(&tape, tape.constant(both), 3, &b).unwrap();
        for a in &trace.attention {
            assert_eq!(a.value().data(), &[0.5, 0.5]);
        }
    }

    #[test]
    fn set2set_rejects_zero_steps() {
        let (_, params) = setup(ReadoutFn::Set2Set);
        let tape = Tape::new();
        let b = params.bind(&tape);
        let memory = tape.constant(random_matrix(3, 5, 7));
        assert!(set2set(&tape, memory, 0, &b).is_err());
    }

    #[test]
    fn dtnn_sum_of_constants() {
        let (cfg, mut params) = setup(ReadoutFn::DtnnSum);
        params.get_mut("ro.nn.l2.w").unwrap().data_mut().fill(0.0);
        params
            .get_mut("ro.nn.l2.b")
            .unwrap()
            .data_mut()
            .copy_from_slice(&[1.5, -2.0]);
        let tape = Tape::new();
        let b = params.bind(&tape);
        let h = tape.constant(random_matrix(3, 16, 8));
        let r = readout_dtnn_sum(h, &b, &cfg).unwrap().value();
        assert_eq!(r.data(), &[4.5, -6.0]);

        let zero = params.zeros_like();
        let tape = Tape::new();
        let b = zero.bind(&tape);
        let h = tape.constant(random_matrix(3, 16, 9));
        let r = readout_dtnn_sum(h, &b, &cfg).unwrap().value();
        assert_eq!(r.data(), &[0.0, 0.0]);
    }
}
