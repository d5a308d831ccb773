//! Message passing phase.
//!
//! For `T` steps every node aggregates messages from its neighbors and updates
//! its state:
//!
//! ```text
//! m_v = ( Σ_{w→v} M_in(h_w, h_v, e_wv),  Σ_{v→w} M_out(h_w, h_v, e_vw) )
//! h_v = U(h_v, m_v)
//! ```
//!
//! The in- and out-channel sums are concatenated, so the message channel is
//! `2d` wide. Update weights are shared across steps. With `towers > 1` the
//! state is split into `k` slices of width `d/k`, each slice runs its own
//! message and update functions, and a shared affine map mixes the slices back
//! together after every step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::molgraph::{
    add_master_node, add_virtual_edges, alphabet_size, encode, EdgeFeature, EdgeRepr,
    EncodedGraph, FeatureOptions, MolecularGraph, RAW_EDGE_WIDTH,
};
use crate::nn::{self, Activation};
use crate::params::{BoundParams, ModelParams};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageFn {
    /// `A_label · h_w`, one learned matrix per discrete edge label.
    #[serde(rename = "matmul")]
    Matmul,
    /// `A(e) · h_w` with `A` produced by an MLP of the edge vector.
    #[serde(rename = "edgenet")]
    EdgeNetwork,
    /// MLP over `(h_w, h_v, e)`.
    #[serde(rename = "pair")]
    Pair,
    /// `tanh(W_fc ((W_cf h_w + b1) ⊙ (W_df e + b2)))`.
    #[serde(rename = "dtnn")]
    Dtnn,
}

impl std::str::FromStr for MessageFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matmul" => Ok(MessageFn::Matmul),
            "edgenet" => Ok(MessageFn::EdgeNetwork),
            "pair" => Ok(MessageFn::Pair),
            "dtnn" => Ok(MessageFn::Dtnn),
            other => Err(Error::Config(format!("unknown message function `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateFn {
    Gru,
    /// `h + m_in + m_out`.
    DtnnResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReadoutFn {
    #[serde(rename = "ggnn")]
    Ggnn,
    #[serde(rename = "set2set")]
    Set2Set,
    #[serde(rename = "dtnnsum")]
    DtnnSum,
}

impl std::str::FromStr for ReadoutFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ggnn" => Ok(ReadoutFn::Ggnn),
            "set2set" => Ok(ReadoutFn::Set2Set),
            "dtnnsum" => Ok(ReadoutFn::DtnnSum),
            other => Err(Error::Config(format!("unknown readout `{other}`"))),
        }
    }
}

/// Full description of one model variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub message: MessageFn,
    pub update: UpdateFn,
    pub readout: ReadoutFn,
    /// Message passing steps `T`.
    pub steps: usize,
    /// Node state width `d`.
    pub hidden_dim: usize,
    /// Number of towers `k`; must divide `hidden_dim`.
    pub towers: usize,
    pub master_dim: Option<usize>,
    pub master_in_readout: bool,
    /// set2set processing steps `M`.
    pub set2set_steps: usize,
    /// set2set memory/query width; defaults to `hidden_dim`.
    pub set2set_dim: Option<usize>,
    /// Hidden width of the edge network; defaults to `hidden_dim`.
    pub edge_hidden: Option<usize>,
    pub edge_repr: EdgeRepr,
    pub explicit_hydrogens: bool,
    pub virtual_edges: bool,
    pub features: FeatureOptions,
    pub activation: Activation,
    /// Number of regression outputs (1 for a single target, 13 for joint).
    pub outputs: usize,
}

impl Default for ModelConfig {
    /// Edge network messages, GRU update, set2set readout on raw distances.
    fn default() -> Self {
        Self {
            message: MessageFn::EdgeNetwork,
            update: UpdateFn::Gru,
            readout: ReadoutFn::Set2Set,
            steps: 3,
            hidden_dim: 32,
            towers: 1,
            master_dim: None,
            master_in_readout: false,
            set2set_steps: 3,
            set2set_dim: None,
            edge_hidden: None,
            edge_repr: EdgeRepr::RawDistance,
            explicit_hydrogens: false,
            virtual_edges: false,
            features: FeatureOptions::default(),
            activation: Activation::Relu,
            outputs: 1,
        }
    }
}

impl ModelConfig {
    pub fn tower_width(&self) -> usize {
        self.hidden_dim / self.towers.max(1)
    }

    pub fn feature_width(&self) -> usize {
        self.features.width()
    }

    pub fn set2set_width(&self) -> usize {
        self.set2set_dim.unwrap_or(self.hidden_dim)
    }

    pub fn edge_hidden_width(&self) -> usize {
        self.edge_hidden.unwrap_or(self.hidden_dim)
    }

    /// Width of the edge vector consumed by vector-valued message functions.
    /// Discrete labels are one-hot encoded.
    pub fn edge_input_width(&self) -> usize {
        match self.edge_repr {
            EdgeRepr::RawDistance => RAW_EDGE_WIDTH,
            repr => alphabet_size(repr),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.towers == 0 || self.hidden_dim % self.towers != 0 {
            return fail(format!(
                "towers k={} must divide hidden dimension d={}",
                self.towers, self.hidden_dim
            ));
        }
        if self.hidden_dim < self.feature_width() {
            return fail(format!(
                "hidden dimension {} is smaller than the {} input features",
                self.hidden_dim,
                self.feature_width()
            ));
        }
        if self.readout == ReadoutFn::Set2Set && self.set2set_steps < 1 {
            return fail("set2set needs at least one processing step (M >= 1)".into());
        }
        if self.message == MessageFn::Matmul && !self.edge_repr.is_discrete() {
            return fail("the matmul message function needs discrete edge labels".into());
        }
        if let Some(dm) = self.master_dim {
            if dm == 0 {
                return fail("master node dimension must be at least 1".into());
            }
            if self.towers > 1 {
                return fail("master node is not supported together with towers".into());
            }
        }
        if self.outputs == 0 {
            return fail("model needs at least one output".into());
        }
        if self.edge_hidden == Some(0) || self.set2set_dim == Some(0) {
            return fail("layer widths must be positive".into());
        }
        Ok(())
    }

    /// Molecule → model input, applying virtual edges and the master node.
    pub fn prepare_graph(&self, mol: &MolecularGraph) -> Result<EncodedGraph> {
        let encoded = if self.virtual_edges {
            encode(&add_virtual_edges(mol), self.edge_repr, self.features)?
        } else {
            encode(mol, self.edge_repr, self.features)?
        };
        match self.master_dim {
            Some(dm) => add_master_node(&encoded, dm),
            None => Ok(encoded),
        }
    }
}

fn tower_prefix(t: usize) -> String {
    format!("tower{t}")
}

const DIRECTIONS: [&str; 2] = ["in", "out"];

/// Initializes message, update and mixing weights (readout weights are added
/// by [`crate::readout::init_params`]).
pub fn init_params<R: Rng + ?Sized>(cfg: &ModelConfig, params: &mut ModelParams, rng: &mut R) {
    let dk = cfg.tower_width();
    let e_dim = cfg.edge_input_width();
    for t in 0..cfg.towers {
        let tp = tower_prefix(t);
        for dir in DIRECTIONS {
            let prefix = format!("{tp}.msg.{dir}");
            match cfg.message {
                MessageFn::Matmul => {
                    let labels = alphabet_size(cfg.edge_repr);
                    params.init_uniform(format!("{prefix}.A"), &[labels, dk, dk], dk, rng);
                }
                MessageFn::EdgeNetwork => {
                    nn::init_mlp(params, &format!("{prefix}.edge"), e_dim, cfg.edge_hidden_width(), dk * dk, rng);
                    // entries of A start at the scale of a fan-in dk matrix
                    let w = params.get_mut(&format!("{prefix}.edge.l2.w")).expect("just inserted");
                    let scale = 1.0 / (dk as f64).sqrt();
                    w.data_mut().iter_mut().for_each(|v| *v *= scale);
                }
                MessageFn::Pair => {
                    nn::init_mlp(params, &format!("{prefix}.pair"), 2 * dk + e_dim, 2 * dk, dk, rng);
                }
                MessageFn::Dtnn => {
                    nn::init_linear(params, &format!("{prefix}.dtnn.cf"), dk, dk, true, rng);
                    nn::init_linear(params, &format!("{prefix}.dtnn.df"), e_dim, dk, true, rng);
                    nn::init_linear(params, &format!("{prefix}.dtnn.fc"), dk, dk, false, rng);
                }
            }
        }
        if cfg.update == UpdateFn::Gru {
            nn::init_gru(params, &format!("{tp}.gru"), 2 * dk, dk, rng);
        }
    }
    if cfg.towers > 1 {
        nn::init_linear(params, "mix", cfg.hidden_dim, cfg.hidden_dim, true, rng);
    }
    if let Some(dm) = cfg.master_dim {
        let d = cfg.hidden_dim;
        params.init_uniform("master.h0", &[1, dm], dm, rng);
        nn::init_linear(params, "master.to_in", dm, d, false, rng);
        nn::init_linear(params, "master.to_out", dm, d, false, rng);
        nn::init_linear(params, "master.from", d, dm, false, rng);
        nn::init_gru(params, "master.gru", dm, dm, rng);
    }
}

/// Directed atom-to-atom edges in array form.
struct EdgeBatch {
    src: Vec<usize>,
    dst: Vec<usize>,
    labels: Vec<usize>,
    /// `[E, edge_input_width]`.
    vectors: Tensor,
}

impl EdgeBatch {
    fn new(graph: &EncodedGraph, cfg: &ModelConfig) -> Result<Self> {
        let width = cfg.edge_input_width();
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut labels = Vec::new();
        let mut vectors = Vec::new();
        for e in graph.graph_edges() {
            src.push(e.src);
            dst.push(e.dst);
            match &e.feature {
                EdgeFeature::Label(l) => {
                    if *l >= width {
                        return Err(Error::Contract(format!(
                            "edge label {l} outside alphabet of size {width}"
                        )));
                    }
                    labels.push(*l);
                    let mut one_hot = vec![0.0; width];
                    one_hot[*l] = 1.0;
                    vectors.extend(one_hot);
                }
                EdgeFeature::Vector(v) => {
                    if cfg.message == MessageFn::Matmul || v.len() != width {
                        return Err(Error::Config(
                            "edge vectors do not match the configured edge representation".into(),
                        ));
                    }
                    vectors.extend_from_slice(v);
                }
            }
        }
        let count = src.len();
        Ok(Self {
            src,
            dst,
            labels,
            vectors: Tensor::new(&[count, width], vectors)?,
        })
    }
}

/// Per-direction message function with its edge-dependent part precomputed.
enum DirectionMessages<'t> {
    /// One `dk×dk` matrix per edge, `[E, dk*dk]`.
    Matrices(Var<'t>),
    Pair { prefix: String, edges: Var<'t> },
    /// `edge_term = W_df e + b2`, `[E, dk]`.
    Dtnn { prefix: String, edge_term: Var<'t> },
}

impl<'t> DirectionMessages<'t> {
    fn prepare(
        cfg: &ModelConfig,
        p: &BoundParams<'t>,
        prefix: String,
        edges: &EdgeBatch,
        edge_vectors: Var<'t>,
    ) -> Result<Self> {
        let dk = cfg.tower_width();
        Ok(match cfg.message {
            MessageFn::Matmul => {
                let labels = alphabet_size(cfg.edge_repr);
                let bank = p.get(&format!("{prefix}.A"))?.reshape(&[labels, dk * dk])?;
                DirectionMessages::Matrices(bank.gather_rows(&edges.labels)?)
            }
            MessageFn::EdgeNetwork => DirectionMessages::Matrices(nn::mlp(
                edge_vectors,
                p,
                &format!("{prefix}.edge"),
                cfg.activation,
            )?),
            MessageFn::Pair => DirectionMessages::Pair {
                prefix: format!("{prefix}.pair"),
                edges: edge_vectors,
            },
            MessageFn::Dtnn => DirectionMessages::Dtnn {
                edge_term: nn::linear(edge_vectors, p, &format!("{prefix}.dtnn.df"))?,
                prefix: format!("{prefix}.dtnn"),
            },
        })
    }

    /// Messages along every edge from `source` states, `[E, dk]`.
    fn apply(
        &self,
        cfg: &ModelConfig,
        p: &BoundParams<'t>,
        source: Var<'t>,
        dest: Var<'t>,
    ) -> Result<Var<'t>> {
        match self {
            DirectionMessages::Matrices(m) => m.batch_matvec(source),
            DirectionMessages::Pair { prefix, edges } => {
                let input = source.tape().concat(&[source, dest, *edges], 1)?;
                nn::mlp(input, p, prefix, cfg.activation)
            }
            DirectionMessages::Dtnn { prefix, edge_term } => {
                let node_term = nn::linear(source, p, &format!("{prefix}.cf"))?;
                nn::linear(node_term.mul(*edge_term)?, p, &format!("{prefix}.fc"))?.tanh()
            }
        }
    }
}

/// Aggregated messages of one tower: in- and out-channel sums, each `[n, dk]`.
pub struct TowerMessages<'t> {
    pub incoming: Var<'t>,
    pub outgoing: Var<'t>,
}

/// Precomputed edge-dependent terms for every tower.
pub struct MessagePlan<'t> {
    edges: EdgeBatch,
    towers: Vec<[DirectionMessages<'t>; 2]>,
}

impl<'t> MessagePlan<'t> {
    pub fn new(
        tape: &'t Tape,
        graph: &EncodedGraph,
        p: &BoundParams<'t>,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let edges = EdgeBatch::new(graph, cfg)?;
        let edge_vectors = tape.constant(edges.vectors.clone());
        let towers = (0..cfg.towers)
            .map(|t| {
                let tp = tower_prefix(t);
                Ok([
                    DirectionMessages::prepare(cfg, p, format!("{tp}.msg.in"), &edges, edge_vectors)?,
                    DirectionMessages::prepare(cfg, p, format!("{tp}.msg.out"), &edges, edge_vectors)?,
                ])
            })
            .collect::<Result<_>>()?;
        Ok(Self { edges, towers })
    }

    /// Sums messages into each node for tower `t` given that tower's states
    /// `h` (`[n, dk]`). Isolated nodes receive zeros.
    pub fn aggregate(
        &self,
        cfg: &ModelConfig,
        p: &BoundParams<'t>,
        t: usize,
        h: Var<'t>,
    ) -> Result<TowerMessages<'t>> {
        let n = h.shape()[0];
        let [msg_in, msg_out] = &self.towers[t];
        let h_src = h.gather_rows(&self.edges.src)?;
        let h_dst = h.gather_rows(&self.edges.dst)?;
        // edge w→v: v hears M_in(h_w); w hears M_out(h_v)
        let incoming = msg_in
            .apply(cfg, p, h_src, h_dst)?
            .scatter_add_rows(&self.edges.dst, n)?;
        let outgoing = msg_out
            .apply(cfg, p, h_dst, h_src)?
            .scatter_add_rows(&self.edges.src, n)?;
        Ok(TowerMessages { incoming, outgoing })
    }
}

/// States produced by the message passing phase.
pub struct NodeStates<'t> {
    /// Input features padded to `d`, `[n, d]`.
    pub h0: Var<'t>,
    /// `h^1 .. h^T`; empty when `T = 0`.
    pub history: Vec<Var<'t>>,
    /// Master state `[1, d_master]` at t = 0 and after the last step.
    pub master: Option<(Var<'t>, Var<'t>)>,
}

impl<'t> NodeStates<'t> {
    pub fn last(&self) -> Var<'t> {
        self.history.last().copied().unwrap_or(self.h0)
    }
}

/// Pads node features with zeros up to width `d`.
pub fn initial_states(graph: &EncodedGraph, d: usize) -> Result<Tensor> {
    let n = graph.num_atoms();
    let width = graph.feature_width();
    if width > d {
        return Err(Error::Config(format!(
            "{width} node features do not fit in hidden dimension {d}"
        )));
    }
    let mut data = vec![0.0; n * d];
    for v in 0..n {
        data[v * d..v * d + width].copy_from_slice(graph.node_features.row(v));
    }
    Tensor::new(&[n, d], data)
}

/// Runs `T` steps of message passing.
pub fn propagate<'t>(
    tape: &'t Tape,
    graph: &EncodedGraph,
    p: &BoundParams<'t>,
    cfg: &ModelConfig,
) -> Result<NodeStates<'t>> {
    if graph.master_dim != cfg.master_dim {
        return Err(Error::Config(
            "graph master node does not match the model configuration".into(),
        ));
    }
    let n = graph.num_atoms();
    let dk = cfg.tower_width();
    let h0 = tape.constant(initial_states(graph, cfg.hidden_dim)?);
    let plan = MessagePlan::new(tape, graph, p, cfg)?;
    let master0 = match cfg.master_dim {
        Some(_) => Some(p.get("master.h0")?),
        None => None,
    };
    let mut master = master0;
    let mut h = h0;
    let mut history = Vec::with_capacity(cfg.steps);

    for _ in 0..cfg.steps {
        let mut tower_outputs = Vec::with_capacity(cfg.towers);
        for t in 0..cfg.towers {
            let h_t = if cfg.towers == 1 {
                h
            } else {
                h.narrow(1, t * dk, dk)?
            };
            let TowerMessages {
                mut incoming,
                mut outgoing,
            } = plan.aggregate(cfg, p, t, h_t)?;
            if let Some(hm) = master {
                let broadcast = vec![0; n];
                let to_in = nn::linear(hm, p, "master.to_in")?.gather_rows(&broadcast)?;
                let to_out = nn::linear(hm, p, "master.to_out")?.gather_rows(&broadcast)?;
                incoming = incoming.add(to_in)?;
                outgoing = outgoing.add(to_out)?;
            }
            let updated = match cfg.update {
                UpdateFn::Gru => {
                    let m = tape.concat(&[incoming, outgoing], 1)?;
                    nn::gru_cell(m, h_t, p, &format!("{}.gru", tower_prefix(t)))?
                }
                UpdateFn::DtnnResidual => h_t.add(incoming)?.add(outgoing)?,
            };
            tower_outputs.push(updated);
        }
        let next = if cfg.towers == 1 {
            tower_outputs[0]
        } else {
            nn::linear(tape.concat(&tower_outputs, 1)?, p, "mix")?
        };
        if let Some(hm) = master {
            let dm = cfg.master_dim.unwrap_or(0);
            let m_master = nn::linear(h, p, "master.from")?.sum_axis(0)?.reshape(&[1, dm])?;
            master = Some(nn::gru_cell(m_master, hm, p, "master.gru")?);
        }
        h = next;
        history.push(h);
    }
    Ok(NodeStates {
        h0,
        history,
        master: master0.zip(master),
    })
}

/// Big-O multiply model for one propagation step with a master node:
/// `|E| d² + n d_master²`.
pub fn master_propagation_cost(num_edges: usize, n: usize, d: usize, d_master: usize) -> usize {
    num_edges * d * d + n * d_master * d_master
}
