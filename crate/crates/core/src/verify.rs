//! Self-checks run by the `verify` command: gradients against central
//! differences, permutation invariance, spectral equivalences and the
//! distance-bin contract.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{MessageFn, ModelConfig, ReadoutFn, UpdateFn};
use crate::error::Result;
use crate::io::synthetic::generate_molecule;
use crate::model::Mpnn;
use crate::molgraph::{alphabet_size, EdgeFeature, EdgeRepr, EncodedGraph, MolecularGraph};
use crate::nn::Activation;
use crate::spectral::{gcn_as_mpnn, gcn_dense, spectral_as_mpnn, spectral_layer_dense, GcnLayer, Sigma, SpectralLayer};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub const GRAD_STEP: f64 = 1e-3;
pub const GRAD_REL_TOL: f64 = 1e-4;
pub const GRAD_ABS_FLOOR: f64 = 1e-8;

/// Every message × readout pairing; matmul messages use chemical labels,
/// the others raw distances. DTNN messages use the residual update.
pub fn model_variants(hidden_dim: usize, towers: usize) -> Vec<(String, ModelConfig)> {
    let mut out = Vec::new();
    for message in [MessageFn::Matmul, MessageFn::EdgeNetwork, MessageFn::Pair, MessageFn::Dtnn] {
        for readout in [ReadoutFn::Ggnn, ReadoutFn::Set2Set, ReadoutFn::DtnnSum] {
            let cfg = ModelConfig {
                message,
                readout,
                update: if message == MessageFn::Dtnn {
                    UpdateFn::DtnnResidual
                } else {
                    UpdateFn::Gru
                },
                edge_repr: if message == MessageFn::Matmul {
                    EdgeRepr::Chemical
                } else {
                    EdgeRepr::RawDistance
                },
                hidden_dim,
                towers,
                steps: 2,
                set2set_steps: 3,
                ..ModelConfig::default()
            };
            out.push((format!("{message:?}/{readout:?}/k={towers}").to_lowercase(), cfg));
        }
    }
    out
}

/// A random molecule with exactly `n` heavy atoms.
pub fn molecule_with_atoms(n: usize, rng: &mut ChaCha8Rng) -> MolecularGraph {
    loop {
        let m = generate_molecule(rng);
        if m.num_atoms() == n {
            return m;
        }
    }
}

/// `|a − n| / max(|a|, |n|)`, or 0 when the difference is below the floor.
pub fn gradient_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= GRAD_ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Largest elementwise gradient error over every parameter scalar and the
/// parameter where it occurs.
pub fn gradient_check(model: &Mpnn, graph: &EncodedGraph, target: &[f64]) -> Result<(f64, String)> {
    let (_, grads) = model.loss_and_grad(graph, target)?;
    let mut probe = model.clone();
    let mut worst = (0.0, String::new());
    let names: Vec<String> = model.params.names().map(str::to_owned).collect();
    for name in names {
        for i in 0..model.params.get(&name)?.len() {
            let original = model.params.get(&name)?.data()[i];
            probe.params.get_mut(&name)?.data_mut()[i] = original + GRAD_STEP;
            let plus = probe.loss(graph, target)?;
            probe.params.get_mut(&name)?.data_mut()[i] = original - GRAD_STEP;
            let minus = probe.loss(graph, target)?;
            probe.params.get_mut(&name)?.data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * GRAD_STEP);
            let err = gradient_error(grads.get(&name)?.data()[i], numeric);
            if err > worst.0 {
                worst = (err, format!("{name}[{i}]"));
            }
        }
    }
    Ok(worst)
}

/// Replaces node features with uniform values in `[-1, 1)`, keeping the
/// topology and edge features. Integer-valued atom features put large
/// inputs into every layer, and the resulting curvature swamps a 1e-3
/// central difference.
pub fn with_random_features(mut graph: EncodedGraph, rng: &mut ChaCha8Rng) -> EncodedGraph {
    graph.node_features = random_tensor(graph.node_features.shape(), rng);
    graph
}

pub fn check_gradients(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mol = molecule_with_atoms(5, &mut rng);
    let mut out = Vec::new();
    for (name, cfg) in model_variants(16, 1) {
        let cfg = ModelConfig {
            activation: Activation::Softplus,
            ..cfg
        };
        let model = Mpnn::new(cfg.clone(), seed)?;
        let graph = with_random_features(cfg.prepare_graph(&mol)?, &mut ChaCha8Rng::seed_from_u64(seed));
        let (err, at) = gradient_check(&model, &graph, &[0.7])?;
        out.push(CheckOutcome {
            name: format!("gradient {name}"),
            passed: err < GRAD_REL_TOL,
            detail: format!("max relative error {err:.3e} at {at}"),
        });
    }
    Ok(out)
}

pub fn random_permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub const INVARIANCE_TOL: f64 = 1e-9;

pub fn check_invariance(graphs: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mols: Vec<MolecularGraph> = (0..graphs).map(|_| generate_molecule(&mut rng)).collect();
    let mut out = Vec::new();
    for towers in [1, 4] {
        for (name, cfg) in model_variants(16, towers) {
            let model = Mpnn::new(cfg.clone(), seed)?;
            let mut worst: f64 = 0.0;
            for mol in &mols {
                let perm = random_permutation(mol.num_atoms(), &mut rng);
                let a = model.predict(&cfg.prepare_graph(mol)?)?;
                let b = model.predict(&cfg.prepare_graph(&mol.permuted(&perm)?)?)?;
                for (x, y) in a.iter().zip(&b) {
                    worst = worst.max((x - y).abs());
                }
            }
            out.push(CheckOutcome {
                name: format!("invariance {name}"),
                passed: worst < INVARIANCE_TOL,
                detail: format!("max output change {worst:.3e} over {graphs} graphs"),
            });
        }
    }
    Ok(out)
}

/// Random weighted symmetric adjacency with roughly half the pairs linked.
pub fn random_adjacency(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut w = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..i {
            if rng.gen_bool(0.5) {
                let v = rng.gen_range(0.1..2.0);
                w.data_mut()[i * n + j] = v;
                w.data_mut()[j * n + i] = v;
            }
        }
    }
    w
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

pub const SPECTRAL_TOL: f64 = 1e-8;
pub const GCN_TOL: f64 = 1e-10;

pub fn check_spectral(graphs: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut spectral, mut gcn): (f64, f64) = (0.0, 0.0);
    for g in 0..graphs {
        let n = rng.gen_range(1..=8);
        let (d1, d2) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let sigma = if g % 2 == 0 { Sigma::Relu } else { Sigma::Identity };
        let w = random_adjacency(n, &mut rng);
        let layer = SpectralLayer::new(&w, &random_tensor(&[d1, d2, n], &mut rng), sigma)?;
        let x = random_tensor(&[n, d1], &mut rng);
        let diff = spectral_layer_dense(&x, &layer)?.max_abs_diff(&spectral_as_mpnn(&x, &layer)?)?;
        spectral = spectral.max(diff);

        let gl = GcnLayer::new(&w, &random_tensor(&[d1, d2], &mut rng), sigma)?;
        let diff = gcn_dense(&x, &gl)?.max_abs_diff(&gcn_as_mpnn(&x, &gl)?)?;
        gcn = gcn.max(diff);
    }
    Ok(vec![
        CheckOutcome {
            name: "spectral layer as message passing".into(),
            passed: spectral < SPECTRAL_TOL,
            detail: format!("max difference {spectral:.3e} over {graphs} graphs"),
        },
        CheckOutcome {
            name: "graph convolution as message passing".into(),
            passed: gcn < GCN_TOL,
            detail: format!("max difference {gcn:.3e} over {graphs} graphs"),
        },
    ])
}

pub fn check_bins(graphs: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = alphabet_size(EdgeRepr::DistanceBins);
    let mut bad = 0;
    for _ in 0..graphs {
        let mol = generate_molecule(&mut rng);
        let cfg = ModelConfig {
            edge_repr: EdgeRepr::DistanceBins,
            message: MessageFn::Matmul,
            ..ModelConfig::default()
        };
        let g = cfg.prepare_graph(&mol)?;
        bad += g
            .edges
            .iter()
            .filter(|e| !matches!(e.feature, EdgeFeature::Label(l) if l < size))
            .count();
    }
    let boundaries = crate::molgraph::bin_distance(2.0)? == 1 && crate::molgraph::bin_distance(6.0)? == 9;
    Ok(vec![CheckOutcome {
        name: "distance bins".into(),
        passed: size == 14 && bad == 0 && boundaries,
        detail: format!("alphabet {size}, {bad} out-of-range labels, boundaries ok: {boundaries}"),
    }])
}

/// Every check with the sizes used by the command line.
pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = check_gradients(seed)?;
    out.extend(check_invariance(10, seed)?);
    out.extend(check_spectral(100, seed)?);
    out.extend(check_bins(100, seed)?);
    Ok(out)
}
