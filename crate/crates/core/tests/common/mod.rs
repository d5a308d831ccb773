#![allow(dead_code)]

use mpnn_core::engine::ModelConfig;
use mpnn_core::params::{BoundParams, ModelParams};
use mpnn_core::tensor::{Tape, Tensor, Var};
use mpnn_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-8;

/// Zero when the difference is below the absolute floor, otherwise the
/// difference relative to the larger magnitude.
pub fn element_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub type Graph<'a> = dyn for<'t> Fn(&'t Tape, &BoundParams<'t>) -> Result<Var<'t>> + 'a;

/// Weighted sum of `f`'s output with fixed random weights, so every output
/// element contributes a distinct upstream gradient.
fn scalar_value(params: &ModelParams, f: &Graph<'_>, weights: &Tensor) -> f64 {
    let tape = Tape::new();
    let p = params.bind(&tape);
    let out = f(&tape, &p).unwrap().value();
    out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

pub struct GradReport {
    pub worst: f64,
    pub at: String,
    pub checked: usize,
    pub nonzero: usize,
}

/// Compares reverse-mode gradients of every parameter scalar with central
/// differences.
pub fn gradient_error(params: &ModelParams, f: &Graph<'_>, seed: u64) -> GradReport {
    let tape = Tape::new();
    let p = params.bind(&tape);
    let out = f(&tape, &p).unwrap();
    let weights = random_tensor(&out.shape(), &mut ChaCha8Rng::seed_from_u64(seed));
    let loss = out.mul(tape.constant(weights.clone())).unwrap().sum().unwrap();
    let grads = p.collect_grads(&tape.backward(loss).unwrap()).unwrap();

    let mut probe = params.clone();
    let mut report = GradReport {
        worst: 0.0,
        at: String::new(),
        checked: 0,
        nonzero: 0,
    };
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for name in names {
        for i in 0..params.get(&name).unwrap().len() {
            let x = params.get(&name).unwrap().data()[i];
            probe.get_mut(&name).unwrap().data_mut()[i] = x + FD_STEP;
            let plus = scalar_value(&probe, f, &weights);
            probe.get_mut(&name).unwrap().data_mut()[i] = x - FD_STEP;
            let minus = scalar_value(&probe, f, &weights);
            probe.get_mut(&name).unwrap().data_mut()[i] = x;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let analytic = grads.get(&name).unwrap().data()[i];
            let err = element_error(analytic, numeric);
            report.checked += 1;
            if analytic.abs() > 1e-10 {
                report.nonzero += 1;
            }
            if err > report.worst {
                report.worst = err;
                report.at = format!("{name}[{i}]");
            }
        }
    }
    report
}

/// Parameters named `x0, x1, ...` holding random tensors of the given shapes.
pub fn inputs(shapes: &[&[usize]], seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::new();
    for (i, s) in shapes.iter().enumerate() {
        p.insert(format!("x{i}"), random_tensor(s, &mut rng));
    }
    p
}

pub fn small_config(cfg: ModelConfig) -> ModelConfig {
    ModelConfig {
        hidden_dim: 16,
        steps: 2,
        set2set_steps: 3,
        ..cfg
    }
}
