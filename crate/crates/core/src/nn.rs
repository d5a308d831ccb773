//! Small building blocks: affine layers, one-hidden-layer MLPs and the GRU cell.
//!
//! Weight matrices are stored `[in, out]` and applied to row-major batches
//! (`x · W`), so an `n×in` batch maps to `n×out`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::{BoundParams, ModelParams};
use crate::tensor::Var;

/// Hidden-layer nonlinearity for MLPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    /// Smooth relu, `ln(1 + e^x)`.
    Softplus,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Softplus => x.softplus(),
            Activation::Tanh => x.tanh(),
            Activation::Identity => Ok(x),
        }
    }
}

pub fn init_linear<R: Rng + ?Sized>(
    params: &mut ModelParams,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    bias: bool,
    rng: &mut R,
) {
    params.init_uniform(format!("{prefix}.w"), &[d_in, d_out], d_in, rng);
    if bias {
        params.init_zeros(format!("{prefix}.b"), &[d_out]);
    }
}

/// `x · W (+ b)`, bias applied when `{prefix}.b` exists.
pub fn linear<'t>(x: Var<'t>, p: &BoundParams<'t>, prefix: &str) -> Result<Var<'t>> {
    let y = x.matmul(p.get(&format!("{prefix}.w"))?)?;
    let bias = format!("{prefix}.b");
    if p.has(&bias) {
        y.add_row(p.get(&bias)?)
    } else {
        Ok(y)
    }
}

pub fn init_mlp<R: Rng + ?Sized>(
    params: &mut ModelParams,
    prefix: &str,
    d_in: usize,
    hidden: usize,
    d_out: usize,
    rng: &mut R,
) {
    init_linear(params, &format!("{prefix}.l1"), d_in, hidden, true, rng);
    init_linear(params, &format!("{prefix}.l2"), hidden, d_out, true, rng);
}

/// One hidden layer: `act(x W1 + b1) W2 + b2`.
pub fn mlp<'t>(x: Var<'t>, p: &BoundParams<'t>, prefix: &str, act: Activation) -> Result<Var<'t>> {
    let hidden = act.apply(linear(x, p, &format!("{prefix}.l1"))?)?;
    linear(hidden, p, &format!("{prefix}.l2"))
}

pub fn init_gru<R: Rng + ?Sized>(
    params: &mut ModelParams,
    prefix: &str,
    d_in: usize,
    d: usize,
    rng: &mut R,
) {
    for gate in ["z", "r", "h"] {
        params.init_uniform(format!("{prefix}.w{gate}"), &[d_in, d], d_in, rng);
        params.init_uniform(format!("{prefix}.u{gate}"), &[d, d], d, rng);
    }
}

/// Gated recurrent unit applied to each row of `x` (`n×d_in`) and `h` (`n×d`):
///
/// ```text
/// z  = σ(x Wz + h Uz)
/// r  = σ(x Wr + h Ur)
/// h~ = tanh(x Wh + (r ⊙ h) Uh)
/// h' = (1 − z) ⊙ h + z ⊙ h~
/// ```
pub fn gru_cell<'t>(x: Var<'t>, h: Var<'t>, p: &BoundParams<'t>, prefix: &str) -> Result<Var<'t>> {
    let w = |g: &str| p.get(&format!("{prefix}.w{g}"));
    let u = |g: &str| p.get(&format!("{prefix}.u{g}"));
    let z = x.matmul(w("z")?)?.add(h.matmul(u("z")?)?)?.sigmoid()?;
    let r = x.matmul(w("r")?)?.add(h.matmul(u("r")?)?)?.sigmoid()?;
    let candidate = x
        .matmul(w("h")?)?
        .add(r.mul(h)?.matmul(u("h")?)?)?
        .tanh()?;
    // (1 - z) ⊙ h + z ⊙ h~  ==  h + z ⊙ (h~ - h)
    h.add(z.mul(candidate.sub(h)?)?)
}
