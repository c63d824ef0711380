//! The pricing network `g(m, τ)`: inputs (moneyness, ttm), two tanh layers
//! of width 50 and a softplus head producing the price in units of the
//! discounted strike.

mod batch;
mod checkpoint;

pub use batch::{BatchPass, Channels};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};

use crate::autodiff::{Jet2, NodeId, Tape};
use crate::error::{Error, Result};
use crate::market_sim::{CounterRng, Domain};
use crate::pricers::{OptionKind, OptionSpec, PriceModel};

pub const INPUTS: usize = 2;
pub const HIDDEN: usize = 50;
pub const N_PARAMS: usize = HIDDEN * INPUTS + HIDDEN + HIDDEN * HIDDEN + HIDDEN + HIDDEN + 1;

// Offsets into the flat parameter vector; matrices are row-major.
pub const W1: usize = 0;
pub const B1: usize = W1 + HIDDEN * INPUTS;
pub const W2: usize = B1 + HIDDEN;
pub const B2: usize = W2 + HIDDEN * HIDDEN;
pub const W3: usize = B2 + HIDDEN;
pub const B3: usize = W3 + HIDDEN;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelMeta {
    pub seed: u64,
    /// Epoch the parameters were taken from.
    pub epoch: u32,
    /// Training process, e.g. `gbm` or `heston`.
    pub process: String,
    /// Training loss, `delta` or `delta-gamma`.
    pub loss: String,
    pub kind: OptionKind,
}

impl Default for ModelMeta {
    fn default() -> Self {
        ModelMeta {
            seed: 0,
            epoch: 0,
            process: "none".into(),
            loss: "none".into(),
            kind: OptionKind::Call,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// `w1 | b1 | w2 | b2 | w3 | b3`, see the offset constants.
    pub theta: Vec<f64>,
    pub meta: ModelMeta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelInput {
    /// `S / (K e^{−rτ})`.
    pub moneyness: f64,
    pub ttm: f64,
}

impl ModelInput {
    pub fn new(spot: f64, opt: &OptionSpec) -> Self {
        ModelInput {
            moneyness: spot / (opt.strike * opt.discount()),
            ttm: opt.ttm,
        }
    }
}

/// Uniform(−1/√fan_in, 1/√fan_in) weights, zero biases.
pub fn init_params(seed: u64) -> MlpParams {
    let mut theta = vec![0.0; N_PARAMS];
    let mut rng = CounterRng::new(seed, Domain::Init);
    let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for chunk in theta[range].chunks_mut(2) {
            let (a, b) = rng.next_uniform_pair();
            chunk[0] = bound * (2.0 * a - 1.0);
            if let Some(x) = chunk.get_mut(1) {
                *x = bound * (2.0 * b - 1.0);
            }
        }
    };
    fill(W1..B1, INPUTS);
    fill(W2..B2, HIDDEN);
    fill(W3..B3, HIDDEN);
    MlpParams {
        theta,
        meta: ModelMeta {
            seed,
            ..ModelMeta::default()
        },
    }
}

impl MlpParams {
    pub fn from_theta(theta: Vec<f64>) -> Result<Self> {
        if theta.len() != N_PARAMS {
            return Err(Error::Config(format!("expected {N_PARAMS} parameters, got {}", theta.len())));
        }
        Ok(MlpParams {
            theta,
            meta: ModelMeta::default(),
        })
    }

    pub fn w1(&self) -> &[f64] {
        &self.theta[W1..B1]
    }
    pub fn b1(&self) -> &[f64] {
        &self.theta[B1..W2]
    }
    pub fn w2(&self) -> &[f64] {
        &self.theta[W2..B2]
    }
    pub fn b2(&self) -> &[f64] {
        &self.theta[B2..W3]
    }
    pub fn w3(&self) -> &[f64] {
        &self.theta[W3..B3]
    }
    pub fn b3(&self) -> f64 {
        self.theta[B3]
    }

}

impl PriceModel for MlpParams {
    fn price_delta_gamma(&self, spot: f64, opt: &OptionSpec) -> Result<(f64, f64, f64)> {
        price_delta_gamma(self, spot, opt)
    }
}

fn layer_check(layer: usize, jets: &[Jet2]) -> Result<()> {
    if jets.iter().all(Jet2::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            location: format!("network layer {layer}"),
        })
    }
}

/// Network output with its first and second derivatives in moneyness.
pub fn forward_jet(params: &MlpParams, input: ModelInput) -> Result<Jet2> {
    let x = [Jet2::lift_seed(input.moneyness)?, Jet2::lift_const(input.ttm)?];
    let t = &params.theta;
    let mut a1 = [Jet2::default(); HIDDEN];
    for (j, a) in a1.iter_mut().enumerate() {
        let z = x[0] * t[W1 + 2 * j] + x[1] * t[W1 + 2 * j + 1] + t[B1 + j];
        *a = z.tanh();
    }
    layer_check(1, &a1)?;
    let mut a2 = [Jet2::default(); HIDDEN];
    for (j, a) in a2.iter_mut().enumerate() {
        let row = &t[W2 + HIDDEN * j..W2 + HIDDEN * (j + 1)];
        let mut z = Jet2::constant(t[B2 + j]);
        for (w, h) in row.iter().zip(&a1) {
            z = z + *h * *w;
        }
        *a = z.tanh();
    }
    layer_check(2, &a2)?;
    let mut z = Jet2::constant(t[B3]);
    for (w, h) in t[W3..B3].iter().zip(&a2) {
        z = z + *h * *w;
    }
    let out = z.softplus();
    layer_check(3, &[out])?;
    Ok(out)
}

/// Register every parameter on `tape` in flat order.
pub fn register_params(tape: &mut Tape, params: &MlpParams) -> Vec<NodeId> {
    params.theta.iter().map(|&v| tape.param(v)).collect()
}

/// Record the forward pass on `tape` using previously registered parameter nodes.
pub fn record_forward(tape: &mut Tape, theta: &[NodeId], input: ModelInput) -> NodeId {
    let x = [tape.seed(input.moneyness), tape.constant(input.ttm)];
    let a1: Vec<NodeId> = (0..HIDDEN)
        .map(|j| {
            let z = tape.dot(&theta[W1 + 2 * j..W1 + 2 * j + 2], &x);
            let z = tape.add(z, theta[B1 + j]);
            tape.tanh(z)
        })
        .collect();
    let a2: Vec<NodeId> = (0..HIDDEN)
        .map(|j| {
            let z = tape.dot(&theta[W2 + HIDDEN * j..W2 + HIDDEN * (j + 1)], &a1);
            let z = tape.add(z, theta[B2 + j]);
            tape.tanh(z)
        })
        .collect();
    let z = tape.dot(&theta[W3..B3], &a2);
    let z = tape.add(z, theta[B3]);
    tape.softplus(z)
}

/// `(price, delta, gamma)` with price = K e^{−rτ}·g, delta = ∂g/∂m and
/// gamma = ∂²g/∂m² / (K e^{−rτ}).
pub fn price_delta_gamma(params: &MlpParams, spot: f64, opt: &OptionSpec) -> Result<(f64, f64, f64)> {
    opt.check("price_delta_gamma", spot)?;
    if opt.ttm == 0.0 {
        return Err(Error::domain("price_delta_gamma", "ttm = 0: Greeks undefined at the payoff kink"));
    }
    let scale = opt.strike * opt.discount();
    let g = forward_jet(params, ModelInput::new(spot, opt))?;
    Ok((scale * g.value, g.d1, g.d2 / scale))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamped {
    pub delta: f64,
    pub gamma: f64,
    pub delta_clipped: bool,
    pub gamma_clipped: bool,
}

/// Clip delta to [0, 1] for calls or [−1, 0] for puts, and gamma (currency
/// units) to [0, 1].
pub fn clamp_greeks(delta: f64, gamma: f64, kind: OptionKind) -> Clamped {
    let (lo, hi) = delta_bounds(kind);
    let d = delta.clamp(lo, hi);
    let g = gamma.clamp(0.0, 1.0);
    Clamped {
        delta: d,
        gamma: g,
        delta_clipped: d != delta,
        gamma_clipped: g != gamma,
    }
}

pub fn delta_bounds(kind: OptionKind) -> (f64, f64) {
    match kind {
        OptionKind::Call => (0.0, 1.0),
        OptionKind::Put => (-1.0, 0.0),
    }
}
