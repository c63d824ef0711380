//! Option pricing with a small neural network trained only on hedging errors.
//!
//! The pipeline simulates spot paths ([`market_sim`]), turns consecutive
//! spot pairs into hedge samples with random strikes and maturities
//! ([`trainer`]), and fits the pricing network ([`model`]) by minimizing
//! delta or delta-gamma replication error ([`hedging`]). Closed-form and
//! semi-analytic pricers ([`pricers`]) serve as oracles for evaluation
//! ([`eval`]).

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod hedging;
pub mod market_sim;
pub mod model;
pub mod pricers;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
