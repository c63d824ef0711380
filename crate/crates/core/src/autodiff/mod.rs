//! Second-order derivatives in the spot direction and parameter gradients of
//! losses built from them (reverse-over-forward).

mod jet;
mod tape;

pub use jet::{sigmoid, softplus, Elementary, Jet2};
pub use tape::{NodeId, Tape};

