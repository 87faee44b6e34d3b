//! Idealised climate testbeds whose physics parameters are chosen every
//! timestep by reinforcement-learning policies.
//!
//! The crate is split into the environments ([`env`], [`scbc`], [`ebm`],
//! [`rce`]), the learning machinery ([`nn`], [`rl`], [`fedrl`]), the
//! benchmark metrics ([`eval`]) and the experiment plumbing ([`io`]).

pub mod ebm;
pub mod env;
pub mod error;
pub mod eval;
pub mod fedrl;
pub mod io;
pub mod nn;
pub mod rce;
pub mod rl;
pub mod scbc;

pub use error::{Error, Result};

/// Random stream used throughout the crate; ChaCha keeps runs bit-reproducible
/// across platforms.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
