//! Small dense networks with hand-written reverse mode.

pub mod checkpoint;
mod gaussian;
mod mlp;
mod optim;
mod params;

pub use gaussian::{sample_squashed, Evaluation, GaussianHead, Sample, LOG_STD_MAX, LOG_STD_MIN};
pub use mlp::{Layout, Mlp, Tape, MAX_PARAMS};
pub use optim::{soft_update, Adam};
pub use params::{flatten, load_into, unflatten, ParamVector};
