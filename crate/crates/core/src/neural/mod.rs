//! Small dense networks, a reverse-mode tape, Adam, and checkpoints.

pub mod activation;
pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod tape;

pub use activation::Activation;
pub use adam::AdamState;
pub use mlp::{stack_rows, Approximator, BoundMlp, Init, Layer, Mlp};
pub use tape::{Grads, Tape, Var};
