//! Fully connected networks with hand-written reverse-mode gradients and Adam.

mod gaussian;
mod io;
mod matrix;
mod mlp;

pub use gaussian::GaussianPolicy;
pub use matrix::Matrix;
pub use mlp::{AdamConfig, ForwardCache, Gradients, Loss, Mlp};
