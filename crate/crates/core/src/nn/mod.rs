//! Tanh multilayer perceptrons over flat parameter vectors, a recorded
//! reverse-mode tape, and Adam.

mod adam;
mod checkpoint;
mod matrix;
mod mlp;

pub use adam::{adam_step, Adam, AdamConfig, AdamMoments};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
pub use matrix::Matrix;
pub use mlp::{
    mlp_forward, mlp_forward_batch, mlp_predict, Gradients, InputGrad, NetParams, OutputActivation, PolicySpec, Tape,
};

#[cfg(test)]
mod tests;
