//! A small differentiable encoder-decoder with attention.

pub mod checkpoint;
mod layers;
pub mod model;
pub mod tape;
pub mod vocab;

pub use layers::segment_matrix;
pub use model::{Arch, Decoded, EncodedBatch, ModelConfig, ModelState, Params, Scored};
pub use tape::{Matrix, Tape, Var};
pub use vocab::{Side, Vocab, Vocabs};

use crate::error::{Error, Result};

/// Gradients of `loss` with respect to `vars`, as plain matrices.
///
/// Fails with [`Error::NonFiniteLoss`] before differentiating a non-finite
/// loss.
pub fn gradients<'t>(tape: &'t Tape, loss: Var<'t>, vars: &[Var<'t>]) -> Result<Vec<Matrix>> {
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss(value));
    }
    Ok(tape
        .grad(loss, vars)
        .into_iter()
        .map(|g| g.value().as_ref().clone())
        .collect())
}
