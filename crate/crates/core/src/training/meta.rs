//! Two-step (MAML-style) objectives and Levenshtein neighbor mining.

use crate::dataset::{Dataset, Example};
use crate::error::{Error, Result};
use crate::nn::{Matrix, Tape, Var};

/// Loss values and the gradient of a two-step objective.
#[derive(Debug, Clone)]
pub struct MetaGradient {
    pub inner_loss: f64,
    pub outer_loss: f64,
    pub grads: Vec<Matrix>,
}

/// Gradient of `inner(θ) + outer(θ')` with `θ' = θ - α ∇inner(θ)`.
///
/// With `second_order` the outer term is differentiated through the inner
/// step (a Hessian-vector product); otherwise `θ'` is held constant and the
/// outer gradient is taken at `θ'` directly.
pub fn meta_gradient<'t>(
    tape: &'t Tape,
    theta: &[Var<'t>],
    inner: impl FnOnce(&[Var<'t>]) -> Var<'t>,
    outer: impl FnOnce(&[Var<'t>]) -> Var<'t>,
    alpha: f64,
    second_order: bool,
) -> Result<MetaGradient> {
    let inner_loss = inner(theta);
    let inner_value = finite(inner_loss.item())?;
    let inner_grads = tape.grad(inner_loss, theta);
    if second_order {
        let adapted: Vec<Var<'t>> = theta
            .iter()
            .zip(&inner_grads)
            .map(|(&p, &g)| p - g.scale(alpha))
            .collect();
        let outer_loss = outer(&adapted);
        let outer_value = finite(outer_loss.item())?;
        let grads = tape
            .grad(inner_loss + outer_loss, theta)
            .into_iter()
            .map(|g| g.value().as_ref().clone())
            .collect();
        Ok(MetaGradient {
            inner_loss: inner_value,
            outer_loss: outer_value,
            grads,
        })
    } else {
        let adapted: Vec<Var<'t>> = theta
            .iter()
            .zip(&inner_grads)
            .map(|(p, g)| {
                let mut v = p.value().as_ref().clone();
                v.scaled_add(-alpha, &g.value());
                tape.leaf(v)
            })
            .collect();
        let outer_loss = outer(&adapted);
        let outer_value = finite(outer_loss.item())?;
        let outer_grads = tape.grad(outer_loss, &adapted);
        let grads = inner_grads
            .iter()
            .zip(&outer_grads)
            .map(|(a, b)| a.value().as_ref() + b.value().as_ref())
            .collect();
        Ok(MetaGradient {
            inner_loss: inner_value,
            outer_loss: outer_value,
            grads,
        })
    }
}

fn finite(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFiniteLoss(x))
    }
}

/// Indices of the `k` examples whose sources are closest to `x` in
/// token-level edit distance. Examples whose source equals `x` are skipped;
/// ties keep dataset order.
pub fn mine_neighbor_indices<S: AsRef<str>>(dataset: &Dataset, x: &[S], k: usize) -> Vec<usize> {
    let query: Vec<&str> = x.iter().map(AsRef::as_ref).collect();
    let mut scored: Vec<(usize, usize)> = dataset
        .iter()
        .enumerate()
        .filter(|(_, e)| !e.source.iter().map(String::as_str).eq(query.iter().copied()))
        .map(|(i, e)| {
            let d = strsim::generic_levenshtein(&e.source.iter().map(String::as_str).collect::<Vec<_>>(), &query);
            (d, i)
        })
        .collect();
    scored.sort();
    scored.into_iter().take(k).map(|(_, i)| i).collect()
}

pub fn mine_neighbors_levenshtein<S: AsRef<str>>(dataset: &Dataset, x: &[S], k: usize) -> Vec<Example> {
    mine_neighbor_indices(dataset, x, k)
        .into_iter()
        .map(|i| dataset.examples[i].clone())
        .collect()
}
