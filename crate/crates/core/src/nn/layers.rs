//! Building blocks shared by the two architectures.

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, RngCore};

use super::tape::{Matrix, Tape, Var};

/// Additive mask value for disallowed attention entries.
pub const MASKED: f64 = -1e9;

/// Forward-pass context: the parameter variables of one model on one tape,
/// plus the dropout source when running in training mode.
pub struct Ctx<'a, 't> {
    pub tape: &'t Tape,
    vars: &'a [Var<'t>],
    index: &'a HashMap<String, usize>,
    rng: Option<&'a mut dyn RngCore>,
    dropout: f64,
}

impl<'a, 't> Ctx<'a, 't> {
    pub fn new(
        tape: &'t Tape,
        vars: &'a [Var<'t>],
        index: &'a HashMap<String, usize>,
        rng: Option<&'a mut dyn RngCore>,
        dropout: f64,
    ) -> Self {
        Ctx {
            tape,
            vars,
            index,
            rng,
            dropout,
        }
    }

    pub fn p(&self, name: &str) -> Var<'t> {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("no parameter named {name}"),
        }
    }

    /// `x W + b` with parameters `{name}.w` and `{name}.b`.
    pub fn linear(&self, name: &str, x: Var<'t>) -> Var<'t> {
        x.matmul(self.p(&format!("{name}.w"))) + self.p(&format!("{name}.b"))
    }

    pub fn layer_norm(&self, name: &str, x: Var<'t>) -> Var<'t> {
        let d = x.shape().1 as f64;
        let mean = x.sum_cols().scale(1.0 / d);
        let centered = x - mean;
        let var = (centered * centered).sum_cols().scale(1.0 / d);
        let normed = centered * var.affine(1.0, 1e-5).rsqrt();
        normed * self.p(&format!("{name}.g")) + self.p(&format!("{name}.b"))
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout(&mut self, x: Var<'t>) -> Var<'t> {
        let rate = self.dropout;
        match self.rng.as_mut() {
            Some(rng) if rate > 0.0 => {
                let (r, c) = x.shape();
                let keep = 1.0 / (1.0 - rate);
                let mask = Array2::from_shape_simple_fn((r, c), || {
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep
                    }
                });
                x * self.tape.constant(mask)
            }
            _ => x,
        }
    }

    /// Multi-head scaled dot-product attention of `q_in` rows over `kv_in`
    /// rows, with `mask` added to the scores.
    pub fn attention(&self, name: &str, heads: usize, q_in: Var<'t>, kv_in: Var<'t>, mask: Var<'t>) -> Var<'t> {
        let q = self.linear(&format!("{name}.q"), q_in);
        let k = self.linear(&format!("{name}.k"), kv_in);
        let v = self.linear(&format!("{name}.v"), kv_in);
        let d = q.shape().1;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let outs: Vec<Var<'t>> = (0..heads)
            .map(|h| {
                let qh = q.slice_cols(h * dh, dh);
                let kh = k.slice_cols(h * dh, dh);
                let vh = v.slice_cols(h * dh, dh);
                let scores = qh.matmul(kh.t()).scale(scale) + mask;
                scores.softmax_rows().matmul(vh)
            })
            .collect();
        let joined = if heads == 1 { outs[0] } else { Var::concat_cols(&outs) };
        self.linear(&format!("{name}.o"), joined)
    }
}

/// Attention mask between stacked sequences: query group `i` (lengths
/// `q_lens`) may only see key group `i` (lengths `k_lens`), and only keys at
/// or before its own position when `causal`.
pub fn block_mask(q_lens: &[usize], k_lens: &[usize], causal: bool) -> Matrix {
    assert_eq!(q_lens.len(), k_lens.len());
    let nq: usize = q_lens.iter().sum();
    let nk: usize = k_lens.iter().sum();
    let mut mask = Array2::from_elem((nq, nk), MASKED);
    let (mut qo, mut ko) = (0, 0);
    for (&ql, &kl) in q_lens.iter().zip(k_lens) {
        for i in 0..ql {
            let visible = if causal { (i + 1).min(kl) } else { kl };
            for j in 0..visible {
                mask[(qo + i, ko + j)] = 0.0;
            }
        }
        qo += ql;
        ko += kl;
    }
    mask
}

/// Sinusoidal position encodings for stacked sequences of the given lengths.
pub fn positions(lens: &[usize], dim: usize) -> Matrix {
    let total: usize = lens.iter().sum();
    let mut pe = Array2::zeros((total, dim));
    let mut row = 0;
    for &len in lens {
        for pos in 0..len {
            for i in 0..dim {
                let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
                let angle = pos as f64 / rate;
                pe[(row, i)] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            }
            row += 1;
        }
    }
    pe
}

/// `B x N` matrix summing the rows of each consecutive segment.
pub fn segment_matrix(lens: &[usize], weight: impl Fn(usize) -> f64) -> Matrix {
    let total: usize = lens.iter().sum();
    let mut m = Array2::zeros((lens.len(), total));
    let mut off = 0;
    for (b, &len) in lens.iter().enumerate() {
        for j in 0..len {
            m[(b, off + j)] = weight(len);
        }
        off += len;
    }
    m
}
