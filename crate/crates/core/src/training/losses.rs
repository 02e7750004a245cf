//! Likelihood and unlikelihood objectives over teacher-forced scores.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::segment_matrix;
use crate::nn::{Scored, Var};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before any
/// `log(1 - p)`.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UlVariant {
    Sentence,
    WordAvg,
    WordMin,
}

impl UlVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            UlVariant::Sentence => "sentence",
            UlVariant::WordAvg => "word_avg",
            UlVariant::WordMin => "word_min",
        }
    }
}

impl fmt::Display for UlVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UlVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence" => Ok(UlVariant::Sentence),
            "word_avg" | "avg" => Ok(UlVariant::WordAvg),
            "word_min" | "min" => Ok(UlVariant::WordMin),
            other => Err(Error::Config(format!("unknown unlikelihood variant {other:?}"))),
        }
    }
}

/// Mean negative log-likelihood per example.
pub fn mle<'t>(scored: &Scored<'t>) -> Var<'t> {
    -scored.totals.mean()
}

/// `-log(1 - p)` elementwise on log-probabilities, with `p` clamped.
pub fn unlikely<'t>(logp: Var<'t>) -> Var<'t> {
    -logp.exp().clamp(PROB_EPS, 1.0 - PROB_EPS).affine(-1.0, 1.0).ln()
}

/// Mean over examples of `-log(1 - p(y | x))`.
pub fn ul_sentence<'t>(scored: &Scored<'t>) -> Var<'t> {
    unlikely(scored.totals).mean()
}

/// Mean over examples of the per-token unlikelihood averaged over tokens.
pub fn ul_word_avg<'t>(scored: &Scored<'t>) -> Var<'t> {
    let u = unlikely(scored.per_token);
    let avg = u.tape().constant(segment_matrix(&scored.lengths, |len| 1.0 / len as f64));
    avg.matmul(u).mean()
}

/// Mean over examples of the smallest per-token unlikelihood.
pub fn ul_word_min<'t>(scored: &Scored<'t>) -> Var<'t> {
    let u = unlikely(scored.per_token);
    let values = u.value();
    let mut picks = Vec::with_capacity(scored.lengths.len());
    let mut off = 0;
    for &len in &scored.lengths {
        let best = (off..off + len)
            .min_by(|&a, &b| values[(a, 0)].total_cmp(&values[(b, 0)]))
            .expect("nonempty segment");
        picks.push(best);
        off += len;
    }
    u.gather_rows(&picks).mean()
}

pub fn ul<'t>(scored: &Scored<'t>, variant: UlVariant) -> Var<'t> {
    match variant {
        UlVariant::Sentence => ul_sentence(scored),
        UlVariant::WordAvg => ul_word_avg(scored),
        UlVariant::WordMin => ul_word_min(scored),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tape;
    use ndarray::Array2;

    /// Scores for examples whose tokens have the given probabilities.
    fn scored<'t>(tape: &'t Tape, probs: &[&[f64]]) -> Scored<'t> {
        let flat: Vec<f64> = probs.iter().flat_map(|p| p.iter().map(|x| x.ln())).collect();
        let lens = probs.iter().map(|p| p.len()).collect();
        let col = Array2::from_shape_vec((flat.len(), 1), flat).unwrap();
        Scored::from_per_token(tape.constant(col), lens)
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn mle_values() {
        let t = Tape::new();
        close(mle(&scored(&t, &[&[1.0, 1.0]])).item(), 0.0, 1e-12);
        close(mle(&scored(&t, &[&[0.5, 0.5]])).item(), 4f64.ln(), 1e-12);
        close(mle(&scored(&t, &[&[0.25; 3]])).item(), 3.0 * 4f64.ln(), 1e-12);
        // Mean over the batch.
        close(mle(&scored(&t, &[&[0.5], &[1.0]])).item(), 2f64.ln() / 2.0, 1e-12);
    }

    #[test]
    fn sentence_values() {
        let t = Tape::new();
        close(ul_sentence(&scored(&t, &[&[0.0]])).item(), 0.0, 1e-6);
        close(ul_sentence(&scored(&t, &[&[0.5]])).item(), 2f64.ln(), 1e-6);
        close(ul_sentence(&scored(&t, &[&[1.0]])).item(), -(1e-7f64).ln(), 1e-6);
        close(-(1e-7f64).ln(), 16.118, 1e-3);
        // Sentence probability is the product of token probabilities.
        close(ul_sentence(&scored(&t, &[&[0.5, 0.5]])).item(), -(0.75f64).ln(), 1e-6);
    }

    #[test]
    fn word_values() {
        let t = Tape::new();
        for v in [UlVariant::WordAvg, UlVariant::WordMin] {
            close(ul(&scored(&t, &[&[0.0, 0.0]]), v).item(), 0.0, 1e-6);
        }
        close(ul_word_avg(&scored(&t, &[&[0.5, 0.0]])).item(), 2f64.ln() / 2.0, 1e-6);
        close(ul_word_min(&scored(&t, &[&[0.5, 0.0]])).item(), 0.0, 1e-6);
    }

    #[test]
    fn names_round_trip() {
        for v in [UlVariant::Sentence, UlVariant::WordAvg, UlVariant::WordMin] {
            assert_eq!(v.as_str().parse::<UlVariant>().unwrap(), v);
        }
        assert!("max".parse::<UlVariant>().is_err());
    }
}
