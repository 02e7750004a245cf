//! Compositional-generalization lab: SCAN-style data generation, lexicon
//! induction, prim2primX augmentation, class-preserving perturbation, a small
//! differentiable seq2seq model and MLE / MET / MET-Meta / MAML training with
//! exact-match evaluation.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod lexicon;
pub mod nn;
pub mod perturb;
pub mod scan;
pub mod toy;
pub mod training;

pub use dataset::{Dataset, Example};
pub use error::{Error, Result};
pub use lexicon::{Lexicon, LexiconConfig};
pub use scan::{Grammar, Program, TokenAlphabet};
