//! prim2primX augmentation: copies of training examples in which lexicon
//! primitives are swapped for fresh suffixed variants on both sides
//! (`walk left twice -> TL WALK TL WALK` becomes
//! `walk0 left twice -> TL WALK0 TL WALK0`).

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, Example};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentConfig {
    /// New variants per primitive.
    pub n: usize,
    pub seed: u64,
    /// Drop copies that ended up identical to their original.
    pub dedupe: bool,
}

impl AugmentConfig {
    pub fn scan(seed: u64) -> Self {
        AugmentConfig { n: 5, seed, dedupe: true }
    }

    pub fn cogs(seed: u64) -> Self {
        AugmentConfig { n: 2, seed, dedupe: true }
    }
}

pub fn mutated(token: &str, index: usize) -> String {
    format!("{token}{index}")
}

/// Strip a numeric mutation suffix when the remaining stem satisfies
/// `is_base`.
pub fn strip_mutation(token: &str, is_base: impl Fn(&str) -> bool) -> &str {
    let stem = token.trim_end_matches(|c: char| c.is_ascii_digit());
    if stem.len() < token.len() && !stem.is_empty() && is_base(stem) {
        stem
    } else {
        token
    }
}

/// Mutate one example. For each source token that is a lexicon primitive and
/// not yet mutated, draw `s` from `0..=n`; `s = 0` leaves it alone and scanning
/// continues, `s = k` renames every occurrence of the source token and of its
/// aligned targets with suffix `k - 1`.
pub fn mutate_example(example: &Example, lex: &Lexicon, n: usize, rng: &mut impl Rng) -> Example {
    mutate_by(example, lex, || rng.random_range(0..=n))
}

/// [`mutate_example`] with the draws supplied by `draw`.
pub fn mutate_by(example: &Example, lex: &Lexicon, mut draw: impl FnMut() -> usize) -> Example {
    let mut source = example.source.clone();
    let mut target = example.target.clone();
    let mut decided: HashSet<&str> = HashSet::new();
    for token in &example.source {
        if !lex.is_source(token) || decided.contains(token.as_str()) {
            continue;
        }
        let s = draw();
        if s == 0 {
            continue;
        }
        decided.insert(token);
        let suffix = s - 1;
        let new_source = mutated(token, suffix);
        for t in source.iter_mut().filter(|t| *t == token) {
            *t = new_source.clone();
        }
        for w in lex.targets(token) {
            let new_target = mutated(w, suffix);
            for t in target.iter_mut().filter(|t| *t == w) {
                *t = new_target.clone();
            }
        }
    }
    Example {
        source,
        target,
        tag: example.tag.clone(),
    }
}

/// Original examples, each followed by its mutated copy.
pub fn prim2primx(train: &Dataset, lex: &Lexicon, cfg: &AugmentConfig) -> Result<Dataset> {
    if lex.is_empty() {
        return Err(Error::EmptyLexicon);
    }
    if cfg.n == 0 {
        return Err(Error::Config("augmentation needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(train.len() * 2);
    for e in train {
        out.push(e.clone());
        let copy = mutate_example(e, lex, cfg.n, &mut rng);
        if !(cfg.dedupe && copy == *e) {
            out.push(copy);
        }
    }
    Ok(Dataset::new(out))
}

/// Undo mutation on both sides of an example.
pub fn unmutate(example: &Example, lex: &Lexicon) -> Example {
    let targets = lex.target_tokens();
    Example {
        source: example
            .source
            .iter()
            .map(|t| strip_mutation(t, |s| lex.is_source(s)).to_string())
            .collect(),
        target: example
            .target
            .iter()
            .map(|t| strip_mutation(t, |s| targets.contains(s)).to_string())
            .collect(),
        tag: example.tag.clone(),
    }
}
