//! Synthetic two-bijection task: `s1` tokens map to `T1` tokens and `s2`
//! tokens to `T2` tokens. Some `s1` tokens (the "gen" share) are only seen
//! alone in training, yet the test set pairs every `s1` with every `s2`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, Example};
use crate::error::{Error, Result};
use crate::perturb::WordClasses;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub size_s1: usize,
    pub size_s2: usize,
    pub gen_fraction: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            size_s1: 20,
            size_s2: 10,
            gen_fraction: 0.25,
            seed: 0,
        }
    }
}

impl ToyConfig {
    /// Number of `s1` tokens held out of two-token training inputs.
    pub fn gen_count(&self) -> usize {
        (self.gen_fraction * self.size_s1 as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.size_s1 < 2 || self.size_s2 < 1 {
            return Err(Error::Config("toy task needs size_s1 >= 2 and size_s2 >= 1".into()));
        }
        if !(self.gen_fraction > 0.0 && self.gen_fraction < 1.0) {
            return Err(Error::InvalidFraction(self.gen_fraction));
        }
        let g = self.gen_count();
        if g == 0 || g == self.size_s1 {
            return Err(Error::Config(format!(
                "gen_fraction {} leaves {g} of {} s1 tokens held out",
                self.gen_fraction, self.size_s1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub train: Dataset,
    pub test: Dataset,
    /// `s1` tokens that never appear in two-token training inputs.
    pub s1_gen: BTreeSet<String>,
    /// `{all s1}` and `{all s2}`.
    pub classes: WordClasses,
}

pub fn s1_token(i: usize) -> String {
    format!("s1_{i}")
}

pub fn s2_token(j: usize) -> String {
    format!("s2_{j}")
}

pub fn generate_toy(cfg: &ToyConfig) -> Result<ToyTask> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut f1: Vec<usize> = (0..cfg.size_s1).collect();
    f1.shuffle(&mut rng);
    let mut f2: Vec<usize> = (0..cfg.size_s2).collect();
    f2.shuffle(&mut rng);
    let mut s1_order: Vec<usize> = (0..cfg.size_s1).collect();
    s1_order.shuffle(&mut rng);
    let gen: BTreeSet<usize> = s1_order[..cfg.gen_count()].iter().copied().collect();

    let t1 = |i: usize| format!("T1_{}", f1[i]);
    let t2 = |j: usize| format!("T2_{}", f2[j]);
    let pair = |i: usize, j: usize| {
        Example::new(vec![s1_token(i), s2_token(j)], vec![t1(i), t2(j)])
    };

    let mut train = Vec::new();
    for i in 0..cfg.size_s1 {
        train.push(Example::new(vec![s1_token(i)], vec![t1(i)]));
    }
    for i in (0..cfg.size_s1).filter(|i| !gen.contains(i)) {
        for j in 0..cfg.size_s2 {
            train.push(pair(i, j));
        }
    }
    let mut test = Vec::new();
    for i in 0..cfg.size_s1 {
        for j in 0..cfg.size_s2 {
            test.push(pair(i, j));
        }
    }
    let classes = WordClasses::from_groups([
        (0..cfg.size_s1).map(s1_token).collect(),
        (0..cfg.size_s2).map(s2_token).collect(),
    ]);
    Ok(ToyTask {
        train: Dataset::new(train),
        test: Dataset::new(test),
        s1_gen: gen.into_iter().map(s1_token).collect(),
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn default_sizes() {
        let t = generate_toy(&ToyConfig::default()).unwrap();
        assert_eq!(t.train.len(), 20 + 15 * 10);
        assert_eq!(t.test.len(), 200);
        assert_eq!(t.s1_gen.len(), 5);
    }

    #[test]
    fn structure() {
        let t = generate_toy(&ToyConfig { seed: 4, ..ToyConfig::default() }).unwrap();
        let singles: Vec<&Example> = t.train.iter().filter(|e| e.source.len() == 1).collect();
        assert_eq!(singles.len(), 20);
        for e in t.train.iter().filter(|e| e.source.len() == 2) {
            assert!(!t.s1_gen.contains(&e.source[0]));
        }
        let train_sources: BTreeSet<&Vec<String>> = t.train.iter().map(|e| &e.source).collect();
        for e in &t.test {
            if t.s1_gen.contains(&e.source[0]) {
                assert!(!train_sources.contains(&e.source));
            }
        }
        // f1 and f2 are injective and consistent between train and test.
        let mut map: HashMap<&str, &str> = HashMap::new();
        for e in t.train.iter().chain(&t.test) {
            for (s, y) in e.source.iter().zip(&e.target) {
                assert_eq!(*map.entry(s).or_insert(y), y.as_str());
            }
        }
        let images: BTreeSet<&&str> = map.values().collect();
        assert_eq!(images.len(), map.len());
        assert_eq!(t.classes.classes().len(), 2);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            ToyConfig { size_s1: 1, ..ToyConfig::default() },
            ToyConfig { gen_fraction: 0.0, ..ToyConfig::default() },
            ToyConfig { gen_fraction: 0.01, ..ToyConfig::default() },
            ToyConfig { gen_fraction: 0.99, ..ToyConfig::default() },
        ] {
            assert!(generate_toy(&cfg).is_err(), "{cfg:?}");
        }
    }
}
