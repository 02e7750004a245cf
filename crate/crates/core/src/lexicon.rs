//! Rule-based primitive alignment.
//!
//! A pair `(v, w)` is a primitive when every example whose source contains
//! `v` has `w` in its target (sufficiency) and, in strict mode, every example
//! whose target contains `w` has `v` in its source (necessity). The relaxed
//! mode also admits `v` when no source is both sufficient and necessary for
//! `w` and fewer than `psi` sources are sufficient for it, which captures
//! many-to-one mappings such as inflected forms.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scan::Grammar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaxFreq {
    Unbounded,
    Fixed(usize),
    /// Percentile (0..=100) of the per-token example frequencies.
    Percentile(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexiconConfig {
    pub psi: usize,
    pub min_freq: usize,
    pub max_freq: MaxFreq,
    pub strict: bool,
}

impl LexiconConfig {
    /// Sufficient and necessary pairs only, no frequency filter.
    pub fn strict() -> Self {
        LexiconConfig {
            psi: 1,
            min_freq: 0,
            max_freq: MaxFreq::Unbounded,
            strict: true,
        }
    }

    /// Relaxed defaults for open-vocabulary data such as COGS.
    pub fn relaxed() -> Self {
        LexiconConfig {
            psi: 4,
            min_freq: 2,
            max_freq: MaxFreq::Percentile(90.0),
            strict: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.psi < 1 {
            return Err(Error::Config("lexicon psi must be at least 1".into()));
        }
        match self.max_freq {
            MaxFreq::Fixed(max) if max < self.min_freq => Err(Error::Config(format!(
                "lexicon min_freq {} exceeds max_freq {max}",
                self.min_freq
            ))),
            MaxFreq::Percentile(p) if !(0.0..=100.0).contains(&p) => {
                Err(Error::Config(format!("percentile {p} out of range")))
            }
            _ => Ok(()),
        }
    }
}

impl Default for LexiconConfig {
    fn default() -> Self {
        Self::strict()
    }
}

/// Target-token category used by the error taxonomy when no grammar is known.
pub const ANY_KIND: &str = "*";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    pairs: Vec<(String, String)>,
    by_source: BTreeMap<String, Vec<String>>,
    kinds: BTreeMap<String, String>,
}

impl Lexicon {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut pairs: Vec<(String, String)> = pairs.into_iter().collect();
        pairs.sort();
        pairs.dedup();
        let mut by_source: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (v, w) in &pairs {
            by_source.entry(v.clone()).or_default().push(w.clone());
        }
        Lexicon {
            pairs,
            by_source,
            kinds: BTreeMap::new(),
        }
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, source: &str, target: &str) -> bool {
        self.by_source
            .get(source)
            .is_some_and(|ws| ws.iter().any(|w| w == target))
    }

    /// Targets aligned to `source`.
    pub fn targets(&self, source: &str) -> &[String] {
        self.by_source.get(source).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_source(&self, token: &str) -> bool {
        self.by_source.contains_key(token)
    }

    pub fn target_tokens(&self) -> BTreeSet<&str> {
        self.pairs.iter().map(|(_, w)| w.as_str()).collect()
    }

    /// Label target tokens with the kind (action / direction) of the grammar
    /// primitive they realize.
    pub fn with_kinds_from(mut self, grammar: &Grammar) -> Self {
        for p in grammar.primitives() {
            if self.pairs.iter().any(|(_, w)| *w == p.target) {
                self.kinds.insert(p.target.clone(), p.kind.as_str().to_string());
            }
        }
        self
    }

    pub fn with_kind(mut self, target: &str, kind: &str) -> Self {
        self.kinds.insert(target.to_string(), kind.to_string());
        self
    }

    /// Kind of a lexicon target token; `None` for tokens outside the lexicon.
    pub fn target_kind(&self, token: &str) -> Option<&str> {
        if !self.pairs.iter().any(|(_, w)| w == token) {
            return None;
        }
        Some(self.kinds.get(token).map(String::as_str).unwrap_or(ANY_KIND))
    }

    pub fn to_tsv(&self) -> String {
        self.pairs.iter().map(|(v, w)| format!("{v}\t{w}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match line.split('\t').collect::<Vec<_>>().as_slice() {
                [v, w] if !v.is_empty() && !w.is_empty() => pairs.push((v.to_string(), w.to_string())),
                _ => {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: "expected `source<TAB>target`".into(),
                    })
                }
            }
        }
        Ok(Lexicon::from_pairs(pairs))
    }
}

/// Token presence statistics over a dataset, with set semantics per example.
struct Cooccurrence {
    /// For each source token: target tokens present in every example containing it.
    suff: BTreeMap<String, BTreeSet<String>>,
    /// For each target token: source tokens present in every example containing it.
    ness: BTreeMap<String, BTreeSet<String>>,
    freq: HashMap<String, usize>,
}

fn intersect_into(slot: &mut Option<BTreeSet<String>>, with: &BTreeSet<&str>) {
    match slot {
        None => *slot = Some(with.iter().map(|s| s.to_string()).collect()),
        Some(set) => set.retain(|t| with.contains(t.as_str())),
    }
}

impl Cooccurrence {
    fn new(data: &Dataset) -> Self {
        let mut suff: BTreeMap<String, Option<BTreeSet<String>>> = BTreeMap::new();
        let mut ness: BTreeMap<String, Option<BTreeSet<String>>> = BTreeMap::new();
        let mut freq = HashMap::new();
        for e in data {
            let src: BTreeSet<&str> = e.source.iter().map(String::as_str).collect();
            let tgt: BTreeSet<&str> = e.target.iter().map(String::as_str).collect();
            for v in &src {
                *freq.entry(v.to_string()).or_insert(0) += 1;
                intersect_into(suff.entry(v.to_string()).or_default(), &tgt);
            }
            for w in &tgt {
                intersect_into(ness.entry(w.to_string()).or_default(), &src);
            }
        }
        let flatten = |m: BTreeMap<String, Option<BTreeSet<String>>>| {
            m.into_iter().map(|(k, v)| (k, v.unwrap_or_default())).collect()
        };
        Cooccurrence {
            suff: flatten(suff),
            ness: flatten(ness),
            freq,
        }
    }

    fn suff(&self, v: &str, w: &str) -> bool {
        self.suff.get(v).is_some_and(|ws| ws.contains(w))
    }

    fn ness(&self, v: &str, w: &str) -> bool {
        self.ness.get(w).is_some_and(|vs| vs.contains(v))
    }

    fn max_freq(&self, bound: MaxFreq) -> usize {
        match bound {
            MaxFreq::Unbounded => usize::MAX,
            MaxFreq::Fixed(n) => n,
            MaxFreq::Percentile(p) => {
                let mut f: Vec<usize> = self.freq.values().copied().collect();
                if f.is_empty() {
                    return usize::MAX;
                }
                f.sort_unstable();
                // Nearest-rank percentile.
                let rank = ((p / 100.0) * f.len() as f64).ceil().max(1.0) as usize;
                f[rank.min(f.len()) - 1]
            }
        }
    }
}

/// Induce a primitive lexicon from `train`.
///
/// Frequencies count examples containing the token.
pub fn induce_lexicon(train: &Dataset, cfg: &LexiconConfig) -> Result<Lexicon> {
    cfg.validate()?;
    let co = Cooccurrence::new(train);

    // w -> sources that are sufficient for it.
    let mut sufficient: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (v, ws) in &co.suff {
        for w in ws {
            sufficient.entry(w.as_str()).or_default().push(v.as_str());
        }
    }

    let max_freq = co.max_freq(cfg.max_freq);
    let mut pairs = Vec::new();
    for (w, sources) in &sufficient {
        let winner = sources.iter().any(|v| co.ness(v, w));
        for v in sources {
            let accepted = if co.ness(v, w) {
                true
            } else {
                !cfg.strict && !winner && sources.len() < cfg.psi
            };
            let f = co.freq[*v];
            if accepted && f >= cfg.min_freq && f <= max_freq {
                pairs.push((v.to_string(), w.to_string()));
            }
        }
    }
    Ok(Lexicon::from_pairs(pairs))
}

/// Re-check sufficiency of every pair on `data`; returns offending pairs.
pub fn verify_sufficiency(lex: &Lexicon, data: &Dataset) -> Vec<(String, String)> {
    let co = Cooccurrence::new(data);
    lex.pairs()
        .iter()
        .filter(|(v, w)| !co.suff(v, w))
        .cloned()
        .collect()
}
